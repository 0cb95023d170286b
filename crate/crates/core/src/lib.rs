//! Random n-gram language models, estimators fitted to their samples, and
//! exact and empirical measures of how well the estimators learned them.

pub mod classic;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gen;
pub mod lm;
pub mod neural;
pub mod numfmt;
pub mod pipeline;
pub mod seeding;
pub mod stats;

pub use error::{Error, Result};
pub use lm::{Alphabet, ConditionalDistribution, History, LanguageModel, NGramLm, Symbol, SymbolString};
