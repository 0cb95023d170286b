//! Scoring and evaluation: per-string score files, empirical entropy and KL
//! on held-out corpora, and exact oracles for small LMs.

mod empirical;
mod exact;
mod scorefile;

pub use empirical::{empirical_entropy, empirical_entropy_of, empirical_kl, EvalReport};
pub use exact::{exact_cross_entropy, exact_entropy, exact_kl, ExactOracle, DEFAULT_STATE_CAP};
pub use scorefile::{score_corpus, ScoreFile};
