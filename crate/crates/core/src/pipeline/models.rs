use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classic::{ClassicLm, CountTable, Smoothing};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{score_corpus, ScoreFile};
use crate::lm::{Alphabet, LanguageModel, NGramLm};
use crate::neural::{string_logprobs, NeuralModel};

#[derive(Serialize)]
struct ClassicFileOut<'a> {
    kind: &'static str,
    method: Smoothing,
    order: usize,
    alphabet_size: usize,
    n_hat: usize,
    counts: &'a str,
}

#[derive(Deserialize)]
struct ClassicFileIn {
    method: Smoothing,
    order: usize,
    alphabet_size: usize,
    n_hat: usize,
    counts: String,
}

#[derive(Deserialize)]
struct Probe {
    #[serde(default)]
    family: Option<String>,
    #[serde(default)]
    kind: Option<String>,
}

/// Any model the lab can write to disk: a ground-truth LM, a count-based
/// estimator, or a trained log-linear / neural model.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Truth(NGramLm),
    Classic(ClassicLm),
    Neural(NeuralModel),
}

impl AnyModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let probe: Probe = serde_json::from_str(text)?;
        match (probe.family, probe.kind.as_deref()) {
            (Some(_), _) => Ok(AnyModel::Truth(NGramLm::from_json(text)?)),
            (None, Some("classic")) => {
                let f: ClassicFileIn = serde_json::from_str(text)?;
                let alphabet = Alphabet::new(f.alphabet_size)?;
                let table = CountTable::from_lines(alphabet, f.n_hat, &f.counts)?;
                Ok(AnyModel::Classic(ClassicLm::new(Arc::new(table), f.method, f.order)?))
            }
            (None, Some(_)) => Ok(AnyModel::Neural(NeuralModel::from_json(text)?)),
            (None, None) => Err(Error::Format("model file has neither `family` nor `kind`".into())),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            AnyModel::Truth(m) => m.to_json(),
            AnyModel::Neural(m) => m.to_json(),
            AnyModel::Classic(m) => classic_json(m.table(), m.method(), m.order()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn as_lm(&self) -> &dyn LanguageModel {
        match self {
            AnyModel::Truth(m) => m,
            AnyModel::Classic(m) => m,
            AnyModel::Neural(m) => m,
        }
    }

    /// Scores `corpus`, batching events for gradient-trained models.
    pub fn score(&self, corpus: &Corpus, model_id: &str) -> Result<ScoreFile> {
        match self {
            AnyModel::Neural(m) => score_neural(m, corpus, model_id),
            other => score_corpus(other.as_lm(), corpus, model_id),
        }
    }
}

pub fn classic_json(table: &CountTable, method: Smoothing, order: usize) -> Result<String> {
    let counts = table.to_lines();
    Ok(serde_json::to_string(&ClassicFileOut {
        kind: "classic",
        method,
        order,
        alphabet_size: table.alphabet().size(),
        n_hat: table.n_hat(),
        counts: &counts,
    })?)
}

pub fn score_neural(model: &NeuralModel, corpus: &Corpus, model_id: &str) -> Result<ScoreFile> {
    Ok(ScoreFile {
        model_id: model_id.to_string(),
        lm_id: corpus.lm_id.clone(),
        split: corpus.split.to_string(),
        logprobs: string_logprobs(model.as_trainable(), &corpus.strings)?,
    })
}
