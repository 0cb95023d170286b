use serde::{Deserialize, Serialize};

use super::ScoreFile;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;

/// Empirical Ĥ(p), Ĥ(p, q) and K̂L(p‖q) on one test corpus, in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "H_hat", with = "real_or_inf")]
    pub h_hat: f64,
    #[serde(rename = "HX_hat", with = "real_or_inf")]
    pub hx_hat: f64,
    #[serde(rename = "KL_hat", with = "real_or_inf")]
    pub kl_hat: f64,
    /// sd(ln p(y) − ln q(y))/√M
    #[serde(with = "real_or_inf")]
    pub stderr: f64,
    /// Strings the model assigns probability 0.
    pub n_inf: usize,
    pub n_strings: usize,
    /// The same estimates restricted to strings with finite model scores.
    #[serde(rename = "HX_hat_finite", with = "real_or_inf")]
    pub hx_hat_finite: f64,
    #[serde(rename = "KL_hat_finite", with = "real_or_inf")]
    pub kl_hat_finite: f64,
    #[serde(rename = "stderr_finite", with = "real_or_inf")]
    pub stderr_finite: f64,
    pub unit: String,
}

/// Writes ±∞ and NaN as the strings `"inf"`, `"-inf"`, `"nan"`; JSON has no literals for them.
mod real_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a real: {other}"))),
            },
        }
    }
}

/// −(1/M) Σ ln q(y) and the number of strings scored `-inf` (which make the mean +∞).
pub fn empirical_entropy_of(scores: &ScoreFile) -> Result<(f64, usize)> {
    if scores.is_empty() {
        return Err(Error::Input("empirical entropy needs a non-empty test set".into()));
    }
    let n_inf = scores.n_neg_inf();
    let mean = -scores.logprobs.iter().sum::<f64>() / scores.len() as f64;
    Ok((mean, n_inf))
}

/// Ĥ of `lm` on `test`, scoring the corpus first.
pub fn empirical_entropy<M: LanguageModel + ?Sized>(lm: &M, test: &Corpus) -> Result<(f64, usize)> {
    empirical_entropy_of(&super::score_corpus(lm, test, "model")?)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// K̂L(p‖q) = Ĥ(p, q) − Ĥ(p) from two aligned score files over the same test corpus.
pub fn empirical_kl(truth: &ScoreFile, model: &ScoreFile) -> Result<EvalReport> {
    if truth.len() != model.len() {
        return Err(Error::Protocol(format!(
            "score files cover {} and {} strings",
            truth.len(),
            model.len()
        )));
    }
    if truth.lm_id != model.lm_id || truth.split != model.split {
        return Err(Error::Protocol(format!(
            "score files are for different corpora ({}/{} vs {}/{})",
            truth.lm_id, truth.split, model.lm_id, model.split
        )));
    }
    if truth.n_neg_inf() > 0 {
        return Err(Error::Protocol("ground truth assigns probability 0 to a test string".into()));
    }
    let (h_hat, _) = empirical_entropy_of(truth)?;
    let (hx_hat, n_inf) = empirical_entropy_of(model)?;

    let diffs: Vec<f64> = truth.logprobs.iter().zip(&model.logprobs).map(|(p, q)| p - q).collect();
    let finite: Vec<(f64, f64)> = truth
        .logprobs
        .iter()
        .zip(&model.logprobs)
        .filter(|(_, q)| q.is_finite())
        .map(|(&p, &q)| (p, q))
        .collect();
    let finite_diffs: Vec<f64> = finite.iter().map(|(p, q)| p - q).collect();
    let (kl_hat_finite, stderr_finite) = mean_and_stderr(&finite_diffs);
    let hx_hat_finite = -finite.iter().map(|(_, q)| q).sum::<f64>() / finite.len() as f64;

    let (kl_hat, stderr) = if n_inf > 0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        // Ĥ(p,q) − Ĥ(p), computed as the mean difference so identical files give exactly 0.
        mean_and_stderr(&diffs)
    };
    Ok(EvalReport {
        h_hat,
        hx_hat,
        kl_hat,
        stderr,
        n_inf,
        n_strings: truth.len(),
        hx_hat_finite,
        kl_hat_finite,
        stderr_finite,
        unit: "nats".into(),
    })
}
