use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lm::{string_logprob, LanguageModel};

/// Per-string natural-log probabilities of a test corpus under one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFile {
    pub model_id: String,
    pub lm_id: String,
    pub split: String,
    /// One entry per test string, in corpus order; `-inf` allowed.
    pub logprobs: Vec<f64>,
}

fn check_id(field: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(|c| c.is_whitespace() || c == '=') {
        return Err(Error::Format(format!("{field} `{value}` must be non-empty with no spaces or `=`")));
    }
    Ok(())
}

impl ScoreFile {
    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    pub fn n_neg_inf(&self) -> usize {
        self.logprobs.iter().filter(|x| **x == f64::NEG_INFINITY).count()
    }

    /// `#model_id=… lm_id=… split=… n=…` then `index<TAB>logprob` lines.
    pub fn to_text(&self) -> Result<String> {
        check_id("model_id", &self.model_id)?;
        check_id("lm_id", &self.lm_id)?;
        check_id("split", &self.split)?;
        let mut out = format!(
            "#model_id={} lm_id={} split={} n={}\n",
            self.model_id,
            self.lm_id,
            self.split,
            self.logprobs.len()
        );
        for (i, lp) in self.logprobs.iter().enumerate() {
            // `{}` on f64 is the shortest representation that round-trips.
            let _ = writeln!(out, "{i}\t{lp}");
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix('#'))
            .ok_or_else(|| Error::Format("score file must start with a `#` header".into()))?;
        let (mut model_id, mut lm_id, mut split, mut n) = (None, None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field `{field}`")))?;
            match k {
                "model_id" => model_id = Some(v.to_string()),
                "lm_id" => lm_id = Some(v.to_string()),
                "split" => split = Some(v.to_string()),
                "n" => n = Some(v.parse::<usize>().map_err(|_| Error::Format(format!("bad count `{v}`")))?),
                _ => return Err(Error::Format(format!("unknown header field `{k}`"))),
            }
        }
        let missing = |f: &str| Error::Format(format!("score header lacks `{f}`"));
        let n = n.ok_or_else(|| missing("n"))?;
        let mut logprobs = Vec::with_capacity(n);
        for (expected, line) in lines.enumerate() {
            let (idx, lp) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("bad score line `{line}`")))?;
            if idx.parse::<usize>().ok() != Some(expected) {
                return Err(Error::Protocol(format!("score index `{idx}` out of order; expected {expected}")));
            }
            let lp: f64 = lp.parse().map_err(|_| Error::Format(format!("bad log-probability `{lp}`")))?;
            if lp.is_nan() || lp > 0.0 {
                return Err(Error::Format(format!("log-probability {lp} is not ≤ 0")));
            }
            logprobs.push(lp);
        }
        if logprobs.len() != n {
            return Err(Error::Protocol(format!("header says n={n}, file has {} scores", logprobs.len())));
        }
        Ok(Self {
            model_id: model_id.ok_or_else(|| missing("model_id"))?,
            lm_id: lm_id.ok_or_else(|| missing("lm_id"))?,
            split: split.ok_or_else(|| missing("split"))?,
            logprobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Scores every string of `corpus` under `lm`, in parallel, keeping corpus order.
pub fn score_corpus<M: LanguageModel + ?Sized>(lm: &M, corpus: &Corpus, model_id: &str) -> Result<ScoreFile> {
    let logprobs = corpus
        .strings
        .par_iter()
        .map(|y| string_logprob(lm, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreFile {
        model_id: model_id.to_string(),
        lm_id: corpus.lm_id.clone(),
        split: corpus.split.to_string(),
        logprobs,
    })
}
