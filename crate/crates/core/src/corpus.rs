//! Ancestral sampling and disjoint train/test corpora.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{padded, Alphabet, History, LanguageModel, Symbol, SymbolString};
use crate::seeding::{self, LabRng};

pub const DEFAULT_MAX_LENGTH: usize = 10_000;
pub const DEFAULT_TRAIN_SIZE: usize = 50_000;
pub const DEFAULT_TEST_SIZE: usize = 30_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub strings: Vec<SymbolString>,
    pub split: Split,
    pub lm_id: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    lm_id: String,
    split: Split,
    seed: u64,
    size: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    /// Total number of (history, next-symbol) events, EOS included.
    pub fn num_events(&self) -> usize {
        self.strings.iter().map(|s| s.len() + 1).sum()
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".json");
        path.with_file_name(name)
    }

    /// One string per line as space-separated ids; an empty line is the empty string.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.strings {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str, alphabet: Option<Alphabet>) -> Result<Vec<SymbolString>> {
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                let ids = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<Symbol>()
                            .map_err(|_| Error::Format(format!("line {}: bad symbol id `{tok}`", i + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                match alphabet {
                    Some(a) => SymbolString::new(a, ids),
                    None => Ok(SymbolString::from_trusted(ids)),
                }
            })
            .collect()
    }

    /// Writes the corpus text and its `<file>.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        let meta = Sidecar { lm_id: self.lm_id.clone(), split: self.split, seed: self.seed, size: self.len() };
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path, alphabet: Option<Alphabet>) -> Result<Self> {
        let strings = Self::parse_text(&std::fs::read_to_string(path)?, alphabet)?;
        let meta: Sidecar = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(path))?)?;
        if meta.size != strings.len() {
            return Err(Error::Format(format!(
                "sidecar says {} strings, file has {}",
                meta.size,
                strings.len()
            )));
        }
        Ok(Self { strings, split: meta.split, lm_id: meta.lm_id, seed: meta.seed })
    }

    /// Splits off the trailing `1 − keep` fraction after a seeded shuffle.
    pub fn split_off(&self, keep: f64, seed: u64, held_out: Split) -> (Corpus, Corpus) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeding::rng(seed));
        let cut = ((self.len() as f64) * keep).round() as usize;
        let pick = |ids: &[usize]| ids.iter().map(|&i| self.strings[i].clone()).collect();
        (
            Corpus { strings: pick(&idx[..cut]), split: self.split, lm_id: self.lm_id.clone(), seed },
            Corpus { strings: pick(&idx[cut..]), split: held_out, lm_id: self.lm_id.clone(), seed },
        )
    }
}

/// Draws y_t ~ p(·|history) until EOS.
pub fn sample_string<M: LanguageModel + ?Sized>(lm: &M, rng: &mut LabRng, max_len: usize) -> Result<SymbolString> {
    let alphabet = lm.alphabet();
    let width = lm.order() - 1;
    let mut buf: Vec<Symbol> = padded(alphabet, &SymbolString::empty(), lm.order());
    loop {
        let history = History::trusted(&buf[buf.len() - width..]);
        let dist = lm
            .conditional(history)?
            .ok_or_else(|| Error::Sampling("model has no distribution at a reachable history".into()))?;
        let u: f64 = rng.random();
        let probs = dist.probs();
        let mut acc = 0.0;
        // Falls back to the last outcome with positive mass if rounding leaves u uncovered.
        let mut outcome = probs.iter().rposition(|&p| p > 0.0).unwrap_or(alphabet.eos_outcome());
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                outcome = i;
                break;
            }
        }
        if outcome == alphabet.eos_outcome() {
            return Ok(SymbolString::from_trusted(buf.split_off(width)));
        }
        if buf.len() - width >= max_len {
            return Err(Error::Sampling(format!(
                "string exceeded the length cap of {max_len}; the LM is degenerate"
            )));
        }
        buf.push(outcome as Symbol);
    }
}

pub fn sample_strings<M: LanguageModel + ?Sized>(
    lm: &M,
    count: usize,
    seed: u64,
    max_len: usize,
) -> Result<Vec<SymbolString>> {
    let mut rng = seeding::rng(seed);
    (0..count).map(|_| sample_string(lm, &mut rng, max_len)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisjointOptions {
    /// Pool draws before de-duplication, as a multiple of `n_train + n_test`.
    pub pool_factor: f64,
    /// Fewest distinct pool strings each side must be allowed; fewer means
    /// the LM is too low-entropy to split.
    pub min_side_distinct: usize,
    /// Draw budget per side, as a multiple of the requested size.
    pub max_draw_factor: usize,
    pub max_len: usize,
}

impl Default for DisjointOptions {
    fn default() -> Self {
        Self { pool_factor: 2.0, min_side_distinct: 2, max_draw_factor: 20, max_len: DEFAULT_MAX_LENGTH }
    }
}

/// Disjoint train/test corpora:
///
/// 1. sample a pool and de-duplicate it into D′;
/// 2. assign each string of D′ to the train-allowed or test-allowed side by a seeded coin;
/// 3. sample a multiset for each side;
/// 4. drop draws allowed only on the other side (strings outside D′ are
///    assigned a side by the same coin the first time they are seen);
/// 5. keep the first `n_train` / `n_test` survivors.
pub fn make_disjoint_corpora<M: LanguageModel + ?Sized>(
    lm: &M,
    lm_id: &str,
    n_train: usize,
    n_test: usize,
    seed: u64,
    opts: &DisjointOptions,
) -> Result<(Corpus, Corpus)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Input("corpus sizes must be at least 1".into()));
    }
    let total = n_train + n_test;
    let pool_draws = ((total as f64) * opts.pool_factor).ceil() as usize;
    let mut pool_rng = seeding::rng(seeding::derive(seed, "pool"));
    let mut coin = seeding::rng(seeding::derive(seed, "partition"));

    let mut side: HashMap<SymbolString, Split> = HashMap::new();
    let mut distinct = 0usize;
    for _ in 0..pool_draws {
        let s = sample_string(lm, &mut pool_rng, opts.max_len)?;
        if !side.contains_key(&s) {
            distinct += 1;
            let which = if coin.random_bool(0.5) { Split::Train } else { Split::Test };
            side.insert(s, which);
        }
    }
    let train_side = side.values().filter(|s| **s == Split::Train).count();
    let test_side = distinct - train_side;
    if train_side.min(test_side) < opts.min_side_distinct {
        return Err(Error::Protocol(format!(
            "only {distinct} distinct strings in a pool of {pool_draws} draws ({train_side} train-allowed, \
             {test_side} test-allowed); each side needs at least {} to build disjoint corpora",
            opts.min_side_distinct
        )));
    }

    let mut fill = |split: Split, n: usize| -> Result<Vec<SymbolString>> {
        let mut rng = seeding::rng(seeding::derive(seed, &split.to_string()));
        let budget = n.saturating_mul(opts.max_draw_factor);
        let mut kept = Vec::with_capacity(n);
        let mut draws = 0usize;
        while kept.len() < n {
            if draws >= budget {
                return Err(Error::Protocol(format!(
                    "{split} side underfilled: kept {} of {n} after {draws} draws ({distinct} distinct pool \
                     strings); the LM is too low-entropy for disjoint corpora",
                    kept.len()
                )));
            }
            draws += 1;
            let s = sample_string(lm, &mut rng, opts.max_len)?;
            let allowed = *side.entry(s.clone()).or_insert_with(|| {
                if coin.random_bool(0.5) {
                    Split::Train
                } else {
                    Split::Test
                }
            });
            if allowed == split {
                kept.push(s);
            }
        }
        Ok(kept)
    };
    let train = fill(Split::Train, n_train)?;
    let test = fill(Split::Test, n_test)?;
    Ok((
        Corpus { strings: train, split: Split::Train, lm_id: lm_id.to_string(), seed },
        Corpus { strings: test, split: Split::Test, lm_id: lm_id.to_string(), seed },
    ))
}

/// True when no string occurs in both corpora.
pub fn are_disjoint(a: &Corpus, b: &Corpus) -> bool {
    let set: HashSet<&SymbolString> = a.strings.iter().collect();
    !b.strings.iter().any(|s| set.contains(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate_general, GeneralLmSpec};
    use crate::lm::{constant_lm, Backend, Family, NGramLm, TabularLm};

    fn geometric(p_eos: f64) -> NGramLm {
        constant_lm(Alphabet::new(1).unwrap(), 2, &[1.0 - p_eos, p_eos]).unwrap()
    }

    #[test]
    fn eos_only_lm_samples_empty_strings() {
        let lm = geometric(1.0);
        let mut rng = seeding::rng(1);
        for _ in 0..10 {
            assert!(sample_string(&lm, &mut rng, 100).unwrap().is_empty());
        }
    }

    #[test]
    fn geometric_mean_length() {
        let lm = geometric(0.5);
        let strings = sample_strings(&lm, 100_000, 5, 1000).unwrap();
        let mean = strings.iter().map(|s| s.len() as f64).sum::<f64>() / strings.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let lm = generate_general(&GeneralLmSpec::new(3, 4, 2)).unwrap();
        assert_eq!(sample_strings(&lm, 50, 9, 1000).unwrap(), sample_strings(&lm, 50, 9, 1000).unwrap());
    }

    #[test]
    fn length_cap_is_a_sampling_error() {
        let lm = geometric(1e-9);
        let mut rng = seeding::rng(1);
        assert!(matches!(sample_string(&lm, &mut rng, 50), Err(Error::Sampling(_))));
    }

    #[test]
    fn two_string_support_cannot_be_split() {
        // p(a|BOS) = 0.5, p(EOS|a) = 1: support is {"", "a"}.
        let a = Alphabet::new(1).unwrap();
        let table = TabularLm::build(a, 2, usize::MAX, |h| {
            Ok(if h[0] == a.bos() { vec![0.5, 0.5] } else { vec![0.0, 1.0] })
        })
        .unwrap();
        let lm = NGramLm { family: Family::General, seed: 0, backend: Backend::Tabular(table) };
        let err = make_disjoint_corpora(&lm, "tiny", 10, 10, 1, &DisjointOptions::default());
        assert!(matches!(err, Err(Error::Protocol(_))), "{err:?}");
    }

    #[test]
    fn corpora_are_disjoint_and_sized() {
        let lm = generate_general(&GeneralLmSpec::new(2, 4, 3)).unwrap();
        let (train, test) = make_disjoint_corpora(&lm, "g", 500, 300, 4, &DisjointOptions::default()).unwrap();
        assert_eq!(train.len(), 500);
        assert_eq!(test.len(), 300);
        assert!(are_disjoint(&train, &test));
    }

    #[test]
    fn text_format_round_trip() {
        let a = Alphabet::new(3).unwrap();
        let c = Corpus {
            strings: vec![
                SymbolString::new(a, vec![0, 2]).unwrap(),
                SymbolString::empty(),
                SymbolString::new(a, vec![1]).unwrap(),
            ],
            split: Split::Test,
            lm_id: "x".into(),
            seed: 3,
        };
        assert_eq!(c.to_text(), "0 2\n\n1\n");
        assert_eq!(Corpus::parse_text(&c.to_text(), Some(a)).unwrap(), c.strings);
        assert!(Corpus::parse_text("0 3\n", Some(a)).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("test.txt");
        c.save(&p).unwrap();
        assert_eq!(Corpus::load(&p, Some(a)).unwrap(), c);
    }
}
