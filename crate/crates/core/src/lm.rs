//! Alphabets, strings, histories and the autoregressive scoring contract
//! shared by every model in the crate.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::RepresentationLm;
use crate::numfmt;

/// Dense symbol id. Plain symbols are `0..|Σ|`, then BOS, then EOS.
pub type Symbol = u32;

/// Normalization tolerance for conditional distributions.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A finite alphabet Σ with two reserved ids: BOS = |Σ| and EOS = |Σ|+1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabet {
    size: u32,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Input("alphabet must be non-empty".into()));
        }
        let size = u32::try_from(size)
            .ok()
            .filter(|s| *s < u32::MAX - 2)
            .ok_or_else(|| Error::Input(format!("alphabet size {size} too large")))?;
        Ok(Self { size })
    }

    /// |Σ|
    pub fn size(self) -> usize {
        self.size as usize
    }

    pub fn bos(self) -> Symbol {
        self.size
    }

    pub fn eos(self) -> Symbol {
        self.size + 1
    }

    /// |Σ̄| = |Σ ∪ {EOS}|, the number of outcomes of a conditional distribution.
    pub fn num_outcomes(self) -> usize {
        self.size() + 1
    }

    /// |Σ̲| = |Σ ∪ {BOS}|, the number of symbols that may appear in a history.
    pub fn num_history_symbols(self) -> usize {
        self.size() + 1
    }

    /// Index of EOS inside a conditional distribution.
    pub fn eos_outcome(self) -> usize {
        self.size()
    }

    pub fn is_plain(self, s: Symbol) -> bool {
        s < self.size
    }

    /// Maps a plain symbol or EOS id to its index in a conditional distribution.
    pub fn outcome_index(self, s: Symbol) -> Option<usize> {
        if s < self.size {
            Some(s as usize)
        } else if s == self.eos() {
            Some(self.eos_outcome())
        } else {
            None
        }
    }

    /// Inverse of [`Alphabet::outcome_index`].
    pub fn outcome_symbol(self, outcome: usize) -> Symbol {
        if outcome == self.eos_outcome() {
            self.eos()
        } else {
            outcome as Symbol
        }
    }
}

/// A string over Σ. BOS and EOS never appear inside.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolString(Vec<Symbol>);

impl SymbolString {
    pub fn new(alphabet: Alphabet, symbols: Vec<Symbol>) -> Result<Self> {
        if let Some(&bad) = symbols.iter().find(|&&s| !alphabet.is_plain(s)) {
            return Err(Error::Input(format!(
                "symbol id {bad} is outside the alphabet of size {}",
                alphabet.size()
            )));
        }
        Ok(Self(symbols))
    }

    /// Wraps ids that the caller already knows to be plain symbols.
    pub(crate) fn from_trusted(symbols: Vec<Symbol>) -> Self {
        Self(symbols)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, alphabet: Alphabet) -> Result<()> {
        match self.0.iter().find(|&&s| !alphabet.is_plain(s)) {
            Some(bad) => Err(Error::Input(format!(
                "symbol id {bad} is outside the alphabet of size {}",
                alphabet.size()
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for SymbolString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// The n−1 symbols preceding a position, left-padded with BOS.
///
/// Borrowed so that scoring can slide a window over a padded buffer without
/// allocating per event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct History<'a> {
    ids: &'a [Symbol],
}

impl<'a> History<'a> {
    /// Validates a window of exactly `order − 1` ids: plain symbols or BOS,
    /// with any BOS ids forming a contiguous prefix.
    pub fn new(alphabet: Alphabet, order: usize, ids: &'a [Symbol]) -> Result<Self> {
        if order == 0 || ids.len() != order - 1 {
            return Err(Error::Input(format!(
                "history for order {order} must have {} symbols, got {}",
                order.saturating_sub(1),
                ids.len()
            )));
        }
        Self::validate_window(alphabet, ids)?;
        Ok(Self { ids })
    }

    /// A history of any length (used for lower-order backoff queries).
    pub fn of_any_length(alphabet: Alphabet, ids: &'a [Symbol]) -> Result<Self> {
        Self::validate_window(alphabet, ids)?;
        Ok(Self { ids })
    }

    fn validate_window(alphabet: Alphabet, ids: &[Symbol]) -> Result<()> {
        let mut seen_plain = false;
        for &s in ids {
            if alphabet.is_plain(s) {
                seen_plain = true;
            } else if s == alphabet.bos() {
                if seen_plain {
                    return Err(Error::Input("BOS after a plain symbol in history".into()));
                }
            } else {
                return Err(Error::Input(format!("id {s} cannot appear in a history")));
            }
        }
        Ok(())
    }

    /// Windows cut from a BOS-padded buffer are valid by construction.
    pub(crate) fn trusted(ids: &'a [Symbol]) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &'a [Symbol] {
        self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The most recent `k` symbols. Suffixes of valid histories are valid.
    pub fn suffix(&self, k: usize) -> History<'a> {
        History { ids: &self.ids[self.ids.len() - k..] }
    }
}

/// `[BOS; order−1] ++ y`, the buffer that every history of `y` is a window of.
pub fn padded(alphabet: Alphabet, y: &SymbolString, order: usize) -> Vec<Symbol> {
    let pad = order.saturating_sub(1);
    let mut buf = Vec::with_capacity(pad + y.len());
    buf.resize(pad, alphabet.bos());
    buf.extend_from_slice(y.symbols());
    buf
}

/// The history of position `t` (1-based; `t = |y|+1` addresses the EOS factor).
pub fn history_at(alphabet: Alphabet, y: &SymbolString, t: usize, order: usize) -> Result<Vec<Symbol>> {
    if order == 0 {
        return Err(Error::Input("order must be at least 1".into()));
    }
    if t == 0 || t > y.len() + 1 {
        return Err(Error::Input(format!(
            "position {t} outside 1..={} for a string of length {}",
            y.len() + 1,
            y.len()
        )));
    }
    y.check(alphabet)?;
    let buf = padded(alphabet, y, order);
    Ok(buf[t - 1..t - 1 + order - 1].to_vec())
}

/// A next-symbol distribution over Σ̄: plain symbols, then EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalDistribution(Vec<f64>);

impl ConditionalDistribution {
    pub fn new(alphabet: Alphabet, probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(alphabet, probs, NORMALIZATION_TOL)
    }

    pub fn with_tolerance(alphabet: Alphabet, probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.len() != alphabet.num_outcomes() {
            return Err(Error::Model(format!(
                "distribution has {} entries, expected {}",
                probs.len(),
                alphabet.num_outcomes()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Model("distribution has negative or non-finite entries".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::Model(format!("distribution sums to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_trusted(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn prob(&self, outcome: usize) -> f64 {
        self.0[outcome]
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Any model that assigns next-symbol distributions to fixed-length histories.
pub trait LanguageModel: Send + Sync {
    fn alphabet(&self) -> Alphabet;

    /// n: histories have `order − 1` symbols.
    fn order(&self) -> usize;

    /// `Ok(None)` means the model defines no distribution at this history
    /// (unsmoothed MLE on an unseen history); scoring treats it as probability 0.
    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>>;

    /// Probability of one outcome; estimators override this to skip
    /// materializing the full distribution.
    fn next_prob(&self, history: History<'_>, outcome: usize) -> Result<f64> {
        Ok(self.conditional(history)?.map_or(0.0, |d| d.prob(outcome)))
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn alphabet(&self) -> Alphabet {
        (**self).alphabet()
    }
    fn order(&self) -> usize {
        (**self).order()
    }
    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
        (**self).conditional(history)
    }
    fn next_prob(&self, history: History<'_>, outcome: usize) -> Result<f64> {
        (**self).next_prob(history, outcome)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn alphabet(&self) -> Alphabet {
        (**self).alphabet()
    }
    fn order(&self) -> usize {
        (**self).order()
    }
    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
        (**self).conditional(history)
    }
    fn next_prob(&self, history: History<'_>, outcome: usize) -> Result<f64> {
        (**self).next_prob(history, outcome)
    }
}

pub(crate) fn check_history_len(order: usize, history: History<'_>) -> Result<()> {
    if history.len() + 1 != order {
        return Err(Error::Model(format!(
            "order-{order} model queried with a history of length {}",
            history.len()
        )));
    }
    Ok(())
}

/// ln p(y) = Σ_t ln p(y_t | history_t) + ln p(EOS | final history).
///
/// Returns `-inf` as soon as any factor is zero.
pub fn string_logprob<M: LanguageModel + ?Sized>(lm: &M, y: &SymbolString) -> Result<f64> {
    let alphabet = lm.alphabet();
    y.check(alphabet)?;
    let order = lm.order();
    let buf = padded(alphabet, y, order);
    let width = order - 1;
    let mut total = 0.0;
    for t in 0..=y.len() {
        let history = History::trusted(&buf[t..t + width]);
        let outcome = if t < y.len() {
            y.symbols()[t] as usize
        } else {
            alphabet.eos_outcome()
        };
        let p = lm.next_prob(history, outcome)?;
        if p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += p.ln();
    }
    Ok(total)
}

/// Where a ground-truth LM came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    General,
    Sparse,
    Dense,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::General => "general",
            Family::Sparse => "sparse",
            Family::Dense => "dense",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A materialized table of conditionals, one per BOS-padded history.
///
/// Histories are addressed by their base-|Σ̲| encoding; slots for malformed
/// windows (BOS after a plain symbol) exist but are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularLm {
    alphabet: Alphabet,
    order: usize,
    probs: Vec<f64>,
}

impl TabularLm {
    /// Number of f64 cells a table of this shape needs, or `None` on overflow.
    pub fn table_cells(alphabet: Alphabet, order: usize) -> Option<usize> {
        let base = alphabet.num_history_symbols();
        let mut slots: usize = 1;
        for _ in 1..order {
            slots = slots.checked_mul(base)?;
        }
        slots.checked_mul(alphabet.num_outcomes())
    }

    /// Builds a table by calling `fill` on every well-formed history in
    /// canonical order (see [`well_formed_histories`]).
    pub fn build(
        alphabet: Alphabet,
        order: usize,
        max_cells: usize,
        mut fill: impl FnMut(&[Symbol]) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        if order < 2 {
            return Err(Error::Spec("ground-truth LMs need order n ≥ 2".into()));
        }
        let cells = Self::table_cells(alphabet, order)
            .filter(|c| *c <= max_cells)
            .ok_or_else(|| {
                Error::Resource(format!(
                    "table for order {order} over {} symbols exceeds the cap of {max_cells} cells",
                    alphabet.size()
                ))
            })?;
        let mut probs = vec![0.0; cells];
        let k = alphabet.num_outcomes();
        for h in well_formed_histories(alphabet, order - 1) {
            let dist = fill(&h)?;
            let dist = ConditionalDistribution::new(alphabet, dist)?;
            let slot = encode_history(alphabet, &h);
            probs[slot * k..(slot + 1) * k].copy_from_slice(dist.probs());
        }
        Ok(Self { alphabet, order, probs })
    }

    pub fn row(&self, history: &[Symbol]) -> &[f64] {
        let k = self.alphabet.num_outcomes();
        let slot = encode_history(self.alphabet, history);
        &self.probs[slot * k..(slot + 1) * k]
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

/// All windows of `width` ids of the form BOS^j · Σ^{width−j}, j = width..0,
/// each block in lexicographic order. This order fixes the random draw
/// sequence of LM generation.
pub fn well_formed_histories(alphabet: Alphabet, width: usize) -> Vec<Vec<Symbol>> {
    let s = alphabet.size();
    let mut out = Vec::new();
    for bos in (0..=width).rev() {
        let plain = width - bos;
        let count = s.pow(plain as u32);
        for mut code in 0..count {
            let mut h = vec![alphabet.bos(); width];
            for pos in (bos..width).rev() {
                h[pos] = (code % s) as Symbol;
                code /= s;
            }
            out.push(h);
        }
    }
    out
}

fn encode_history(alphabet: Alphabet, history: &[Symbol]) -> usize {
    let base = alphabet.num_history_symbols();
    history.iter().fold(0usize, |acc, &s| acc * base + s as usize)
}

/// A ground-truth n-gram LM: tabular or representation-backed, with provenance.
#[derive(Clone, Debug)]
pub struct NGramLm {
    pub family: Family,
    pub seed: u64,
    pub backend: Backend,
}

#[derive(Clone, Debug)]
pub enum Backend {
    Tabular(TabularLm),
    Representation(RepresentationLm),
}

impl LanguageModel for NGramLm {
    fn alphabet(&self) -> Alphabet {
        match &self.backend {
            Backend::Tabular(t) => t.alphabet,
            Backend::Representation(r) => r.alphabet(),
        }
    }

    fn order(&self) -> usize {
        match &self.backend {
            Backend::Tabular(t) => t.order,
            Backend::Representation(r) => r.order(),
        }
    }

    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
        check_history_len(self.order(), history)?;
        match &self.backend {
            Backend::Tabular(t) => Ok(Some(ConditionalDistribution::from_trusted(t.row(history.ids()).to_vec()))),
            Backend::Representation(r) => Ok(Some(r.conditional(history.ids()))),
        }
    }

    fn next_prob(&self, history: History<'_>, outcome: usize) -> Result<f64> {
        check_history_len(self.order(), history)?;
        match &self.backend {
            Backend::Tabular(t) => Ok(t.row(history.ids())[outcome]),
            Backend::Representation(r) => Ok(r.conditional(history.ids()).prob(outcome)),
        }
    }
}

#[derive(Serialize)]
struct TabularFileOut<'a> {
    family: Family,
    seed: u64,
    order: usize,
    alphabet_size: usize,
    table: Vec<TabularRowOut<'a>>,
}

#[derive(Serialize)]
struct TabularRowOut<'a> {
    history: Vec<Symbol>,
    #[serde(serialize_with = "numfmt::vec")]
    probs: &'a [f64],
}

#[derive(Deserialize)]
struct TabularFileIn {
    seed: u64,
    order: usize,
    alphabet_size: usize,
    table: Vec<TabularRowIn>,
}

#[derive(Deserialize)]
struct TabularRowIn {
    history: Vec<Symbol>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct FamilyProbe {
    family: Family,
}

impl NGramLm {
    pub fn to_json(&self) -> Result<String> {
        match &self.backend {
            Backend::Tabular(t) => {
                let rows = well_formed_histories(t.alphabet, t.order - 1)
                    .into_iter()
                    .map(|h| {
                        let probs = t.row(&h);
                        TabularRowOut { history: h, probs }
                    })
                    .collect();
                let file = TabularFileOut {
                    family: self.family,
                    seed: self.seed,
                    order: t.order,
                    alphabet_size: t.alphabet.size(),
                    table: rows,
                };
                Ok(serde_json::to_string(&file)?)
            }
            Backend::Representation(r) => r.to_json(self.family, self.seed),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: FamilyProbe = serde_json::from_str(text)?;
        match probe.family {
            Family::General => {
                let file: TabularFileIn = serde_json::from_str(text)?;
                let alphabet = Alphabet::new(file.alphabet_size)?;
                let mut rows = std::collections::HashMap::new();
                for row in file.table {
                    History::new(alphabet, file.order, &row.history)?;
                    rows.insert(row.history, row.probs);
                }
                let table = TabularLm::build(alphabet, file.order, usize::MAX, |h| {
                    rows.remove(h)
                        .ok_or_else(|| Error::Format(format!("LM file is missing history {h:?}")))
                })?;
                Ok(Self { family: Family::General, seed: file.seed, backend: Backend::Tabular(table) })
            }
            Family::Sparse | Family::Dense => {
                let (rep, seed) = RepresentationLm::from_json(text)?;
                Ok(Self { family: probe.family, seed, backend: Backend::Representation(rep) })
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn as_tabular(&self) -> Option<&TabularLm> {
        match &self.backend {
            Backend::Tabular(t) => Some(t),
            Backend::Representation(_) => None,
        }
    }
}

/// A tabular LM whose every conditional is the same distribution. Handy as a
/// fixture and as a closed-form oracle.
pub fn constant_lm(alphabet: Alphabet, order: usize, dist: &[f64]) -> Result<NGramLm> {
    let table = TabularLm::build(alphabet, order, usize::MAX, |_| Ok(dist.to_vec()))?;
    Ok(NGramLm { family: Family::General, seed: 0, backend: Backend::Tabular(table) })
}
