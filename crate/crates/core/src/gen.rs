//! Random ground-truth n-gram LMs.
//!
//! Three families are supported:
//!
//! * **general**: every BOS-padded history gets an independent
//!   Dirichlet(α·1) distribution over Σ;
//! * **sparse** representation-based: logits are `E · onehot-concat(h)`
//!   with a standard-normal `E ∈ R^{|Σ|×(n−1)|Σ̲|}`;
//! * **dense** representation-based: logits are `E1 E2 · concat(emb(h_i))`
//!   with standard-normal symbol embeddings in `R^{D′}` and a rank-R
//!   factorization `E1 ∈ R^{|Σ|×R}`, `E2 ∈ R^{R×D}`, `D = (n−1)D′`.
//!
//! In every family EOS is hard-coded: `p(EOS|h) = 1/E[|y|]` and the mass
//! over Σ is rescaled by `1 − 1/E[|y|]`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{
    Alphabet, Backend, ConditionalDistribution, Family, NGramLm, Symbol, TabularLm,
    NORMALIZATION_TOL,
};
use crate::numfmt;
use crate::seeding::{self, LabRng};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_EXPECTED_LENGTH: f64 = 40.0;
pub const DEFAULT_EMBED_DIM: usize = 16;
/// Largest tabular LM (in f64 cells) generated without complaint: 256 MiB.
pub const DEFAULT_MAX_TABLE_CELLS: usize = 1 << 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralLmSpec {
    pub order: usize,
    pub alphabet_size: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_expected_length")]
    pub expected_length: f64,
    pub seed: u64,
    #[serde(default = "default_max_cells")]
    pub max_table_cells: usize,
}

impl GeneralLmSpec {
    pub fn new(order: usize, alphabet_size: usize, seed: u64) -> Self {
        Self {
            order,
            alphabet_size,
            alpha: DEFAULT_ALPHA,
            expected_length: DEFAULT_EXPECTED_LENGTH,
            seed,
            max_table_cells: DEFAULT_MAX_TABLE_CELLS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepKind {
    Sparse,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepLmSpec {
    pub order: usize,
    pub alphabet_size: usize,
    pub kind: RepKind,
    /// D′, dense only.
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// R, dense only.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default = "default_expected_length")]
    pub expected_length: f64,
    pub seed: u64,
}

impl RepLmSpec {
    pub fn sparse(order: usize, alphabet_size: usize, seed: u64) -> Self {
        Self {
            order,
            alphabet_size,
            kind: RepKind::Sparse,
            embed_dim: DEFAULT_EMBED_DIM,
            rank: None,
            expected_length: DEFAULT_EXPECTED_LENGTH,
            seed,
        }
    }

    pub fn dense(order: usize, alphabet_size: usize, rank: usize, seed: u64) -> Self {
        Self {
            kind: RepKind::Dense,
            rank: Some(rank),
            ..Self::sparse(order, alphabet_size, seed)
        }
    }

    /// D, the length of a history representation.
    pub fn representation_dim(&self) -> usize {
        let width = self.order.saturating_sub(1);
        match self.kind {
            RepKind::Sparse => width * (self.alphabet_size + 1),
            RepKind::Dense => width * self.embed_dim,
        }
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_expected_length() -> f64 {
    DEFAULT_EXPECTED_LENGTH
}
fn default_embed_dim() -> usize {
    DEFAULT_EMBED_DIM
}
fn default_max_cells() -> usize {
    DEFAULT_MAX_TABLE_CELLS
}

fn eos_prob(expected_length: f64) -> Result<f64> {
    if !(expected_length > 1.0) || !expected_length.is_finite() {
        return Err(Error::Spec(format!(
            "expected length must be a finite real > 1, got {expected_length}"
        )));
    }
    Ok(1.0 / expected_length)
}

/// Appends EOS with probability `1/E[|y|]` and scales the Σ-mass by the rest.
pub fn apply_eos_rule(dist: &[f64], expected_length: f64) -> Result<Vec<f64>> {
    let p_eos = eos_prob(expected_length)?;
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL || dist.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Input(format!("input to the EOS rule sums to {total}, not 1")));
    }
    Ok(with_eos(dist, p_eos))
}

fn with_eos(dist: &[f64], p_eos: f64) -> Vec<f64> {
    let keep = 1.0 - p_eos;
    let mut out: Vec<f64> = dist.iter().map(|p| keep * p).collect();
    out.push(p_eos);
    out
}

/// One Dirichlet(α·1_k) draw via normalized Gamma(α, 1) variates.
pub fn sample_dirichlet(rng: &mut LabRng, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::Spec(format!("invalid Dirichlet concentration {alpha}: {e}")))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // All-zero draws only happen through underflow at tiny α; redraw.
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

pub fn generate_general(spec: &GeneralLmSpec) -> Result<NGramLm> {
    if !(spec.alpha > 0.0) {
        return Err(Error::Spec(format!("Dirichlet concentration must be > 0, got {}", spec.alpha)));
    }
    let p_eos = eos_prob(spec.expected_length)?;
    let alphabet = Alphabet::new(spec.alphabet_size)?;
    let mut rng = seeding::rng(spec.seed);
    let table = TabularLm::build(alphabet, spec.order, spec.max_table_cells, |_| {
        let dist = sample_dirichlet(&mut rng, spec.alpha, alphabet.size())?;
        Ok(with_eos(&dist, p_eos))
    })?;
    Ok(NGramLm { family: Family::General, seed: spec.seed, backend: Backend::Tabular(table) })
}

pub fn generate_representation(spec: &RepLmSpec) -> Result<NGramLm> {
    if spec.order < 2 {
        return Err(Error::Spec("ground-truth LMs need order n ≥ 2".into()));
    }
    let p_eos = eos_prob(spec.expected_length)?;
    let alphabet = Alphabet::new(spec.alphabet_size)?;
    let mut rng = seeding::rng(spec.seed);
    let dim = spec.representation_dim();
    let s = alphabet.size();
    let (params, family) = match spec.kind {
        RepKind::Sparse => {
            let output = normal_matrix(&mut rng, s, dim);
            (RepParams::Sparse { output }, Family::Sparse)
        }
        RepKind::Dense => {
            if spec.embed_dim == 0 {
                return Err(Error::Spec("embedding dimension must be positive".into()));
            }
            let rank = spec
                .rank
                .ok_or_else(|| Error::Spec("dense LMs need a rank R".into()))?;
            if rank == 0 || rank > s.min(dim) {
                return Err(Error::Spec(format!(
                    "rank {rank} must lie in 1..=min(|Σ|, D) = {}",
                    s.min(dim)
                )));
            }
            let embeddings = normal_matrix(&mut rng, alphabet.num_history_symbols(), spec.embed_dim);
            let e1 = normal_matrix(&mut rng, s, rank);
            let e2 = normal_matrix(&mut rng, rank, dim);
            (RepParams::Dense { embed_dim: spec.embed_dim, embeddings, e1, e2 }, Family::Dense)
        }
    };
    let rep = RepresentationLm::new(alphabet, spec.order, params, p_eos)?;
    Ok(NGramLm { family, seed: spec.seed, backend: Backend::Representation(rep) })
}

/// Row-major draws, row by row.
fn normal_matrix(rng: &mut LabRng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum RepParams {
    /// `output` is E, `|Σ| × (n−1)|Σ̲|`.
    Sparse { output: Vec<Vec<f64>> },
    /// `embeddings` is `|Σ̲| × D′` (BOS included); E = E1·E2.
    Dense {
        embed_dim: usize,
        embeddings: Vec<Vec<f64>>,
        e1: Vec<Vec<f64>>,
        e2: Vec<Vec<f64>>,
    },
}

/// A representation-backed LM. Conditionals are computed on demand from a
/// precomputed (position, symbol) → logit-contribution table, which is exact
/// because both representation functions are linear in the one-hot history.
#[derive(Clone, Debug)]
pub struct RepresentationLm {
    alphabet: Alphabet,
    order: usize,
    params: RepParams,
    eos_prob: f64,
    /// `[position][history symbol][y]`, flattened.
    contributions: Vec<f64>,
}

impl RepresentationLm {
    pub fn new(alphabet: Alphabet, order: usize, params: RepParams, eos_prob: f64) -> Result<Self> {
        if !(eos_prob > 0.0 && eos_prob < 1.0) {
            return Err(Error::Spec(format!("EOS probability {eos_prob} outside (0, 1)")));
        }
        let width = order - 1;
        let s = alphabet.size();
        let b = alphabet.num_history_symbols();
        let mut contributions = vec![0.0; width * b * s];
        match &params {
            RepParams::Sparse { output } => {
                check_shape(output, s, width * b, "E")?;
                for j in 0..width {
                    for sym in 0..b {
                        for y in 0..s {
                            contributions[(j * b + sym) * s + y] = output[y][j * b + sym];
                        }
                    }
                }
            }
            RepParams::Dense { embed_dim, embeddings, e1, e2 } => {
                let d = *embed_dim;
                let rank = e2.len();
                check_shape(embeddings, b, d, "embeddings")?;
                check_shape(e1, s, rank, "E1")?;
                check_shape(e2, rank, width * d, "E2")?;
                let output = matmul(e1, e2);
                for j in 0..width {
                    for sym in 0..b {
                        for y in 0..s {
                            contributions[(j * b + sym) * s + y] = (0..d)
                                .map(|k| output[y][j * d + k] * embeddings[sym][k])
                                .sum();
                        }
                    }
                }
            }
        }
        Ok(Self { alphabet, order, params, eos_prob, contributions })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn params(&self) -> &RepParams {
        &self.params
    }

    pub fn eos_prob(&self) -> f64 {
        self.eos_prob
    }

    /// The output matrix E (`|Σ| × D`), multiplied out for the dense family.
    pub fn output_matrix(&self) -> Vec<Vec<f64>> {
        match &self.params {
            RepParams::Sparse { output } => output.clone(),
            RepParams::Dense { e1, e2, .. } => matmul(e1, e2),
        }
    }

    /// h(history): the concatenated one-hot or embedding representation.
    pub fn representation(&self, history: &[Symbol]) -> Vec<f64> {
        let b = self.alphabet.num_history_symbols();
        match &self.params {
            RepParams::Sparse { .. } => {
                let mut v = vec![0.0; history.len() * b];
                for (j, &sym) in history.iter().enumerate() {
                    v[j * b + sym as usize] = 1.0;
                }
                v
            }
            RepParams::Dense { embeddings, .. } => history
                .iter()
                .flat_map(|&sym| embeddings[sym as usize].iter().copied())
                .collect(),
        }
    }

    pub fn logits(&self, history: &[Symbol]) -> Vec<f64> {
        let s = self.alphabet.size();
        let b = self.alphabet.num_history_symbols();
        let mut logits = vec![0.0; s];
        for (j, &sym) in history.iter().enumerate() {
            let row = &self.contributions[(j * b + sym as usize) * s..][..s];
            for (l, c) in logits.iter_mut().zip(row) {
                *l += c;
            }
        }
        logits
    }

    pub fn conditional(&self, history: &[Symbol]) -> ConditionalDistribution {
        let dist = softmax(&self.logits(history));
        ConditionalDistribution::from_trusted(with_eos(&dist, self.eos_prob))
    }

    pub(crate) fn to_json(&self, family: Family, seed: u64) -> Result<String> {
        let (embed_dim, rank, embeddings, e1, e2, output) = match &self.params {
            RepParams::Sparse { output } => (None, None, None, None, None, Some(output.clone())),
            RepParams::Dense { embed_dim, embeddings, e1, e2 } => (
                Some(*embed_dim),
                Some(e2.len()),
                Some(embeddings.clone()),
                Some(e1.clone()),
                Some(e2.clone()),
                None,
            ),
        };
        let file = RepFile {
            family,
            order: self.order,
            alphabet_size: self.alphabet.size(),
            embed_dim,
            rank,
            embeddings,
            e1,
            e2,
            output,
            eos_prob: self.eos_prob,
            seed,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub(crate) fn from_json(text: &str) -> Result<(Self, u64)> {
        let file: RepFile = serde_json::from_str(text)?;
        let alphabet = Alphabet::new(file.alphabet_size)?;
        let missing = |what: &str| Error::Format(format!("{} LM file lacks `{what}`", file.family));
        let params = match file.family {
            Family::Sparse => RepParams::Sparse { output: file.output.clone().ok_or_else(|| missing("E"))? },
            Family::Dense => RepParams::Dense {
                embed_dim: file.embed_dim.ok_or_else(|| missing("embed_dim"))?,
                embeddings: file.embeddings.clone().ok_or_else(|| missing("embeddings"))?,
                e1: file.e1.clone().ok_or_else(|| missing("E1"))?,
                e2: file.e2.clone().ok_or_else(|| missing("E2"))?,
            },
            Family::General => return Err(Error::Format("not a representation-backed LM".into())),
        };
        if file.order < 2 {
            return Err(Error::Format("order must be ≥ 2".into()));
        }
        Ok((Self::new(alphabet, file.order, params, file.eos_prob)?, file.seed))
    }
}

#[derive(Serialize, Deserialize)]
struct RepFile {
    family: Family,
    order: usize,
    alphabet_size: usize,
    embed_dim: Option<usize>,
    rank: Option<usize>,
    #[serde(serialize_with = "numfmt::opt_matrix")]
    embeddings: Option<Vec<Vec<f64>>>,
    #[serde(rename = "E1", serialize_with = "numfmt::opt_matrix")]
    e1: Option<Vec<Vec<f64>>>,
    #[serde(rename = "E2", serialize_with = "numfmt::opt_matrix")]
    e2: Option<Vec<Vec<f64>>>,
    /// Sparse family only: the unfactored output matrix.
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none", serialize_with = "numfmt::opt_matrix")]
    output: Option<Vec<Vec<f64>>>,
    #[serde(serialize_with = "serialize_real17")]
    eos_prob: f64,
    seed: u64,
}

fn serialize_real17<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&numfmt::Real17(*x), s)
}

fn check_shape(m: &[Vec<f64>], rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::Format(format!("{name} must be {rows}×{cols}")));
    }
    Ok(())
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; cols];
            for (k, &aik) in row.iter().enumerate() {
                for (o, &bkj) in out.iter_mut().zip(&b[k]) {
                    *o += aik * bkj;
                }
            }
            out
        })
        .collect()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
