//! End-to-end experiment runs: generate → sample → fit → score → evaluate →
//! regress → report over a grid of ground-truth LM configurations.
//!
//! Every cell (one ground-truth LM and everything fitted to it) lives in its
//! own directory, written atomically and keyed by a content hash of its
//! inputs, so re-running an unchanged config recomputes nothing.

mod models;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classic::{ClassicLm, CountTable, Smoothing, ADD_LAMBDA_GRID, DISCOUNT_GRID};
use crate::corpus::{make_disjoint_corpora, Corpus, DisjointOptions, Split, DEFAULT_MAX_LENGTH, DEFAULT_TEST_SIZE, DEFAULT_TRAIN_SIZE};
use crate::error::{Error, Result};
use crate::eval::{empirical_entropy_of, empirical_kl, score_corpus, EvalReport, ScoreFile};
use crate::gen::{generate_general, generate_representation, GeneralLmSpec, RepLmSpec, DEFAULT_ALPHA, DEFAULT_EMBED_DIM, DEFAULT_EXPECTED_LENGTH};
use crate::lm::{Family, LanguageModel, NGramLm};
use crate::neural::{train, LogLinearModel, NeuralModel, NeuralNGramModel, NeuralShape, TrainConfig, EarlyStopping};
use crate::seeding::{self, RNG_NAME};
use crate::stats::{regress, RegressionReport, Table};

pub use models::{classic_json, score_neural, AnyModel};
pub use report::{format_mean_sd, render_report, Aggregate, ReportOutput, BEST_CLASSIC};

/// Bumped whenever a change would alter any cell artifact.
pub const PIPELINE_VERSION: &str = "ngram-lab-pipeline/1";

/// Predictors regressed on K̂L by default.
pub const DEFAULT_PREDICTORS: [&str; 5] = ["n", "alphabet_size", "rank", "H_hat", "dense"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_lm_grids")]
    pub lms: Vec<LmGrid>,
    #[serde(default)]
    pub estimators: EstimatorGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmGrid {
    pub family: Family,
    pub orders: Vec<usize>,
    pub alphabet_sizes: Vec<usize>,
    /// Dense only.
    #[serde(default)]
    pub ranks: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_expected_length")]
    pub expected_length: f64,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorGrid {
    /// Expressions in `n` such as `n-2`, `n`, `2n`, `min(2n,20)`.
    #[serde(default = "default_n_hat")]
    pub n_hat: Vec<String>,
    #[serde(default = "yes")]
    pub classic: bool,
    #[serde(default = "default_lambdas")]
    pub add_lambda: Vec<f64>,
    #[serde(default = "default_discounts")]
    pub discounts: Vec<f64>,
    /// Share of the training corpus held out to select smoothing hyperparameters.
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default)]
    pub loglinear: Option<LogLinearSettings>,
    #[serde(default)]
    pub neural: Option<NeuralSettings>,
}

impl Default for EstimatorGrid {
    fn default() -> Self {
        Self {
            n_hat: default_n_hat(),
            classic: true,
            add_lambda: default_lambdas(),
            discounts: default_discounts(),
            dev_fraction: default_dev_fraction(),
            loglinear: None,
            neural: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLinearSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub halve_lr_every: Option<usize>,
}

impl Default for LogLinearSettings {
    fn default() -> Self {
        let c = TrainConfig::loglinear(0);
        Self { lr: c.lr, batch_size: c.batch_size, epochs: c.epochs, halve_lr_every: c.halve_lr_every }
    }
}

impl LogLinearSettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            halve_lr_every: self.halve_lr_every,
            ..TrainConfig::loglinear(seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralSettings {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dev_fraction: f64,
    pub patience: usize,
}

impl Default for NeuralSettings {
    fn default() -> Self {
        let s = NeuralShape::default();
        let c = TrainConfig::neural(0);
        let es = c.early_stopping.expect("neural defaults stop early");
        Self {
            embed_dim: s.embed_dim,
            hidden: s.hidden,
            dropout: s.dropout,
            lr: c.lr,
            batch_size: c.batch_size,
            epochs: c.epochs,
            dev_fraction: es.dev_fraction,
            patience: es.patience,
        }
    }
}

impl NeuralSettings {
    /// A CPU-sized configuration: narrower layers, a larger step, fewer epochs.
    pub fn desk() -> Self {
        Self { embed_dim: 32, hidden: 128, lr: 1e-3, epochs: 4, ..Self::default() }
    }

    pub fn shape(&self) -> NeuralShape {
        NeuralShape { embed_dim: self.embed_dim, hidden: self.hidden, dropout: self.dropout, bias: true }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            early_stopping: Some(EarlyStopping { dev_fraction: self.dev_fraction, patience: self.patience }),
            ..TrainConfig::neural(seed)
        }
    }
}

fn default_replicates() -> usize {
    5
}
fn default_n_train() -> usize {
    DEFAULT_TRAIN_SIZE
}
fn default_n_test() -> usize {
    DEFAULT_TEST_SIZE
}
fn default_max_len() -> usize {
    DEFAULT_MAX_LENGTH
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
fn default_n_hat() -> Vec<String> {
    vec!["n-2".into(), "n".into(), "min(2n,20)".into()]
}
fn yes() -> bool {
    true
}
fn default_lambdas() -> Vec<f64> {
    ADD_LAMBDA_GRID.to_vec()
}
fn default_discounts() -> Vec<f64> {
    DISCOUNT_GRID.to_vec()
}
fn default_dev_fraction() -> f64 {
    0.1
}
fn default_lm_grids() -> Vec<LmGrid> {
    let grid = |family, orders: &[usize], sizes: &[usize], ranks: &[usize]| LmGrid {
        family,
        orders: orders.to_vec(),
        alphabet_sizes: sizes.to_vec(),
        ranks: ranks.to_vec(),
        alpha: DEFAULT_ALPHA,
        expected_length: DEFAULT_EXPECTED_LENGTH,
        embed_dim: DEFAULT_EMBED_DIM,
    };
    vec![
        grid(Family::General, &[2, 4, 6], &[8, 12, 16], &[]),
        grid(Family::Sparse, &[4, 8, 12], &[64, 128, 256], &[]),
        grid(Family::Dense, &[4, 8, 12], &[64, 128, 256], &[2, 8, 16]),
    ]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Spec("replicates and corpus sizes must be positive".into()));
        }
        for g in &self.lms {
            if g.family == Family::Dense && g.ranks.is_empty() {
                return Err(Error::Spec("dense LM grids need at least one rank".into()));
            }
        }
        for e in &self.estimators.n_hat {
            eval_n_hat(e, 4)?;
        }
        let d = self.estimators.dev_fraction;
        if self.estimators.classic && !(d > 0.0 && d < 1.0) {
            return Err(Error::Spec(format!("dev fraction {d} outside (0, 1)")));
        }
        Ok(())
    }

    /// Every cell of the grid, in a fixed order.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for g in &self.lms {
            let ranks: Vec<Option<usize>> =
                if g.family == Family::Dense { g.ranks.iter().map(|&r| Some(r)).collect() } else { vec![None] };
            for &order in &g.orders {
                for &alphabet_size in &g.alphabet_sizes {
                    for &rank in &ranks {
                        for replicate in 0..self.replicates {
                            out.push(CellSpec {
                                family: g.family,
                                order,
                                alphabet_size,
                                rank,
                                alpha: g.alpha,
                                expected_length: g.expected_length,
                                embed_dim: g.embed_dim,
                                replicate,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn eval_expr(e: &str, n: i64) -> Option<i64> {
    for (name, f) in [("min(", i64::min as fn(i64, i64) -> i64), ("max(", i64::max)] {
        if let Some(inner) = e.strip_prefix(name).and_then(|s| s.strip_suffix(')')) {
            let (a, b) = inner.split_once(',')?;
            return Some(f(eval_expr(a, n)?, eval_expr(b, n)?));
        }
    }
    match e.split_once('n') {
        None => e.parse().ok(),
        Some((coef, offset)) => {
            let coef = coef.strip_suffix('*').unwrap_or(coef);
            let coef: i64 = if coef.is_empty() { 1 } else { coef.parse().ok()? };
            let offset: i64 = if offset.is_empty() { 0 } else { offset.strip_prefix('+').unwrap_or(offset).parse().ok()? };
            Some(coef * n + offset)
        }
    }
}

/// Evaluates one n̂ expression at order `n`, clamped to at least 1.
pub fn eval_n_hat(expr: &str, n: usize) -> Result<usize> {
    let e: String = expr.chars().filter(|c| !c.is_whitespace()).map(|c| if c == '−' { '-' } else { c }).collect();
    let v = eval_expr(&e, n as i64).ok_or_else(|| Error::Spec(format!("cannot read n̂ expression `{expr}`")))?;
    Ok(v.max(1) as usize)
}

/// The distinct n̂ values of a grid at order `n`, in grid order.
pub fn n_hat_grid(exprs: &[String], n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for e in exprs {
        let v = eval_n_hat(e, n)?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// One ground-truth LM and everything fitted to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub family: Family,
    pub order: usize,
    pub alphabet_size: usize,
    pub rank: Option<usize>,
    pub alpha: f64,
    pub expected_length: f64,
    pub embed_dim: usize,
    pub replicate: usize,
}

impl CellSpec {
    pub fn key(&self) -> String {
        match self.rank {
            Some(r) => format!("{}-n{}-s{}-R{}-r{}", self.family, self.order, self.alphabet_size, r, self.replicate),
            None => format!("{}-n{}-s{}-r{}", self.family, self.order, self.alphabet_size, self.replicate),
        }
    }

    /// R as a regression predictor; general and sparse LMs have full-rank |Σ|-row output maps.
    pub fn effective_rank(&self) -> usize {
        self.rank.unwrap_or(self.alphabet_size)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub cell: u64,
    pub lm: u64,
    pub corpora: u64,
    pub dev: u64,
}

impl CellSeeds {
    pub fn derive(root: u64, key: &str) -> Self {
        let cell = seeding::derive(root, key);
        Self {
            cell,
            lm: seeding::derive(cell, "lm"),
            corpora: seeding::derive(cell, "corpora"),
            dev: seeding::derive(cell, "dev"),
        }
    }

    pub fn model(&self, name: &str) -> u64 {
        seeding::derive(self.cell, name)
    }
}

#[derive(Serialize)]
struct HashInput<'a> {
    version: &'static str,
    rng: &'static str,
    key: &'a str,
    spec: &'a CellSpec,
    seeds: &'a CellSeeds,
    n_train: usize,
    n_test: usize,
    max_len: usize,
    estimators: &'a EstimatorGrid,
}

fn cell_hash(cfg: &ExperimentConfig, spec: &CellSpec, seeds: &CellSeeds) -> Result<String> {
    let key = spec.key();
    let input = HashInput {
        version: PIPELINE_VERSION,
        rng: RNG_NAME,
        key: &key,
        spec,
        seeds,
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        max_len: cfg.max_len,
        estimators: &cfg.estimators,
    };
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&input)?)))
}

/// One (cell, method, hyperparameter, n̂) evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: String,
    pub family: Family,
    pub n: usize,
    pub alphabet_size: usize,
    pub rank: usize,
    pub dense: u8,
    pub replicate: usize,
    pub lm_seed: u64,
    pub n_hat: usize,
    pub method: String,
    pub hyperparameter: Option<f64>,
    /// Chosen on the dev split among this method's hyperparameters.
    pub dev_selected: bool,
    #[serde(rename = "KL_hat")]
    pub kl_hat: f64,
    #[serde(rename = "KL_hat_finite")]
    pub kl_hat_finite: f64,
    pub stderr: f64,
    #[serde(rename = "H_hat")]
    pub h_hat: f64,
    #[serde(rename = "HX_hat")]
    pub hx_hat: f64,
    pub n_inf: usize,
    pub n_test: usize,
}

impl ResultRow {
    pub fn is_classic(&self) -> bool {
        matches!(self.method.as_str(), "mle" | "add_lambda" | "absolute_discounting" | "witten_bell")
    }
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    if rows.is_empty() {
        fs::write(path, "")?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: String,
    pub hash: String,
    pub version: String,
    /// sha256 of every other file in the cell directory.
    pub files: BTreeMap<String, String>,
}

const CELL_RECORD: &str = "cell.json";

fn file_digests(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("inside dir").to_string_lossy().replace('\\', "/");
                if rel != CELL_RECORD {
                    out.insert(rel, hex::encode(Sha256::digest(fs::read(&path)?)));
                }
            }
        }
    }
    Ok(out)
}

/// Why a finished-looking cell directory cannot be reused, if it cannot.
fn cached_cell_problem(dir: &Path, hash: &str) -> Option<String> {
    let record: CellRecord = match fs::read_to_string(dir.join(CELL_RECORD)) {
        Ok(text) => match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => return Some(format!("unreadable {CELL_RECORD}: {e}")),
        },
        Err(e) => return Some(format!("missing {CELL_RECORD}: {e}")),
    };
    if record.hash != hash {
        return Some("inputs changed".into());
    }
    match file_digests(dir) {
        Ok(files) if files == record.files => None,
        Ok(_) => Some("cell files do not match their recorded digests".into()),
        Err(e) => Some(e.to_string()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub key: String,
    pub spec: CellSpec,
    pub seeds: CellSeeds,
    pub model_seeds: BTreeMap<String, u64>,
    pub hash: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub rng: String,
    pub config: ExperimentConfig,
    pub cells: Vec<ManifestCell>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub jobs: usize,
    /// Restrict the run to these cell keys.
    pub only_cells: Option<Vec<String>>,
    pub quiet: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub computed: usize,
    pub cached: usize,
    /// Cells found on disk but discarded and recomputed.
    pub requeued: usize,
    pub failed: Vec<(String, String)>,
    pub rows: usize,
}

impl RunSummary {
    pub fn all_complete(&self) -> bool {
        self.failed.is_empty()
    }
}

enum CellOutcome {
    Computed(Vec<ResultRow>),
    Cached(Vec<ResultRow>),
    Requeued(Vec<ResultRow>),
}

fn model_seeds(cfg: &ExperimentConfig, spec: &CellSpec, seeds: &CellSeeds) -> Result<BTreeMap<String, u64>> {
    let mut out = BTreeMap::new();
    for n_hat in n_hat_grid(&cfg.estimators.n_hat, spec.order)? {
        if cfg.estimators.loglinear.is_some() {
            let name = format!("loglinear-n{n_hat}");
            out.insert(name.clone(), seeds.model(&name));
        }
        if cfg.estimators.neural.is_some() {
            let name = format!("neural-n{n_hat}");
            out.insert(name.clone(), seeds.model(&name));
        }
    }
    Ok(out)
}

fn generate(spec: &CellSpec, seed: u64) -> Result<NGramLm> {
    match spec.family {
        Family::General => generate_general(&GeneralLmSpec {
            alpha: spec.alpha,
            expected_length: spec.expected_length,
            ..GeneralLmSpec::new(spec.order, spec.alphabet_size, seed)
        }),
        Family::Sparse => generate_representation(&RepLmSpec {
            expected_length: spec.expected_length,
            ..RepLmSpec::sparse(spec.order, spec.alphabet_size, seed)
        }),
        Family::Dense => generate_representation(&RepLmSpec {
            expected_length: spec.expected_length,
            embed_dim: spec.embed_dim,
            ..RepLmSpec::dense(spec.order, spec.alphabet_size, spec.rank.unwrap_or(spec.alphabet_size), seed)
        }),
    }
}

struct CellContext<'a> {
    spec: &'a CellSpec,
    seeds: &'a CellSeeds,
    dir: &'a Path,
    truth: ScoreFile,
    test: Corpus,
    rows: Vec<ResultRow>,
}

impl CellContext<'_> {
    fn record(&mut self, model_id: &str, scores: ScoreFile, n_hat: usize, method: &str, hyper: Option<f64>) -> Result<()> {
        scores.save(&self.dir.join("scores").join(format!("{model_id}.txt")))?;
        let report: EvalReport = empirical_kl(&self.truth, &scores)?;
        fs::write(self.dir.join("reports").join(format!("{model_id}.json")), serde_json::to_string_pretty(&report)?)?;
        self.rows.push(ResultRow {
            cell: self.spec.key(),
            family: self.spec.family,
            n: self.spec.order,
            alphabet_size: self.spec.alphabet_size,
            rank: self.spec.effective_rank(),
            dense: u8::from(self.spec.family == Family::Dense),
            replicate: self.spec.replicate,
            lm_seed: self.seeds.lm,
            n_hat,
            method: method.to_string(),
            hyperparameter: hyper,
            dev_selected: true,
            kl_hat: report.kl_hat,
            kl_hat_finite: report.kl_hat_finite,
            stderr: report.stderr,
            h_hat: report.h_hat,
            hx_hat: report.hx_hat,
            n_inf: report.n_inf,
            n_test: report.n_strings,
        });
        Ok(())
    }
}

fn model_id(method: &str, hyper: Option<f64>, n_hat: usize) -> String {
    match hyper {
        Some(h) => format!("{method}-{h}-n{n_hat}"),
        None => format!("{method}-n{n_hat}"),
    }
}

/// Builds every artifact of one cell inside `dir` and returns its result rows.
fn compute_cell(cfg: &ExperimentConfig, spec: &CellSpec, seeds: &CellSeeds, dir: &Path) -> Result<Vec<ResultRow>> {
    for sub in ["models", "scores", "reports"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let key = spec.key();
    let lm = generate(spec, seeds.lm)?;
    lm.save(&dir.join("lm.json"))?;
    let alphabet = lm.alphabet();
    let opts = DisjointOptions { max_len: cfg.max_len, ..DisjointOptions::default() };
    let (train_c, test_c) = make_disjoint_corpora(&lm, &key, cfg.n_train, cfg.n_test, seeds.corpora, &opts)?;
    train_c.save(&dir.join("train.txt"))?;
    test_c.save(&dir.join("test.txt"))?;
    let truth = score_corpus(&lm, &test_c, "truth")?;
    truth.save(&dir.join("scores").join("truth.txt"))?;
    let n_hats = n_hat_grid(&cfg.estimators.n_hat, spec.order)?;
    let mut ctx = CellContext { spec, seeds, dir, truth, test: test_c, rows: Vec::new() };

    if cfg.estimators.classic {
        let max_n_hat = *n_hats.iter().max().expect("non-empty grid");
        let table = Arc::new(CountTable::count(alphabet, &train_c, max_n_hat)?);
        let (fit_part, dev_part) = train_c.split_off(1.0 - cfg.estimators.dev_fraction, seeds.dev, Split::Dev);
        let dev_table = Arc::new(CountTable::count(alphabet, &fit_part, max_n_hat)?);
        let mut methods = vec![Smoothing::Mle];
        methods.extend(cfg.estimators.add_lambda.iter().map(|&lambda| Smoothing::AddLambda { lambda }));
        methods.extend(cfg.estimators.discounts.iter().map(|&delta| Smoothing::AbsoluteDiscounting { delta }));
        methods.push(Smoothing::WittenBell);
        for &n_hat in &n_hats {
            let first = ctx.rows.len();
            let mut dev_ce = Vec::new();
            for &m in &methods {
                let id = model_id(m.method_name(), m.hyperparameter(), n_hat);
                let model = ClassicLm::new(table.clone(), m, n_hat)?;
                fs::write(dir.join("models").join(format!("{id}.json")), classic_json(&table, m, n_hat)?)?;
                let scores = score_corpus(&model, &ctx.test, &id)?;
                ctx.record(&id, scores, n_hat, m.method_name(), m.hyperparameter())?;
                let dev_model = ClassicLm::new(dev_table.clone(), m, n_hat)?;
                dev_ce.push(empirical_entropy_of(&score_corpus(&dev_model, &dev_part, &id)?)?.0);
            }
            // Within each method, keep the hyperparameter with the lowest dev cross-entropy.
            for (i, m) in methods.iter().enumerate() {
                let best = methods
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.method_name() == m.method_name())
                    .min_by(|a, b| dev_ce[a.0].total_cmp(&dev_ce[b.0]))
                    .map(|(j, _)| j);
                ctx.rows[first + i].dev_selected = best == Some(i);
            }
        }
    }
    if let Some(ll) = &cfg.estimators.loglinear {
        for &n_hat in &n_hats {
            let id = format!("loglinear-n{n_hat}");
            let mut m = LogLinearModel::zeros(alphabet, n_hat)?;
            train(&mut m, &train_c.strings, &ll.train_config(seeds.model(&id)))?;
            let model = NeuralModel::LogLinear(m);
            model.save(&dir.join("models").join(format!("{id}.json")))?;
            let scores = score_neural(&model, &ctx.test, &id)?;
            ctx.record(&id, scores, n_hat, "loglinear", None)?;
        }
    }
    if let Some(nn) = &cfg.estimators.neural {
        for &n_hat in &n_hats {
            let id = format!("neural-n{n_hat}");
            let seed = seeds.model(&id);
            let mut m = NeuralNGramModel::init(alphabet, n_hat, nn.shape(), seeding::derive(seed, "init"))?;
            train(&mut m, &train_c.strings, &nn.train_config(seed))?;
            let model = NeuralModel::Neural(m);
            model.save(&dir.join("models").join(format!("{id}.json")))?;
            let scores = score_neural(&model, &ctx.test, &id)?;
            ctx.record(&id, scores, n_hat, "neural", None)?;
        }
    }
    let rows = ctx.rows;
    write_rows(&dir.join("rows.csv"), &rows)?;
    Ok(rows)
}

fn run_cell(cfg: &ExperimentConfig, spec: &CellSpec, seeds: &CellSeeds, hash: &str, cells_dir: &Path, quiet: bool) -> Result<CellOutcome> {
    let key = spec.key();
    let dir = cells_dir.join(&key);
    let mut requeued = false;
    if dir.exists() {
        match cached_cell_problem(&dir, hash) {
            None => return Ok(CellOutcome::Cached(read_rows(&dir.join("rows.csv"))?)),
            Some(why) => {
                if !quiet {
                    eprintln!("re-queueing cell {key}: {why}");
                }
                fs::remove_dir_all(&dir)?;
                requeued = true;
            }
        }
    }
    let tmp = cells_dir.join(format!(".tmp-{key}"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let rows = match compute_cell(cfg, spec, seeds, &tmp) {
        Ok(rows) => rows,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    let record = CellRecord { key: key.clone(), hash: hash.to_string(), version: PIPELINE_VERSION.into(), files: file_digests(&tmp)? };
    fs::write(tmp.join(CELL_RECORD), serde_json::to_string_pretty(&record)?)?;
    fs::rename(&tmp, &dir)?;
    if !quiet {
        eprintln!("finished cell {key}");
    }
    Ok(if requeued { CellOutcome::Requeued(rows) } else { CellOutcome::Computed(rows) })
}

/// Runs (or resumes) an experiment into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let mut specs = cfg.cells();
    if let Some(only) = &opts.only_cells {
        specs.retain(|s| only.contains(&s.key()));
        if specs.len() != only.len() {
            return Err(Error::Input("some requested cells are not in the config grid".into()));
        }
    }
    let plans: Vec<(CellSpec, CellSeeds, String, BTreeMap<String, u64>)> = specs
        .into_iter()
        .map(|s| {
            let seeds = CellSeeds::derive(cfg.seed, &s.key());
            let hash = cell_hash(cfg, &s, &seeds)?;
            let models = model_seeds(cfg, &s, &seeds)?;
            Ok((s, seeds, hash, models))
        })
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Resource(e.to_string()))?;
    let outcomes: Vec<Result<CellOutcome>> = pool.install(|| {
        plans
            .par_iter()
            .map(|(s, seeds, hash, _)| run_cell(cfg, s, seeds, hash, &cells_dir, opts.quiet))
            .collect()
    });

    let mut summary = RunSummary::default();
    let mut all_rows = Vec::new();
    let mut manifest_cells = Vec::new();
    for ((spec, seeds, hash, models), outcome) in plans.into_iter().zip(outcomes) {
        let key = spec.key();
        let (status, error) = match outcome {
            Ok(o) => {
                let rows = match o {
                    CellOutcome::Computed(r) => {
                        summary.computed += 1;
                        r
                    }
                    CellOutcome::Cached(r) => {
                        summary.cached += 1;
                        r
                    }
                    CellOutcome::Requeued(r) => {
                        summary.computed += 1;
                        summary.requeued += 1;
                        r
                    }
                };
                all_rows.extend(rows);
                ("complete".to_string(), None)
            }
            Err(e) => {
                if !opts.quiet {
                    eprintln!("cell {key} failed: {e}");
                }
                summary.failed.push((key.clone(), e.to_string()));
                ("failed".to_string(), Some(e.to_string()))
            }
        };
        manifest_cells.push(ManifestCell { key, spec, seeds, model_seeds: models, hash, status, error });
    }
    summary.rows = all_rows.len();
    let manifest = Manifest { version: PIPELINE_VERSION.into(), rng: RNG_NAME.into(), config: cfg.clone(), cells: manifest_cells };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let results = out.join("results.csv");
    write_rows(&results, &all_rows)?;
    let regression = match regress_results(&results) {
        Ok(r) => serde_json::to_string_pretty(&r)?,
        Err(e) => serde_json::to_string_pretty(&serde_json::json!({ "error": e.to_string() }))?,
    };
    fs::write(out.join("regression.json"), regression)?;
    let report = render_report(&all_rows);
    fs::write(out.join("report.csv"), &report.csv)?;
    fs::write(out.join("report.txt"), &report.text)?;
    Ok(summary)
}

/// Regresses K̂L on the default predictors; constant predictors are dropped.
pub fn regress_results(results_csv: &Path) -> Result<RegressionReport> {
    let table = Table::read_csv(results_csv)?;
    let predictors: Vec<String> = DEFAULT_PREDICTORS.iter().map(|s| s.to_string()).collect();
    regress(&table, "KL_hat", &predictors, true)
}

/// Recomputes one cell from a manifest into `out/cells/<key>`.
pub fn replay_cell(manifest_path: &Path, key: &str, out: &Path) -> Result<PathBuf> {
    let manifest = Manifest::load(manifest_path)?;
    let entry = manifest
        .cells
        .iter()
        .find(|c| c.key == key)
        .ok_or_else(|| Error::Input(format!("manifest has no cell `{key}`")))?;
    let seeds = CellSeeds::derive(manifest.config.seed, key);
    if seeds != entry.seeds || cell_hash(&manifest.config, &entry.spec, &seeds)? != entry.hash {
        return Err(Error::Protocol(format!("manifest entry for `{key}` does not match this build")));
    }
    let opts = RunOptions { jobs: 1, only_cells: Some(vec![key.to_string()]), quiet: true };
    let summary = run(&manifest.config, out, &opts)?;
    if let Some((_, e)) = summary.failed.first() {
        return Err(Error::Protocol(format!("replay of `{key}` failed: {e}")));
    }
    Ok(out.join("cells").join(key))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_hat_expressions() {
        let grid: Vec<String> = ["n-2", "n", "min(2n,20)"].iter().map(|s| s.to_string()).collect();
        assert_eq!(n_hat_grid(&grid, 4).unwrap(), vec![2, 4, 8]);
        assert_eq!(n_hat_grid(&grid, 12).unwrap(), vec![10, 12, 20]);
        assert_eq!(n_hat_grid(&grid, 2).unwrap(), vec![1, 2, 4]);
        assert_eq!(n_hat_grid(&grid, 1).unwrap(), vec![1, 2]);
        assert_eq!(eval_n_hat("2*n + 1", 3).unwrap(), 7);
        assert_eq!(eval_n_hat("n − 2", 5).unwrap(), 3);
        assert!(eval_n_hat("n^2", 3).is_err());
    }

    #[test]
    fn default_grid_matches_default_sizes() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.replicates, 5);
        // 9 general + 9 sparse + 27 dense configurations, five LMs each
        assert_eq!(cfg.cells().len(), (9 + 9 + 27) * 5);
        let keys: std::collections::HashSet<String> = cfg.cells().iter().map(CellSpec::key).collect();
        assert_eq!(keys.len(), cfg.cells().len());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("replicate = 3").is_err());
        assert!(ExperimentConfig::from_toml("[[lms]]\nfamily = \"dense\"\norders = [4]\nalphabet_sizes = [8]").is_err());
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let row = ResultRow {
            cell: "general-n2-s8-r0".into(),
            family: Family::General,
            n: 2,
            alphabet_size: 8,
            rank: 8,
            dense: 0,
            replicate: 0,
            lm_seed: 42,
            n_hat: 2,
            method: "mle".into(),
            hyperparameter: None,
            dev_selected: true,
            kl_hat: f64::INFINITY,
            kl_hat_finite: 0.1 + 0.2,
            stderr: f64::NAN,
            h_hat: 1.0 / 3.0,
            hx_hat: f64::INFINITY,
            n_inf: 2,
            n_test: 10,
        };
        let mut other = row.clone();
        other.hyperparameter = Some(0.01);
        other.kl_hat = 0.5;
        other.stderr = 0.25;
        let path = dir.path().join("rows.csv");
        write_rows(&path, &[row.clone(), other.clone()]).unwrap();
        let back = read_rows(&path).unwrap();
        assert_eq!(back[1], other);
        assert_eq!(back[0].kl_hat, f64::INFINITY);
        assert!(back[0].stderr.is_nan());
        assert_eq!(back[0].kl_hat_finite, row.kl_hat_finite);
    }
}
