//! Gradient-trained baselines: a log-linear model over one-hot history
//! encodings and a feed-forward neural n-gram model.

mod tape;
mod train;

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::softmax;
use crate::lm::{check_history_len, padded, Alphabet, ConditionalDistribution, History, LanguageModel, SymbolString};
use crate::numfmt;
use crate::seeding::{self, LabRng};

pub use tape::{Tape, Var};
pub use train::{gradcheck, train, Adam, EarlyStopping, GradcheckKind, TrainConfig, TrainReport};

/// (history window, next outcome) pairs; EOS events included.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Events {
    pub width: usize,
    /// Row-major `len × width` history symbol ids.
    pub histories: Vec<usize>,
    /// Outcome indices (EOS = |Σ|).
    pub targets: Vec<usize>,
}

impl Events {
    pub fn from_strings(alphabet: Alphabet, strings: &[SymbolString], order: usize) -> Self {
        let width = order.saturating_sub(1);
        let mut ev = Events { width, ..Default::default() };
        for y in strings {
            let buf = padded(alphabet, y, order);
            for t in 0..=y.len() {
                ev.histories.extend(buf[t..t + width].iter().map(|&s| s as usize));
                ev.targets.push(if t < y.len() { y.symbols()[t] as usize } else { alphabet.eos_outcome() });
            }
        }
        ev
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Histories and targets of the events at `idx`.
    pub fn select(&self, idx: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let w = self.width;
        let mut h = Vec::with_capacity(idx.len() * w);
        let mut t = Vec::with_capacity(idx.len());
        for &i in idx {
            h.extend_from_slice(&self.histories[i * w..(i + 1) * w]);
            t.push(self.targets[i]);
        }
        (h, t)
    }
}

/// A model trainable by [`train`]: a differentiable map from history batches to logits over Σ̄.
pub trait Trainable: Send + Sync {
    fn alphabet(&self) -> Alphabet;
    fn order(&self) -> usize;
    fn param_names(&self) -> Vec<&'static str>;
    fn params(&self) -> Vec<&Array2<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    /// Logits for a batch of `rows` histories, plus the tape vars of
    /// [`Trainable::params`] in the same order. Dropout applies when `dropout` is given.
    fn forward_graph<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        histories: Vec<usize>,
        rows: usize,
        dropout: Option<&mut LabRng>,
    ) -> (Var, Vec<Var>);

    fn set_training(&mut self, record: TrainingRecord);

    fn logits(&self, histories: &[usize], rows: usize) -> Array2<f64> {
        let mut tape = Tape::new();
        let (out, _) = self.forward_graph(&mut tape, histories.to_vec(), rows, None);
        tape.value(out).to_owned()
    }

    /// Mean per-event cross-entropy in nats (inference mode).
    fn mean_loss(&self, events: &Events) -> f64 {
        let lps = event_logprobs(self, events);
        -lps.iter().sum::<f64>() / lps.len().max(1) as f64
    }
}

const SCORE_CHUNK: usize = 4096;

/// ln q(target | history) for every event.
pub fn event_logprobs<M: Trainable + ?Sized>(model: &M, events: &Events) -> Vec<f64> {
    let w = events.width;
    let mut out = Vec::with_capacity(events.len());
    for start in (0..events.len()).step_by(SCORE_CHUNK) {
        let end = (start + SCORE_CHUNK).min(events.len());
        let logits = model.logits(&events.histories[start * w..end * w], end - start);
        for (row, &t) in logits.outer_iter().zip(&events.targets[start..end]) {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            out.push(row[t] - max - z.ln());
        }
    }
    out
}

/// ln q(y) for each string, batching every event of a chunk of strings.
pub fn string_logprobs<M: Trainable + ?Sized>(model: &M, strings: &[SymbolString]) -> Result<Vec<f64>> {
    let alphabet = model.alphabet();
    for y in strings {
        y.check(alphabet)?;
    }
    let ev = Events::from_strings(alphabet, strings, model.order());
    let lps = event_logprobs(model, &ev);
    let mut at = 0;
    Ok(strings
        .iter()
        .map(|y| {
            let s = lps[at..at + y.len() + 1].iter().sum();
            at += y.len() + 1;
            s
        })
        .collect())
}

fn conditional_of<M: Trainable + ?Sized>(model: &M, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
    check_history_len(model.order(), history)?;
    let alphabet = model.alphabet();
    if let Some(&bad) = history.ids().iter().find(|&&s| s as usize >= alphabet.num_history_symbols()) {
        return Err(Error::Input(format!("symbol {bad} cannot appear in a history")));
    }
    let ids: Vec<usize> = history.ids().iter().map(|&s| s as usize).collect();
    let logits = model.logits(&ids, 1);
    let probs = softmax(logits.row(0).as_slice().expect("standard layout"));
    Ok(Some(ConditionalDistribution::from_trusted(probs)))
}

fn uniform_matrix(rng: &mut LabRng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Settings recorded on a model once it has been trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub cfg: TrainConfig,
    pub epoch_losses: Vec<f64>,
    pub dev_losses: Vec<f64>,
}

/// softmax(Ê · onehot-concat(h)) over Σ̄. Ê is stored transposed, one row per
/// (history position, symbol) slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLinearModel {
    alphabet: Alphabet,
    order: usize,
    /// `(order−1)|Σ̲| × |Σ̄|`
    pub weights: Array2<f64>,
    pub training: Option<TrainingRecord>,
}

impl LogLinearModel {
    /// All-zero parameters, i.e. the uniform model.
    pub fn zeros(alphabet: Alphabet, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Spec("model order must be at least 1".into()));
        }
        let rows = (order - 1) * alphabet.num_history_symbols();
        Ok(Self { alphabet, order, weights: Array2::zeros((rows, alphabet.num_outcomes())), training: None })
    }

    pub fn random(alphabet: Alphabet, order: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(alphabet, order)?;
        let (r, c) = m.weights.dim();
        m.weights = uniform_matrix(&mut seeding::rng(seed), r, c, scale);
        Ok(m)
    }

    /// Ê, `|Σ̄| × (order−1)|Σ̲|`.
    pub fn output_matrix(&self) -> Array2<f64> {
        self.weights.t().to_owned()
    }

    pub fn is_trained(&self) -> bool {
        self.training.is_some()
    }

    fn slots(&self, histories: &[usize]) -> Vec<usize> {
        let w = self.order - 1;
        let k = self.alphabet.num_history_symbols();
        histories.iter().enumerate().map(|(i, &s)| (i % w.max(1)) * k + s).collect()
    }

    pub fn forward(&self, history: History<'_>) -> Result<ConditionalDistribution> {
        Ok(conditional_of(self, history)?.expect("always defined"))
    }
}

impl Trainable for LogLinearModel {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn order(&self) -> usize {
        self.order
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["weights"]
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.weights]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weights]
    }

    fn forward_graph<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        histories: Vec<usize>,
        rows: usize,
        _dropout: Option<&mut LabRng>,
    ) -> (Var, Vec<Var>) {
        let w = tape.param(&self.weights);
        let slots = self.slots(&histories);
        let logits = tape.gather_sum(w, slots, self.order - 1, rows);
        (logits, vec![w])
    }

    fn set_training(&mut self, record: TrainingRecord) {
        self.training = Some(record);
    }
}

impl LanguageModel for LogLinearModel {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn order(&self) -> usize {
        self.order
    }

    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
        conditional_of(self, history)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralShape {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub bias: bool,
}

impl Default for NeuralShape {
    fn default() -> Self {
        Self { embed_dim: 128, hidden: 512, dropout: 0.5, bias: true }
    }
}

/// Embeds each history symbol, concatenates, and applies one ReLU hidden
/// layer before a linear map to logits over Σ̄.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralNGramModel {
    alphabet: Alphabet,
    order: usize,
    pub shape: NeuralShape,
    /// `|Σ̲| × embed_dim`
    pub embeddings: Array2<f64>,
    /// `(order−1)·embed_dim × hidden`
    pub w1: Array2<f64>,
    /// `1 × hidden`
    pub b1: Array2<f64>,
    /// `hidden × |Σ̄|`
    pub w2: Array2<f64>,
    /// `1 × |Σ̄|`
    pub b2: Array2<f64>,
    pub training: Option<TrainingRecord>,
}

impl NeuralNGramModel {
    pub fn zeros(alphabet: Alphabet, order: usize, shape: NeuralShape) -> Result<Self> {
        if order == 0 {
            return Err(Error::Spec("model order must be at least 1".into()));
        }
        if shape.embed_dim == 0 || shape.hidden == 0 {
            return Err(Error::Spec("embedding and hidden sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&shape.dropout) {
            return Err(Error::Spec(format!("dropout rate {} outside [0, 1]", shape.dropout)));
        }
        let d_in = (order - 1) * shape.embed_dim;
        let k = alphabet.num_outcomes();
        Ok(Self {
            alphabet,
            order,
            shape,
            embeddings: Array2::zeros((alphabet.num_history_symbols(), shape.embed_dim)),
            w1: Array2::zeros((d_in, shape.hidden)),
            b1: Array2::zeros((1, shape.hidden)),
            w2: Array2::zeros((shape.hidden, k)),
            b2: Array2::zeros((1, k)),
            training: None,
        })
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) weights; embeddings use fan-in 1, biases start at zero.
    pub fn init(alphabet: Alphabet, order: usize, shape: NeuralShape, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(alphabet, order, shape)?;
        let mut rng = seeding::rng(seed);
        let (r, c) = m.embeddings.dim();
        m.embeddings = uniform_matrix(&mut rng, r, c, 1.0);
        let (r, c) = m.w1.dim();
        m.w1 = uniform_matrix(&mut rng, r, c, 1.0 / (r.max(1) as f64).sqrt());
        let (r, c) = m.w2.dim();
        m.w2 = uniform_matrix(&mut rng, r, c, 1.0 / (r as f64).sqrt());
        Ok(m)
    }

    /// Pre-activations of the hidden layer for a batch (inference mode).
    pub fn pre_activations(&self, histories: &[usize], rows: usize) -> Array2<f64> {
        let mut tape = Tape::new();
        let (z, _) = self.hidden_pre(&mut tape, histories.to_vec(), rows);
        tape.value(z).to_owned()
    }

    fn hidden_pre<'a>(&'a self, tape: &mut Tape<'a>, histories: Vec<usize>, rows: usize) -> (Var, Vec<Var>) {
        let emb = tape.param(&self.embeddings);
        let w1 = tape.param(&self.w1);
        let x = tape.embed_concat(emb, histories, self.order - 1, rows);
        let mut z = tape.matmul(x, w1);
        let mut vars = vec![emb, w1];
        if self.shape.bias {
            let b1 = tape.param(&self.b1);
            z = tape.add_row(z, b1);
            vars.push(b1);
        }
        (z, vars)
    }

    /// `dropout = Some(rng)` runs in train mode.
    pub fn forward(&self, history: History<'_>, dropout: Option<&mut LabRng>) -> Result<ConditionalDistribution> {
        if dropout.is_none() {
            return Ok(conditional_of(self, history)?.expect("always defined"));
        }
        check_history_len(self.order, history)?;
        let ids: Vec<usize> = history.ids().iter().map(|&s| s as usize).collect();
        let mut tape = Tape::new();
        let (out, _) = self.forward_graph(&mut tape, ids, 1, dropout);
        let probs = softmax(tape.value(out).row(0).to_vec().as_slice());
        Ok(ConditionalDistribution::from_trusted(probs))
    }
}

impl Trainable for NeuralNGramModel {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn order(&self) -> usize {
        self.order
    }

    fn param_names(&self) -> Vec<&'static str> {
        if self.shape.bias {
            vec!["embeddings", "w1", "b1", "w2", "b2"]
        } else {
            vec!["embeddings", "w1", "w2"]
        }
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        if self.shape.bias {
            vec![&self.embeddings, &self.w1, &self.b1, &self.w2, &self.b2]
        } else {
            vec![&self.embeddings, &self.w1, &self.w2]
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        if self.shape.bias {
            vec![&mut self.embeddings, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
        } else {
            vec![&mut self.embeddings, &mut self.w1, &mut self.w2]
        }
    }

    fn forward_graph<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        histories: Vec<usize>,
        rows: usize,
        dropout: Option<&mut LabRng>,
    ) -> (Var, Vec<Var>) {
        let (z, mut vars) = self.hidden_pre(tape, histories, rows);
        let mut h = tape.relu(z);
        if let Some(rng) = dropout {
            let rate = self.shape.dropout;
            let mask = if rate >= 1.0 {
                Array2::zeros((rows, self.shape.hidden))
            } else {
                let keep = 1.0 / (1.0 - rate);
                Array2::from_shape_simple_fn((rows, self.shape.hidden), || {
                    if rng.random::<f64>() < rate { 0.0 } else { keep }
                })
            };
            h = tape.mask(h, mask);
        }
        let w2 = tape.param(&self.w2);
        let mut out = tape.matmul(h, w2);
        // Keep the var order aligned with params(): embeddings, w1, b1, w2, b2.
        vars.push(w2);
        if self.shape.bias {
            let b2 = tape.param(&self.b2);
            out = tape.add_row(out, b2);
            vars.push(b2);
        }
        (out, vars)
    }

    fn set_training(&mut self, record: TrainingRecord) {
        self.training = Some(record);
    }
}

impl LanguageModel for NeuralNGramModel {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn order(&self) -> usize {
        self.order
    }

    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
        conditional_of(self, history)
    }
}

/// Either trained model, as loaded from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum NeuralModel {
    LogLinear(LogLinearModel),
    Neural(NeuralNGramModel),
}

impl NeuralModel {
    pub fn as_trainable(&self) -> &dyn Trainable {
        match self {
            NeuralModel::LogLinear(m) => m,
            NeuralModel::Neural(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NeuralModel::LogLinear(_) => "loglinear",
            NeuralModel::Neural(_) => "neural",
        }
    }

    pub fn training(&self) -> Option<&TrainingRecord> {
        match self {
            NeuralModel::LogLinear(m) => m.training.as_ref(),
            NeuralModel::Neural(m) => m.training.as_ref(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let t = self.as_trainable();
        let shape = match self {
            NeuralModel::Neural(m) => Some(m.shape),
            NeuralModel::LogLinear(_) => None,
        };
        let training = self.training();
        let out = CheckpointOut {
            kind: self.kind(),
            order: t.order(),
            alphabet_size: t.alphabet().size(),
            shape,
            params: t
                .param_names()
                .into_iter()
                .zip(t.params())
                .map(|(name, p)| TensorOut { name, shape: [p.nrows(), p.ncols()], data: p.iter().copied().collect() })
                .collect(),
            seed: training.map(|r| r.cfg.seed),
            final_losses: training.map(|r| r.epoch_losses.clone()).unwrap_or_default(),
            training,
        };
        Ok(serde_json::to_string(&out)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: CheckpointIn = serde_json::from_str(text)?;
        let alphabet = Alphabet::new(ck.alphabet_size)?;
        let mut model = match ck.kind.as_str() {
            "loglinear" => NeuralModel::LogLinear(LogLinearModel::zeros(alphabet, ck.order)?),
            "neural" => {
                let shape = ck.shape.ok_or_else(|| Error::Format("neural checkpoint lacks `shape`".into()))?;
                NeuralModel::Neural(NeuralNGramModel::zeros(alphabet, ck.order, shape)?)
            }
            other => return Err(Error::Format(format!("unknown checkpoint kind `{other}`"))),
        };
        let (names, params): (Vec<&'static str>, Vec<&mut Array2<f64>>) = match &mut model {
            NeuralModel::LogLinear(m) => (m.param_names(), m.params_mut()),
            NeuralModel::Neural(m) => (m.param_names(), m.params_mut()),
        };
        if names.len() != ck.params.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", names.len(), ck.params.len())));
        }
        for ((name, slot), t) in names.iter().zip(params).zip(ck.params) {
            if t.name != *name || t.shape != [slot.nrows(), slot.ncols()] || t.data.len() != slot.len() {
                return Err(Error::Format(format!("tensor `{}` {:?} does not fit `{name}` {:?}", t.name, t.shape, slot.dim())));
            }
            *slot = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data).expect("checked shape");
        }
        match &mut model {
            NeuralModel::LogLinear(m) => m.training = ck.training,
            NeuralModel::Neural(m) => m.training = ck.training,
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl LanguageModel for NeuralModel {
    fn alphabet(&self) -> Alphabet {
        self.as_trainable().alphabet()
    }

    fn order(&self) -> usize {
        self.as_trainable().order()
    }

    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
        conditional_of(self.as_trainable(), history)
    }
}

#[derive(Serialize)]
struct TensorOut {
    name: &'static str,
    shape: [usize; 2],
    #[serde(serialize_with = "numfmt::vec")]
    data: Vec<f64>,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    kind: &'static str,
    order: usize,
    alphabet_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    shape: Option<NeuralShape>,
    params: Vec<TensorOut>,
    seed: Option<u64>,
    final_losses: Vec<f64>,
    training: Option<&'a TrainingRecord>,
}

#[derive(Deserialize)]
struct TensorIn {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct CheckpointIn {
    kind: String,
    order: usize,
    alphabet_size: usize,
    #[serde(default)]
    shape: Option<NeuralShape>,
    params: Vec<TensorIn>,
    #[serde(default)]
    training: Option<TrainingRecord>,
}
