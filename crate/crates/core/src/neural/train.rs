use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Events, LogLinearModel, NeuralNGramModel, NeuralShape, Tape, Trainable, TrainingRecord};
use crate::error::{Error, Result};
use crate::lm::{Alphabet, SymbolString};
use crate::seeding::{self, LabRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    /// Fraction of training strings held out to pick the stopping epoch.
    pub dev_fraction: f64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub halve_lr_every: Option<usize>,
    pub early_stopping: Option<EarlyStopping>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Report each epoch's loss as a full inference pass over the training
    /// events rather than the running mean of batch losses.
    pub full_pass_loss: bool,
}

impl TrainConfig {
    pub fn loglinear(seed: u64) -> Self {
        Self {
            lr: 0.1,
            batch_size: 1024,
            epochs: 16,
            halve_lr_every: Some(5),
            early_stopping: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed,
            full_pass_loss: true,
        }
    }

    pub fn neural(seed: u64) -> Self {
        Self {
            lr: 5e-5,
            batch_size: 128,
            epochs: 20,
            halve_lr_every: None,
            early_stopping: Some(EarlyStopping { dev_fraction: 0.2, patience: 3 }),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed,
            full_pass_loss: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::Spec("learning rate must be finite and ≥ 0, batch size ≥ 1".into()));
        }
        if let Some(es) = self.early_stopping {
            if !(es.dev_fraction > 0.0 && es.dev_fraction < 1.0) {
                return Err(Error::Spec(format!("dev fraction {} outside (0, 1)", es.dev_fraction)));
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.halve_lr_every {
            Some(k) if k > 0 => self.lr * 0.5f64.powi((epoch / k) as i32),
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training cross-entropy before the first update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub dev_losses: Vec<f64>,
    /// Epoch whose parameters were kept, when early stopping is on.
    pub best_epoch: Option<usize>,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &[&Array2<f64>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self { beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Mean batch loss and parameter gradients.
fn loss_and_grads<M: Trainable + ?Sized>(
    model: &M,
    histories: Vec<usize>,
    targets: Vec<usize>,
    dropout: Option<&mut LabRng>,
) -> (f64, Vec<Array2<f64>>) {
    let rows = targets.len();
    let mut tape = Tape::new();
    let (logits, vars) = model.forward_graph(&mut tape, histories, rows, dropout);
    let loss = tape.softmax_xent(logits, targets);
    let value = tape.value(loss)[[0, 0]];
    let mut grads = tape.backward(loss);
    let params = model.params();
    let out = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads[v].take().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
        .collect();
    (value, out)
}

fn check_finite(what: &str, epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("{what} loss became {loss} in epoch {}", epoch + 1)))
    }
}

/// Minimizes mean per-event cross-entropy over every (history, next outcome)
/// event of `strings`, EOS events included. Deterministic given `cfg.seed`.
pub fn train<M: Trainable + Clone>(model: &mut M, strings: &[SymbolString], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if strings.is_empty() {
        return Err(Error::Input("cannot train on an empty corpus".into()));
    }
    let alphabet = model.alphabet();
    let order = model.order();
    let (train_strings, dev_strings): (Vec<SymbolString>, Vec<SymbolString>) = match cfg.early_stopping {
        Some(es) if strings.len() >= 2 => {
            let mut idx: Vec<usize> = (0..strings.len()).collect();
            idx.shuffle(&mut seeding::rng(seeding::derive(cfg.seed, "dev-split")));
            let cut = ((strings.len() as f64) * (1.0 - es.dev_fraction)).round() as usize;
            let cut = cut.clamp(1, strings.len() - 1);
            (
                idx[..cut].iter().map(|&i| strings[i].clone()).collect(),
                idx[cut..].iter().map(|&i| strings[i].clone()).collect(),
            )
        }
        _ => (strings.to_vec(), Vec::new()),
    };
    let train_ev = Events::from_strings(alphabet, &train_strings, order);
    let dev_ev = Events::from_strings(alphabet, &dev_strings, order);

    let initial_loss = model.mean_loss(&train_ev);
    check_finite("initial", 0, initial_loss)?;
    let mut adam = Adam::new(&model.params(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut shuffle_rng = seeding::rng(seeding::derive(cfg.seed, "shuffle"));
    let mut dropout_rng = seeding::rng(seeding::derive(cfg.seed, "dropout"));
    let mut order_idx: Vec<usize> = (0..train_ev.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut dev_losses = Vec::new();
    let mut best: Option<(usize, f64, M)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order_idx.shuffle(&mut shuffle_rng);
        let mut running = 0.0;
        for batch in order_idx.chunks(cfg.batch_size) {
            let (h, t) = train_ev.select(batch);
            let (loss, grads) = loss_and_grads(model, h, t, Some(&mut dropout_rng));
            check_finite("batch", epoch, loss)?;
            running += loss * batch.len() as f64;
            adam.step(model.params_mut(), &grads, lr);
        }
        let epoch_loss =
            if cfg.full_pass_loss { model.mean_loss(&train_ev) } else { running / train_ev.len() as f64 };
        check_finite("training", epoch, epoch_loss)?;
        epoch_losses.push(epoch_loss);

        if cfg.early_stopping.is_some() && !dev_ev.is_empty() {
            let dev = model.mean_loss(&dev_ev);
            check_finite("dev", epoch, dev)?;
            dev_losses.push(dev);
            if best.as_ref().is_none_or(|(_, b, _)| dev < *b) {
                best = Some((epoch, dev, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stopping.map_or(usize::MAX, |es| es.patience) {
                    break;
                }
            }
        }
    }
    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, kept)) = best {
        *model = kept;
    }
    model.set_training(TrainingRecord { cfg: cfg.clone(), epoch_losses: epoch_losses.clone(), dev_losses: dev_losses.clone() });
    Ok(TrainReport { initial_loss, epoch_losses, dev_losses, best_epoch })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradcheckKind {
    LogLinear,
    Neural,
}

const FD_STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;
const GRADCHECK_BATCH: usize = 8;

fn random_batch(rng: &mut LabRng, alphabet: Alphabet, order: usize) -> (Vec<usize>, Vec<usize>) {
    let h = (0..GRADCHECK_BATCH * (order - 1)).map(|_| rng.random_range(0..alphabet.num_history_symbols())).collect();
    let t = (0..GRADCHECK_BATCH).map(|_| rng.random_range(0..alphabet.num_outcomes())).collect();
    (h, t)
}

fn max_rel_error<M: Trainable>(model: &mut M, h: &[usize], t: &[usize]) -> f64 {
    let (_, analytic) = loss_and_grads(model, h.to_vec(), t.to_vec(), None);
    let loss = |m: &M| {
        let mut tape = Tape::new();
        let (logits, _) = m.forward_graph(&mut tape, h.to_vec(), t.len(), None);
        let l = tape.softmax_xent(logits, t.to_vec());
        tape.value(l)[[0, 0]]
    };
    let mut worst: f64 = 0.0;
    for (p, g) in analytic.iter().enumerate() {
        for (k, &ga) in g.iter().enumerate() {
            let orig = model.params()[p].as_slice().expect("standard layout")[k];
            model.params_mut()[p].as_slice_mut().expect("standard layout")[k] = orig + FD_STEP;
            let up = loss(model);
            model.params_mut()[p].as_slice_mut().expect("standard layout")[k] = orig - FD_STEP;
            let down = loss(model);
            model.params_mut()[p].as_slice_mut().expect("standard layout")[k] = orig;
            let gn = (up - down) / (2.0 * FD_STEP);
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Largest relative difference between analytic and central-difference
/// gradients over every parameter of a small random model.
pub fn gradcheck(kind: GradcheckKind, seed: u64) -> Result<f64> {
    let alphabet = Alphabet::new(3)?;
    let order = 3;
    match kind {
        GradcheckKind::LogLinear => {
            let mut m = LogLinearModel::random(alphabet, order, 0.5, seeding::derive(seed, "init"))?;
            let (h, t) = random_batch(&mut seeding::rng(seeding::derive(seed, "batch")), alphabet, order);
            Ok(max_rel_error(&mut m, &h, &t))
        }
        GradcheckKind::Neural => {
            let shape = NeuralShape { embed_dim: 3, hidden: 5, dropout: 0.5, bias: true };
            // Redraw until no hidden pre-activation sits within reach of the ReLU kink.
            for attempt in 0..1000u64 {
                let s = seeding::derive(seed, &format!("attempt-{attempt}"));
                let mut m = NeuralNGramModel::init(alphabet, order, shape, seeding::derive(s, "init"))?;
                let mut rng = seeding::rng(seeding::derive(s, "bias"));
                m.b1.mapv_inplace(|_| rng.random_range(-0.1..0.1));
                m.b2.mapv_inplace(|_| rng.random_range(-0.1..0.1));
                let (h, t) = random_batch(&mut seeding::rng(seeding::derive(s, "batch")), alphabet, order);
                let z = m.pre_activations(&h, t.len());
                if z.iter().all(|v| v.abs() > KINK_MARGIN) {
                    return Ok(max_rel_error(&mut m, &h, &t));
                }
            }
            Err(Error::Training("could not draw a batch clear of ReLU kinks".into()))
        }
    }
}
