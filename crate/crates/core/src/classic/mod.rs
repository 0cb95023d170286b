//! Count-based estimation: MLE, add-λ, absolute discounting and Witten–Bell.
//!
//! The interpolating estimators recurse down to order 1 and then to a
//! uniform order-0 distribution over Σ̄, which keeps them strictly positive.

mod counts;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use counts::{ContextCounts, CountTable};

use crate::error::{Error, Result};
use crate::lm::{check_history_len, Alphabet, ConditionalDistribution, History, LanguageModel, Symbol};

/// Default hyperparameter grids.
pub const ADD_LAMBDA_GRID: [f64; 3] = [0.01, 0.1, 1.0];
pub const DISCOUNT_GRID: [f64; 3] = [0.6, 0.8, 0.95];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Smoothing {
    Mle,
    AddLambda { lambda: f64 },
    AbsoluteDiscounting { delta: f64 },
    WittenBell,
}

impl Smoothing {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Smoothing::AddLambda { lambda } if !(lambda > 0.0) => {
                Err(Error::Spec(format!("add-λ needs λ > 0, got {lambda}")))
            }
            Smoothing::AbsoluteDiscounting { delta } if !(delta > 0.0 && delta <= 1.0) => {
                Err(Error::Spec(format!("absolute discounting needs 0 < δ ≤ 1, got {delta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            Smoothing::Mle => "mle",
            Smoothing::AddLambda { .. } => "add_lambda",
            Smoothing::AbsoluteDiscounting { .. } => "absolute_discounting",
            Smoothing::WittenBell => "witten_bell",
        }
    }

    pub fn hyperparameter(&self) -> Option<f64> {
        match *self {
            Smoothing::AddLambda { lambda } => Some(lambda),
            Smoothing::AbsoluteDiscounting { delta } => Some(delta),
            Smoothing::Mle | Smoothing::WittenBell => None,
        }
    }

    /// MLE, WB, and each point of the add-λ and AD grids.
    pub fn default_grid() -> Vec<Smoothing> {
        let mut out = vec![Smoothing::Mle];
        out.extend(ADD_LAMBDA_GRID.iter().map(|&lambda| Smoothing::AddLambda { lambda }));
        out.extend(DISCOUNT_GRID.iter().map(|&delta| Smoothing::AbsoluteDiscounting { delta }));
        out.push(Smoothing::WittenBell);
        out
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hyperparameter() {
            Some(v) => write!(f, "{}({v})", self.method_name()),
            None => f.write_str(self.method_name()),
        }
    }
}

impl CountTable {
    fn uniform(&self) -> f64 {
        1.0 / self.alphabet().num_outcomes() as f64
    }

    /// C(h y)/C(h); `None` is the undefined-history marker (C(h) = 0).
    pub fn mle(&self, history: &[Symbol], outcome: usize) -> Option<f64> {
        let c = self.context(history)?;
        Some(c.count(outcome) as f64 / c.total as f64)
    }

    /// (C(h y) + λ)/(C(h) + (|Σ|+1)λ)
    pub fn add_lambda(&self, lambda: f64, history: &[Symbol], outcome: usize) -> f64 {
        let k = self.alphabet().num_outcomes() as f64;
        let (c_hy, c_h) = self
            .context(history)
            .map_or((0, 0), |c| (c.count(outcome), c.total));
        (c_hy as f64 + lambda) / (c_h as f64 + k * lambda)
    }

    /// Interpolated absolute discounting down to the uniform order-0 base.
    pub fn absolute_discounting(&self, delta: f64, history: &[Symbol], outcome: usize) -> f64 {
        let mut q = self.uniform();
        for k in 0..=history.len() {
            let h = &history[history.len() - k..];
            if let Some(c) = self.context(h) {
                let total = c.total as f64;
                let discounted = (c.count(outcome) as f64 - delta).max(0.0) / total;
                q = discounted + delta * c.types() as f64 / total * q;
            }
        }
        q
    }

    /// Witten–Bell interpolation down to the uniform order-0 base.
    pub fn witten_bell(&self, history: &[Symbol], outcome: usize) -> f64 {
        let mut q = self.uniform();
        for k in 0..=history.len() {
            let h = &history[history.len() - k..];
            if let Some(c) = self.context(h) {
                let types = c.types() as f64;
                q = (c.count(outcome) as f64 + types * q) / (types + c.total as f64);
            }
        }
        q
    }

    /// q(y | h) under `method`; `None` only for MLE at an unseen history.
    pub fn estimate(&self, method: Smoothing, history: &[Symbol], outcome: usize) -> Option<f64> {
        match method {
            Smoothing::Mle => self.mle(history, outcome),
            Smoothing::AddLambda { lambda } => Some(self.add_lambda(lambda, history, outcome)),
            Smoothing::AbsoluteDiscounting { delta } => Some(self.absolute_discounting(delta, history, outcome)),
            Smoothing::WittenBell => Some(self.witten_bell(history, outcome)),
        }
    }

    /// The full distribution over Σ̄ in one pass of the recursion.
    pub fn distribution(&self, method: Smoothing, history: &[Symbol]) -> Option<Vec<f64>> {
        let n = self.alphabet().num_outcomes();
        let counts = |c: &ContextCounts| {
            let mut v = vec![0.0; n];
            for &(o, k) in &c.next {
                v[o as usize] = k as f64;
            }
            v
        };
        match method {
            Smoothing::Mle => {
                let c = self.context(history)?;
                let total = c.total as f64;
                Some(counts(c).into_iter().map(|x| x / total).collect())
            }
            Smoothing::AddLambda { lambda } => {
                let denom = self.history_total(history) as f64 + n as f64 * lambda;
                Some(match self.context(history) {
                    Some(c) => counts(c).into_iter().map(|x| (x + lambda) / denom).collect(),
                    None => vec![lambda / denom; n],
                })
            }
            Smoothing::AbsoluteDiscounting { .. } | Smoothing::WittenBell => {
                let mut q = vec![self.uniform(); n];
                for k in 0..=history.len() {
                    let Some(c) = self.context(&history[history.len() - k..]) else { continue };
                    let total = c.total as f64;
                    let types = c.types() as f64;
                    let cv = counts(c);
                    for (qy, cy) in q.iter_mut().zip(cv) {
                        *qy = match method {
                            Smoothing::AbsoluteDiscounting { delta } => {
                                (cy - delta).max(0.0) / total + delta * types / total * *qy
                            }
                            _ => (cy + types * *qy) / (types + total),
                        };
                    }
                }
                Some(q)
            }
        }
    }
}

/// A count table viewed as an order-n̂ language model under one smoothing method.
#[derive(Clone, Debug)]
pub struct ClassicLm {
    table: Arc<CountTable>,
    method: Smoothing,
    order: usize,
}

impl ClassicLm {
    /// `order` may be below the table's n̂: lower orders are read from the same counts.
    pub fn new(table: Arc<CountTable>, method: Smoothing, order: usize) -> Result<Self> {
        method.validate()?;
        if order == 0 || order > table.n_hat() {
            return Err(Error::Spec(format!(
                "order {order} not in 1..={} for this count table",
                table.n_hat()
            )));
        }
        Ok(Self { table, method, order })
    }

    pub fn method(&self) -> Smoothing {
        self.method
    }

    pub fn table(&self) -> &CountTable {
        &self.table
    }
}

/// Shorthand for [`ClassicLm::new`] at the table's own order.
pub fn as_lm(table: Arc<CountTable>, method: Smoothing) -> Result<ClassicLm> {
    let order = table.n_hat();
    ClassicLm::new(table, method, order)
}

impl LanguageModel for ClassicLm {
    fn alphabet(&self) -> Alphabet {
        self.table.alphabet()
    }

    fn order(&self) -> usize {
        self.order
    }

    fn conditional(&self, history: History<'_>) -> Result<Option<ConditionalDistribution>> {
        check_history_len(self.order, history)?;
        Ok(self
            .table
            .distribution(self.method, history.ids())
            .map(ConditionalDistribution::from_trusted))
    }

    fn next_prob(&self, history: History<'_>, outcome: usize) -> Result<f64> {
        check_history_len(self.order, history)?;
        Ok(self.table.estimate(self.method, history.ids(), outcome).unwrap_or(0.0))
    }
}
