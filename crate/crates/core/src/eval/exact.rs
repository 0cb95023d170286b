//! Exact string-level entropy and KL for small n-gram LMs.
//!
//! The histories of an order-n LM form the transient states of an absorbing
//! Markov chain (EOS absorbs). Expected visit counts μ solve
//! `μ = e_start + μP`, i.e. `(I − Pᵀ) μ = e_start`, and every string-level
//! quantity that decomposes over steps is a μ-weighted sum of per-state terms.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lm::{History, LanguageModel, Symbol};

pub const DEFAULT_STATE_CAP: usize = 4096;

/// Slack allowed on Σ_s μ(s)·p(EOS|s) = 1 before the chain is declared divergent.
const ABSORPTION_TOL: f64 = 1e-6;

/// Expected history-visit counts of an LM's string distribution.
#[derive(Clone, Debug)]
pub struct ExactOracle {
    order: usize,
    states: Vec<Vec<Symbol>>,
    /// Conditional distribution of p at each state.
    dists: Vec<Vec<f64>>,
    visits: Vec<f64>,
}

impl ExactOracle {
    /// Enumerates the histories reachable from the all-BOS start with positive
    /// probability and solves for their expected visit counts.
    pub fn new<M: LanguageModel + ?Sized>(p: &M, state_cap: usize) -> Result<Self> {
        let alphabet = p.alphabet();
        let order = p.order();
        if order < 2 {
            return Err(Error::Input("exact oracle needs order ≥ 2".into()));
        }
        let width = order - 1;
        let start = vec![alphabet.bos(); width];
        let mut index: HashMap<Vec<Symbol>, usize> = HashMap::from([(start.clone(), 0)]);
        let mut states = vec![start];
        let mut dists = Vec::new();
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        let mut i = 0;
        while i < states.len() {
            let dist = p
                .conditional(History::trusted(&states[i]))?
                .ok_or_else(|| Error::Input("ground-truth LM leaves a reachable history undefined".into()))?
                .into_vec();
            for (y, &py) in dist.iter().enumerate().take(alphabet.size()) {
                if py <= 0.0 {
                    continue;
                }
                let mut next = states[i][1..].to_vec();
                next.push(y as Symbol);
                let j = match index.get(&next) {
                    Some(&j) => j,
                    None => {
                        if states.len() >= state_cap {
                            return Err(Error::Resource(format!(
                                "more than {state_cap} reachable histories; exact computation is infeasible"
                            )));
                        }
                        index.insert(next.clone(), states.len());
                        states.push(next);
                        states.len() - 1
                    }
                };
                edges.push((i, j, py));
            }
            dists.push(dist);
            i += 1;
        }

        let n = states.len();
        // A = I − Pᵀ, so that A μ = e_start.
        let mut a = DMatrix::<f64>::identity(n, n);
        for (from, to, prob) in edges {
            a[(to, from)] -= prob;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[0] = 1.0;
        let visits = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Divergence("I − Pᵀ is singular: EOS is unreachable from some history".into()))?;
        let visits: Vec<f64> = visits.iter().copied().collect();
        let eos = alphabet.eos_outcome();
        let absorbed: f64 = visits.iter().zip(&dists).map(|(m, d)| m * d[eos]).sum();
        if visits.iter().any(|m| !m.is_finite() || *m < -ABSORPTION_TOL) || (absorbed - 1.0).abs() > ABSORPTION_TOL {
            return Err(Error::Divergence(format!(
                "expected visit counts do not describe a terminating chain (absorption mass {absorbed})"
            )));
        }
        Ok(Self { order, states, dists, visits })
    }

    pub fn states(&self) -> &[Vec<Symbol>] {
        &self.states
    }

    /// μ(s), aligned with [`ExactOracle::states`].
    pub fn visits(&self) -> &[f64] {
        &self.visits
    }

    /// Σ_s μ(s) p(EOS|s); 1 for a terminating LM.
    pub fn absorption(&self) -> f64 {
        let eos = self.dists[0].len() - 1;
        self.visits.iter().zip(&self.dists).map(|(m, d)| m * d[eos]).sum()
    }

    /// Expected number of occurrences of each outcome (EOS last) per string.
    pub fn expected_outcome_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dists[0].len()];
        for (m, d) in self.visits.iter().zip(&self.dists) {
            for (o, p) in out.iter_mut().zip(d) {
                *o += m * p;
            }
        }
        out
    }

    /// H(p) in nats.
    pub fn entropy(&self) -> f64 {
        self.weighted(|d| -d.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>())
    }

    fn weighted(&self, per_state: impl Fn(&[f64]) -> f64) -> f64 {
        self.visits.iter().zip(&self.dists).map(|(m, d)| m * per_state(d)).sum()
    }

    /// Runs `f` on each state's (p-distribution, q-distribution) pair, with q
    /// queried on the state's most recent `q.order() − 1` symbols.
    fn against<M: LanguageModel + ?Sized>(&self, q: &M, f: impl Fn(&[f64], &[f64]) -> f64) -> Result<f64> {
        if q.order() > self.order {
            return Err(Error::Input(format!(
                "q has order {} but p's states only carry {} symbols of context",
                q.order(),
                self.order - 1
            )));
        }
        let mut total = 0.0;
        for ((state, m), pd) in self.states.iter().zip(&self.visits).zip(&self.dists) {
            let h = History::trusted(&state[state.len() - (q.order() - 1)..]);
            let term = match q.conditional(h)? {
                Some(qd) => f(pd, qd.probs()),
                None => f64::INFINITY,
            };
            total += m * term;
        }
        Ok(total)
    }

    /// H(p, q) = E_p[−ln q(y)] in nats.
    pub fn cross_entropy<M: LanguageModel + ?Sized>(&self, q: &M) -> Result<f64> {
        self.against(q, |pd, qd| {
            pd.iter()
                .zip(qd)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, q)| if *q > 0.0 { -p * q.ln() } else { f64::INFINITY })
                .sum()
        })
    }

    /// KL(p‖q) in nats, summed per state so it is never a difference of large numbers.
    pub fn kl<M: LanguageModel + ?Sized>(&self, q: &M) -> Result<f64> {
        self.against(q, |pd, qd| {
            pd.iter()
                .zip(qd)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, q)| if *q > 0.0 { p * (p / q).ln() } else { f64::INFINITY })
                .sum()
        })
    }
}

pub fn exact_entropy<M: LanguageModel + ?Sized>(p: &M) -> Result<f64> {
    Ok(ExactOracle::new(p, DEFAULT_STATE_CAP)?.entropy())
}

pub fn exact_kl<P: LanguageModel + ?Sized, Q: LanguageModel + ?Sized>(p: &P, q: &Q) -> Result<f64> {
    ExactOracle::new(p, DEFAULT_STATE_CAP)?.kl(q)
}

pub fn exact_cross_entropy<P: LanguageModel + ?Sized, Q: LanguageModel + ?Sized>(p: &P, q: &Q) -> Result<f64> {
    ExactOracle::new(p, DEFAULT_STATE_CAP)?.cross_entropy(q)
}
