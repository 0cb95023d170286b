//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

/// Event counts keyed by (history suffix, outcome), built straight from the
/// strings: every n̂-window contributes to each of its suffixes.
pub struct NaiveCounts {
    pub sigma: usize,
    pub width: usize,
    pub joint: HashMap<(Vec<u32>, usize), u64>,
}

impl NaiveCounts {
    pub fn new(strings: &[Vec<u32>], sigma: usize, n_hat: usize) -> Self {
        let bos = sigma as u32;
        let width = n_hat - 1;
        let mut joint = HashMap::new();
        for y in strings {
            let mut padded = vec![bos; width];
            padded.extend_from_slice(y);
            for t in 0..=y.len() {
                let outcome = if t < y.len() { y[t] as usize } else { sigma };
                let window = &padded[t..t + width];
                for k in 0..=width {
                    *joint.entry((window[width - k..].to_vec(), outcome)).or_insert(0) += 1;
                }
            }
        }
        Self { sigma, width, joint }
    }

    pub fn c(&self, h: &[u32], y: usize) -> f64 {
        *self.joint.get(&(h.to_vec(), y)).unwrap_or(&0) as f64
    }

    pub fn total(&self, h: &[u32]) -> f64 {
        (0..=self.sigma).map(|y| self.c(h, y)).sum()
    }

    pub fn distinct(&self, h: &[u32]) -> f64 {
        (0..=self.sigma).filter(|&y| self.c(h, y) > 0.0).count() as f64
    }

    fn outcomes(&self) -> f64 {
        (self.sigma + 1) as f64
    }

    pub fn mle(&self, h: &[u32], y: usize) -> Option<f64> {
        let t = self.total(h);
        (t > 0.0).then(|| self.c(h, y) / t)
    }

    pub fn add_lambda(&self, lambda: f64, h: &[u32], y: usize) -> f64 {
        (self.c(h, y) + lambda) / (self.total(h) + lambda * self.outcomes())
    }

    pub fn absolute_discounting(&self, delta: f64, h: &[u32], y: usize) -> f64 {
        let lower = if h.is_empty() { 1.0 / self.outcomes() } else { self.absolute_discounting(delta, &h[1..], y) };
        let t = self.total(h);
        if t == 0.0 {
            return lower;
        }
        (self.c(h, y) - delta).max(0.0) / t + delta * self.distinct(h) / t * lower
    }

    pub fn witten_bell(&self, h: &[u32], y: usize) -> f64 {
        let lower = if h.is_empty() { 1.0 / self.outcomes() } else { self.witten_bell(&h[1..], y) };
        let t = self.total(h);
        if t == 0.0 {
            return lower;
        }
        let d = self.distinct(h);
        (self.c(h, y) + d * lower) / (t + d)
    }
}

/// P(T ≤ t) for Student's t by composite Simpson integration of the density.
pub fn simpson_t_cdf(t: f64, dof: f64) -> f64 {
    let ln_norm = ln_gamma((dof + 1.0) / 2.0) - ln_gamma(dof / 2.0) - 0.5 * (dof * std::f64::consts::PI).ln();
    let density = |x: f64| (ln_norm - (dof + 1.0) / 2.0 * (1.0 + x * x / dof).ln()).exp();
    let a = t.abs();
    let steps = 20_000;
    let h = a / steps as f64;
    let mut s = density(0.0) + density(a);
    for i in 1..steps {
        s += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half = s * h / 3.0;
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
