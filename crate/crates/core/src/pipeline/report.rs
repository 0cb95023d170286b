//! Replicate aggregation and the human-readable results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::ResultRow;
use crate::lm::Family;

/// Label of the per-replicate minimum over dev-selected classic estimators.
pub const BEST_CLASSIC: &str = "best_classic";

/// Mean and sample standard deviation of K̂L over the replicates of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub family: Family,
    pub n: usize,
    pub alphabet_size: usize,
    pub rank: usize,
    pub n_hat: usize,
    pub estimator: String,
    pub replicates: usize,
    pub mean: f64,
    pub sd: f64,
    pub n_infinite: usize,
    pub mean_finite: f64,
    pub sd_finite: f64,
}

impl Aggregate {
    pub fn display(&self) -> String {
        let flag = if self.replicates < 2 { " (1 replicate)" } else { "" };
        if self.n_infinite > 0 {
            format!("inf (finite {}){flag}", format_mean_sd(self.mean_finite, self.sd_finite))
        } else {
            format!("{}{flag}", format_mean_sd(self.mean, self.sd))
        }
    }

    fn rank_key(&self) -> (bool, f64) {
        if self.n_infinite > 0 {
            (true, self.mean_finite)
        } else {
            (false, self.mean)
        }
    }
}

/// `3.00±1.58`
pub fn format_mean_sd(mean: f64, sd: f64) -> String {
    format!("{mean:.2}±{sd:.2}")
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type ConfigKey = (u8, usize, usize, usize, usize);

fn family_rank(f: Family) -> u8 {
    match f {
        Family::General => 0,
        Family::Sparse => 1,
        Family::Dense => 2,
    }
}

fn estimator_label(row: &ResultRow) -> String {
    row.method.clone()
}

/// Groups dev-selected rows by configuration and estimator, adding a
/// best-of-classic estimator: per replicate, the lowest test K̂L over every
/// classic method and hyperparameter.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    // (config, estimator) -> per-replicate (KL, KL_finite)
    let mut groups: BTreeMap<(ConfigKey, String), (Family, Vec<(f64, f64)>)> = BTreeMap::new();
    let mut best: BTreeMap<(ConfigKey, String), (Family, (f64, f64))> = BTreeMap::new();
    for r in rows {
        let config = (family_rank(r.family), r.n, r.alphabet_size, r.rank, r.n_hat);
        if r.dev_selected {
            let entry = groups.entry((config, estimator_label(r))).or_insert_with(|| (r.family, Vec::new()));
            entry.1.push((r.kl_hat, r.kl_hat_finite));
        }
        if r.is_classic() {
            let slot = best.entry((config, r.cell.clone())).or_insert((r.family, (f64::INFINITY, f64::INFINITY)));
            if r.kl_hat < slot.1 .0 || (r.kl_hat == slot.1 .0 && r.kl_hat_finite < slot.1 .1) {
                slot.1 = (r.kl_hat, r.kl_hat_finite);
            }
        }
    }
    for ((config, _cell), (family, v)) in best {
        groups.entry((config, BEST_CLASSIC.to_string())).or_insert_with(|| (family, Vec::new())).1.push(v);
    }
    groups
        .into_iter()
        .map(|(((_, n, alphabet_size, rank, n_hat), estimator), (family, vals))| {
            let kl: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let fin: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let n_infinite = kl.iter().filter(|x| x.is_infinite()).count();
            let (mean, sd) = if n_infinite > 0 { (f64::INFINITY, f64::NAN) } else { mean_sd(&kl) };
            let (mean_finite, sd_finite) = mean_sd(&fin);
            Aggregate { family, n, alphabet_size, rank, n_hat, estimator, replicates: vals.len(), mean, sd, n_infinite, mean_finite, sd_finite }
        })
        .collect()
}

pub struct ReportOutput {
    pub aggregates: Vec<Aggregate>,
    pub csv: String,
    pub text: String,
}

/// Builds the CSV and the plain-text table; the lowest mean K̂L of each
/// configuration is wrapped in `**`.
pub fn render_report(rows: &[ResultRow]) -> ReportOutput {
    let aggregates = aggregate(rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    for a in &aggregates {
        w.serialize(a).expect("in-memory csv");
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv");

    let mut by_config: BTreeMap<ConfigKey, Vec<&Aggregate>> = BTreeMap::new();
    for a in &aggregates {
        by_config.entry((family_rank(a.family), a.n, a.alphabet_size, a.rank, a.n_hat)).or_default().push(a);
    }
    let mut text = String::from("KL_hat (nats/string), mean±sd over replicates\n");
    for group in by_config.values() {
        let a0 = group[0];
        let _ = writeln!(text, "\n{} n={} |Σ|={} R={} n̂={}", a0.family, a0.n, a0.alphabet_size, a0.rank, a0.n_hat);
        let winner = group
            .iter()
            .filter(|a| a.estimator != BEST_CLASSIC)
            .min_by(|a, b| a.rank_key().partial_cmp(&b.rank_key()).unwrap_or(std::cmp::Ordering::Equal))
            .map(|a| a.estimator.clone());
        for a in group {
            let cell = a.display();
            let cell = if Some(&a.estimator) == winner.as_ref() { format!("**{cell}**") } else { cell };
            let _ = writeln!(text, "  {:<22} {cell}", a.estimator);
        }
    }
    ReportOutput { aggregates, csv, text }
}
