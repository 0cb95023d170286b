//! z-score standardization and ordinary least squares with classical
//! inference (standard errors, two-sided t-test p-values, R²).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// (x − mean)/sd with the sample (n−1) standard deviation.
pub fn zscore(name: &str, column: &[f64]) -> Result<Vec<f64>> {
    let first = column.first().copied();
    if column.len() < 2 || column.iter().all(|x| Some(*x) == first) {
        return Err(Error::DegenerateColumn(name.to_string()));
    }
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let sd = (column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(column.iter().map(|x| (x - mean) / sd).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub predictor: String,
    pub beta: f64,
    pub stderr: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Intercept first, then predictors in input order.
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub sigma2: f64,
    pub dof: usize,
    pub n_rows: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.predictor == name)
    }
}

pub const INTERCEPT: &str = "intercept";

/// Two-sided p-value of a t statistic with `dof` degrees of freedom.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Fits `y = b0 + Σ b_j x_j` by least squares. `columns[j]` holds predictor
/// `names[j]`; the intercept column is added here and not standardized.
pub fn ols_fit(names: &[String], columns: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let k = columns.len();
    if names.len() != k {
        return Err(Error::Input("one name per predictor column is required".into()));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Input("predictor columns and response differ in length".into()));
    }
    if n <= k + 1 {
        return Err(Error::Input(format!("{n} rows cannot support {k} predictors plus an intercept")));
    }
    let x = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names.iter().cloned());
    check_full_rank(&x, &all_names)?;

    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(all_names.clone()))?;
    let resid = &yv - &x * &beta;
    let ssr = resid.norm_squared();
    let mean = yv.mean();
    let sst: f64 = yv.iter().map(|v| (v - mean).powi(2)).sum();
    let dof = n - k - 1;
    let sigma2 = ssr / dof as f64;
    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k + 1, k + 1))
        .ok_or_else(|| Error::RankDeficient(all_names.clone()))?;
    let cov_unscaled = &r_inv * r_inv.transpose();
    let coefficients = all_names
        .into_iter()
        .enumerate()
        .map(|(j, predictor)| {
            let stderr = (sigma2 * cov_unscaled[(j, j)]).sqrt();
            let t = beta[j] / stderr;
            let t = if stderr == 0.0 && beta[j] == 0.0 { 0.0 } else { t };
            Coefficient { predictor, beta: beta[j], stderr, t, p: t_two_sided_p(t, dof as f64) }
        })
        .collect();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    Ok(OlsFit { coefficients, r2, sigma2, dof, n_rows: n, residuals: resid.iter().copied().collect() })
}

/// Gram–Schmidt pass that names the first column lying in the span of the
/// earlier ones, together with the earlier columns it depends on.
fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut accepted: Vec<usize> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let mut r = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r -= q * c;
            }
        }
        let norm = r.norm();
        if norm <= 1e-9 * col.norm().max(1.0) {
            let prev = x.select_columns(&accepted);
            let coef = prev
                .clone()
                .svd(true, true)
                .solve(&col, 1e-12)
                .map_err(|e| Error::Input(e.to_string()))?;
            let mut involved: Vec<String> = accepted
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() > 1e-8)
                .map(|(&i, _)| names[i].clone())
                .collect();
            involved.push(names[j].clone());
            return Err(Error::RankDeficient(involved));
        }
        basis.push(r / norm);
        accepted.push(j);
    }
    Ok(())
}

/// One named-column table, as read from CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("no column named `{name}`")))?;
        self.rows
            .iter()
            .map(|r| parse_real(&r[j]).ok_or_else(|| Error::Format(format!("`{}` in column {name} is not a number", r[j]))))
            .collect()
    }
}

fn parse_real(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

/// Table-4-shaped regression output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub response: String,
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub n_rows: usize,
    /// Rows dropped because the response was not finite.
    pub n_excluded: usize,
    /// Requested predictors left out because they were constant.
    pub degenerate: Vec<String>,
}

/// z-scores every predictor, drops non-finite responses, and fits OLS.
/// Constant predictors, and predictors collinear with those before them, are
/// skipped (listed in `degenerate`) when `skip_degenerate` is set and are an
/// error otherwise.
pub fn regress(table: &Table, response: &str, predictors: &[String], skip_degenerate: bool) -> Result<RegressionReport> {
    let y_all = table.column(response)?;
    let keep: Vec<usize> = (0..y_all.len()).filter(|&i| y_all[i].is_finite()).collect();
    let n_excluded = y_all.len() - keep.len();
    let y: Vec<f64> = keep.iter().map(|&i| y_all[i]).collect();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut degenerate = Vec::new();
    for p in predictors {
        let col = table.column(p)?;
        let col: Vec<f64> = keep.iter().map(|&i| col[i]).collect();
        match zscore(p, &col) {
            Ok(z) => {
                names.push(p.clone());
                columns.push(z);
                if skip_degenerate {
                    if let Err(Error::RankDeficient(_)) = ols_fit(&names, &columns, &y) {
                        names.pop();
                        columns.pop();
                        degenerate.push(p.clone());
                    }
                }
            }
            Err(Error::DegenerateColumn(_)) if skip_degenerate => degenerate.push(p.clone()),
            Err(e) => return Err(e),
        }
    }
    let fit = ols_fit(&names, &columns, &y)?;
    Ok(RegressionReport {
        response: response.to_string(),
        coefficients: fit.coefficients,
        r2: fit.r2,
        n_rows: fit.n_rows,
        n_excluded,
        degenerate,
    })
}
