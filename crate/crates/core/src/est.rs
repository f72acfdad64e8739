//! Estimators of offspring/immigration means and variances from one path.
//!
//! All sums are compensated; a zero denominator is a typed error so that
//! Monte Carlo layers can count and exclude degenerate paths.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gwi::PathRecord;
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    NaturalMean,
    ClseMeanKnownImmigration,
    ClseMeanJoint,
    ClseVariances,
    ClseVariancesPlugin,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::NaturalMean => "natural-mean",
            EstimatorKind::ClseMeanKnownImmigration => "clse-mean",
            EstimatorKind::ClseMeanJoint => "clse-mean-joint",
            EstimatorKind::ClseVariances => "clse-variances",
            EstimatorKind::ClseVariancesPlugin => "clse-variances-plugin",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstError {
    #[error("{kind}: degenerate path (zero denominator)")]
    Degenerate { kind: EstimatorKind },
    #[error("{kind}: path has no immigration record")]
    MissingImmigration { kind: EstimatorKind },
}

/// Result of one estimator on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    /// Offspring-side value (`m` or `pi`).
    pub value: f64,
    /// Immigration-side value (`omega` or `r`) for the joint estimators.
    pub second: Option<f64>,
    /// Magnitude of the denominator, for diagnostics.
    pub denominator: f64,
}

/// Natural estimator of the offspring mean, using the recorded immigration.
pub fn natural_mean(path: &PathRecord) -> Result<EstimateReport, EstError> {
    let kind = EstimatorKind::NaturalMean;
    let eta = path.eta().ok_or(EstError::MissingImmigration { kind })?;
    let y = path.y();
    // integer sums are exact
    let offspring: u128 = (1..y.len()).map(|k| u128::from(y[k] - eta[k - 1])).sum();
    let parents: u128 = y[..y.len() - 1].iter().map(|v| u128::from(*v)).sum();
    if parents == 0 {
        return Err(EstError::Degenerate { kind });
    }
    Ok(EstimateReport { kind, value: offspring as f64 / parents as f64, second: None, denominator: parents as f64 })
}

/// Least-squares offspring mean when the immigration mean `omega` is known.
pub fn clse_mean_known_immigration(path: &PathRecord, omega: f64) -> Result<EstimateReport, EstError> {
    let kind = EstimatorKind::ClseMeanKnownImmigration;
    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    for w in path.y().windows(2) {
        let (prev, cur) = (w[0] as f64, w[1] as f64);
        num.add(prev * (cur - omega));
        den.add(prev * prev);
    }
    let den = den.value();
    if den <= 0.0 {
        return Err(EstError::Degenerate { kind });
    }
    Ok(EstimateReport { kind, value: num.value() / den, second: None, denominator: den })
}

struct RegressorStats {
    /// mean of y(1..=N)
    mean_current: f64,
    /// mean of y(0..N)
    mean_lagged: f64,
    /// sum of (y(k-1) - mean_lagged)^2
    centered_ss: f64,
}

fn regressor_stats(path: &PathRecord, kind: EstimatorKind) -> Result<RegressorStats, EstError> {
    let y = path.y();
    let lagged = &y[..y.len() - 1];
    if lagged.iter().all(|v| Some(v) == lagged.first()) {
        return Err(EstError::Degenerate { kind });
    }
    let n = path.horizon() as f64;
    let mean_current = y[1..].iter().map(|v| *v as f64).collect::<CompensatedSum>().value() / n;
    let mean_lagged = lagged.iter().map(|v| *v as f64).collect::<CompensatedSum>().value() / n;
    let centered_ss = lagged
        .iter()
        .map(|v| {
            let d = *v as f64 - mean_lagged;
            d * d
        })
        .collect::<CompensatedSum>()
        .value();
    if centered_ss <= 0.0 {
        return Err(EstError::Degenerate { kind });
    }
    Ok(RegressorStats { mean_current, mean_lagged, centered_ss })
}

/// Joint least-squares estimate of `(m, omega)`.
pub fn clse_mean_joint(path: &PathRecord) -> Result<EstimateReport, EstError> {
    let kind = EstimatorKind::ClseMeanJoint;
    let stats = regressor_stats(path, kind)?;
    let num = path
        .y()
        .windows(2)
        .map(|w| w[0] as f64 * (w[1] as f64 - stats.mean_current))
        .collect::<CompensatedSum>()
        .value();
    let m = num / stats.centered_ss;
    let omega = stats.mean_current - m * stats.mean_lagged;
    Ok(EstimateReport { kind, value: m, second: Some(omega), denominator: stats.centered_ss })
}

/// Joint least-squares estimate of the offspring and immigration variances
/// `(pi, r)` from residuals `u(k) = y(k) - m y(k-1) - omega`.
pub fn clse_variances(path: &PathRecord, m: f64, omega: f64) -> Result<EstimateReport, EstError> {
    variances_with(path, m, omega, EstimatorKind::ClseVariances)
}

/// As [`clse_variances`] with `(m, omega)` replaced by the joint estimate.
pub fn clse_variances_plugin(path: &PathRecord) -> Result<EstimateReport, EstError> {
    let kind = EstimatorKind::ClseVariancesPlugin;
    let joint = clse_mean_joint(path).map_err(|_| EstError::Degenerate { kind })?;
    variances_with(path, joint.value, joint.second.expect("joint has omega"), kind)
}

fn variances_with(path: &PathRecord, m: f64, omega: f64, kind: EstimatorKind) -> Result<EstimateReport, EstError> {
    let stats = regressor_stats(path, kind)?;
    let mut weighted = CompensatedSum::new();
    let mut squares = CompensatedSum::new();
    for w in path.y().windows(2) {
        let (prev, cur) = (w[0] as f64, w[1] as f64);
        let u = cur - m * prev - omega;
        let u2 = u * u;
        weighted.add(u2 * (prev - stats.mean_lagged));
        squares.add(u2);
    }
    let pi = weighted.value() / stats.centered_ss;
    let r = squares.value() / path.horizon() as f64 - pi * stats.mean_lagged;
    Ok(EstimateReport { kind, value: pi, second: Some(r), denominator: stats.centered_ss })
}

/// Rate applied to `estimate - truth` before comparing with a limit law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `1`
    Unit,
    /// `n`
    N,
    /// `n^2 / c_n`
    NSquaredOverCn,
    /// `n / c_n`
    NOverCn,
    /// `n^{3/2}`
    NThreeHalves,
    /// `n^{1/2}`
    SqrtN,
}

impl Normalization {
    pub fn factor(self, n: u64, c_n: f64) -> f64 {
        let n = n as f64;
        match self {
            Normalization::Unit => 1.0,
            Normalization::N => n,
            Normalization::NSquaredOverCn => n * n / c_n,
            Normalization::NOverCn => n / c_n,
            Normalization::NThreeHalves => n * n.sqrt(),
            Normalization::SqrtN => n.sqrt(),
        }
    }

    pub fn apply(self, n: u64, c_n: f64, estimate: f64, truth: f64) -> f64 {
        self.factor(n, c_n) * (estimate - truth)
    }
}

/// One row of the estimate export.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub replicate: u64,
    pub n: u64,
    pub estimator: String,
    pub value: f64,
    pub normalized: Option<f64>,
}

/// Writes `replicate,n,estimator,value,normalized_value`; unavailable
/// normalized values are left empty.
pub fn write_estimates_csv<'a, W, I>(mut out: W, rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a EstimateRow>,
{
    writeln!(out, "replicate,n,estimator,value,normalized_value")?;
    for row in rows {
        write!(out, "{},{},{},{},", row.replicate, row.n, row.estimator, row.value)?;
        match row.normalized {
            Some(v) => writeln!(out, "{v}")?,
            None => writeln!(out)?,
        }
    }
    Ok(())
}
