// SPDX-License-Identifier: MIT OR Apache-2.0

//! Association between a continuous score and a binary outcome.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-likelihood improvement below which IRLS stops.
pub const LOGISTIC_TOLERANCE: f64 = 1e-10;
pub const LOGISTIC_MAX_ITER: usize = 100;

/// Point-biserial correlation between `values` and binary `flags`.
///
/// `r = (M1 − M0) / s_n · sqrt(p q)` with the population standard deviation
/// `s_n`, group means `M1`/`M0` (flag true/false) and class fractions `p`/`q`.
pub fn point_biserial(values: &[f64], flags: &[bool]) -> Result<f64> {
    check_lengths(values, flags)?;
    let n = values.len() as f64;
    let (mut sum1, mut n1, mut sum0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &f) in values.iter().zip(flags) {
        if f {
            sum1 += v;
            n1 += 1;
        } else {
            sum0 += v;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::UndefinedStatistic(
            "point-biserial correlation needs both classes present".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::UndefinedStatistic(
            "point-biserial correlation is undefined for zero variance".into(),
        ));
    }
    let p = n1 as f64 / n;
    let q = n0 as f64 / n;
    let r = (sum1 / n1 as f64 - sum0 / n0 as f64) / sd * (p * q).sqrt();
    Ok(r.clamp(-1.0, 1.0))
}

/// Univariate logistic regression `P(flag) = σ(intercept + coefficient · x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coefficient: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Maximum-likelihood fit by iteratively reweighted least squares.
///
/// The predictor is centred internally; the returned intercept is on the
/// original scale. A constant predictor carries no signal and yields a zero
/// coefficient with the intercept at the log-odds of the base rate.
/// Data where one class's values all lie on one side of the other's
/// (including touching at the boundary) has no finite optimum and is
/// rejected.
pub fn logistic_fit(values: &[f64], flags: &[bool]) -> Result<LogisticFit> {
    check_lengths(values, flags)?;
    let n1 = flags.iter().filter(|&&f| f).count();
    let n0 = flags.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::UndefinedStatistic(
            "logistic regression needs both classes present".into(),
        ));
    }
    let y: Vec<f64> = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let x: Vec<f64> = values.iter().map(|v| v - mean).collect();

    if values.iter().all(|&v| v == values[0]) {
        let rate = n1 as f64 / flags.len() as f64;
        let intercept = (rate / (1.0 - rate)).ln();
        return Ok(LogisticFit {
            intercept,
            coefficient: 0.0,
            log_likelihood: log_likelihood(intercept, 0.0, &x, &y),
            iterations: 0,
        });
    }

    let range = |want: bool| {
        values
            .iter()
            .zip(flags)
            .filter(|(_, &f)| f == want)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)))
    };
    let (lo1, hi1) = range(true);
    let (lo0, hi0) = range(false);
    if hi0 <= lo1 || hi1 <= lo0 {
        return Err(Error::NonConvergence(
            "perfect separation: the classes do not overlap in the predictor, so the likelihood has no finite maximum".into(),
        ));
    }

    let (mut a, mut b) = (0.0, 0.0);
    let mut ll = log_likelihood(a, b, &x, &y);
    for iter in 1..=LOGISTIC_MAX_ITER {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(&y) {
            let p = sigmoid(a + b * xi);
            let w = p * (1.0 - p);
            g0 += yi - p;
            g1 += (yi - p) * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) {
            return Err(Error::NonConvergence(format!(
                "singular information matrix at iteration {iter}"
            )));
        }
        a += (h11 * g0 - h01 * g1) / det;
        b += (h00 * g1 - h01 * g0) / det;
        let next = log_likelihood(a, b, &x, &y);
        let improvement = next - ll;
        ll = next;
        if improvement.abs() < LOGISTIC_TOLERANCE {
            return Ok(LogisticFit {
                intercept: a - b * mean,
                coefficient: b,
                log_likelihood: ll,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "IRLS did not converge within {LOGISTIC_MAX_ITER} iterations"
    )))
}

fn check_lengths(values: &[f64], flags: &[bool]) -> Result<()> {
    if values.len() != flags.len() {
        return Err(Error::Input(format!(
            "{} values but {} flags",
            values.len(),
            flags.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("value {i} is not finite")));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `Σ y log σ(z) + (1 − y) log(1 − σ(z))`, computed without cancellation.
fn log_likelihood(a: f64, b: f64, x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let z = a + b * xi;
            // log(1 + e^z), stable for both signs.
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            yi * z - softplus
        })
        .sum()
}
