//! Small sample-statistics helpers shared by the checks and experiments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn z_score(&self) -> f64 {
        z_score(self.mean, self.std_err)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len().max(1) as f64;
    Estimate { mean: mean(xs), std_err: (variance(xs) / n).sqrt() }
}

/// Estimate of E[w·x] from paired samples.
pub fn weighted_estimate(xs: &[f64], weights: Option<&[f64]>) -> Estimate {
    match weights {
        None => estimate(xs),
        Some(w) => {
            let prod: Vec<f64> = xs.iter().zip(w).map(|(x, w)| x * w).collect();
            estimate(&prod)
        }
    }
}

/// z-score with the convention 0/0 = 0 and c/0 = ±inf.
pub fn z_score(value: f64, std_err: f64) -> f64 {
    if std_err > 0.0 {
        value / std_err
    } else if value == 0.0 {
        0.0
    } else {
        value.signum() * f64::INFINITY
    }
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Two-sided threshold giving the same family-wise error over `m` tests as
/// a single test at `threshold` standard errors.
pub fn bonferroni_threshold(threshold: f64, m: usize) -> f64 {
    if m <= 1 {
        return threshold;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let tail = 1.0 - normal.cdf(threshold);
    let per_test = tail / m as f64;
    if per_test <= 0.0 {
        return threshold;
    }
    normal.inverse_cdf(1.0 - per_test).max(threshold)
}

/// Ordinary least squares of `y` on the columns of `x` (an intercept column
/// is prepended). Returns coefficients and their heteroskedasticity-robust
/// (White, HC1) standard errors. Regressors
/// that are collinear with earlier ones are dropped and reported as `None`.
pub fn ols(y: &[f64], regressors: &[&[f64]]) -> Vec<Option<(f64, f64)>> {
    let n = y.len();
    let mut kept: Vec<usize> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (j, r) in regressors.iter().enumerate() {
        let spread = variance(r);
        if spread <= 1e-24 {
            continue;
        }
        let collinear = columns.iter().skip(1).any(|c| correlation(c, r).abs() > 1.0 - 1e-9);
        if collinear {
            continue;
        }
        kept.push(j);
        columns.push(r.to_vec());
    }
    let p = columns.len();
    let mut out = vec![None; regressors.len() + 1];
    if n <= p {
        return out;
    }
    let design = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let target = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let Some(inv) = xtx.try_inverse() else {
        return out;
    };
    let beta = &inv * design.transpose() * &target;
    let resid = &target - &design * &beta;
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let e2 = resid[i] * resid[i];
        for a in 0..p {
            let xa = columns[a][i] * e2;
            for b in 0..p {
                meat[(a, b)] += xa * columns[b][i];
            }
        }
    }
    let cov = &inv * meat * &inv * (n as f64 / (n - p) as f64);
    let coef_se = |j: usize| cov[(j, j)].max(0.0).sqrt();
    out[0] = Some((beta[0], coef_se(0)));
    for (slot, &j) in kept.iter().enumerate() {
        out[j + 1] = Some((beta[slot + 1], coef_se(slot + 1)));
    }
    out
}
