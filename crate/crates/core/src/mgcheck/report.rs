use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::stats::z_score;

/// How a statistic is judged against its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    /// `|statistic| ≤ threshold · std_err`
    ZScore,
    /// `statistic ≤ threshold`
    UpperBound,
    /// `statistic ≥ threshold`
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckDetail {
    pub label: String,
    pub criterion: Criterion,
    pub statistic: f64,
    pub std_err: f64,
    pub threshold: f64,
}

impl CheckDetail {
    pub fn z(label: impl Into<String>, statistic: f64, std_err: f64, threshold: f64) -> Self {
        CheckDetail { label: label.into(), criterion: Criterion::ZScore, statistic, std_err, threshold }
    }

    pub fn at_most(label: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        CheckDetail { label: label.into(), criterion: Criterion::UpperBound, statistic, std_err: 0.0, threshold }
    }

    pub fn at_least(label: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        CheckDetail { label: label.into(), criterion: Criterion::LowerBound, statistic, std_err: 0.0, threshold }
    }

    /// Severity: ≤ 1 passes, > 1 fails. NaN statistics always fail.
    pub fn severity(&self) -> f64 {
        let s = match self.criterion {
            Criterion::ZScore => z_score(self.statistic, self.std_err).abs() / self.threshold,
            Criterion::UpperBound => {
                if self.statistic <= self.threshold {
                    0.0
                } else {
                    1.0 + (self.statistic - self.threshold).abs() / self.threshold.abs().max(f64::MIN_POSITIVE)
                }
            }
            Criterion::LowerBound => {
                if self.statistic >= self.threshold {
                    0.0
                } else {
                    1.0 + (self.threshold - self.statistic).abs() / self.threshold.abs().max(f64::MIN_POSITIVE)
                }
            }
        };
        if s.is_nan() {
            f64::INFINITY
        } else {
            s
        }
    }

    pub fn pass(&self) -> bool {
        self.severity() <= 1.0
    }
}

/// Outcome of one verification. The headline fields repeat the most severe
/// detail, so `pass` agrees with the headline criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub criterion: Criterion,
    pub statistic: f64,
    pub standard_error: f64,
    pub threshold: f64,
    pub pass: bool,
    pub details: Vec<CheckDetail>,
    /// informational values that are not tested
    pub metrics: BTreeMap<String, f64>,
}

impl CheckReport {
    pub fn from_details(name: impl Into<String>, details: Vec<CheckDetail>) -> Self {
        let worst = details
            .iter()
            .max_by(|a, b| a.severity().total_cmp(&b.severity()))
            .cloned()
            .unwrap_or_else(|| CheckDetail::at_most("empty", 0.0, 0.0));
        let pass = details.iter().all(CheckDetail::pass);
        CheckReport {
            name: name.into(),
            criterion: worst.criterion,
            statistic: worst.statistic,
            standard_error: worst.std_err,
            threshold: worst.threshold,
            pass,
            details,
            metrics: BTreeMap::new(),
        }
    }

    pub fn with_metric(mut self, key: impl Into<String>, value: f64) -> Self {
        self.metrics.insert(key.into(), value);
        self
    }

    /// Headline z-score (ZScore criterion), otherwise NaN.
    pub fn z_score(&self) -> f64 {
        match self.criterion {
            Criterion::ZScore => z_score(self.statistic, self.standard_error),
            _ => f64::NAN,
        }
    }

    pub fn detail(&self, label: &str) -> Option<&CheckDetail> {
        self.details.iter().find(|d| d.label == label)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match self.criterion {
            Criterion::ZScore => write!(
                f,
                "{verdict} {}: {:.6e} ± {:.3e} (z = {:.2}, threshold {:.2})",
                self.name,
                self.statistic,
                self.standard_error,
                self.z_score(),
                self.threshold
            ),
            Criterion::UpperBound => {
                write!(f, "{verdict} {}: {:.6e} ≤ {:.3e}", self.name, self.statistic, self.threshold)
            }
            Criterion::LowerBound => {
                write!(f, "{verdict} {}: {:.6e} ≥ {:.3e}", self.name, self.statistic, self.threshold)
            }
        }
    }
}
