//! Decision rules over probability series, plus a CUSUM reference
//! detector for known Gaussian pre/post parameters.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{DetectionResult, Observations, ProbabilitySeries};

#[derive(Debug, Clone, PartialEq)]
pub enum DetectError {
    InvalidThreshold(f64),
    InvalidCusumSpec(String),
    NotUnivariate { dim: usize },
}

impl fmt::Display for DetectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidThreshold(s) => write!(f, "threshold {s} outside [0, 1]"),
            Self::InvalidCusumSpec(msg) => write!(f, "invalid cusum spec: {msg}"),
            Self::NotUnivariate { dim } => {
                write!(f, "cusum requires 1-dimensional input, got dim {dim}")
            }
        }
    }
}

impl std::error::Error for DetectError {}

/// What to report on series that cross the threshold more than once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiMode {
    /// Only the first crossing.
    FirstOnly,
    /// Every upward crossing: `p_t > s` with `t = 0` or `p_{t-1} <= s`.
    AllUpCrossings,
}

/// Threshold decision rule; alarms require a strict exceedance `p_t > s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub threshold: f64,
    pub multi: MultiMode,
}

impl ThresholdRule {
    pub fn first_only(threshold: f64) -> Result<Self, DetectError> {
        Self::new(threshold, MultiMode::FirstOnly)
    }

    pub fn new(threshold: f64, multi: MultiMode) -> Result<Self, DetectError> {
        if !(threshold.is_finite() && (0.0..=1.0).contains(&threshold)) {
            return Err(DetectError::InvalidThreshold(threshold));
        }
        Ok(Self { threshold, multi })
    }
}

/// Apply a threshold rule to a probability series.
pub fn detect(p: &ProbabilitySeries, rule: &ThresholdRule) -> DetectionResult {
    let s = rule.threshold;
    let values = p.as_slice();
    let alarms: Vec<usize> = match rule.multi {
        MultiMode::FirstOnly => values
            .iter()
            .position(|&v| v > s)
            .into_iter()
            .collect(),
        MultiMode::AllUpCrossings => values
            .iter()
            .enumerate()
            .filter(|&(t, &v)| v > s && (t == 0 || values[t - 1] <= s))
            .map(|(t, _)| t)
            .collect(),
    };
    DetectionResult::from_alarms(alarms).expect("alarm scan emits sorted unique indices")
}

/// Known-parameter Gaussian mean-shift CUSUM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumSpec {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
    pub decision_limit: f64,
}

impl CusumSpec {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.mu0 == self.mu1 || !self.mu0.is_finite() || !self.mu1.is_finite() {
            return Err(DetectError::InvalidCusumSpec(
                "mu0 and mu1 must be distinct finite values".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(DetectError::InvalidCusumSpec("sigma must be positive".into()));
        }
        if !(self.decision_limit > 0.0) {
            return Err(DetectError::InvalidCusumSpec(
                "decision_limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The one-sided CUSUM statistic path:
/// `S_t = max(0, S_{t-1} + (mu1 - mu0) / sigma^2 * (x_t - (mu0 + mu1) / 2))`.
pub fn cusum_path(seq: &Observations, spec: &CusumSpec) -> Result<Vec<f64>, DetectError> {
    spec.validate()?;
    if seq.dim() != 1 {
        return Err(DetectError::NotUnivariate { dim: seq.dim() });
    }
    let gain = (spec.mu1 - spec.mu0) / (spec.sigma * spec.sigma);
    let midpoint = 0.5 * (spec.mu0 + spec.mu1);
    let mut stat = 0.0;
    let mut path = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        stat = (stat + gain * (seq.row(t)[0] - midpoint)).max(0.0);
        path.push(stat);
    }
    Ok(path)
}

/// Alarm at the first `t` with `S_t >= decision_limit`.
pub fn cusum_detect(seq: &Observations, spec: &CusumSpec) -> Result<DetectionResult, DetectError> {
    let path = cusum_path(seq, spec)?;
    let alarms: Vec<usize> = path
        .iter()
        .position(|&s| s >= spec.decision_limit)
        .into_iter()
        .collect();
    Ok(DetectionResult::from_alarms(alarms).expect("single sorted alarm"))
}
