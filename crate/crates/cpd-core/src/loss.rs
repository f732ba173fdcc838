//! Differentiable detection objectives.
//!
//! The central quantity is the stopping time `tau` induced by a series of
//! per-step alarm probabilities `p_t`: the detector alarms at `t` with
//! probability `p_t`, given it has not alarmed before, so
//! `P(tau = t) = p_t * prod_{k < t} (1 - p_k)`.
//!
//! Two truncated expectations of `tau` are exposed:
//!
//! - [`delay_loss`]: the expected detection delay after a change at
//!   `theta`, truncated at horizon `h`, i.e. `E[min(tau - theta, h + 1 - theta)]`
//!   for the stopping time restarted at `theta`. It lower-bounds the
//!   untruncated expected delay and grows towards it as `h` grows.
//! - [`alarm_time_bound`]: the expected alarm time on a change-free
//!   prefix of length `L`, truncated at `L`, i.e. `E[min(tau, L)]`. It
//!   lower-bounds the expected time to a false alarm and is likewise
//!   non-decreasing in `L`.
//!
//! [`combined_loss`] scores a batch as `delay - c * alarm`, so minimizing
//! it trades detection delay against time to false alarm. All gradients
//! are analytic, product-based, and finite even at p = 0 or 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{ChangeLabel, ProbabilitySeries};

/// Clamp applied to probabilities before logs in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    /// Delay window `[theta, h]` is empty or extends past the series.
    DegenerateWindow { theta: usize, h: usize, len: usize },
    /// Alarm prefix length outside `1..=T`.
    PrefixOutOfRange { prefix_len: usize, len: usize },
    EmptyBatch,
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DegenerateWindow { theta, h, len } => write!(
                f,
                "delay window [{theta}, {h}] invalid for series of length {len}"
            ),
            Self::PrefixOutOfRange { prefix_len, len } => write!(
                f,
                "alarm prefix length {prefix_len} outside 1..={len}"
            ),
            Self::EmptyBatch => write!(f, "loss requires a nonempty batch"),
        }
    }
}

impl std::error::Error for LossError {}

/// How the delay horizon is resolved per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonMode {
    /// Fixed absolute index `h`; every change must satisfy `theta <= h <= T-1`.
    Absolute(usize),
    /// Window of `H` steps after the change: `h_i = min(theta_i + H - 1, T - 1)`.
    Relative(usize),
    /// No truncation below the sequence end: `h_i = T - 1`.
    Full,
}

/// How the trade-off multiplier `c` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiplier {
    /// `c = h_eff / (2T)` where `h_eff` is the resolved absolute horizon.
    Auto,
    Fixed(f64),
}

/// Sign convention for the no-alarm remainder of the alarm-time term.
///
/// `PlusTail` is the default and the only variant that equals a true
/// truncated expectation, `E[min(tau, L)]`; the other two flip the sign
/// of the remainder (and, for `NegatedMinusTail`, of the whole sum) and
/// exist solely to reproduce alternative printed formulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaRemainder {
    PlusTail,
    MinusTail,
    NegatedMinusTail,
}

/// Configuration for [`combined_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub horizon: HorizonMode,
    pub multiplier: Multiplier,
    pub remainder: FaRemainder,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            horizon: HorizonMode::Full,
            multiplier: Multiplier::Auto,
            remainder: FaRemainder::PlusTail,
        }
    }
}

/// Value and gradient of the combined objective over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    /// `delay_part - c * alarm_part`.
    pub total: f64,
    /// Mean truncated delay over sequences with a change.
    pub delay_part: f64,
    /// Mean alarm-time term over sequences with a nonempty change-free prefix.
    pub alarm_part: f64,
    /// Resolved trade-off multiplier.
    pub c: f64,
    /// `d total / d p_t`, one vector per batch entry.
    pub grad_p: Vec<Vec<f64>>,
}

/// Truncated expected detection delay for a change at `theta`.
///
/// `sum_{t=theta}^{h} (t - theta) p_t prod_{k=theta}^{t-1} (1 - p_k)
///  + (h + 1 - theta) prod_{k=theta}^{h} (1 - p_k)`.
pub fn delay_loss(p: &ProbabilitySeries, theta: usize, h: usize) -> Result<f64, LossError> {
    if h < theta || h >= p.len() {
        return Err(LossError::DegenerateWindow {
            theta,
            h,
            len: p.len(),
        });
    }
    let values = p.as_slice();
    let mut acc = 0.0;
    let mut survive = 1.0; // prod_{k=theta}^{t-1} (1 - p_k)
    for t in theta..=h {
        acc += (t - theta) as f64 * values[t] * survive;
        survive *= 1.0 - values[t];
    }
    Ok(acc + (h + 1 - theta) as f64 * survive)
}

/// Truncated expected alarm time on the change-free prefix `p[0..L]`.
///
/// Under [`FaRemainder::PlusTail`] this is
/// `sum_{t=0}^{L-1} t p_t prod_{k=0}^{t-1} (1 - p_k) + L prod_{k=0}^{L-1} (1 - p_k)`,
/// i.e. `E[min(tau, L)]`.
pub fn alarm_time_bound(p: &ProbabilitySeries, prefix_len: usize) -> Result<f64, LossError> {
    alarm_time_bound_mode(p, prefix_len, FaRemainder::PlusTail)
}

/// [`alarm_time_bound`] under an explicit remainder-sign convention.
pub fn alarm_time_bound_mode(
    p: &ProbabilitySeries,
    prefix_len: usize,
    mode: FaRemainder,
) -> Result<f64, LossError> {
    if prefix_len == 0 || prefix_len > p.len() {
        return Err(LossError::PrefixOutOfRange {
            prefix_len,
            len: p.len(),
        });
    }
    let values = p.as_slice();
    let mut weighted = 0.0;
    let mut survive = 1.0;
    for (t, &v) in values.iter().enumerate().take(prefix_len) {
        weighted += t as f64 * v * survive;
        survive *= 1.0 - v;
    }
    let tail = prefix_len as f64 * survive;
    Ok(match mode {
        FaRemainder::PlusTail => weighted + tail,
        FaRemainder::MinusTail => weighted - tail,
        FaRemainder::NegatedMinusTail => -(weighted - tail),
    })
}

/// Gradient of [`delay_loss`] over the window `[theta, h]`.
///
/// Written as a sum of survival products, the truncated delay is
/// `sum_{u=theta}^{h} prod_{k=theta}^{u} (1 - p_k)`, so
/// `d/dp_j = -A_j * G_j` with `A_j = prod_{k=theta}^{j-1} (1 - p_k)` and
/// `G_j = sum_{u=j}^{h} prod_{k=j+1}^{u} (1 - p_k)`. Both factors are
/// plain products: no logs, no divisions, finite at p = 0 and 1.
fn delay_loss_grad(values: &[f64], theta: usize, h: usize, grad: &mut [f64], scale: f64) {
    let mut suffix = vec![0.0; h + 2 - theta]; // suffix[j - theta] = G_j
    let mut g = 0.0;
    for j in (theta..=h).rev() {
        g = 1.0 + if j == h { 0.0 } else { (1.0 - values[j + 1]) * g };
        suffix[j - theta] = g;
    }
    let mut prefix = 1.0; // A_j
    for j in theta..=h {
        grad[j] += scale * (-prefix * suffix[j - theta]);
        prefix *= 1.0 - values[j];
    }
}

/// Gradient of [`alarm_time_bound_mode`] over `[0, L)`.
///
/// With `W = sum t p_t prod (1 - p_k)` and tail product `R`,
/// `dW/dp_j = A_j (j - M_j)` and `d(L R)/dp_j = -L A_j R_j`, where
/// `M_j = sum_{t=j+1}^{L-1} t p_t prod_{k=j+1}^{t-1} (1 - p_k)` and `R_j`
/// is the suffix product, both built by right-to-left recursions.
fn alarm_bound_grad(values: &[f64], prefix_len: usize, mode: FaRemainder, grad: &mut [f64], scale: f64) {
    let l = prefix_len;
    let mut m = vec![0.0; l]; // M_j
    let mut r = vec![0.0; l]; // suffix products R_j = prod_{k=j+1}^{L-1} (1 - p_k)
    let mut m_acc = 0.0;
    let mut r_acc = 1.0;
    for j in (0..l).rev() {
        m[j] = m_acc;
        r[j] = r_acc;
        m_acc = (j as f64) * values[j] + (1.0 - values[j]) * m_acc;
        r_acc *= 1.0 - values[j];
    }
    let mut prefix = 1.0; // A_j
    for j in 0..l {
        let dw = prefix * (j as f64 - m[j]);
        let dtail = -(l as f64) * prefix * r[j];
        let g = match mode {
            FaRemainder::PlusTail => dw + dtail,
            FaRemainder::MinusTail => dw - dtail,
            FaRemainder::NegatedMinusTail => -(dw - dtail),
        };
        grad[j] += scale * g;
        prefix *= 1.0 - values[j];
    }
}

/// Resolve the per-sequence horizon, validating the window.
fn resolve_horizon(mode: HorizonMode, theta: usize, t_len: usize) -> Result<usize, LossError> {
    let h = match mode {
        HorizonMode::Absolute(h) => h,
        HorizonMode::Relative(window) => (theta + window - 1).min(t_len - 1),
        HorizonMode::Full => t_len - 1,
    };
    if h < theta || h >= t_len {
        return Err(LossError::DegenerateWindow {
            theta,
            h,
            len: t_len,
        });
    }
    Ok(h)
}

/// Resolve the multiplier `c` for a batch with maximum length `t_max`.
pub fn resolve_multiplier(cfg: &LossConfig, t_max: usize) -> f64 {
    match cfg.multiplier {
        Multiplier::Fixed(c) => c,
        Multiplier::Auto => {
            let h_eff = match cfg.horizon {
                HorizonMode::Absolute(h) => h,
                // Capped at T-1 so a window covering the whole sequence
                // resolves identically to Full.
                HorizonMode::Relative(window) => window.min(t_max - 1),
                HorizonMode::Full => t_max - 1,
            };
            h_eff as f64 / (2.0 * t_max as f64)
        }
    }
}

/// Combined delay / time-to-alarm objective over a batch.
///
/// Sequences with a change at `theta` contribute the truncated delay over
/// `[theta, h_i]` and, when `theta >= 1`, the alarm term over the prefix
/// `[0, theta)`. Change-free sequences contribute only the alarm term
/// with `L = T`. Each part is averaged over the sequences that carry it,
/// and `total = delay_part - c * alarm_part`.
pub fn combined_loss(
    batch: &[(&ProbabilitySeries, ChangeLabel)],
    cfg: &LossConfig,
) -> Result<LossValue, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let t_max = batch.iter().map(|(p, _)| p.len()).max().unwrap();
    let c = resolve_multiplier(cfg, t_max);

    // First pass: per-sequence values and contributor counts.
    let mut delay_sum = 0.0;
    let mut alarm_sum = 0.0;
    let mut n_delay = 0usize;
    let mut n_alarm = 0usize;
    let mut windows = Vec::with_capacity(batch.len());
    for (p, label) in batch {
        match label {
            ChangeLabel::Change(theta) => {
                let h = resolve_horizon(cfg.horizon, *theta, p.len())?;
                delay_sum += delay_loss(p, *theta, h)?;
                n_delay += 1;
                if *theta >= 1 {
                    alarm_sum += alarm_time_bound_mode(p, *theta, cfg.remainder)?;
                    n_alarm += 1;
                }
                windows.push(Some(h));
            }
            ChangeLabel::NoChange => {
                alarm_sum += alarm_time_bound_mode(p, p.len(), cfg.remainder)?;
                n_alarm += 1;
                windows.push(None);
            }
        }
    }
    let delay_part = if n_delay > 0 {
        delay_sum / n_delay as f64
    } else {
        0.0
    };
    let alarm_part = if n_alarm > 0 {
        alarm_sum / n_alarm as f64
    } else {
        0.0
    };

    // Second pass: gradients, scaled by the contributor counts.
    let delay_scale = if n_delay > 0 {
        1.0 / n_delay as f64
    } else {
        0.0
    };
    let alarm_scale = if n_alarm > 0 {
        -c / n_alarm as f64
    } else {
        0.0
    };
    let mut grad_p = Vec::with_capacity(batch.len());
    for ((p, label), window) in batch.iter().zip(&windows) {
        let values = p.as_slice();
        let mut grad = vec![0.0; values.len()];
        match label {
            ChangeLabel::Change(theta) => {
                let h = window.expect("window resolved in first pass");
                delay_loss_grad(values, *theta, h, &mut grad, delay_scale);
                if *theta >= 1 {
                    alarm_bound_grad(values, *theta, cfg.remainder, &mut grad, alarm_scale);
                }
            }
            ChangeLabel::NoChange => {
                alarm_bound_grad(values, values.len(), cfg.remainder, &mut grad, alarm_scale);
            }
        }
        grad_p.push(grad);
    }

    Ok(LossValue {
        total: delay_part - c * alarm_part,
        delay_part,
        alarm_part,
        c,
        grad_p,
    })
}

/// Per-step binary cross-entropy against the step labels
/// `y_t = 1 iff t >= theta`, averaged over the sequence.
///
/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the logs;
/// the gradient is evaluated at the clamped value, so it stays bounded.
pub fn bce_loss(p: &ProbabilitySeries, label: ChangeLabel) -> (f64, Vec<f64>) {
    let t_len = p.len();
    let inv_t = 1.0 / t_len as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; t_len];
    for (t, &raw) in p.as_slice().iter().enumerate() {
        let y = match label {
            ChangeLabel::Change(theta) if t >= theta => 1.0,
            _ => 0.0,
        };
        let v = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total += -(y * v.ln() + (1.0 - y) * (1.0 - v).ln());
        grad[t] = inv_t * (v - y) / (v * (1.0 - v));
    }
    (total * inv_t, grad)
}

/// Distribution of the stopping time induced by `p`, restarted at `start`
/// and truncated after `cap` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTimeDistribution {
    pub start: usize,
    /// `probs[j] = P(tau = start + j)` for `j < cap`.
    pub probs: Vec<f64>,
    /// `P(no alarm within cap steps)`.
    pub no_alarm: f64,
}

impl StoppingTimeDistribution {
    /// `E[min(tau - start, cap)]`.
    pub fn expected_capped(&self) -> f64 {
        let cap = self.probs.len() as f64;
        let mut acc = cap * self.no_alarm;
        for (j, &pr) in self.probs.iter().enumerate() {
            acc += j as f64 * pr;
        }
        acc
    }

    /// Total probability mass; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.no_alarm
    }
}

/// Enumerates the stopping-time distribution directly from the product
/// formula `P(tau = t) = p_t * prod_{k=start}^{t-1} (1 - p_k)`.
///
/// Independent of the accumulation order used by [`delay_loss`] and
/// [`alarm_time_bound`], which makes it a verification oracle for both.
pub fn stopping_time_distribution(
    p: &ProbabilitySeries,
    start: usize,
    cap: usize,
) -> StoppingTimeDistribution {
    assert!(cap >= 1, "cap must be at least 1");
    assert!(
        start + cap <= p.len(),
        "window [{start}, {}) exceeds series length {}",
        start + cap,
        p.len()
    );
    let values = p.as_slice();
    let mut probs = Vec::with_capacity(cap);
    for t in start..start + cap {
        let mut mass = values[t];
        for &q in &values[start..t] {
            mass *= 1.0 - q;
        }
        probs.push(mass);
    }
    let mut no_alarm = 1.0;
    for &q in &values[start..start + cap] {
        no_alarm *= 1.0 - q;
    }
    StoppingTimeDistribution {
        start,
        probs,
        no_alarm,
    }
}
