//! Offline segmentation baselines: PELT and binary segmentation over an
//! L2 (within-segment variance) cost.
//!
//! PELT solves the penalized partition problem exactly; its pruning rule
//! relies on the L2 cost never decreasing when a segment is extended, so
//! pruning is applied only with `min_segment_len == 1` and the solver
//! falls back to the unpruned dynamic program otherwise. Binary
//! segmentation greedily takes the split with the largest cost gain.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{MultiChangeLabel, Observations};

#[derive(Debug, Clone, PartialEq)]
pub enum OfflineError {
    EmptySegment { a: usize, b: usize },
    OutOfRange { index: usize, len: usize },
    InvalidSpec(String),
    WrongStopRule(&'static str),
}

impl fmt::Display for OfflineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptySegment { a, b } => write!(f, "empty segment [{a}, {b}]"),
            Self::OutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Self::InvalidSpec(msg) => write!(f, "invalid segmentation spec: {msg}"),
            Self::WrongStopRule(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for OfflineError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegMethod {
    Pelt,
    BinSeg,
}

/// Stopping rule: penalized (`beta` per change) or a fixed change count.
///
/// Fixed counts force a change into every sequence and inflate false
/// alarms on clean data; prefer the penalty form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    Penalty(f64),
    FixedCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSpec {
    pub method: SegMethod,
    pub stop: StopRule,
    pub min_segment_len: usize,
}

impl SegmentationSpec {
    pub fn penalty(method: SegMethod, beta: f64) -> Self {
        Self {
            method,
            stop: StopRule::Penalty(beta),
            min_segment_len: 1,
        }
    }

    pub fn validate(&self, t_len: usize) -> Result<(), OfflineError> {
        if self.min_segment_len == 0 {
            return Err(OfflineError::InvalidSpec("min_segment_len must be >= 1".into()));
        }
        if self.min_segment_len > t_len {
            return Err(OfflineError::InvalidSpec(format!(
                "min_segment_len {} exceeds sequence length {t_len}",
                self.min_segment_len
            )));
        }
        if let StopRule::Penalty(beta) = self.stop {
            if beta < 0.0 || beta.is_nan() {
                return Err(OfflineError::InvalidSpec(format!("penalty {beta} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Prefix-sum cost model answering L2 segment-cost queries in O(D).
pub struct SegCost {
    t_len: usize,
    dim: usize,
    /// prefix[t * dim + d] = sum of x[0..t, d]
    prefix: Vec<f64>,
    /// prefix_sq[t] = sum over all dims of squares of x[0..t]
    prefix_sq: Vec<f64>,
}

impl SegCost {
    pub fn new(obs: &Observations) -> Self {
        let t_len = obs.len();
        let dim = obs.dim();
        let mut prefix = vec![0.0; (t_len + 1) * dim];
        let mut prefix_sq = vec![0.0; t_len + 1];
        for t in 0..t_len {
            let row = obs.row(t);
            let mut sq = 0.0;
            for d in 0..dim {
                prefix[(t + 1) * dim + d] = prefix[t * dim + d] + row[d];
                sq += row[d] * row[d];
            }
            prefix_sq[t + 1] = prefix_sq[t] + sq;
        }
        Self {
            t_len,
            dim,
            prefix,
            prefix_sq,
        }
    }

    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }

    /// Sum of squared deviations from the segment mean over `[a, b]`,
    /// inclusive on both ends.
    pub fn cost(&self, a: usize, b: usize) -> Result<f64, OfflineError> {
        if a > b {
            return Err(OfflineError::EmptySegment { a, b });
        }
        if b >= self.t_len {
            return Err(OfflineError::OutOfRange {
                index: b,
                len: self.t_len,
            });
        }
        let n = (b - a + 1) as f64;
        let sq = self.prefix_sq[b + 1] - self.prefix_sq[a];
        let mut mean_term = 0.0;
        for d in 0..self.dim {
            let s = self.prefix[(b + 1) * self.dim + d] - self.prefix[a * self.dim + d];
            mean_term += s * s;
        }
        // Guard tiny negative results from cancellation.
        Ok((sq - mean_term / n).max(0.0))
    }
}

/// One-shot L2 segment cost.
pub fn l2_cost(obs: &Observations, a: usize, b: usize) -> Result<f64, OfflineError> {
    SegCost::new(obs).cost(a, b)
}

/// Total penalized objective of a segmentation: segment costs plus
/// `beta` per change point.
pub fn partition_objective(
    obs: &Observations,
    change_points: &[usize],
    beta: f64,
) -> Result<f64, OfflineError> {
    let cost = SegCost::new(obs);
    let mut total = 0.0;
    let mut start = 0;
    for &cp in change_points {
        if cp == 0 || cp <= start || cp >= obs.len() {
            return Err(OfflineError::OutOfRange {
                index: cp,
                len: obs.len(),
            });
        }
        total += cost.cost(start, cp - 1)?;
        start = cp;
    }
    total += cost.cost(start, obs.len() - 1)?;
    Ok(total + beta * change_points.len() as f64)
}

/// Exact penalized segmentation via the pruned dynamic program.
pub fn pelt_segment(
    obs: &Observations,
    spec: &SegmentationSpec,
) -> Result<MultiChangeLabel, OfflineError> {
    spec.validate(obs.len())?;
    let StopRule::Penalty(beta) = spec.stop else {
        return Err(OfflineError::WrongStopRule(
            "pelt requires a penalty stopping rule",
        ));
    };
    let min_len = spec.min_segment_len;
    let n = obs.len();
    let cost = SegCost::new(obs);
    let prune = min_len == 1;

    // best[t]: optimal objective for the prefix [0, t); segment starts at
    // s > 0 pay beta for the change at s.
    let mut best = vec![f64::INFINITY; n + 1];
    let mut prev = vec![0usize; n + 1];
    best[0] = 0.0;
    let mut candidates: Vec<usize> = Vec::with_capacity(n);
    for t in 1..=n {
        if t >= min_len {
            candidates.push(t - min_len);
        }
        let mut best_val = f64::INFINITY;
        let mut best_s = 0usize;
        for &s in &candidates {
            let penalty = if s > 0 { beta } else { 0.0 };
            let val = best[s] + cost.cost(s, t - 1)? + penalty;
            if val < best_val {
                best_val = val;
                best_s = s;
            }
        }
        best[t] = best_val;
        prev[t] = best_s;
        if prune && best_val.is_finite() {
            // A start whose value already exceeds best[t] + beta can
            // never win later: extending its segment only adds cost.
            let keep_limit = best[t] + beta;
            let mut kept = Vec::with_capacity(candidates.len());
            for &s in &candidates {
                let penalty = if s > 0 { beta } else { 0.0 };
                if best[s] + cost.cost(s, t - 1)? + penalty <= keep_limit {
                    kept.push(s);
                }
            }
            candidates = kept;
        }
    }

    let mut cps = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = prev[t];
        if s > 0 {
            cps.push(s);
        }
        t = s;
    }
    cps.reverse();
    MultiChangeLabel::new(cps).map_err(|_| OfflineError::InvalidSpec("backtrack produced unsorted change points".into()))
}

struct SplitCandidate {
    a: usize,
    b: usize,
    split: usize,
    gain: f64,
}

fn best_split(cost: &SegCost, a: usize, b: usize, min_len: usize) -> Result<Option<SplitCandidate>, OfflineError> {
    if b + 1 - a < 2 * min_len {
        return Ok(None);
    }
    let whole = cost.cost(a, b)?;
    let mut best: Option<SplitCandidate> = None;
    for split in a + min_len..=b + 1 - min_len {
        let gain = whole - cost.cost(a, split - 1)? - cost.cost(split, b)?;
        let better = match &best {
            Some(cur) => gain > cur.gain,
            None => true,
        };
        if better {
            best = Some(SplitCandidate { a, b, split, gain });
        }
    }
    Ok(best)
}

/// Greedy bisection: repeatedly split the segment with the largest cost
/// gain until the gain drops to the penalty or the count is reached.
pub fn binseg_segment(
    obs: &Observations,
    spec: &SegmentationSpec,
) -> Result<MultiChangeLabel, OfflineError> {
    spec.validate(obs.len())?;
    let min_len = spec.min_segment_len;
    let n = obs.len();
    let cost = SegCost::new(obs);
    let mut candidates: Vec<SplitCandidate> = Vec::new();
    if let Some(c) = best_split(&cost, 0, n - 1, min_len)? {
        candidates.push(c);
    }
    let mut cps: Vec<usize> = Vec::new();
    loop {
        match spec.stop {
            StopRule::Penalty(beta) => {
                let viable = candidates
                    .iter()
                    .enumerate()
                    .max_by(|(_, x), (_, y)| x.gain.total_cmp(&y.gain));
                match viable {
                    Some((idx, c)) if c.gain > beta => {
                        let c = candidates.swap_remove(idx);
                        cps.push(c.split);
                        if let Some(left) = best_split(&cost, c.a, c.split - 1, min_len)? {
                            candidates.push(left);
                        }
                        if let Some(right) = best_split(&cost, c.split, c.b, min_len)? {
                            candidates.push(right);
                        }
                    }
                    _ => break,
                }
            }
            StopRule::FixedCount(k) => {
                if cps.len() >= k || candidates.is_empty() {
                    break;
                }
                let (idx, _) = candidates
                    .iter()
                    .enumerate()
                    .max_by(|(_, x), (_, y)| x.gain.total_cmp(&y.gain))
                    .expect("nonempty checked above");
                let c = candidates.swap_remove(idx);
                cps.push(c.split);
                if let Some(left) = best_split(&cost, c.a, c.split - 1, min_len)? {
                    candidates.push(left);
                }
                if let Some(right) = best_split(&cost, c.split, c.b, min_len)? {
                    candidates.push(right);
                }
            }
        }
    }
    cps.sort_unstable();
    MultiChangeLabel::new(cps)
        .map_err(|_| OfflineError::InvalidSpec("duplicate split points".into()))
}
