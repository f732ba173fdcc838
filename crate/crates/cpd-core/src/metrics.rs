//! Evaluation metrics for change-point detectors.
//!
//! Scoring uses first-alarm semantics with a premature-detection
//! penalty: an alarm strictly before the true change counts as a false
//! positive, not an early true positive. Conventions for the undefined
//! corners are fixed so that averages stay finite and comparable:
//! a missed change scores the worst-case delay `T - theta`, and a
//! sequence with no false alarm scores time-to-false-alarm `T`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detect::{detect, MultiMode, ThresholdRule};
use crate::types::{ChangeLabel, DetectionResult, MultiChangeLabel, ProbabilitySeries};

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    EmptyGrid,
    UnsortedGrid,
    PartitionLengthMismatch { expected: usize, got: usize },
    BadPartition(String),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyGrid => write!(f, "threshold grid is empty"),
            Self::UnsortedGrid => write!(f, "threshold grid must be strictly increasing"),
            Self::PartitionLengthMismatch { expected, got } => {
                write!(f, "partitions cover different lengths: {expected} vs {got}")
            }
            Self::BadPartition(msg) => write!(f, "bad partition: {msg}"),
        }
    }
}

impl std::error::Error for MetricsError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Tp,
    Tn,
    Fp,
    Fn,
}

/// Confusion-matrix counts over a set of sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Tp => self.tp += 1,
            Outcome::Tn => self.tn += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Fn => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Classify one sequence under first-alarm semantics.
///
/// An alarm at or after the change is a true positive; strictly before
/// it, a false positive. No alarm on a changed sequence is a false
/// negative; any alarm on a clean sequence is a false positive.
pub fn classify_outcome(label: ChangeLabel, result: &DetectionResult) -> Outcome {
    match (label, result.first_alarm) {
        (ChangeLabel::Change(theta), Some(tau)) if tau >= theta => Outcome::Tp,
        (ChangeLabel::Change(_), Some(_)) => Outcome::Fp,
        (ChangeLabel::Change(_), None) => Outcome::Fn,
        (ChangeLabel::NoChange, Some(_)) => Outcome::Fp,
        (ChangeLabel::NoChange, None) => Outcome::Tn,
    }
}

/// `F1 = TP / (TP + 0.5 (FP + FN))`; undefined when all three are zero.
pub fn f1(counts: &ConfusionCounts) -> Option<f64> {
    let denom = counts.tp as f64 + 0.5 * (counts.fp + counts.fn_) as f64;
    if denom == 0.0 {
        None
    } else {
        Some(counts.tp as f64 / denom)
    }
}

/// Detection delay and time to false alarm for one sequence.
///
/// Delay is defined for changed sequences only: `(tau - theta)+` when
/// detected, and the worst case `T - theta` when missed. Time to false
/// alarm is `tau` for false-positive sequences and `T` otherwise.
pub fn delay_and_ttfa(
    label: ChangeLabel,
    result: &DetectionResult,
    t_len: usize,
) -> (Option<f64>, f64) {
    let outcome = classify_outcome(label, result);
    let dd = match (outcome, label, result.first_alarm) {
        (Outcome::Tp, ChangeLabel::Change(theta), Some(tau)) => {
            Some((tau.saturating_sub(theta)) as f64)
        }
        (Outcome::Fn, ChangeLabel::Change(theta), None) => Some((t_len - theta) as f64),
        _ => None,
    };
    let ttfa = match outcome {
        Outcome::Fp => result.first_alarm.expect("fp always has an alarm") as f64,
        _ => t_len as f64,
    };
    (dd, ttfa)
}

/// One point of the delay / time-to-false-alarm trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub mean_dd: f64,
    pub mean_ttfa: f64,
}

/// The trade-off curve swept by the alarm threshold, and its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub points: Vec<CurvePoint>,
    pub area: f64,
}

/// Sweep the threshold grid and build the detection curve.
///
/// The area is the trapezoidal integral of mean time-to-false-alarm over
/// mean delay, with points sharing a delay value averaged first; smaller
/// is better.
pub fn detection_curve(
    inputs: &[(&ProbabilitySeries, ChangeLabel)],
    grid: &[f64],
) -> Result<DetectionCurve, MetricsError> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::UnsortedGrid);
    }
    let mut points = Vec::with_capacity(grid.len());
    for &s in grid {
        let rule = ThresholdRule::first_only(s)
            .map_err(|_| MetricsError::BadPartition(format!("threshold {s}")))?;
        let mut dd_sum = 0.0;
        let mut dd_count = 0usize;
        let mut ttfa_sum = 0.0;
        for (p, label) in inputs {
            let result = detect(p, &rule);
            let (dd, ttfa) = delay_and_ttfa(*label, &result, p.len());
            if let Some(d) = dd {
                dd_sum += d;
                dd_count += 1;
            }
            ttfa_sum += ttfa;
        }
        let mean_dd = if dd_count > 0 {
            dd_sum / dd_count as f64
        } else {
            0.0
        };
        let mean_ttfa = if inputs.is_empty() {
            0.0
        } else {
            ttfa_sum / inputs.len() as f64
        };
        points.push(CurvePoint {
            threshold: s,
            mean_dd,
            mean_ttfa,
        });
    }
    let area = curve_area(&points);
    Ok(DetectionCurve { points, area })
}

/// Trapezoidal area under (mean_dd, mean_ttfa) points.
pub fn curve_area(points: &[CurvePoint]) -> f64 {
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.mean_dd, p.mean_ttfa)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Average duplicate x positions.
    let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(sorted.len());
    for (x, y) in sorted {
        match merged.last_mut() {
            Some((mx, my, count)) if *mx == x => {
                *my += y;
                *count += 1;
            }
            _ => merged.push((x, y, 1)),
        }
    }
    let merged: Vec<(f64, f64)> = merged
        .into_iter()
        .map(|(x, y, count)| (x, y / count as f64))
        .collect();
    let mut area = 0.0;
    for win in merged.windows(2) {
        let (x0, y0) = win[0];
        let (x1, y1) = win[1];
        area += (x1 - x0) * 0.5 * (y0 + y1);
    }
    area
}

/// A partition of `[0, T)` into consecutive half-open segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    t_len: usize,
    /// Segment boundaries as half-open `(start, end)` pairs.
    segments: Vec<(usize, usize)>,
}

impl Partition {
    /// Split `[0, T)` at each change index; a change index starts a new
    /// segment. Indices at 0 or beyond `T` are rejected.
    pub fn from_change_points(change_points: &[usize], t_len: usize) -> Result<Self, MetricsError> {
        if t_len == 0 {
            return Err(MetricsError::BadPartition("zero-length partition".into()));
        }
        let mut segments = Vec::with_capacity(change_points.len() + 1);
        let mut start = 0usize;
        for &cp in change_points {
            if cp <= start || cp >= t_len {
                // A change at 0 leaves an empty first segment; fold it away.
                if cp == 0 && start == 0 {
                    continue;
                }
                return Err(MetricsError::BadPartition(format!(
                    "change index {cp} invalid after {start} (length {t_len})"
                )));
            }
            segments.push((start, cp));
            start = cp;
        }
        segments.push((start, t_len));
        Ok(Self { t_len, segments })
    }

    pub fn from_label(label: ChangeLabel, t_len: usize) -> Result<Self, MetricsError> {
        match label {
            ChangeLabel::Change(theta) => Self::from_change_points(&[theta], t_len),
            ChangeLabel::NoChange => Self::from_change_points(&[], t_len),
        }
    }

    pub fn from_multi_label(label: &MultiChangeLabel, t_len: usize) -> Result<Self, MetricsError> {
        Self::from_change_points(label.change_points(), t_len)
    }

    pub fn from_detection(result: &DetectionResult, t_len: usize) -> Result<Self, MetricsError> {
        Self::from_change_points(&result.alarms, t_len)
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }
}

fn interval_overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    hi.saturating_sub(lo)
}

/// Partition covering: for each true segment, the best Jaccard overlap
/// with any predicted segment, weighted by segment length.
pub fn covering(truth: &Partition, predicted: &Partition) -> Result<f64, MetricsError> {
    if truth.t_len != predicted.t_len {
        return Err(MetricsError::PartitionLengthMismatch {
            expected: truth.t_len,
            got: predicted.t_len,
        });
    }
    let t = truth.t_len as f64;
    let mut total = 0.0;
    for &seg in &truth.segments {
        let len = (seg.1 - seg.0) as f64;
        let mut best = 0.0f64;
        for &pred in &predicted.segments {
            let inter = interval_overlap(seg, pred) as f64;
            if inter == 0.0 {
                continue;
            }
            let union = (seg.1 - seg.0 + pred.1 - pred.0) as f64 - inter;
            best = best.max(inter / union);
        }
        total += len * best;
    }
    Ok(total / t)
}

/// Metrics at one threshold of the grid. `threshold` is `None` for the
/// single pseudo-row of fixed-prediction (baseline) reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: Option<f64>,
    pub counts: ConfusionCounts,
    pub f1: Option<f64>,
    pub mean_dd: f64,
    pub mean_ttfa: f64,
    pub covering: f64,
}

/// Aggregate report over a dataset and threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_sequences: usize,
    pub per_threshold: Vec<ThresholdMetrics>,
    pub best_f1: Option<f64>,
    pub best_f1_threshold: Option<f64>,
    pub dd_at_best_f1: Option<f64>,
    pub ttfa_at_best_f1: Option<f64>,
    pub covering_at_best_f1: Option<f64>,
    pub max_covering: Option<f64>,
    pub auc: f64,
    /// Chosen baseline hyperparameter, when the report scores an offline
    /// detector picked by grid search.
    pub baseline: Option<BaselineInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineInfo {
    pub method: String,
    pub penalty: Option<f64>,
    pub n_pred: Option<usize>,
    pub detail: Option<String>,
}

/// Ground truth for scoring: the single-change label plus, for
/// multi-change data, the full change-point set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTruth {
    pub label: ChangeLabel,
    pub multi: Option<MultiChangeLabel>,
    pub t_len: usize,
}

impl EvalTruth {
    pub fn single(label: ChangeLabel, t_len: usize) -> Self {
        Self {
            label,
            multi: None,
            t_len,
        }
    }

    fn truth_partition(&self) -> Result<Partition, MetricsError> {
        match &self.multi {
            Some(ml) => Partition::from_multi_label(ml, self.t_len),
            None => Partition::from_label(self.label, self.t_len),
        }
    }
}

/// Score probability series over a threshold grid.
///
/// Confusion counts, delay, and time to false alarm use first-alarm
/// semantics; covering uses the first alarm as the predicted split for
/// single-change truth and every upward crossing for multi-change truth.
pub fn evaluate_probabilistic(
    inputs: &[(&ProbabilitySeries, EvalTruth)],
    grid: &[f64],
) -> Result<MetricsReport, MetricsError> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::UnsortedGrid);
    }
    let mut per_threshold = Vec::with_capacity(grid.len());
    for &s in grid {
        let first_rule = ThresholdRule::first_only(s)
            .map_err(|_| MetricsError::BadPartition(format!("threshold {s}")))?;
        let multi_rule = ThresholdRule::new(s, MultiMode::AllUpCrossings)
            .map_err(|_| MetricsError::BadPartition(format!("threshold {s}")))?;
        let mut counts = ConfusionCounts::default();
        let mut dd_sum = 0.0;
        let mut dd_count = 0usize;
        let mut ttfa_sum = 0.0;
        let mut covering_sum = 0.0;
        for (p, truth) in inputs {
            let result = detect(p, &first_rule);
            counts.record(classify_outcome(truth.label, &result));
            let (dd, ttfa) = delay_and_ttfa(truth.label, &result, truth.t_len);
            if let Some(d) = dd {
                dd_sum += d;
                dd_count += 1;
            }
            ttfa_sum += ttfa;

            let truth_part = truth.truth_partition()?;
            let predicted = if truth.multi.is_some() {
                Partition::from_detection(&detect(p, &multi_rule), truth.t_len)?
            } else {
                Partition::from_detection(&result, truth.t_len)?
            };
            covering_sum += covering(&truth_part, &predicted)?;
        }
        let n = inputs.len().max(1) as f64;
        per_threshold.push(ThresholdMetrics {
            threshold: Some(s),
            counts,
            f1: f1(&counts),
            mean_dd: if dd_count > 0 {
                dd_sum / dd_count as f64
            } else {
                0.0
            },
            mean_ttfa: ttfa_sum / n,
            covering: covering_sum / n,
        });
    }

    let curve_points: Vec<CurvePoint> = per_threshold
        .iter()
        .map(|m| CurvePoint {
            threshold: m.threshold.expect("grid rows carry thresholds"),
            mean_dd: m.mean_dd,
            mean_ttfa: m.mean_ttfa,
        })
        .collect();
    let auc = curve_area(&curve_points);

    let best = per_threshold
        .iter()
        .filter(|m| m.f1.is_some())
        .max_by(|a, b| a.f1.unwrap().total_cmp(&b.f1.unwrap()));
    let max_covering = per_threshold
        .iter()
        .map(|m| m.covering)
        .max_by(f64::total_cmp);

    Ok(MetricsReport {
        n_sequences: inputs.len(),
        best_f1: best.and_then(|m| m.f1),
        best_f1_threshold: best.and_then(|m| m.threshold),
        dd_at_best_f1: best.map(|m| m.mean_dd),
        ttfa_at_best_f1: best.map(|m| m.mean_ttfa),
        covering_at_best_f1: best.map(|m| m.covering),
        max_covering,
        auc,
        per_threshold,
        baseline: None,
    })
}

/// Score fixed change-point predictions (offline methods, CUSUM).
///
/// The first predicted change acts as the alarm for confusion counts,
/// delay, and time to false alarm; the full predicted set is used for
/// covering. The report carries a single pseudo-threshold row.
pub fn evaluate_fixed_predictions(
    inputs: &[(&MultiChangeLabel, EvalTruth)],
) -> Result<MetricsReport, MetricsError> {
    let mut counts = ConfusionCounts::default();
    let mut dd_sum = 0.0;
    let mut dd_count = 0usize;
    let mut ttfa_sum = 0.0;
    let mut covering_sum = 0.0;
    for (predicted, truth) in inputs {
        let result = match predicted.change_points().first() {
            Some(&first) => DetectionResult::from_alarms(vec![first])
                .expect("single alarm is sorted"),
            None => DetectionResult::none(),
        };
        counts.record(classify_outcome(truth.label, &result));
        let (dd, ttfa) = delay_and_ttfa(truth.label, &result, truth.t_len);
        if let Some(d) = dd {
            dd_sum += d;
            dd_count += 1;
        }
        ttfa_sum += ttfa;
        let truth_part = truth.truth_partition()?;
        let pred_part = Partition::from_change_points(predicted.change_points(), truth.t_len)?;
        covering_sum += covering(&truth_part, &pred_part)?;
    }
    let n = inputs.len().max(1) as f64;
    let row = ThresholdMetrics {
        threshold: None,
        counts,
        f1: f1(&counts),
        mean_dd: if dd_count > 0 {
            dd_sum / dd_count as f64
        } else {
            0.0
        },
        mean_ttfa: ttfa_sum / n,
        covering: covering_sum / n,
    };
    Ok(MetricsReport {
        n_sequences: inputs.len(),
        best_f1: row.f1,
        best_f1_threshold: None,
        dd_at_best_f1: Some(row.mean_dd),
        ttfa_at_best_f1: Some(row.mean_ttfa),
        covering_at_best_f1: Some(row.covering),
        max_covering: Some(row.covering),
        auc: 0.0,
        per_threshold: vec![row],
        baseline: None,
    })
}

/// The default threshold grid: 41 points, 0 to 1 in steps of 0.025.
pub fn default_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.025).collect()
}
