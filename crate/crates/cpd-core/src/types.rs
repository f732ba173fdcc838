//! Shared domain types and indexing conventions.
//!
//! Time is 0-based everywhere: a sequence of length `T` has indices
//! `0..T-1`, and a change at index `theta` means the first post-change
//! observation is `observations[theta]`. "No change" is an explicit
//! variant, never a sentinel value.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datagen::GeneratorSpec;

/// Errors from constructing or slicing the domain types.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    IndexOutOfRange { index: usize, len: usize },
    EmptySequence,
    DimensionMismatch { expected: usize, got: usize },
    NonFinite { row: usize, col: usize },
    InvalidProbability { index: usize, value: f64 },
    UnsortedChangePoints,
    ChangeOutOfRange { theta: usize, len: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Self::EmptySequence => write!(f, "sequence must contain at least one observation"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Self::NonFinite { row, col } => {
                write!(f, "non-finite observation at row {row}, column {col}")
            }
            Self::InvalidProbability { index, value } => {
                write!(f, "probability {value} at index {index} outside [0, 1]")
            }
            Self::UnsortedChangePoints => {
                write!(f, "change points must be strictly increasing")
            }
            Self::ChangeOutOfRange { theta, len } => {
                write!(f, "change index {theta} out of range for length {len}")
            }
        }
    }
}

impl std::error::Error for CoreError {}

/// Ground-truth label of a sequence: a change at a known index, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeLabel {
    Change(usize),
    NoChange,
}

impl ChangeLabel {
    pub fn is_change(&self) -> bool {
        matches!(self, Self::Change(_))
    }

    /// The change index, if any.
    pub fn theta(&self) -> Option<usize> {
        match self {
            Self::Change(t) => Some(*t),
            Self::NoChange => None,
        }
    }
}

/// A `T x D` matrix of observations, row-major, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Observations {
    pub fn from_flat(len: usize, dim: usize, data: Vec<f64>) -> Result<Self, CoreError> {
        if len == 0 || dim == 0 {
            return Err(CoreError::EmptySequence);
        }
        if data.len() != len * dim {
            return Err(CoreError::DimensionMismatch {
                expected: len * dim,
                got: data.len(),
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::NonFinite {
                    row: i / dim,
                    col: i % dim,
                });
            }
        }
        Ok(Self { len, dim, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, CoreError> {
        if rows.is_empty() {
            return Err(CoreError::EmptySequence);
        }
        let dim = rows[0].len();
        let len = rows.len();
        let mut data = Vec::with_capacity(len * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(CoreError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(len, dim, data)
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Observation dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The observation vector at time `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the first `t_len` rows.
    fn prefix(&self, t_len: usize) -> Self {
        Self {
            len: t_len,
            dim: self.dim,
            data: self.data[..t_len * self.dim].to_vec(),
        }
    }
}

/// One observation series together with its ground-truth change label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub id: String,
    pub observations: Observations,
    pub label: ChangeLabel,
}

impl LabeledSequence {
    pub fn new(
        id: impl Into<String>,
        observations: Observations,
        label: ChangeLabel,
    ) -> Result<Self, CoreError> {
        if let ChangeLabel::Change(theta) = label {
            if theta >= observations.len() {
                return Err(CoreError::ChangeOutOfRange {
                    theta,
                    len: observations.len(),
                });
            }
        }
        Ok(Self {
            id: id.into(),
            observations,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Sorted change indices for sequences with any number of changes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MultiChangeLabel {
    change_points: Vec<usize>,
}

impl MultiChangeLabel {
    pub fn new(change_points: Vec<usize>) -> Result<Self, CoreError> {
        if change_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::UnsortedChangePoints);
        }
        Ok(Self { change_points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    pub fn len(&self) -> usize {
        self.change_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.change_points.is_empty()
    }

    /// First change, as a single-change label.
    pub fn first_as_label(&self) -> ChangeLabel {
        match self.change_points.first() {
            Some(&t) => ChangeLabel::Change(t),
            None => ChangeLabel::NoChange,
        }
    }

    pub fn validate_for_len(&self, t_len: usize) -> Result<(), CoreError> {
        if let Some(&last) = self.change_points.last() {
            if last >= t_len {
                return Err(CoreError::ChangeOutOfRange {
                    theta: last,
                    len: t_len,
                });
            }
        }
        Ok(())
    }
}

/// Provenance recorded next to a generated dataset split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: String,
    pub multi_change: bool,
    pub generator: GeneratorSpec,
}

/// A collection of labeled sequences sharing one observation dimension.
///
/// `multi_labels`, when present, runs parallel to `sequences` and carries
/// the full change-point sets; `sequences[i].label` then holds the first
/// change point for single-change consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<LabeledSequence>,
    pub multi_labels: Option<Vec<MultiChangeLabel>>,
    pub meta: Option<DatasetMeta>,
}

impl Dataset {
    pub fn new(sequences: Vec<LabeledSequence>) -> Result<Self, CoreError> {
        Self::validate_dims(&sequences)?;
        Ok(Self {
            sequences,
            multi_labels: None,
            meta: None,
        })
    }

    pub fn with_multi_labels(
        sequences: Vec<LabeledSequence>,
        multi_labels: Vec<MultiChangeLabel>,
    ) -> Result<Self, CoreError> {
        Self::validate_dims(&sequences)?;
        if sequences.len() != multi_labels.len() {
            return Err(CoreError::DimensionMismatch {
                expected: sequences.len(),
                got: multi_labels.len(),
            });
        }
        for (seq, ml) in sequences.iter().zip(&multi_labels) {
            ml.validate_for_len(seq.len())?;
        }
        Ok(Self {
            sequences,
            multi_labels: Some(multi_labels),
            meta: None,
        })
    }

    fn validate_dims(sequences: &[LabeledSequence]) -> Result<(), CoreError> {
        if let Some(first) = sequences.first() {
            let dim = first.observations.dim();
            for seq in sequences {
                if seq.observations.dim() != dim {
                    return Err(CoreError::DimensionMismatch {
                        expected: dim,
                        got: seq.observations.dim(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Shared observation dimension, or `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.sequences.first().map(|s| s.observations.dim())
    }
}

/// Per-timestep change probabilities emitted causally by a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySeries {
    values: Vec<f64>,
}

impl ProbabilitySeries {
    pub fn new(values: Vec<f64>) -> Result<Self, CoreError> {
        if values.is_empty() {
            return Err(CoreError::EmptySequence);
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(CoreError::InvalidProbability { index: i, value: v });
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: usize) -> f64 {
        self.values[t]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Alarm indices produced by a decision rule over a probability series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub alarms: Vec<usize>,
    pub first_alarm: Option<usize>,
}

impl DetectionResult {
    /// Build from sorted alarm indices; `first_alarm` is the minimum.
    pub fn from_alarms(alarms: Vec<usize>) -> Result<Self, CoreError> {
        if alarms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::UnsortedChangePoints);
        }
        let first_alarm = alarms.first().copied();
        Ok(Self {
            alarms,
            first_alarm,
        })
    }

    pub fn none() -> Self {
        Self {
            alarms: Vec::new(),
            first_alarm: None,
        }
    }
}

/// Truncate a sequence to `observations[0..=t]`.
///
/// The label survives only if the change is visible inside the prefix;
/// a change strictly after `t` is not knowable at time `t` and the
/// prefix is labeled `NoChange`.
pub fn prefix_restrict(seq: &LabeledSequence, t: usize) -> Result<LabeledSequence, CoreError> {
    if t >= seq.len() {
        return Err(CoreError::IndexOutOfRange {
            index: t,
            len: seq.len(),
        });
    }
    let label = match seq.label {
        ChangeLabel::Change(theta) if theta <= t => ChangeLabel::Change(theta),
        _ => ChangeLabel::NoChange,
    };
    Ok(LabeledSequence {
        id: seq.id.clone(),
        observations: seq.observations.prefix(t + 1),
        label,
    })
}
