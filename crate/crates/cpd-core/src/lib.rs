//! Change-point detection toolkit.
//!
//! The crate covers the full loop of a detection experiment:
//!
//! - [`datagen`] produces reproducible synthetic mean-shift datasets;
//! - [`model`] is a small recurrent probability estimator (LSTM or GRU)
//!   with exact backpropagation through time;
//! - [`loss`] holds the differentiable detection objectives: a truncated
//!   expected-detection-delay term, a truncated expected-time-to-alarm
//!   bound, their weighted combination, and a binary cross-entropy
//!   baseline, all with analytic gradients;
//! - [`train`] runs minibatch Adam with early stopping;
//! - [`detect`] turns probability series into alarms (thresholding) and
//!   provides a CUSUM reference detector;
//! - [`offline`] implements the PELT and binary-segmentation baselines
//!   with an L2 cost;
//! - [`metrics`] scores detectors: confusion counts with a
//!   premature-alarm penalty, F1, detection delay, time to false alarm,
//!   the delay/false-alarm trade-off curve and its area, and the
//!   partition covering metric;
//! - [`io`] reads and writes the on-disk dataset layout.

pub mod datagen;
pub mod detect;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod offline;
pub mod train;
pub mod types;

pub use types::{
    ChangeLabel, CoreError, Dataset, DetectionResult, LabeledSequence, MultiChangeLabel,
    Observations, ProbabilitySeries,
};
