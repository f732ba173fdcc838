//! Minibatch training with Adam and early stopping.
//!
//! Three regimes share one loop: `Delay` trains on the combined
//! delay/false-alarm objective, `Bce` on per-step cross-entropy, and
//! `BceThenDelay` runs a BCE phase and then fine-tunes on the combined
//! objective, each phase with its own early stopping and a fresh
//! optimizer state.
//!
//! Runs are deterministic: every random choice (validation split, batch
//! shuffling, dropout, initialization) comes from fixed substreams of the
//! run seed, and per-sequence gradients are reduced in batch order, so
//! results do not depend on worker parallelism.

use std::fmt;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::loss::{self, LossConfig, LossError};
use crate::model::{self, ModelError, ModelParams, ModelSpec, ParamGrads};
use crate::types::{ChangeLabel, Dataset, LabeledSequence};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug)]
pub enum TrainError {
    EmptyDataset,
    InvalidConfig(String),
    Diverged { phase: &'static str, epoch: usize },
    NonFiniteGradient,
    Loss(LossError),
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyDataset => write!(f, "training requires a nonempty dataset"),
            Self::InvalidConfig(msg) => write!(f, "invalid train config: {msg}"),
            Self::Diverged { phase, epoch } => {
                write!(f, "loss diverged to a non-finite value in {phase} epoch {epoch}")
            }
            Self::NonFiniteGradient => write!(f, "non-finite gradient"),
            Self::Loss(e) => write!(f, "{e}"),
            Self::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        Self::Loss(e)
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Combined delay / time-to-false-alarm objective from scratch.
    Delay,
    /// Per-step binary cross-entropy from scratch.
    Bce,
    /// BCE warm start, then fine-tune on the combined objective.
    BceThenDelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub val_fraction: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Delay,
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 300,
            patience: 10,
            min_delta: 0.0,
            loss: LossConfig::default(),
            seed: 0,
            val_fraction: 0.2,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Adam accumulators over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over a flat slice. `step` must already
/// be incremented to the 1-based step number.
pub fn adam_update_slice(
    values: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..values.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Apply one Adam step to the model parameters.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    let g = grads.flat_copy();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteGradient);
    }
    let mut flat = params.flat_copy();
    state.step += 1;
    adam_update_slice(&mut flat, &g, &mut state.m, &mut state.v, state.step, lr);
    params.set_from_flat(&flat);
    Ok(())
}

/// One epoch record of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub phases: Vec<PhaseSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Delay,
    Bce,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Self::Delay => "delay",
            Self::Bce => "bce",
        }
    }
}

/// Stratified index split: both label classes contribute the same
/// fraction to validation.
fn split_indices(
    dataset: &Dataset,
    val_fraction: f64,
    rng: &mut ChaCha12Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut changed: Vec<usize> = Vec::new();
    let mut clean: Vec<usize> = Vec::new();
    for (i, seq) in dataset.sequences.iter().enumerate() {
        if seq.label.is_change() {
            changed.push(i);
        } else {
            clean.push(i);
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for group in [&mut changed, &mut clean] {
        group.shuffle(rng);
        let n_val = ((group.len() as f64) * val_fraction).floor() as usize;
        let n_val = n_val.min(group.len().saturating_sub(1));
        val.extend_from_slice(&group[..n_val]);
        train.extend_from_slice(&group[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct BatchEval {
    total: f64,
    grads: Vec<ParamGrads>,
}

/// Forward + loss + backward over one batch. Dropout seeds are drawn
/// sequentially up front so the result is independent of worker order.
fn eval_batch(
    params: &ModelParams,
    sequences: &[&LabeledSequence],
    phase: Phase,
    loss_cfg: &LossConfig,
    dropout_seeds: Option<Vec<u64>>,
    with_grads: bool,
) -> Result<BatchEval, TrainError> {
    let forwards: Vec<Result<_, ModelError>> = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut rng = dropout_seeds
                .as_ref()
                .map(|seeds| ChaCha12Rng::seed_from_u64(seeds[i]));
            let rng_ref: Option<&mut dyn RngCore> =
                rng.as_mut().map(|r| r as &mut dyn RngCore);
            model::forward(params, &seq.observations, rng_ref)
        })
        .collect();
    let mut probs = Vec::with_capacity(sequences.len());
    let mut tapes = Vec::with_capacity(sequences.len());
    for fwd in forwards {
        let (p, tape) = fwd?;
        probs.push(p);
        tapes.push(tape);
    }

    let (total, grad_p): (f64, Vec<Vec<f64>>) = match phase {
        Phase::Delay => {
            let batch: Vec<(&crate::types::ProbabilitySeries, ChangeLabel)> = probs
                .iter()
                .zip(sequences)
                .map(|(p, seq)| (p, seq.label))
                .collect();
            let value = loss::combined_loss(&batch, loss_cfg)?;
            (value.total, value.grad_p)
        }
        Phase::Bce => {
            let scale = 1.0 / sequences.len() as f64;
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(sequences.len());
            for (p, seq) in probs.iter().zip(sequences) {
                let (value, mut grad) = loss::bce_loss(p, seq.label);
                total += value * scale;
                for g in &mut grad {
                    *g *= scale;
                }
                grads.push(grad);
            }
            (total, grads)
        }
    };

    if !with_grads {
        return Ok(BatchEval {
            total,
            grads: Vec::new(),
        });
    }

    let grads: Vec<Result<ParamGrads, ModelError>> = tapes
        .par_iter()
        .zip(grad_p.par_iter())
        .map(|(tape, grad)| model::backward(tape, grad))
        .collect();
    let mut collected = Vec::with_capacity(grads.len());
    for g in grads {
        collected.push(g?);
    }
    Ok(BatchEval {
        total,
        grads: collected,
    })
}

fn phase_loss(
    params: &ModelParams,
    sequences: &[&LabeledSequence],
    phase: Phase,
    loss_cfg: &LossConfig,
) -> Result<f64, TrainError> {
    if sequences.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(eval_batch(params, sequences, phase, loss_cfg, None, false)?.total)
}

struct PhaseOutcome {
    best_params: ModelParams,
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    phase: Phase,
    start_params: ModelParams,
    train_seqs: &[&LabeledSequence],
    val_seqs: &[&LabeledSequence],
    cfg: &TrainConfig,
    shuffle_rng: &mut ChaCha12Rng,
    dropout_rng: &mut ChaCha12Rng,
    log: &mut TrainLog,
) -> Result<PhaseOutcome, TrainError> {
    let mut params = start_params;
    let mut state = AdamState::new(params.flat_len());
    let uses_dropout = params.spec.dropout > 0.0;

    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stop_reference = f64::INFINITY;
    let mut wait = 0usize;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        epochs_run = epoch;
        order.shuffle(shuffle_rng);

        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledSequence> = chunk.iter().map(|&i| train_seqs[i]).collect();
            let seeds = uses_dropout
                .then(|| (0..batch.len()).map(|_| dropout_rng.gen::<u64>()).collect());
            let eval = eval_batch(&params, &batch, phase, &cfg.loss, seeds, true)?;
            if !eval.total.is_finite() {
                return Err(TrainError::Diverged {
                    phase: phase.name(),
                    epoch,
                });
            }
            batch_losses.push(eval.total);

            let mut acc = ParamGrads::zeros(&params.spec);
            for g in &eval.grads {
                acc.add(g);
            }
            if let Some(max_norm) = cfg.grad_clip {
                let norm = acc.l2_norm();
                if norm > max_norm {
                    acc.scale(max_norm / norm);
                }
            }
            adam_step(&mut params, &acc, &mut state, cfg.learning_rate)?;
        }

        let train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64;
        let val_loss = if val_seqs.is_empty() {
            train_loss
        } else {
            phase_loss(&params, val_seqs, phase, &cfg.loss)?
        };
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                phase: phase.name(),
                epoch,
            });
        }
        log.records.push(EpochRecord {
            phase: phase.name().to_string(),
            epoch,
            train_loss,
            val_loss,
            wall_ms: started.elapsed().as_millis() as u64,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        // Early stopping: an improvement must beat the reference by more
        // than min_delta; `wait` counts consecutive non-improvements.
        if val_loss < stop_reference - cfg.min_delta {
            stop_reference = val_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience.max(1) {
                break;
            }
        }
    }

    log.phases.push(PhaseSummary {
        phase: phase.name().to_string(),
        epochs_run,
        best_epoch,
        best_val_loss: best_val,
    });
    Ok(PhaseOutcome { best_params })
}

/// Train a detector on a dataset.
///
/// Returns the parameters of the best validation epoch (of the final
/// phase) and the per-epoch log.
pub fn train(
    dataset: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    cfg.validate()?;
    spec.validate()?;
    if dataset.dim() != Some(spec.input_dim) {
        return Err(TrainError::InvalidConfig(format!(
            "model input_dim {} does not match dataset dim {:?}",
            spec.input_dim,
            dataset.dim()
        )));
    }

    let mut init_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(10);
    let mut split_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    split_rng.set_stream(11);
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(12);
    let mut dropout_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(13);

    let params = model::init_params(spec, &mut init_rng)?;
    let (train_idx, val_idx) = split_indices(dataset, cfg.val_fraction, &mut split_rng);
    let train_seqs: Vec<&LabeledSequence> = train_idx.iter().map(|&i| &dataset.sequences[i]).collect();
    let val_seqs: Vec<&LabeledSequence> = val_idx.iter().map(|&i| &dataset.sequences[i]).collect();

    let mut log = TrainLog {
        seed: cfg.seed,
        ..TrainLog::default()
    };
    if cfg.max_epochs == 0 {
        return Ok((params, log));
    }

    let phases: &[Phase] = match cfg.regime {
        Regime::Delay => &[Phase::Delay],
        Regime::Bce => &[Phase::Bce],
        Regime::BceThenDelay => &[Phase::Bce, Phase::Delay],
    };
    let mut current = params;
    for &phase in phases {
        let outcome = run_phase(
            phase,
            current,
            &train_seqs,
            &val_seqs,
            cfg,
            &mut shuffle_rng,
            &mut dropout_rng,
            &mut log,
        )?;
        current = outcome.best_params;
    }
    Ok((current, log))
}

/// Serialize a log as JSON lines, one record per epoch.
pub fn train_log_to_jsonl(log: &TrainLog) -> String {
    let mut out = String::new();
    for record in &log.records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CellKind;
    use crate::types::Observations;

    fn tiny_dataset(n: usize, t_len: usize, seed: u64) -> Dataset {
        // Pre-change near 0, post-change near 100: trivially separable.
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut sequences = Vec::new();
        for i in 0..n {
            let changed = i % 2 == 0;
            let theta = if changed { 1 + (i % (t_len - 1)) } else { 0 };
            let rows: Vec<Vec<f64>> = (0..t_len)
                .map(|t| {
                    let base = if changed && t >= theta { 100.0 } else { 0.0 };
                    vec![base + rng.gen_range(-0.5..0.5)]
                })
                .collect();
            let label = if changed {
                ChangeLabel::Change(theta)
            } else {
                ChangeLabel::NoChange
            };
            sequences.push(
                crate::types::LabeledSequence::new(
                    format!("s{i:03}"),
                    Observations::from_rows(rows).unwrap(),
                    label,
                )
                .unwrap(),
            );
        }
        Dataset::new(sequences).unwrap()
    }

    #[test]
    fn adam_zero_grads_leave_params_unchanged() {
        let spec = ModelSpec::new(2, 3, CellKind::Gru);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut params = model::init_params(&spec, &mut rng).unwrap();
        let before = params.flat_copy();
        let grads = ParamGrads::zeros(&spec);
        let mut state = AdamState::new(params.flat_len());
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params.flat_copy(), before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_sign() {
        for g in [0.5, -0.25, 3.0] {
            let mut value = [1.0];
            let mut m = [0.0];
            let mut v = [0.0];
            adam_update_slice(&mut value, &[g], &mut m, &mut v, 1, 0.01);
            let moved = value[0] - 1.0;
            assert!((moved + 0.01 * g.signum()).abs() < 1e-6, "moved {moved}");
        }
    }

    #[test]
    fn adam_two_steps_match_hand_unrolled_recursion() {
        let lr = 0.1;
        let (g1, g2) = (0.5, -0.25);
        let mut value = [2.0];
        let mut m = [0.0];
        let mut v = [0.0];
        adam_update_slice(&mut value, &[g1], &mut m, &mut v, 1, lr);
        adam_update_slice(&mut value, &[g2], &mut m, &mut v, 2, lr);

        // Hand-unrolled, one operation per line.
        let m1 = 0.9 * 0.0 + 0.1 * g1;
        let v1 = 0.999 * 0.0 + 0.001 * g1 * g1;
        let m1_hat = m1 / (1.0 - 0.9f64.powi(1));
        let v1_hat = v1 / (1.0 - 0.999f64.powi(1));
        let w1 = 2.0 - lr * m1_hat / (v1_hat.sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let m2_hat = m2 / (1.0 - 0.9f64.powi(2));
        let v2_hat = v2 / (1.0 - 0.999f64.powi(2));
        let w2 = w1 - lr * m2_hat / (v2_hat.sqrt() + 1e-8);

        assert!((value[0] - w2).abs() < 1e-15, "{} vs {w2}", value[0]);
    }

    #[test]
    fn adam_rejects_non_finite_grads() {
        let spec = ModelSpec::new(1, 2, CellKind::Lstm);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut params = model::init_params(&spec, &mut rng).unwrap();
        let mut grads = ParamGrads::zeros(&spec);
        grads.head_b = f64::NAN;
        let mut state = AdamState::new(params.flat_len());
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, 0.1),
            Err(TrainError::NonFiniteGradient)
        ));
    }

    #[test]
    fn zero_epochs_returns_init_params() {
        let dataset = tiny_dataset(8, 6, 3);
        let spec = ModelSpec::new(1, 3, CellKind::Lstm);
        let cfg = TrainConfig {
            max_epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let (params, log) = train(&dataset, &spec, &cfg).unwrap();
        assert!(log.records.is_empty());
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        rng.set_stream(10);
        let expected = model::init_params(&spec, &mut rng).unwrap();
        assert_eq!(params, expected);
    }

    #[test]
    fn impossible_improvement_stops_after_one_epoch() {
        let dataset = tiny_dataset(8, 6, 4);
        let spec = ModelSpec::new(1, 3, CellKind::Gru);
        let cfg = TrainConfig {
            max_epochs: 50,
            patience: 0,
            min_delta: f64::INFINITY,
            seed: 6,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (_, log) = train(&dataset, &spec, &cfg).unwrap();
        assert_eq!(log.records.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = tiny_dataset(12, 8, 7);
        let spec = ModelSpec::new(1, 4, CellKind::Lstm).with_dropout(0.25);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let (params_a, log_a) = train(&dataset, &spec, &cfg).unwrap();
        let (params_b, log_b) = train(&dataset, &spec, &cfg).unwrap();
        assert_eq!(params_a, params_b);
        let strip = |log: &TrainLog| {
            log.records
                .iter()
                .map(|r| (r.phase.clone(), r.epoch, r.train_loss, r.val_loss))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&log_a), strip(&log_b));
    }

    #[test]
    fn val_loss_decreases_on_separable_data() {
        let dataset = tiny_dataset(24, 12, 9);
        let spec = ModelSpec::new(1, 4, CellKind::Lstm);
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 10,
            seed: 13,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (_, log) = train(&dataset, &spec, &cfg).unwrap();
        assert!(log.records.len() >= 3);
        assert!(log.records[1].val_loss < log.records[0].val_loss);
        assert!(log.records[2].val_loss < log.records[1].val_loss);
    }

    #[test]
    fn full_batch_train_loss_equals_whole_split_loss() {
        let dataset = tiny_dataset(10, 6, 15);
        let spec = ModelSpec::new(1, 3, CellKind::Gru);
        let cfg = TrainConfig {
            max_epochs: 1,
            batch_size: 1000, // full batch
            seed: 17,
            ..TrainConfig::default()
        };
        let (_, log) = train(&dataset, &spec, &cfg).unwrap();

        // Recompute the loss of the initial parameters over the train split.
        let mut init_rng = ChaCha12Rng::seed_from_u64(17);
        init_rng.set_stream(10);
        let params = model::init_params(&spec, &mut init_rng).unwrap();
        let mut split_rng = ChaCha12Rng::seed_from_u64(17);
        split_rng.set_stream(11);
        let (train_idx, _) = split_indices(&dataset, cfg.val_fraction, &mut split_rng);
        let train_seqs: Vec<&LabeledSequence> =
            train_idx.iter().map(|&i| &dataset.sequences[i]).collect();
        let expected = phase_loss(&params, &train_seqs, Phase::Delay, &cfg.loss).unwrap();
        assert!((log.records[0].train_loss - expected).abs() < 1e-12);
    }

    #[test]
    fn two_phase_regime_logs_both_phases() {
        let dataset = tiny_dataset(12, 6, 19);
        let spec = ModelSpec::new(1, 3, CellKind::Lstm);
        let cfg = TrainConfig {
            regime: Regime::BceThenDelay,
            max_epochs: 2,
            seed: 23,
            ..TrainConfig::default()
        };
        let (_, log) = train(&dataset, &spec, &cfg).unwrap();
        assert_eq!(log.phases.len(), 2);
        assert_eq!(log.phases[0].phase, "bce");
        assert_eq!(log.phases[1].phase, "delay");
        assert!(log.records.iter().any(|r| r.phase == "bce"));
        assert!(log.records.iter().any(|r| r.phase == "delay"));
    }

    #[test]
    fn best_epoch_params_are_returned_not_last() {
        // With a huge learning rate late epochs get worse; the returned
        // params must match the best validation epoch.
        let dataset = tiny_dataset(16, 8, 25);
        let spec = ModelSpec::new(1, 3, CellKind::Lstm);
        let cfg = TrainConfig {
            max_epochs: 6,
            learning_rate: 0.9,
            patience: 10,
            seed: 29,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (params, log) = train(&dataset, &spec, &cfg).unwrap();
        let best = log.phases[0].best_epoch;
        let best_val = log.phases[0].best_val_loss;
        assert!(log
            .records
            .iter()
            .all(|r| r.val_loss >= best_val - 1e-12));
        assert_eq!(
            log.records[best - 1].val_loss, best_val,
            "best epoch mismatch"
        );
        // Returned params reproduce the recorded best val loss.
        let mut split_rng = ChaCha12Rng::seed_from_u64(29);
        split_rng.set_stream(11);
        let (_, val_idx) = split_indices(&dataset, cfg.val_fraction, &mut split_rng);
        let val_seqs: Vec<&LabeledSequence> =
            val_idx.iter().map(|&i| &dataset.sequences[i]).collect();
        let reproduced = phase_loss(&params, &val_seqs, Phase::Delay, &cfg.loss).unwrap();
        assert!((reproduced - best_val).abs() < 1e-12);
    }

    #[test]
    fn jsonl_has_one_line_per_epoch() {
        let dataset = tiny_dataset(8, 6, 31);
        let spec = ModelSpec::new(1, 2, CellKind::Gru);
        let cfg = TrainConfig {
            max_epochs: 2,
            seed: 37,
            ..TrainConfig::default()
        };
        let (_, log) = train(&dataset, &spec, &cfg).unwrap();
        let jsonl = train_log_to_jsonl(&log);
        assert_eq!(jsonl.lines().count(), log.records.len());
        for line in jsonl.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("epoch").is_some());
            assert!(v.get("train_loss").is_some());
            assert!(v.get("val_loss").is_some());
            assert!(v.get("wall_ms").is_some());
        }
    }
}
