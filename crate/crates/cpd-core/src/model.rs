//! Causal recurrent probability estimator.
//!
//! A single recurrent cell (LSTM or GRU) consumes the observation stream;
//! an affine head plus sigmoid maps each hidden state to the change
//! probability for that step. `forward` records a tape of intermediates,
//! `backward` replays it to produce exact parameter gradients given the
//! upstream gradient with respect to the probabilities.
//!
//! Everything runs in f64. The hidden state starts at zero and the cell
//! equations are the standard single-layer formulations:
//!
//! LSTM: `i,f,o = sigmoid(..)`, `g = tanh(..)`,
//!        `c_t = f*c + i*g`, `h_t = o*tanh(c_t)`.
//! GRU:  `r,z = sigmoid(..)`, `n = tanh(W x + U (r*h) + b)`,
//!        `h_t = (1-z)*n + z*h`.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::types::{Observations, ProbabilitySeries};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum ModelError {
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    NonFiniteInput,
    InvalidSpec(String),
    TapeMismatch {
        expected: usize,
        got: usize,
    },
    Checkpoint(String),
    Io(std::io::Error),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected {expected}, got {got}"),
            Self::NonFiniteInput => write!(f, "input contains non-finite values"),
            Self::InvalidSpec(msg) => write!(f, "invalid model spec: {msg}"),
            Self::TapeMismatch { expected, got } => {
                write!(f, "gradient length {got} does not match tape length {expected}")
            }
            Self::Checkpoint(msg) => write!(f, "bad checkpoint: {msg}"),
            Self::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gate_count(self) -> usize {
        match self {
            Self::Lstm => 4,
            Self::Gru => 3,
        }
    }
}

/// Architecture of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub cell: CellKind,
    /// Inverted-dropout rate applied to the hidden state fed to the head,
    /// training mode only. Zero disables it.
    pub dropout: f64,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, cell: CellKind) -> Self {
        Self {
            input_dim,
            hidden_dim,
            cell,
            dropout: 0.0,
        }
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(ModelError::InvalidSpec("hidden_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidSpec(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Cell and head parameters.
///
/// Gate blocks are stacked row-wise in a fixed order (LSTM: input,
/// forget, cell, output; GRU: reset, update, candidate), so `w_input` is
/// `(gates * H) x D` row-major, `w_hidden` is `(gates * H) x H`, and
/// `bias` has `gates * H` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub w_input: Vec<f64>,
    pub w_hidden: Vec<f64>,
    pub bias: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl ModelParams {
    pub fn flat_len(&self) -> usize {
        self.w_input.len() + self.w_hidden.len() + self.bias.len() + self.head_w.len() + 1
    }

    /// All parameters in canonical order.
    pub fn flat_copy(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&self.w_input);
        out.extend_from_slice(&self.w_hidden);
        out.extend_from_slice(&self.bias);
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.flat_len());
        let mut offset = 0;
        for seg in [&mut self.w_input, &mut self.w_hidden, &mut self.bias, &mut self.head_w] {
            let len = seg.len();
            seg.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        self.head_b = flat[offset];
    }

    pub fn all_finite(&self) -> bool {
        self.flat_copy().iter().all(|v| v.is_finite())
    }
}

/// Parameter gradients, same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w_input: Vec<f64>,
    pub w_hidden: Vec<f64>,
    pub bias: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl ParamGrads {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let gh = spec.cell.gate_count() * spec.hidden_dim;
        Self {
            w_input: vec![0.0; gh * spec.input_dim],
            w_hidden: vec![0.0; gh * spec.hidden_dim],
            bias: vec![0.0; gh],
            head_w: vec![0.0; spec.hidden_dim],
            head_b: 0.0,
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.w_input.iter_mut().zip(&other.w_input) {
            *a += b;
        }
        for (a, b) in self.w_hidden.iter_mut().zip(&other.w_hidden) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        for (a, b) in self.head_w.iter_mut().zip(&other.head_w) {
            *a += b;
        }
        self.head_b += other.head_b;
    }

    pub fn scale(&mut self, s: f64) {
        for seg in [&mut self.w_input, &mut self.w_hidden, &mut self.bias, &mut self.head_w] {
            for v in seg.iter_mut() {
                *v *= s;
            }
        }
        self.head_b *= s;
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = self.head_b * self.head_b;
        for seg in [&self.w_input, &self.w_hidden, &self.bias, &self.head_w] {
            for v in seg.iter() {
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    pub fn flat_copy(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.w_input.len() + self.w_hidden.len() + self.bias.len() + self.head_w.len() + 1,
        );
        out.extend_from_slice(&self.w_input);
        out.extend_from_slice(&self.w_hidden);
        out.extend_from_slice(&self.bias);
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }
}

/// All weights and biases drawn uniformly from `[-1/sqrt(H), 1/sqrt(H)]`.
pub fn init_params(spec: &ModelSpec, rng: &mut dyn RngCore) -> Result<ModelParams, ModelError> {
    spec.validate()?;
    let bound = 1.0 / (spec.hidden_dim as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let gh = spec.cell.gate_count() * spec.hidden_dim;
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| dist.sample(rng)).collect() };
    let w_input = draw(gh * spec.input_dim);
    let w_hidden = draw(gh * spec.hidden_dim);
    let bias = draw(gh);
    let head_w = draw(spec.hidden_dim);
    let head_b = dist.sample(rng);
    Ok(ModelParams {
        spec: *spec,
        w_input,
        w_hidden,
        bias,
        head_w,
        head_b,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out[r] += sum_c m[r, c] * v[c]
fn matvec_add(out: &mut [f64], m: &[f64], v: &[f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (mv, vv) in row.iter().zip(v) {
            acc += mv * vv;
        }
        out[r] += acc;
    }
}

/// out[c] += sum_r m[r, c] * v[r]
fn matvec_t_add(out: &mut [f64], m: &[f64], v: &[f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let vr = v[r];
        for (o, mv) in out.iter_mut().zip(row) {
            *o += mv * vr;
        }
    }
}

/// outer-product accumulation: m[r, c] += v[r] * u[c]
fn outer_add(m: &mut [f64], v: &[f64], u: &[f64], cols: usize) {
    for (r, &vr) in v.iter().enumerate() {
        let row = &mut m[r * cols..(r + 1) * cols];
        for (mv, uv) in row.iter_mut().zip(u) {
            *mv += vr * uv;
        }
    }
}

struct Step {
    /// Post-activation gate values, `gates * H`.
    gates: Vec<f64>,
    /// LSTM cell state; empty for GRU.
    cell: Vec<f64>,
    h: Vec<f64>,
    /// Head input: `h` after dropout in training mode, `h` otherwise.
    dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
    p: f64,
}

/// Recorded intermediates of one forward pass.
///
/// Carries copies of the recurrent and head weights so `backward` needs
/// nothing but the tape and the upstream gradient.
pub struct Tape {
    spec: ModelSpec,
    xs: Vec<Vec<f64>>,
    steps: Vec<Step>,
    w_hidden: Vec<f64>,
    head_w: Vec<f64>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Run the estimator over a sequence.
///
/// `dropout_rng: Some(..)` selects training mode (dropout active when the
/// spec's rate is nonzero); `None` is deterministic evaluation mode.
pub fn forward(
    params: &ModelParams,
    obs: &Observations,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(ProbabilitySeries, Tape), ModelError> {
    let spec = &params.spec;
    if obs.dim() != spec.input_dim {
        return Err(ModelError::DimensionMismatch {
            what: "input dimension",
            expected: spec.input_dim,
            got: obs.dim(),
        });
    }
    if obs.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let hdim = spec.hidden_dim;
    let gh = spec.cell.gate_count() * hdim;
    let t_len = obs.len();
    let keep = 1.0 - spec.dropout;

    let mut h_prev = vec![0.0; hdim];
    let mut c_prev = vec![0.0; hdim];
    let mut steps = Vec::with_capacity(t_len);
    let mut probs = Vec::with_capacity(t_len);
    let mut xs = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let x = obs.row(t);
        let mut pre = params.bias.clone();
        matvec_add(&mut pre, &params.w_input, x, gh, spec.input_dim);

        let (gates, cell, h) = match spec.cell {
            CellKind::Lstm => {
                matvec_add(&mut pre, &params.w_hidden, &h_prev, gh, hdim);
                let mut gates = vec![0.0; gh];
                for j in 0..hdim {
                    gates[j] = sigmoid(pre[j]); // input
                    gates[hdim + j] = sigmoid(pre[hdim + j]); // forget
                    gates[2 * hdim + j] = pre[2 * hdim + j].tanh(); // cell candidate
                    gates[3 * hdim + j] = sigmoid(pre[3 * hdim + j]); // output
                }
                let mut cell = vec![0.0; hdim];
                let mut h = vec![0.0; hdim];
                for j in 0..hdim {
                    cell[j] = gates[hdim + j] * c_prev[j] + gates[j] * gates[2 * hdim + j];
                    h[j] = gates[3 * hdim + j] * cell[j].tanh();
                }
                (gates, cell, h)
            }
            CellKind::Gru => {
                // Reset and update gates see h_prev directly; the candidate
                // sees r * h_prev, so only the first two blocks of w_hidden
                // are applied up front.
                matvec_add(&mut pre[..2 * hdim], &params.w_hidden[..2 * hdim * hdim], &h_prev, 2 * hdim, hdim);
                let mut gates = vec![0.0; gh];
                for j in 0..hdim {
                    gates[j] = sigmoid(pre[j]); // reset
                    gates[hdim + j] = sigmoid(pre[hdim + j]); // update
                }
                let rh: Vec<f64> = (0..hdim).map(|j| gates[j] * h_prev[j]).collect();
                let mut n_pre = pre[2 * hdim..].to_vec();
                matvec_add(&mut n_pre, &params.w_hidden[2 * hdim * hdim..], &rh, hdim, hdim);
                for j in 0..hdim {
                    gates[2 * hdim + j] = n_pre[j].tanh(); // candidate
                }
                let mut h = vec![0.0; hdim];
                for j in 0..hdim {
                    let z = gates[hdim + j];
                    h[j] = (1.0 - z) * gates[2 * hdim + j] + z * h_prev[j];
                }
                (gates, Vec::new(), h)
            }
        };

        let (dropped, mask) = match dropout_rng.as_deref_mut() {
            Some(rng) if spec.dropout > 0.0 => {
                let mask: Vec<f64> = (0..hdim)
                    .map(|_| {
                        let u = rand::Rng::gen::<f64>(rng);
                        if u < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let dropped: Vec<f64> = h.iter().zip(&mask).map(|(hv, mv)| hv * mv).collect();
                (dropped, Some(mask))
            }
            _ => (h.clone(), None),
        };

        let mut logit = params.head_b;
        for (w, v) in params.head_w.iter().zip(&dropped) {
            logit += w * v;
        }
        let p = sigmoid(logit);
        probs.push(p);

        c_prev = if cell.is_empty() { c_prev } else { cell.clone() };
        h_prev = h.clone();
        xs.push(x.to_vec());
        steps.push(Step {
            gates,
            cell,
            h,
            dropped,
            mask,
            p,
        });
    }

    let series = ProbabilitySeries::new(probs)
        .expect("sigmoid output is always a valid probability");
    Ok((
        series,
        Tape {
            spec: *spec,
            xs,
            steps,
            w_hidden: params.w_hidden.clone(),
            head_w: params.head_w.clone(),
        },
    ))
}

/// Evaluation-mode probabilities only.
pub fn forward_eval(
    params: &ModelParams,
    obs: &Observations,
) -> Result<ProbabilitySeries, ModelError> {
    forward(params, obs, None).map(|(p, _)| p)
}

/// Exact backpropagation through time.
///
/// `grad_p[t]` is the upstream derivative of the scalar objective with
/// respect to the emitted probability at step `t`.
pub fn backward(tape: &Tape, grad_p: &[f64]) -> Result<ParamGrads, ModelError> {
    if grad_p.len() != tape.steps.len() {
        return Err(ModelError::TapeMismatch {
            expected: tape.steps.len(),
            got: grad_p.len(),
        });
    }
    let spec = &tape.spec;
    let hdim = spec.hidden_dim;
    let zeros = vec![0.0; hdim];
    let mut grads = ParamGrads::zeros(spec);
    let mut dh_next = vec![0.0; hdim];
    let mut dc_next = vec![0.0; hdim];

    for t in (0..tape.steps.len()).rev() {
        let step = &tape.steps[t];
        let h_prev = if t == 0 { &zeros } else { &tape.steps[t - 1].h };
        let x = &tape.xs[t];

        // Head and dropout.
        let dlogit = grad_p[t] * step.p * (1.0 - step.p);
        for j in 0..hdim {
            grads.head_w[j] += dlogit * step.dropped[j];
        }
        grads.head_b += dlogit;
        let dh: Vec<f64> = (0..hdim)
            .map(|j| dlogit * mask_at(step, j) * tape.head_w[j] + dh_next[j])
            .collect();

        match spec.cell {
            CellKind::Lstm => {
                let c_prev = if t == 0 { &zeros } else { &tape.steps[t - 1].cell };
                let mut da = vec![0.0; 4 * hdim];
                let mut dc_prev = vec![0.0; hdim];
                for j in 0..hdim {
                    let i = step.gates[j];
                    let f = step.gates[hdim + j];
                    let g = step.gates[2 * hdim + j];
                    let o = step.gates[3 * hdim + j];
                    let tc = step.cell[j].tanh();
                    let d_o = dh[j] * tc;
                    let dc = dh[j] * o * (1.0 - tc * tc) + dc_next[j];
                    let d_i = dc * g;
                    let d_f = dc * c_prev[j];
                    let d_g = dc * i;
                    dc_prev[j] = dc * f;
                    da[j] = d_i * i * (1.0 - i);
                    da[hdim + j] = d_f * f * (1.0 - f);
                    da[2 * hdim + j] = d_g * (1.0 - g * g);
                    da[3 * hdim + j] = d_o * o * (1.0 - o);
                }
                outer_add(&mut grads.w_input, &da, x, spec.input_dim);
                outer_add(&mut grads.w_hidden, &da, h_prev, hdim);
                for j in 0..4 * hdim {
                    grads.bias[j] += da[j];
                }
                let mut dh_prev = vec![0.0; hdim];
                matvec_t_add(&mut dh_prev, &tape.w_hidden, &da, 4 * hdim, hdim);
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            CellKind::Gru => {
                let mut da = vec![0.0; 3 * hdim];
                let mut dh_prev = vec![0.0; hdim];
                let rh: Vec<f64> = (0..hdim).map(|j| step.gates[j] * h_prev[j]).collect();
                // Candidate path first: its backprop feeds the reset gate.
                let mut da_n = vec![0.0; hdim];
                for j in 0..hdim {
                    let z = step.gates[hdim + j];
                    let n = step.gates[2 * hdim + j];
                    let dn = dh[j] * (1.0 - z);
                    da_n[j] = dn * (1.0 - n * n);
                    let dz = dh[j] * (h_prev[j] - n);
                    da[hdim + j] = dz * z * (1.0 - z);
                    dh_prev[j] += dh[j] * z;
                }
                let w_hidden = &tape.w_hidden;
                let u_n = &w_hidden[2 * hdim * hdim..];
                let mut d_rh = vec![0.0; hdim];
                matvec_t_add(&mut d_rh, u_n, &da_n, hdim, hdim);
                for j in 0..hdim {
                    let r = step.gates[j];
                    let dr = d_rh[j] * h_prev[j];
                    da[j] = dr * r * (1.0 - r);
                    dh_prev[j] += d_rh[j] * r;
                    da[2 * hdim + j] = da_n[j];
                }
                outer_add(&mut grads.w_input, &da, x, spec.input_dim);
                outer_add(
                    &mut grads.w_hidden[..2 * hdim * hdim],
                    &da[..2 * hdim],
                    h_prev,
                    hdim,
                );
                outer_add(&mut grads.w_hidden[2 * hdim * hdim..], &da_n, &rh, hdim);
                for j in 0..3 * hdim {
                    grads.bias[j] += da[j];
                }
                matvec_t_add(&mut dh_prev, &w_hidden[..2 * hdim * hdim], &da[..2 * hdim], 2 * hdim, hdim);
                dh_next = dh_prev;
            }
        }
    }
    Ok(grads)
}

fn mask_at(step: &Step, j: usize) -> f64 {
    match &step.mask {
        Some(m) => m[j],
        None => 1.0,
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    spec: ModelSpec,
    w_input: Vec<f64>,
    w_hidden: Vec<f64>,
    bias: Vec<f64>,
    head_w: Vec<f64>,
    head_b: f64,
}

/// Write a model checkpoint as a single JSON document.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        spec: params.spec,
        w_input: params.w_input.clone(),
        w_hidden: params.w_hidden.clone(),
        bias: params.bias.clone(),
        head_w: params.head_w.clone(),
        head_b: params.head_b,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    file.spec.validate()?;
    let gh = file.spec.cell.gate_count() * file.spec.hidden_dim;
    let expect = [
        ("w_input", file.w_input.len(), gh * file.spec.input_dim),
        ("w_hidden", file.w_hidden.len(), gh * file.spec.hidden_dim),
        ("bias", file.bias.len(), gh),
        ("head_w", file.head_w.len(), file.spec.hidden_dim),
    ];
    for (what, got, expected) in expect {
        if got != expected {
            return Err(ModelError::Checkpoint(format!(
                "{what} has {got} entries, expected {expected}"
            )));
        }
    }
    Ok(ModelParams {
        spec: file.spec,
        w_input: file.w_input,
        w_hidden: file.w_hidden,
        bias: file.bias,
        head_w: file.head_w,
        head_b: file.head_b,
    })
}
