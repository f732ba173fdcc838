//! Reproducible synthetic mean-shift data.
//!
//! Sequences are i.i.d. Gaussian per coordinate: `N(pre_mean, variance)`
//! before a change and `N(mu, variance)` after, with `mu` drawn per
//! sequence from `(post_mean_lo, post_mean_hi)`. Train and test splits
//! consume independent RNG substreams of the same seed, so resizing one
//! split never perturbs the other.

use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::types::{
    ChangeLabel, CoreError, Dataset, DatasetMeta, LabeledSequence, MultiChangeLabel, Observations,
};

/// Minimum length of every segment in multi-change sequences.
const MIN_SEGMENT_GAP: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum DatagenError {
    InvalidSpec(String),
    InfeasibleChanges { k: usize, length: usize },
    Core(CoreError),
}

impl fmt::Display for DatagenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidSpec(msg) => write!(f, "invalid generator spec: {msg}"),
            Self::InfeasibleChanges { k, length } => write!(
                f,
                "{k} change points cannot fit in length {length} with segments of at least {MIN_SEGMENT_GAP}"
            ),
            Self::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DatagenError {}

impl From<CoreError> for DatagenError {
    fn from(e: CoreError) -> Self {
        Self::Core(e)
    }
}

/// Which split to generate; selects size, change fraction, and RNG substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Self::Train => 0,
            Self::Test => 1,
        }
    }
}

/// Full description of a synthetic dataset pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub dim: usize,
    pub length: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Probability that a train sequence contains a change.
    pub change_fraction_train: f64,
    /// Probability that a test sequence contains a change.
    pub change_fraction_test: f64,
    pub pre_mean: f64,
    pub post_mean_lo: f64,
    pub post_mean_hi: f64,
    pub variance: f64,
    pub n_changes_min: usize,
    pub n_changes_max: usize,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            dim: 1,
            length: 128,
            n_train: 700,
            n_test: 300,
            change_fraction_train: 0.489,
            change_fraction_test: 0.527,
            pre_mean: 1.0,
            post_mean_lo: 2.0,
            post_mean_hi: 100.0,
            variance: 1.0,
            n_changes_min: 0,
            n_changes_max: 9,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let fail = |msg: String| Err(DatagenError::InvalidSpec(msg));
        if self.dim == 0 {
            return fail("dim must be >= 1".into());
        }
        if self.length < 2 {
            return fail("length must be >= 2".into());
        }
        if !(self.post_mean_lo > self.pre_mean) {
            return fail(format!(
                "post_mean_lo ({}) must exceed pre_mean ({})",
                self.post_mean_lo, self.pre_mean
            ));
        }
        if !(self.post_mean_hi > self.post_mean_lo) {
            return fail(format!(
                "post_mean_hi ({}) must exceed post_mean_lo ({})",
                self.post_mean_hi, self.post_mean_lo
            ));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return fail(format!("variance ({}) must be positive", self.variance));
        }
        for (name, frac) in [
            ("change_fraction_train", self.change_fraction_train),
            ("change_fraction_test", self.change_fraction_test),
        ] {
            if !(0.0..=1.0).contains(&frac) {
                return fail(format!("{name} ({frac}) outside [0, 1]"));
            }
        }
        if self.n_changes_min > self.n_changes_max {
            return fail(format!(
                "n_changes_min ({}) exceeds n_changes_max ({})",
                self.n_changes_min, self.n_changes_max
            ));
        }
        Ok(())
    }

    fn split_rng(&self, split: Split) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(split.stream());
        rng
    }

    fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Test => self.n_test,
        }
    }

    fn split_fraction(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.change_fraction_train,
            Split::Test => self.change_fraction_test,
        }
    }
}

fn sample_rows(
    rng: &mut ChaCha12Rng,
    normal: &Normal<f64>,
    rows: usize,
    dim: usize,
    mean: f64,
    out: &mut Vec<f64>,
) {
    for _ in 0..rows * dim {
        out.push(mean + normal.sample(rng));
    }
}

/// Generate one split of single-change data.
///
/// A changed sequence draws `theta` uniformly from `1..length` and a
/// post-change mean uniformly from the configured range; otherwise the
/// whole sequence is pre-change.
pub fn generate_single_change(spec: &GeneratorSpec, split: Split) -> Result<Dataset, DatagenError> {
    spec.validate()?;
    let mut rng = spec.split_rng(split);
    let noise = Normal::new(0.0, spec.variance.sqrt()).expect("validated variance");
    let n = spec.split_size(split);
    let fraction = spec.split_fraction(split);
    let mut sequences = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{}-{i:05}", split.name());
        let changed = rng.gen_bool(fraction);
        let mut data = Vec::with_capacity(spec.length * spec.dim);
        let label = if changed {
            let theta = rng.gen_range(1..spec.length);
            let mu = rng.gen_range(spec.post_mean_lo..spec.post_mean_hi);
            sample_rows(&mut rng, &noise, theta, spec.dim, spec.pre_mean, &mut data);
            sample_rows(&mut rng, &noise, spec.length - theta, spec.dim, mu, &mut data);
            ChangeLabel::Change(theta)
        } else {
            sample_rows(&mut rng, &noise, spec.length, spec.dim, spec.pre_mean, &mut data);
            ChangeLabel::NoChange
        };
        let obs = Observations::from_flat(spec.length, spec.dim, data)?;
        sequences.push(LabeledSequence::new(id, obs, label)?);
    }
    let mut dataset = Dataset::new(sequences)?;
    dataset.meta = Some(DatasetMeta {
        split: split.name().to_string(),
        multi_change: false,
        generator: *spec,
    });
    Ok(dataset)
}

/// Draw `k` strictly increasing change points keeping every segment at
/// least `MIN_SEGMENT_GAP` long, uniformly over the feasible sets.
fn draw_change_points(rng: &mut ChaCha12Rng, k: usize, length: usize) -> Result<Vec<usize>, DatagenError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if length < MIN_SEGMENT_GAP * (k + 1) {
        return Err(DatagenError::InfeasibleChanges { k, length });
    }
    let lo = MIN_SEGMENT_GAP;
    let hi = length - MIN_SEGMENT_GAP;
    for _ in 0..100_000 {
        let mut picks = Vec::with_capacity(k);
        for _ in 0..k {
            picks.push(rng.gen_range(lo..=hi));
        }
        picks.sort_unstable();
        picks.dedup();
        if picks.len() != k {
            continue;
        }
        if picks.windows(2).all(|w| w[1] - w[0] >= MIN_SEGMENT_GAP) {
            return Ok(picks);
        }
    }
    Err(DatagenError::InfeasibleChanges { k, length })
}

/// Generate one split of multi-change data.
///
/// The number of changes is uniform over the configured range; segment
/// means alternate between the baseline and a freshly drawn post-change
/// mean, so every boundary is a genuine distribution shift.
pub fn generate_multi_change(spec: &GeneratorSpec, split: Split) -> Result<Dataset, DatagenError> {
    spec.validate()?;
    if spec.length < MIN_SEGMENT_GAP * (spec.n_changes_max + 1) {
        return Err(DatagenError::InfeasibleChanges {
            k: spec.n_changes_max,
            length: spec.length,
        });
    }
    let mut rng = spec.split_rng(split);
    let noise = Normal::new(0.0, spec.variance.sqrt()).expect("validated variance");
    let n = spec.split_size(split);
    let mut sequences = Vec::with_capacity(n);
    let mut multi_labels = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{}-{i:05}", split.name());
        let k = rng.gen_range(spec.n_changes_min..=spec.n_changes_max);
        let change_points = draw_change_points(&mut rng, k, spec.length)?;
        let mut boundaries = Vec::with_capacity(k + 2);
        boundaries.push(0);
        boundaries.extend_from_slice(&change_points);
        boundaries.push(spec.length);
        let mut data = Vec::with_capacity(spec.length * spec.dim);
        for (seg_idx, win) in boundaries.windows(2).enumerate() {
            let mean = if seg_idx % 2 == 0 {
                spec.pre_mean
            } else {
                rng.gen_range(spec.post_mean_lo..spec.post_mean_hi)
            };
            sample_rows(&mut rng, &noise, win[1] - win[0], spec.dim, mean, &mut data);
        }
        let obs = Observations::from_flat(spec.length, spec.dim, data)?;
        let multi = MultiChangeLabel::new(change_points)?;
        sequences.push(LabeledSequence::new(id, obs, multi.first_as_label())?);
        multi_labels.push(multi);
    }
    let mut dataset = Dataset::with_multi_labels(sequences, multi_labels)?;
    dataset.meta = Some(DatasetMeta {
        split: split.name().to_string(),
        multi_change: true,
        generator: *spec,
    });
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GeneratorSpec {
        GeneratorSpec {
            dim: 1,
            length: 32,
            n_train: 60,
            n_test: 40,
            seed: 7,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn zero_fraction_means_no_changes() {
        let spec = GeneratorSpec {
            change_fraction_train: 0.0,
            ..small_spec()
        };
        let ds = generate_single_change(&spec, Split::Train).unwrap();
        assert!(ds.sequences.iter().all(|s| s.label == ChangeLabel::NoChange));
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = small_spec();
        let a = generate_single_change(&spec, Split::Train).unwrap();
        let b = generate_single_change(&spec, Split::Train).unwrap();
        assert_eq!(a, b);
        let other = GeneratorSpec { seed: 8, ..spec };
        let c = generate_single_change(&other, Split::Train).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_use_independent_substreams() {
        let spec = small_spec();
        let train_before = generate_single_change(&spec, Split::Train).unwrap();
        let resized = GeneratorSpec {
            n_test: spec.n_test * 3,
            ..spec
        };
        let train_after = generate_single_change(&resized, Split::Train).unwrap();
        assert_eq!(train_before.sequences, train_after.sequences);
        let test = generate_single_change(&spec, Split::Test).unwrap();
        assert_ne!(
            train_before.sequences[0].observations,
            test.sequences[0].observations
        );
    }

    #[test]
    fn fractions_land_near_targets() {
        let spec = GeneratorSpec {
            n_train: 700,
            n_test: 300,
            seed: 3,
            ..GeneratorSpec::default()
        };
        let train = generate_single_change(&spec, Split::Train).unwrap();
        let frac = train.sequences.iter().filter(|s| s.label.is_change()).count() as f64
            / train.len() as f64;
        assert!((frac - 0.489).abs() < 0.06, "train change fraction {frac}");
        let test = generate_single_change(&spec, Split::Test).unwrap();
        let frac =
            test.sequences.iter().filter(|s| s.label.is_change()).count() as f64 / test.len() as f64;
        assert!((frac - 0.527).abs() < 0.09, "test change fraction {frac}");
    }

    #[test]
    fn post_change_segment_concentrates_on_its_mean() {
        // The post-change mean mu is drawn per sequence and not recorded,
        // so check concentration indirectly: the two halves of the post
        // segment share mu, and their sample means must agree within a
        // 4-sigma bound; the full post mean must also land inside the
        // configured mu range (widened by the same bound).
        let spec = GeneratorSpec {
            n_train: 400,
            length: 64,
            seed: 11,
            ..GeneratorSpec::default()
        };
        let ds = generate_single_change(&spec, Split::Train).unwrap();
        let sigma = spec.variance.sqrt();
        let mut checked = 0usize;
        let mut halves_off = 0usize;
        for seq in &ds.sequences {
            let Some(theta) = seq.label.theta() else { continue };
            let post_len = seq.len() - theta;
            if post_len < 16 {
                continue;
            }
            checked += 1;
            let mean_of = |range: std::ops::Range<usize>| -> f64 {
                let count = (range.len() * spec.dim) as f64;
                range
                    .flat_map(|t| seq.observations.row(t).iter().copied())
                    .sum::<f64>()
                    / count
            };
            let mid = theta + post_len / 2;
            let m1 = mean_of(theta..mid);
            let m2 = mean_of(mid..seq.len());
            let n1 = ((mid - theta) * spec.dim) as f64;
            let n2 = ((seq.len() - mid) * spec.dim) as f64;
            if (m1 - m2).abs() > 4.0 * sigma * (1.0 / n1 + 1.0 / n2).sqrt() {
                halves_off += 1;
            }
            let full = mean_of(theta..seq.len());
            let slack = 4.0 * sigma / ((post_len * spec.dim) as f64).sqrt();
            assert!(
                full > spec.post_mean_lo - slack && full < spec.post_mean_hi + slack,
                "post mean {full} outside mu range"
            );
        }
        assert!(checked > 50);
        assert!(halves_off <= 2, "{halves_off}/{checked} beyond the 4-sigma bound");
    }

    #[test]
    fn pre_post_window_means_separate() {
        // Statistical label/observation consistency: over many sequences,
        // the 10-step windows around theta differ by at least half the
        // minimum shift for almost all sequences. With mu >= 2 the
        // failure probability per sequence is far below 1%, so a
        // binomial bound at alpha ~ 1e-6 allows 45 failures in 2000.
        let spec = GeneratorSpec {
            n_train: 2000,
            change_fraction_train: 1.0,
            length: 64,
            seed: 13,
            ..GeneratorSpec::default()
        };
        let ds = generate_single_change(&spec, Split::Train).unwrap();
        let mut failures = 0usize;
        let mut tested = 0usize;
        for seq in &ds.sequences {
            let theta = seq.label.theta().unwrap();
            if theta < 10 || seq.len() - theta < 10 {
                continue;
            }
            tested += 1;
            let mean_of = |range: std::ops::Range<usize>| -> f64 {
                let count = (range.len() * spec.dim) as f64;
                range
                    .flat_map(|t| seq.observations.row(t).iter().copied())
                    .sum::<f64>()
                    / count
            };
            let before = mean_of(theta - 10..theta);
            let after = mean_of(theta..theta + 10);
            if after - before < (spec.post_mean_lo - spec.pre_mean) / 2.0 {
                failures += 1;
            }
        }
        assert!(tested > 1000);
        assert!(failures <= 45, "{failures}/{tested} windows failed to separate");
    }

    #[test]
    fn multi_change_respects_gaps_and_counts() {
        let spec = GeneratorSpec {
            n_train: 100,
            length: 128,
            n_changes_min: 0,
            n_changes_max: 9,
            seed: 17,
            ..GeneratorSpec::default()
        };
        let ds = generate_multi_change(&spec, Split::Train).unwrap();
        let labels = ds.multi_labels.as_ref().unwrap();
        let mut seen_zero = false;
        let mut seen_max = false;
        for ml in labels {
            let cps = ml.change_points();
            assert!(cps.len() <= 9);
            seen_zero |= cps.is_empty();
            seen_max |= cps.len() == 9;
            if let Some(&first) = cps.first() {
                assert!(first >= 2);
            }
            if let Some(&last) = cps.last() {
                assert!(last <= spec.length - 2);
            }
            assert!(cps.windows(2).all(|w| w[1] - w[0] >= 2));
        }
        assert!(seen_zero && seen_max);
    }

    #[test]
    fn infeasible_multi_change_is_rejected() {
        let spec = GeneratorSpec {
            length: 10,
            n_changes_min: 9,
            n_changes_max: 9,
            ..small_spec()
        };
        assert!(matches!(
            generate_multi_change(&spec, Split::Train),
            Err(DatagenError::InfeasibleChanges { .. })
        ));
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let spec = GeneratorSpec {
            post_mean_lo: 0.5,
            ..GeneratorSpec::default()
        };
        assert!(matches!(
            generate_single_change(&spec, Split::Train),
            Err(DatagenError::InvalidSpec(_))
        ));
    }
}
