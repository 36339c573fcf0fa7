//! Synthetic datasets with injected label noise.
//!
//! A [`LabeledDataset`] keeps the true labels private. Training code works
//! on a [`TrainView`] (ids, features, noisy labels); the true labels are only
//! reachable through [`LabeledDataset::truth`], which the evaluation and
//! export paths use.

mod io;
mod ood;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_dataset_csv, read_features_csv, write_dataset_csv, write_features_csv};
pub use ood::{generate_ood, OodSets, OodSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    GaussianBlobs,
    TwoMoonsKd,
    RingClasses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n_samples: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    /// Distance between class centers in units of the within-class std.
    pub separation: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            generator: Generator::GaussianBlobs,
            n_samples: 2000,
            n_classes: 4,
            input_dim: 8,
            separation: 3.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.n_samples < self.n_classes {
            return Err(Error::Config("n_samples must be at least n_classes".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("separation must be a positive number".into()));
        }
        match self.generator {
            Generator::TwoMoonsKd if self.n_classes != 2 => {
                Err(Error::Config("two-moons-kd supports exactly 2 classes".into()))
            }
            Generator::TwoMoonsKd | Generator::RingClasses if self.input_dim < 2 => {
                Err(Error::Config("two-moons-kd and ring-classes need input_dim >= 2".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Symmetric,
    Asymmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        Self { mode: NoiseMode::Symmetric, rate, seed }
    }

    pub fn asymmetric(rate: f64, seed: u64) -> Self {
        Self { mode: NoiseMode::Asymmetric, rate, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!("noise rate must lie in [0, 1), got {}", self.rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    ids: Vec<usize>,
    features: Vec<Vec<f64>>,
    noisy_labels: Vec<usize>,
    true_labels: Vec<usize>,
    n_classes: usize,
}

/// What the training loop may see.
#[derive(Clone, Copy, Debug)]
pub struct TrainView<'a> {
    pub ids: &'a [usize],
    pub features: &'a [Vec<f64>],
    pub labels: &'a [usize],
    pub n_classes: usize,
}

/// Evaluation-side access to the hidden true labels.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    noisy: &'a [usize],
    truth: &'a [usize],
}

impl GroundTruth<'_> {
    pub fn label(&self, index: usize) -> usize {
        self.truth[index]
    }

    pub fn labels(&self) -> &[usize] {
        self.truth
    }

    pub fn is_clean(&self, index: usize) -> bool {
        self.noisy[index] == self.truth[index]
    }
}

impl LabeledDataset {
    /// Clean dataset (noisy labels equal true labels).
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let ids = (0..features.len()).collect();
        Self::from_parts(ids, features, labels.clone(), labels, n_classes)
    }

    pub fn from_parts(
        ids: Vec<usize>,
        features: Vec<Vec<f64>>,
        noisy_labels: Vec<usize>,
        true_labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = features.len();
        for (what, len) in [("ids", ids.len()), ("noisy labels", noisy_labels.len()), ("true labels", true_labels.len())] {
            if len != n {
                return Err(Error::Format(format!("{what}: expected {n} entries, got {len}")));
            }
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::Format("rows have different feature counts".into()));
            }
        }
        if noisy_labels.iter().chain(&true_labels).any(|&y| y >= n_classes) {
            return Err(Error::Format("label out of range".into()));
        }
        Ok(Self { ids, features, noisy_labels, true_labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        if self.ids.get(id) == Some(&id) {
            return Some(id);
        }
        self.ids.iter().position(|&x| x == id)
    }

    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            ids: &self.ids,
            features: &self.features,
            labels: &self.noisy_labels,
            n_classes: self.n_classes,
        }
    }

    pub fn truth(&self) -> GroundTruth<'_> {
        GroundTruth { noisy: &self.noisy_labels, truth: &self.true_labels }
    }

    /// Fraction of samples whose noisy label differs from the true one.
    pub fn noise_fraction(&self) -> f64 {
        let flipped = (0..self.len()).filter(|&i| !self.truth().is_clean(i)).count();
        flipped as f64 / self.len().max(1) as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.true_labels {
            counts[y] += 1;
        }
        counts
    }

    fn split_at(&self, at: usize) -> (Self, Self) {
        let part = |range: std::ops::Range<usize>| Self {
            ids: (0..range.len()).collect(),
            features: self.features[range.clone()].to_vec(),
            noisy_labels: self.noisy_labels[range.clone()].to_vec(),
            true_labels: self.true_labels[range].to_vec(),
            n_classes: self.n_classes,
        };
        (part(0..at), part(at..self.len()))
    }
}

impl TrainView<'_> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Per-dimension standard deviation of the features.
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let d = self.features.first().map_or(0, Vec::len);
        (0..d)
            .map(|j| {
                let mean = self.features.iter().map(|f| f[j]).sum::<f64>() / n;
                (self.features.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Class centers for the blob generator, pairwise `separation` apart when `K <= dim`.
pub fn blob_centers(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    let radius = spec.separation / std::f64::consts::SQRT_2;
    if spec.n_classes <= spec.input_dim {
        (0..spec.n_classes)
            .map(|k| {
                let mut c = vec![0.0; spec.input_dim];
                c[k] = radius;
                c
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC3A5_C85C_97CB_3127);
        (0..spec.n_classes)
            .map(|_| {
                let v: Vec<f64> = (0..spec.input_dim).map(|_| gaussian(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * radius / norm).collect()
            })
            .collect()
    }
}

fn sample_point(spec: &DatasetSpec, centers: &[Vec<f64>], class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = spec.input_dim;
    match spec.generator {
        Generator::GaussianBlobs => centers[class].iter().map(|&c| c + gaussian(rng)).collect(),
        Generator::TwoMoonsKd => {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let s = spec.separation / 2.0;
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let mut p = vec![s * x + 0.3 * gaussian(rng), s * y + 0.3 * gaussian(rng)];
            p.extend((2..d).map(|_| 0.3 * gaussian(rng)));
            p
        }
        Generator::RingClasses => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let r = spec.separation * (class as f64 + 1.0) + 0.3 * gaussian(rng);
            let mut p = vec![r * theta.cos(), r * theta.sin()];
            p.extend((2..d).map(|_| 0.3 * gaussian(rng)));
            p
        }
    }
}

/// Generates a clean dataset; class counts are balanced to within one.
pub fn generate(spec: &DatasetSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = blob_centers(spec);
    let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut rng);
    let features = labels
        .iter()
        .map(|&y| sample_point(spec, &centers, y, &mut rng))
        .collect();
    LabeledDataset::new(features, labels, spec.n_classes)
}

/// Generates `n_train + n_test` samples from one draw and splits them; both parts are re-indexed from 0.
pub fn generate_split(spec: &DatasetSpec, n_test: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    let full = DatasetSpec { n_samples: spec.n_samples + n_test, ..spec.clone() };
    let all = generate(&full)?;
    Ok(all.split_at(spec.n_samples))
}

/// Replaces noisy labels by flipped copies of the true labels.
///
/// symmetric: with probability `rate`, a uniformly random *other* class;
/// asymmetric: with probability `rate`, the next class `(y + 1) mod K`.
pub fn inject_noise(dataset: &LabeledDataset, noise: &NoiseSpec) -> Result<LabeledDataset> {
    noise.validate()?;
    if noise.mode == NoiseMode::Asymmetric && noise.rate > 0.5 {
        log::warn!("asymmetric noise rate {} > 0.5 makes the flipped class the majority", noise.rate);
    }
    let k = dataset.n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let noisy = dataset
        .true_labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() >= noise.rate {
                return y;
            }
            match noise.mode {
                NoiseMode::Symmetric => {
                    let other = rng.random_range(0..k - 1);
                    if other >= y { other + 1 } else { other }
                }
                NoiseMode::Asymmetric => (y + 1) % k,
            }
        })
        .collect();
    Ok(LabeledDataset { noisy_labels: noisy, ..dataset.clone() })
}
