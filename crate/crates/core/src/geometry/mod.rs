//! Feature-space geometry of the support set and virtual outlier synthesis.
//!
//! Each epoch the support features define an axis-aligned envelope
//! `[b_min, b_max]` and one centroid per class. Candidates are drawn inside
//! the envelope and kept only if their distance to every centroid exceeds
//! the rejection radius. The accepted points feed the energy-margin loss in
//! [`spade`].

mod sampler;
pub mod spade;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{euclidean, Scalar};

pub use sampler::{sample_candidates, SamplerConfig, SamplerKind};
pub use spade::{spade_loss, spade_loss_grad, spade_loss_on_head};

/// Smallest edge length used when taking the log-volume of an envelope.
pub const MIN_EDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<S> {
    pub b_min: Vec<S>,
    pub b_max: Vec<S>,
    pub epoch: usize,
}

impl<S: Scalar> Envelope<S> {
    pub fn dim(&self) -> usize {
        self.b_min.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = S> + '_ {
        self.b_min.iter().zip(&self.b_max).map(|(&lo, &hi)| hi - lo)
    }

    pub fn mean_edge(&self) -> S {
        self.edges().sum::<S>() / S::from_usize_lossy(self.dim())
    }

    /// Sum of log edge lengths, each floored at [`MIN_EDGE`].
    pub fn log_volume(&self) -> S {
        let floor = S::lit(MIN_EDGE);
        self.edges().map(|e| e.max(floor).ln()).sum()
    }

    pub fn contains(&self, z: &[S]) -> bool {
        z.iter()
            .zip(self.b_min.iter().zip(&self.b_max))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    pub fn clip(&self, z: &mut [S]) {
        for (v, (&lo, &hi)) in z.iter_mut().zip(self.b_min.iter().zip(&self.b_max)) {
            *v = v.max(lo).min(hi);
        }
    }
}

/// Component-wise extrema of `features`. `None` for an empty set (skip the epoch).
pub fn estimate_envelope<S: Scalar>(features: &[Vec<S>], epoch: usize) -> Option<Envelope<S>> {
    let first = features.first()?;
    let mut b_min = first.clone();
    let mut b_max = first.clone();
    for z in &features[1..] {
        for (j, &v) in z.iter().enumerate() {
            b_min[j] = b_min[j].min(v);
            b_max[j] = b_max[j].max(v);
        }
    }
    Some(Envelope { b_min, b_max, epoch })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroid<S> {
    pub class: usize,
    pub mean: Vec<S>,
    pub count: usize,
}

/// Per-class means, ordered by class index; classes without samples are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet<S> {
    pub centroids: Vec<ClassCentroid<S>>,
    pub epoch: usize,
}

impl<S: Scalar> CentroidSet<S> {
    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn get(&self, class: usize) -> Option<&ClassCentroid<S>> {
        self.centroids.iter().find(|c| c.class == class)
    }

    /// Distance from `z` to the nearest centroid (`+inf` when empty).
    pub fn min_distance(&self, z: &[S]) -> S {
        self.centroids
            .iter()
            .map(|c| euclidean(z, &c.mean))
            .fold(S::infinity(), S::min)
    }

    pub fn mean_pairwise_distance(&self) -> Option<S> {
        let n = self.centroids.len();
        if n < 2 {
            return None;
        }
        let mut total = S::zero();
        for i in 0..n {
            for j in i + 1..n {
                total += euclidean(&self.centroids[i].mean, &self.centroids[j].mean);
            }
        }
        Some(total / S::from_usize_lossy(n * (n - 1) / 2))
    }
}

pub fn class_centroids<S: Scalar>(
    features: &[Vec<S>],
    labels: &[usize],
    epoch: usize,
) -> Result<CentroidSet<S>> {
    if features.len() != labels.len() {
        return Err(Error::Dimension {
            context: "centroid labels",
            expected: features.len(),
            got: labels.len(),
        });
    }
    let mut sums: std::collections::BTreeMap<usize, (Vec<S>, usize)> = Default::default();
    for (z, &y) in features.iter().zip(labels) {
        let entry = sums
            .entry(y)
            .or_insert_with(|| (vec![S::zero(); z.len()], 0));
        for (acc, &v) in entry.0.iter_mut().zip(z) {
            *acc += v;
        }
        entry.1 += 1;
    }
    let centroids = sums
        .into_iter()
        .map(|(class, (sum, count))| {
            let n = S::from_usize_lossy(count);
            ClassCentroid {
                class,
                mean: sum.into_iter().map(|s| s / n).collect(),
                count,
            }
        })
        .collect();
    Ok(CentroidSet { centroids, epoch })
}

/// Half the mean inter-centroid distance; `None` with fewer than two centroids.
pub fn auto_rejection_radius<S: Scalar>(centroids: &CentroidSet<S>) -> Option<S> {
    centroids
        .mean_pairwise_distance()
        .map(|d| d * S::lit(0.5))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierBatch<S> {
    pub outliers: Vec<Vec<S>>,
    pub n_candidates: usize,
    pub n_accepted: usize,
    pub sampler: SamplerKind,
}

impl<S> OutlierBatch<S> {
    pub fn acceptance_rate(&self) -> f64 {
        if self.n_candidates == 0 {
            0.0
        } else {
            self.n_accepted as f64 / self.n_candidates as f64
        }
    }
}

/// Keeps candidates strictly farther than `tau_rej` from every centroid, in candidate order.
pub fn filter_outliers<S: Scalar>(
    candidates: Vec<Vec<S>>,
    centroids: &CentroidSet<S>,
    tau_rej: S,
    sampler: SamplerKind,
) -> Result<OutlierBatch<S>> {
    if centroids.is_empty() {
        return Err(Error::param("centroids", "rejection needs at least one centroid"));
    }
    let n_candidates = candidates.len();
    let outliers: Vec<Vec<S>> = candidates
        .into_iter()
        .filter(|z| centroids.min_distance(z) > tau_rej)
        .collect();
    Ok(OutlierBatch {
        n_accepted: outliers.len(),
        outliers,
        n_candidates,
        sampler,
    })
}

/// Per-epoch geometry record, serialized as the optional JSON snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySnapshot {
    pub epoch: usize,
    pub network: usize,
    pub b_min: Vec<f64>,
    pub b_max: Vec<f64>,
    pub centroids: Vec<ClassCentroid<f64>>,
    pub tau_rej: f64,
    pub n_candidates: usize,
    pub n_accepted: usize,
    pub sampler: SamplerKind,
}
