use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CentroidSet, Envelope};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Uniform,
    Gaussian,
    Perturbation,
    Hybrid,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::Uniform,
        SamplerKind::Gaussian,
        SamplerKind::Perturbation,
        SamplerKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Gaussian => "gaussian",
            SamplerKind::Perturbation => "perturbation",
            SamplerKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampler `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Perturbation noise std as a fraction of the mean envelope edge.
    pub perturbation_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Uniform,
            perturbation_scale: 0.1,
        }
    }
}

fn normal<S: Scalar, R: Rng + ?Sized>(rng: &mut R) -> S {
    let v: f64 = StandardNormal.sample(rng);
    S::lit(v)
}

fn uniform_in<S: Scalar, R: Rng + ?Sized>(env: &Envelope<S>, rng: &mut R) -> Vec<S> {
    env.b_min
        .iter()
        .zip(&env.b_max)
        .map(|(&lo, &hi)| {
            if hi > lo {
                lo + (hi - lo) * S::lit(rng.random::<f64>())
            } else {
                lo
            }
        })
        .collect()
}

struct ClassGaussian<S> {
    mean: Vec<S>,
    std: Vec<S>,
    count: usize,
}

fn class_gaussians<S: Scalar>(
    centroids: &CentroidSet<S>,
    features: &[Vec<S>],
    labels: &[usize],
) -> Vec<ClassGaussian<S>> {
    centroids
        .centroids
        .iter()
        .map(|c| {
            let mut var = vec![S::zero(); c.mean.len()];
            for (z, _) in features.iter().zip(labels).filter(|(_, &y)| y == c.class) {
                for ((acc, &v), &m) in var.iter_mut().zip(z).zip(&c.mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            let n = S::from_usize_lossy(c.count.max(1));
            ClassGaussian {
                mean: c.mean.clone(),
                std: var.into_iter().map(|v| (v / n).sqrt()).collect(),
                count: c.count,
            }
        })
        .collect()
}

fn draw_gaussian<S: Scalar, R: Rng + ?Sized>(
    env: &Envelope<S>,
    classes: &[ClassGaussian<S>],
    rng: &mut R,
) -> Vec<S> {
    let total: usize = classes.iter().map(|c| c.count).sum();
    let mut pick = rng.random_range(0..total.max(1));
    let class = classes
        .iter()
        .find(|c| {
            if pick < c.count {
                true
            } else {
                pick -= c.count;
                false
            }
        })
        .unwrap_or(&classes[0]);
    let mut z: Vec<S> = class
        .mean
        .iter()
        .zip(&class.std)
        .map(|(&m, &s)| m + s * normal::<S, R>(rng))
        .collect();
    env.clip(&mut z);
    z
}

fn draw_perturbation<S: Scalar, R: Rng + ?Sized>(
    env: &Envelope<S>,
    features: &[Vec<S>],
    scale: S,
    rng: &mut R,
) -> Vec<S> {
    let base = &features[rng.random_range(0..features.len())];
    let mut z: Vec<S> = if scale > S::zero() {
        base.iter()
            .map(|&v| v + scale * normal::<S, R>(rng))
            .collect()
    } else {
        base.clone()
    };
    env.clip(&mut z);
    z
}

/// Draws `n_cand` candidate outliers with the configured strategy.
///
/// * uniform: i.i.d. per dimension over `[b_min, b_max]`
/// * gaussian: diagonal Gaussian per class, class picked proportionally to its size
/// * perturbation: support feature plus isotropic noise
/// * hybrid: equal thirds of the above (remainder goes to uniform)
///
/// Gaussian and perturbation draws are clipped to the envelope.
pub fn sample_candidates<S: Scalar, R: Rng + ?Sized>(
    envelope: &Envelope<S>,
    centroids: &CentroidSet<S>,
    support_features: &[Vec<S>],
    support_labels: &[usize],
    n_cand: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Vec<S>>> {
    if n_cand == 0 {
        return Err(Error::param("n_cand", "need at least one candidate"));
    }
    if support_features.len() != support_labels.len() {
        return Err(Error::Dimension {
            context: "support labels",
            expected: support_features.len(),
            got: support_labels.len(),
        });
    }
    let needs_support = config.kind != SamplerKind::Uniform;
    if needs_support && (support_features.is_empty() || centroids.is_empty()) {
        return Err(Error::param("support", "sampler needs support features and centroids"));
    }
    let scale = envelope.mean_edge() * S::lit(config.perturbation_scale);
    let counts = match config.kind {
        SamplerKind::Uniform => [n_cand, 0, 0],
        SamplerKind::Gaussian => [0, n_cand, 0],
        SamplerKind::Perturbation => [0, 0, n_cand],
        SamplerKind::Hybrid => {
            let third = n_cand / 3;
            [n_cand - 2 * third, third, third]
        }
    };
    let mut out = Vec::with_capacity(n_cand);
    out.extend((0..counts[0]).map(|_| uniform_in(envelope, rng)));
    if counts[1] > 0 {
        let classes = class_gaussians(centroids, support_features, support_labels);
        out.extend((0..counts[1]).map(|_| draw_gaussian(envelope, &classes, rng)));
    }
    out.extend((0..counts[2]).map(|_| draw_perturbation(envelope, support_features, scale, rng)));
    Ok(out)
}
