//! Augmentations for plain feature vectors.
//!
//! weak: Gaussian jitter with std `0.05 * feature_std[j]`.
//! strong: weak jitter, then a per-dimension scale in `[0.8, 1.25]`, then
//! dimension dropout with probability 0.1.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub jitter: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub dropout: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter: 0.05,
            scale_min: 0.8,
            scale_max: 1.25,
            dropout: 0.1,
        }
    }
}

pub fn weak<S: Scalar, R: Rng + ?Sized>(
    x: &[S],
    feature_std: &[S],
    config: &AugmentConfig,
    rng: &mut R,
) -> Vec<S> {
    let jitter = S::lit(config.jitter);
    x.iter()
        .zip(feature_std)
        .map(|(&v, &s)| {
            let n: f64 = StandardNormal.sample(rng);
            v + jitter * s * S::lit(n)
        })
        .collect()
}

pub fn strong<S: Scalar, R: Rng + ?Sized>(
    x: &[S],
    feature_std: &[S],
    config: &AugmentConfig,
    rng: &mut R,
) -> Vec<S> {
    let mut out = weak(x, feature_std, config, rng);
    for v in &mut out {
        let scale = rng.random_range(config.scale_min..=config.scale_max);
        *v *= S::lit(scale);
        if rng.random::<f64>() < config.dropout {
            *v = S::zero();
        }
    }
    out
}
