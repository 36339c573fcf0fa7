//! Out-of-distribution sets built around an ID dataset.
//!
//! far: uniform over `[max_j + 0.5 r_j, max_j + 1.5 r_j]` per dimension, where
//! `r_j` is the ID range, so no sample falls inside the ID bounding box.
//! near: one Gaussian per class, centered `1.5 * R` from its centroid (R = mean
//! distance of ID samples to their class centroid), pushed away from the mean
//! of the centroids so the source centroid stays the nearest one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodSpec {
    pub n_samples: usize,
    /// Near-OOD center distance in units of the ID cluster radius.
    pub near_radius: f64,
    /// Per-dimension std of near-OOD blobs, in units of `R / sqrt(d)`.
    pub near_spread: f64,
    pub seed: u64,
}

impl Default for OodSpec {
    fn default() -> Self {
        Self { n_samples: 1000, near_radius: 1.5, near_spread: 0.25, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OodSets {
    pub far: Vec<Vec<f64>>,
    pub near: Vec<Vec<f64>>,
    pub near_centers: Vec<Vec<f64>>,
    pub far_box: (Vec<f64>, Vec<f64>),
    pub cluster_radius: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn generate_ood(spec: &OodSpec, id: &LabeledDataset) -> Result<OodSets> {
    if id.is_empty() || spec.n_samples == 0 {
        return Err(Error::Config("OOD generation needs ID samples and n_samples > 0".into()));
    }
    let d = id.dim();
    let k = id.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let feats = id.features();

    let lo: Vec<f64> = (0..d).map(|j| feats.iter().map(|f| f[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|j| feats.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let range: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| if b > a { b - a } else { 1.0 }).collect();
    let box_lo: Vec<f64> = (0..d).map(|j| hi[j] + 0.5 * range[j]).collect();
    let box_hi: Vec<f64> = (0..d).map(|j| hi[j] + 1.5 * range[j]).collect();
    let far = (0..spec.n_samples)
        .map(|_| (0..d).map(|j| rng.random_range(box_lo[j]..box_hi[j])).collect())
        .collect();

    let truth = id.truth();
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, f) in feats.iter().enumerate() {
        let y = truth.label(i);
        counts[y] += 1;
        for (c, v) in centroids[y].iter_mut().zip(f) {
            *c += v;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    for &c in &present {
        centroids[c].iter_mut().for_each(|v| *v /= counts[c] as f64);
    }
    let radius = feats
        .iter()
        .enumerate()
        .map(|(i, f)| dist(f, &centroids[truth.label(i)]))
        .sum::<f64>()
        / feats.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| present.iter().map(|&c| centroids[c][j]).sum::<f64>() / present.len() as f64)
        .collect();

    let offset = spec.near_radius * radius;
    let near_centers: Vec<Vec<f64>> = present
        .iter()
        .map(|&c| {
            let mut dir: Vec<f64> = centroids[c].iter().zip(&mean).map(|(a, b)| a - b).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                dir.iter_mut().for_each(|v| *v /= norm);
            } else {
                dir = vec![0.0; d];
                dir[0] = 1.0;
            }
            centroids[c].iter().zip(&dir).map(|(m, u)| m + offset * u).collect()
        })
        .collect();
    let sigma = spec.near_spread * radius / (d as f64).sqrt();
    let near = (0..spec.n_samples)
        .map(|i| {
            let center = &near_centers[i % near_centers.len()];
            center
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sigma * z
                })
                .collect()
        })
        .collect();

    Ok(OodSets { far, near, near_centers, far_box: (box_lo, box_hi), cluster_radius: radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};

    #[test]
    fn far_set_is_outside_id_box() {
        let ds = generate(&DatasetSpec::default()).unwrap();
        let ood = generate_ood(&OodSpec::default(), &ds).unwrap();
        let d = ds.dim();
        for x in &ood.far {
            let inside = (0..d).all(|j| {
                let lo = ds.features().iter().map(|f| f[j]).fold(f64::INFINITY, f64::min);
                let hi = ds.features().iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max);
                (lo..=hi).contains(&x[j])
            });
            assert!(!inside);
        }
        assert_eq!(ood.far.len(), 1000);
    }

    #[test]
    fn near_centers_at_prescribed_distance() {
        let ds = generate(&DatasetSpec::default()).unwrap();
        let ood = generate_ood(&OodSpec::default(), &ds).unwrap();
        let truth = ds.truth();
        for (c, center) in ood.near_centers.iter().enumerate() {
            let members: Vec<&Vec<f64>> =
                ds.features().iter().enumerate().filter(|(i, _)| truth.label(*i) == c).map(|(_, f)| f).collect();
            let centroid: Vec<f64> = (0..ds.dim())
                .map(|j| members.iter().map(|f| f[j]).sum::<f64>() / members.len() as f64)
                .collect();
            assert!((dist(center, &centroid) - 1.5 * ood.cluster_radius).abs() < 1e-9);
        }
    }

    #[test]
    fn seeded() {
        let ds = generate(&DatasetSpec { n_samples: 100, ..Default::default() }).unwrap();
        let spec = OodSpec { n_samples: 10, seed: 4, ..Default::default() };
        assert_eq!(generate_ood(&spec, &ds).unwrap(), generate_ood(&spec, &ds).unwrap());
    }
}
