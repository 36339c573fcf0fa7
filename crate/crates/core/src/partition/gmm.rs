use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower bound applied to every component variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent<S> {
    pub mean: S,
    pub variance: S,
    pub weight: S,
}

impl<S: Scalar> GaussianComponent<S> {
    fn log_density(&self, x: S) -> S {
        let two_pi = S::lit(std::f64::consts::TAU);
        let diff = x - self.mean;
        -S::lit(0.5) * (two_pi * self.variance).ln() - diff * diff / (S::lit(2.0) * self.variance)
    }

    fn log_weighted(&self, x: S) -> S {
        self.weight.ln() + self.log_density(x)
    }
}

/// Two-component 1-D Gaussian mixture over normalized per-sample losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm1d<S> {
    pub components: [GaussianComponent<S>; 2],
    /// Set when the input had no spread; every posterior is then 0.5.
    pub degenerate: bool,
}

impl<S: Scalar> Gmm1d<S> {
    /// Index of the component with the lesser mean (ties go to the first).
    pub fn small_index(&self) -> usize {
        if self.components[1].mean < self.components[0].mean {
            1
        } else {
            0
        }
    }

    pub fn small(&self) -> &GaussianComponent<S> {
        &self.components[self.small_index()]
    }

    pub fn log_likelihood(&self, data: &[S]) -> S {
        data.iter()
            .map(|&x| {
                let a = self.components[0].log_weighted(x);
                let b = self.components[1].log_weighted(x);
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            })
            .sum()
    }

    /// Posterior of the small-mean component, `p(g | loss)`.
    pub fn clean_probability(&self, loss: S) -> S {
        if self.degenerate {
            return S::lit(0.5);
        }
        let g = self.small_index();
        let small = self.components[g].log_weighted(loss);
        let other = self.components[1 - g].log_weighted(loss);
        // 1 / (1 + exp(other - small)), guarded against overflow
        let diff = other - small;
        if diff > S::zero() {
            let e = (-diff).exp();
            e / (S::one() + e)
        } else {
            S::one() / (S::one() + diff.exp())
        }
    }
}

/// Result of EM fitting, with the log-likelihood of every iterate (initial one first).
#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit<S> {
    pub gmm: Gmm1d<S>,
    pub log_likelihoods: Vec<S>,
    pub iterations: usize,
    pub converged: bool,
}

fn percentile<S: Scalar>(sorted: &[S], q: f64) -> S {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = S::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fits a two-component mixture by EM.
///
/// Initialization is deterministic: means at the 10th and 90th percentiles,
/// equal weights, both variances set to the pooled sample variance.
pub fn fit_gmm_1d<S: Scalar>(losses: &[S], max_iters: usize, tol: S) -> Result<GmmFit<S>> {
    if losses.is_empty() {
        return Err(Error::param("losses", "cannot fit a mixture to no data"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::param("losses", "non-finite loss value"));
    }
    let floor = S::lit(VARIANCE_FLOOR);
    let n = S::from_usize_lossy(losses.len());
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mean = losses.iter().copied().sum::<S>() / n;
    if sorted[0] == sorted[sorted.len() - 1] {
        let c = GaussianComponent {
            mean,
            variance: floor,
            weight: S::lit(0.5),
        };
        return Ok(GmmFit {
            gmm: Gmm1d {
                components: [c, c],
                degenerate: true,
            },
            log_likelihoods: Vec::new(),
            iterations: 0,
            converged: true,
        });
    }
    let pooled = (losses.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n).max(floor);
    let half = S::lit(0.5);
    let mut gmm = Gmm1d {
        components: [
            GaussianComponent {
                mean: percentile(&sorted, 0.1),
                variance: pooled,
                weight: half,
            },
            GaussianComponent {
                mean: percentile(&sorted, 0.9),
                variance: pooled,
                weight: half,
            },
        ],
        degenerate: false,
    };

    let mut resp = vec![S::zero(); losses.len()];
    let mut ll = e_step(&gmm, losses, &mut resp);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        m_step(&mut gmm, losses, &resp, floor);
        let next = e_step(&gmm, losses, &mut resp);
        history.push(next);
        let delta = (next - ll).abs();
        ll = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(GmmFit {
        gmm,
        log_likelihoods: history,
        iterations,
        converged,
    })
}

/// Fills `resp` with responsibilities of component 0 and returns the log-likelihood.
fn e_step<S: Scalar>(gmm: &Gmm1d<S>, data: &[S], resp: &mut [S]) -> S {
    let mut ll = S::zero();
    for (r, &x) in resp.iter_mut().zip(data) {
        let a = gmm.components[0].log_weighted(x);
        let b = gmm.components[1].log_weighted(x);
        let m = a.max(b);
        let ea = (a - m).exp();
        let eb = (b - m).exp();
        *r = ea / (ea + eb);
        ll += m + (ea + eb).ln();
    }
    ll
}

fn m_step<S: Scalar>(gmm: &mut Gmm1d<S>, data: &[S], resp: &[S], floor: S) {
    let n = S::from_usize_lossy(data.len());
    for (k, comp) in gmm.components.iter_mut().enumerate() {
        let weight_of = |r: S| if k == 0 { r } else { S::one() - r };
        let nk: S = resp.iter().map(|&r| weight_of(r)).sum();
        if nk <= S::min_positive_value() {
            // empty component: keep its parameters
            continue;
        }
        let mean = data
            .iter()
            .zip(resp)
            .map(|(&x, &r)| weight_of(r) * x)
            .sum::<S>()
            / nk;
        let var = data
            .iter()
            .zip(resp)
            .map(|(&x, &r)| weight_of(r) * (x - mean) * (x - mean))
            .sum::<S>()
            / nk;
        comp.mean = mean;
        comp.variance = var.max(floor);
        comp.weight = nk / n;
    }
}

/// Posterior of the small-mean component for `loss`.
pub fn clean_probability<S: Scalar>(gmm: &Gmm1d<S>, loss: S) -> S {
    gmm.clean_probability(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn comp(mean: f64, variance: f64, weight: f64) -> GaussianComponent<f64> {
        GaussianComponent { mean, variance, weight }
    }

    fn planted(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.1, 0.03).unwrap();
        let b = Normal::new(0.8, 0.05).unwrap();
        (0..n)
            .map(|i| if i % 2 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect()
    }

    #[test]
    fn recovers_planted_means() {
        let data = planted(2000, 11);
        let fit = fit_gmm_1d(&data, 500, 1e-10).unwrap();
        let g = fit.gmm.small_index();
        let small = fit.gmm.components[g].mean;
        let large = fit.gmm.components[1 - g].mean;
        assert!((small - 0.1).abs() <= 0.03, "small mean {small}");
        assert!((large - 0.8).abs() <= 0.03, "large mean {large}");
    }

    #[test]
    fn log_likelihood_monotone() {
        for seed in 0..5 {
            let fit = fit_gmm_1d(&planted(500, seed), 200, 0.0).unwrap();
            for w in fit.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn separated_atoms() {
        let data: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let fit = fit_gmm_1d(&data, 100, 1e-12).unwrap();
        let g = fit.gmm.small_index();
        assert!(fit.gmm.components[g].mean.abs() < 1e-9);
        assert!((fit.gmm.components[1 - g].mean - 1.0).abs() < 1e-9);
        for c in &fit.gmm.components {
            assert_eq!(c.variance, VARIANCE_FLOOR);
        }
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
    }

    #[test]
    fn all_equal_is_degenerate() {
        let fit = fit_gmm_1d(&[0.3_f64; 10], 100, 1e-8).unwrap();
        assert!(fit.gmm.degenerate);
        assert_eq!(fit.gmm.clean_probability(0.0), 0.5);
        assert_eq!(fit.gmm.clean_probability(0.3), 0.5);
        assert!(fit_gmm_1d::<f64>(&[], 10, 1e-8).is_err());
    }

    #[test]
    fn identical_components_give_half() {
        let gmm = Gmm1d {
            components: [comp(0.4, 0.01, 0.5), comp(0.4, 0.01, 0.5)],
            degenerate: false,
        };
        for &l in &[0.0, 0.4, 0.9, 5.0] {
            assert!((gmm.clean_probability(l) - 0.5).abs() < 1e-15);
        }
        assert_eq!(gmm.small_index(), 0);
    }

    #[test]
    fn confident_at_small_mean() {
        let (m0, s) = (0.1, 0.02);
        let m1 = m0 + 20.0 * s;
        let gmm = Gmm1d {
            components: [comp(m1, s * s, 0.5), comp(m0, s * s, 0.5)],
            degenerate: false,
        };
        assert_eq!(gmm.small_index(), 1);
        // density ratio oracle: exp(-(20 s)^2 / (2 s^2)) = exp(-200)
        let ratio = (-200.0_f64).exp();
        let expected = 1.0 / (1.0 + ratio);
        let w = gmm.clean_probability(m0);
        assert!(w > 0.999);
        assert!((w - expected).abs() < 1e-15);
    }

    #[test]
    fn posterior_monotone_on_grid() {
        let gmm = Gmm1d {
            components: [comp(0.15, 0.004, 0.6), comp(0.7, 0.02, 0.4)],
            degenerate: false,
        };
        // monotone from the small mean upward; below it the wider tail takes over
        let mut prev = f64::INFINITY;
        for i in 0..=3000 {
            let x = 0.15 + i as f64 * 0.001;
            let w = gmm.clean_probability(x);
            assert!((0.0..=1.0).contains(&w));
            assert!(w <= prev + 1e-15, "non-monotone at {x}");
            prev = w;
        }
    }

    #[test]
    fn weights_sum_to_one_after_fit() {
        let fit = fit_gmm_1d(&planted(300, 7), 100, 1e-9).unwrap();
        let total: f64 = fit.gmm.components.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
