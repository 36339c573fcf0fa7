//! Semi-supervised co-training losses.
//!
//! Label refinement and co-guessing follow the DivideMix recipe: refined
//! targets blend the (noisy) one-hot label with the mean prediction of both
//! networks, pseudo-labels average both networks over augmented views, and
//! both are sharpened. The mixed batches then feed
//!
//! ```text
//! L_ssl   = mean l_x + lambda_u * mean l_u + lambda_reg * l_reg
//! L_total = L_ssl + lambda_cl * l_cl + lambda_spade * L_spade
//! ```
//!
//! with `l_x` soft cross-entropy, `l_u` squared error on probabilities, and
//! `l_reg` the KL divergence from a uniform prior to the batch-mean prediction.

pub mod augment;
mod contrastive;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{soft_cross_entropy, softmax_mse, LOG_EPS};
use crate::scalar::Scalar;

pub use contrastive::{contrastive_loss, contrastive_loss_grad};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_u: f64,
    pub lambda_reg: f64,
    pub lambda_cl: f64,
    pub lambda_spade: f64,
    /// Contrastive temperature.
    pub delta: f64,
    /// Sharpening temperature.
    pub t_sharp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_u: 30.0,
            lambda_reg: 1.0,
            lambda_cl: 1.0,
            lambda_spade: 0.1,
            delta: 0.5,
            t_sharp: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_u", self.lambda_u),
            ("lambda_reg", self.lambda_reg),
            ("lambda_cl", self.lambda_cl),
            ("lambda_spade", self.lambda_spade),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.t_sharp > 0.0) {
            return Err(Error::Config(format!("t_sharp must be positive, got {}", self.t_sharp)));
        }
        Ok(())
    }
}

/// Linear ramp from 0 to 1 over `length` epochs (`progress` may be fractional).
pub fn linear_rampup(progress: f64, length: f64) -> f64 {
    if length <= 0.0 {
        return 1.0;
    }
    (progress / length).clamp(0.0, 1.0)
}

/// Temperature sharpening `p^(1/T) / sum p^(1/T)`, computed in log space.
pub fn sharpen<S: Scalar>(p: &[S], t_sharp: S) -> Vec<S> {
    let logs: Vec<S> = p
        .iter()
        .map(|&v| if v > S::zero() { v.ln() / t_sharp } else { S::neg_infinity() })
        .collect();
    let max = logs.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        let k = S::from_usize_lossy(p.len());
        return vec![S::one() / k; p.len()];
    }
    let exps: Vec<S> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn mean_rows<S: Scalar>(rows: &[&[S]]) -> Vec<S> {
    let n = S::from_usize_lossy(rows.len());
    let mut out = vec![S::zero(); rows[0].len()];
    for r in rows {
        for (o, &v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    out.into_iter().map(|v| v / n).collect()
}

/// Refined target for a labeled sample:
/// `sharpen(w * onehot(y) + (1 - w) * mean(preds))`.
///
/// `predictions` holds probability vectors from both networks (possibly over several views).
pub fn refine_labels<S: Scalar>(
    noisy_label: usize,
    clean_prob: S,
    predictions: &[&[S]],
    t_sharp: S,
) -> Result<Vec<S>> {
    if predictions.is_empty() {
        return Err(Error::param("predictions", "need at least one prediction"));
    }
    if !(clean_prob >= S::zero() && clean_prob <= S::one()) {
        return Err(Error::param("clean_prob", format!("must lie in [0, 1], got {clean_prob}")));
    }
    let mean = mean_rows(predictions);
    let blended: Vec<S> = mean
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let onehot = if k == noisy_label { S::one() } else { S::zero() };
            clean_prob * onehot + (S::one() - clean_prob) * p
        })
        .collect();
    Ok(sharpen(&blended, t_sharp))
}

/// Co-guessed pseudo-label: average over all view predictions of both networks, then sharpen.
pub fn guess_labels<S: Scalar>(view_predictions: &[&[S]], t_sharp: S) -> Result<Vec<S>> {
    if view_predictions.is_empty() {
        return Err(Error::param("view_predictions", "need at least one view"));
    }
    Ok(sharpen(&mean_rows(view_predictions), t_sharp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoftBatch<S> {
    pub inputs: Vec<Vec<S>>,
    pub targets: Vec<Vec<S>>,
    pub origins: Vec<Origin>,
}

impl<S: Scalar> SoftBatch<S> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, input: Vec<S>, target: Vec<S>, origin: Origin) {
        self.inputs.push(input);
        self.targets.push(target);
        self.origins.push(origin);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinedBatch<S> {
    pub inputs: Vec<Vec<S>>,
    pub targets: Vec<Vec<S>>,
    pub origins: Vec<Origin>,
    /// Effective coefficient `max(lambda, 1 - lambda)`, always in `[0.5, 1]`.
    pub lambda: S,
}

/// Draws `lambda ~ Beta(alpha, alpha)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::param("alpha", format!("invalid Beta parameter: {e}")))?;
    Ok(beta.sample(rng))
}

/// Convex combination `lambda' * A + (1 - lambda') * B` with `lambda' = max(lambda, 1 - lambda)`.
pub fn mixup<S: Scalar>(a: &SoftBatch<S>, b: &SoftBatch<S>, lambda: S) -> Result<RefinedBatch<S>> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "mixup batches",
            expected: a.len(),
            got: b.len(),
        });
    }
    if !(lambda >= S::zero() && lambda <= S::one()) {
        return Err(Error::param("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    let lam = lambda.max(S::one() - lambda);
    let mix = |x: &[S], y: &[S]| -> Result<Vec<S>> {
        if x.len() != y.len() {
            return Err(Error::Dimension {
                context: "mixup rows",
                expected: x.len(),
                got: y.len(),
            });
        }
        Ok(x.iter()
            .zip(y)
            .map(|(&u, &v)| lam * u + (S::one() - lam) * v)
            .collect())
    };
    let inputs = a
        .inputs
        .iter()
        .zip(&b.inputs)
        .map(|(x, y)| mix(x, y))
        .collect::<Result<_>>()?;
    let targets = a
        .targets
        .iter()
        .zip(&b.targets)
        .map(|(x, y)| mix(x, y))
        .collect::<Result<_>>()?;
    Ok(RefinedBatch {
        inputs,
        targets,
        origins: a.origins.clone(),
        lambda: lam,
    })
}

/// `sum_k pi_k ln(pi_k / pbar_k)` with uniform `pi` and `pbar` the batch-mean prediction.
pub fn prior_kl<S: Scalar>(probs: &[Vec<S>]) -> S {
    if probs.is_empty() {
        return S::zero();
    }
    let rows: Vec<&[S]> = probs.iter().map(Vec::as_slice).collect();
    let mean = mean_rows(&rows);
    let prior = S::one() / S::from_usize_lossy(mean.len());
    mean.iter()
        .map(|&m| prior * (prior / m.max(S::lit(LOG_EPS))).ln())
        .sum()
}

/// Gradient of [`prior_kl`] w.r.t. each row's probabilities.
pub fn prior_kl_grad<S: Scalar>(probs: &[Vec<S>]) -> (S, Vec<Vec<S>>) {
    if probs.is_empty() {
        return (S::zero(), Vec::new());
    }
    let rows: Vec<&[S]> = probs.iter().map(Vec::as_slice).collect();
    let mean = mean_rows(&rows);
    let k = S::from_usize_lossy(mean.len());
    let b = S::from_usize_lossy(probs.len());
    let prior = S::one() / k;
    let d_row: Vec<S> = mean
        .iter()
        .map(|&m| -prior / m.max(S::lit(LOG_EPS)) / b)
        .collect();
    (prior_kl(probs), vec![d_row; probs.len()])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslLoss<S> {
    pub l_x: S,
    pub l_u: S,
    pub l_reg: S,
    pub total: S,
}

/// Evaluates `L_ssl` on predicted probabilities of the mixed batches.
///
/// `l_reg` uses the mean prediction over both parts. An empty unlabeled part drops `l_u`.
pub fn ssl_loss<S: Scalar>(
    labeled_probs: &[Vec<S>],
    labeled_targets: &[Vec<S>],
    unlabeled_probs: &[Vec<S>],
    unlabeled_targets: &[Vec<S>],
    lambda_u: S,
    lambda_reg: S,
) -> Result<SslLoss<S>> {
    if labeled_probs.is_empty() {
        return Err(Error::param("labeled", "labeled part must be nonempty"));
    }
    if labeled_probs.len() != labeled_targets.len() || unlabeled_probs.len() != unlabeled_targets.len() {
        return Err(Error::param("targets", "one target per prediction required"));
    }
    let mean_of = |vals: Vec<S>| {
        let n = S::from_usize_lossy(vals.len());
        vals.into_iter().sum::<S>() / n
    };
    let l_x = mean_of(
        labeled_probs
            .iter()
            .zip(labeled_targets)
            .map(|(p, t)| soft_cross_entropy(p, t))
            .collect(),
    );
    let l_u = if unlabeled_probs.is_empty() {
        S::zero()
    } else {
        mean_of(
            unlabeled_probs
                .iter()
                .zip(unlabeled_targets)
                .map(|(p, t)| softmax_mse(p, t))
                .collect(),
        )
    };
    let all: Vec<Vec<S>> = labeled_probs.iter().chain(unlabeled_probs).cloned().collect();
    let l_reg = prior_kl(&all);
    Ok(SslLoss {
        l_x,
        l_u,
        l_reg,
        total: l_x + lambda_u * l_u + lambda_reg * l_reg,
    })
}

/// `L_ssl + lambda_cl * l_cl + lambda_spade * L_spade`; a non-finite term is reported by name.
pub fn total_loss<S: Scalar>(ssl: S, cl: S, spade: S, lambda_cl: S, lambda_spade: S) -> Result<S> {
    for (term, v) in [("ssl", ssl), ("contrastive", cl), ("spade", spade)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: term.to_string(),
                batch: 0,
            });
        }
    }
    Ok(ssl + lambda_cl * cl + lambda_spade * spade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entropy(p: &[f64]) -> f64 {
        p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
    }

    #[test]
    fn sharpen_examples() {
        let s = sharpen(&[0.8_f64, 0.2], 0.5);
        // direct: (0.64, 0.04) / 0.68
        assert!((s[0] - 0.64 / 0.68).abs() < 1e-15 && (s[1] - 0.04 / 0.68).abs() < 1e-15);
        assert!((s[0] - 0.9412).abs() < 1e-4);
        let u = sharpen(&[0.25_f64; 4], 0.1);
        assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = [0.1_f64, 0.6, 0.3];
        let same = sharpen(&p, 1.0);
        assert!(same.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn refine_examples() {
        let pa = [0.3_f64, 0.7];
        let pb = [0.6_f64, 0.4];
        let full = refine_labels(0, 1.0, &[&pa, &pb], 1e-3).unwrap();
        assert!((full[0] - 1.0).abs() < 1e-12 && full[1].abs() < 1e-12);

        let zero = refine_labels(0, 0.0, &[&pa, &pb], 0.5).unwrap();
        let expect = sharpen(&[0.45, 0.55], 0.5);
        assert!(zero.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-15));

        let onehot = [0.0_f64, 1.0, 0.0];
        let agree = refine_labels(1, 0.5, &[&onehot, &onehot], 0.5).unwrap();
        assert_eq!(agree, vec![0.0, 1.0, 0.0]);
        assert!(refine_labels(0, 1.5, &[&pa], 0.5).is_err());
    }

    #[test]
    fn guess_averages_views() {
        let v = [[0.9_f64, 0.1], [0.7, 0.3], [0.8, 0.2], [0.8, 0.2]];
        let rows: Vec<&[f64]> = v.iter().map(|r| r.as_slice()).collect();
        let g = guess_labels(&rows, 1.0).unwrap();
        assert!((g[0] - 0.8).abs() < 1e-15);
        let u = [[0.5_f64, 0.5]];
        let rows: Vec<&[f64]> = u.iter().map(|r| r.as_slice()).collect();
        assert_eq!(guess_labels(&rows, 0.3).unwrap(), vec![0.5, 0.5]);
    }

    fn batch(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> SoftBatch<f64> {
        let n = inputs.len();
        SoftBatch { inputs, targets, origins: vec![Origin::Labeled; n] }
    }

    #[test]
    fn mixup_examples() {
        let a = batch(vec![vec![1.0, 2.0]], vec![vec![1.0, 0.0]]);
        let b = batch(vec![vec![-1.0, 0.0]], vec![vec![0.0, 1.0]]);
        let same = mixup(&a, &b, 1.0).unwrap();
        assert_eq!(same.inputs, a.inputs);
        assert_eq!(same.targets, a.targets);
        let m = mixup(&a, &b, 0.3).unwrap();
        assert!((m.lambda - 0.7).abs() < 1e-15);
        assert!((m.inputs[0][0] - 0.4).abs() < 1e-15);
        assert!((m.targets[0].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let short = batch(vec![], vec![]);
        assert!(mixup(&a, &short, 0.5).is_err());
    }

    #[test]
    fn beta_lambda_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let l = sample_lambda(4.0, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&l));
        }
        assert!(sample_lambda(-1.0, &mut rng).is_err());
    }

    #[test]
    fn ssl_loss_perfect_case() {
        let p = vec![vec![1.0_f64, 0.0], vec![0.0, 1.0]];
        let l = ssl_loss(&p, &p, &p, &p, 30.0, 1.0).unwrap();
        assert_eq!((l.l_x, l.l_u), (0.0, 0.0));
        assert!(l.l_reg.abs() < 1e-15);
        assert!(l.total.abs() < 1e-15);
    }

    #[test]
    fn uniform_mean_has_no_prior_penalty() {
        let p = vec![vec![0.7_f64, 0.3], vec![0.3, 0.7]];
        assert!(prior_kl(&p).abs() < 1e-15);
    }

    #[test]
    fn ssl_loss_summation_oracle() {
        let lp = vec![vec![0.2_f64, 0.5, 0.3], vec![0.6, 0.1, 0.3]];
        let lt = vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.25, 0.25]];
        let up = vec![vec![0.1_f64, 0.1, 0.8]];
        let ut = vec![vec![0.2, 0.2, 0.6]];
        let l = ssl_loss(&lp, &lt, &up, &ut, 2.0, 0.5).unwrap();
        let lx = (-(0.5_f64.ln()) - (0.5 * 0.6_f64.ln() + 0.25 * 0.1_f64.ln() + 0.25 * 0.3_f64.ln())) / 2.0;
        let lu = (0.01 + 0.01 + 0.04) / 3.0;
        let mean = [0.9 / 3.0, 0.7 / 3.0, 1.4 / 3.0];
        let lreg: f64 = mean.iter().map(|&m: &f64| (1.0 / 3.0) * ((1.0 / 3.0) / m).ln()).sum();
        assert!((l.l_x - lx).abs() < 1e-14);
        assert!((l.l_u - lu).abs() < 1e-14);
        assert!((l.l_reg - lreg).abs() < 1e-14);
        assert!((l.total - (lx + 2.0 * lu + 0.5 * lreg)).abs() < 1e-14);
        // term isolation
        let iso = ssl_loss(&lp, &lt, &up, &ut, 0.0, 0.0).unwrap();
        assert!((iso.total - lx).abs() < 1e-14);
        let no_u = ssl_loss(&lp, &lt, &[], &[], 2.0, 0.0).unwrap();
        assert_eq!(no_u.l_u, 0.0);
        assert!(ssl_loss::<f64>(&[], &[], &up, &ut, 1.0, 1.0).is_err());
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.5_f64, 7.0, 3.0, 0.0, 0.0).unwrap(), 1.5);
        assert!((total_loss(1.0_f64, 1.0, 1.0, 1.0, 0.1).unwrap() - 2.1).abs() < 1e-15);
        match total_loss(1.0_f64, f64::NAN, 1.0, 1.0, 0.1) {
            Err(Error::NonFinite { term, .. }) => assert_eq!(term, "contrastive"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights { delta: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let neg = LossWeights { lambda_cl: -1.0, ..Default::default() };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn rampup() {
        assert_eq!(linear_rampup(0.0, 16.0), 0.0);
        assert_eq!(linear_rampup(8.0, 16.0), 0.5);
        assert_eq!(linear_rampup(40.0, 16.0), 1.0);
    }

    fn prob_vec(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001_f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn sharpening_lowers_entropy(p in prob_vec(5), t in 0.05_f64..=1.0) {
            prop_assert!(entropy(&sharpen(&p, t)) <= entropy(&p) + 1e-12);
        }

        #[test]
        fn targets_stay_probability_vectors(
            pa in prob_vec(4), pb in prob_vec(4), qa in prob_vec(4), qb in prob_vec(4),
            w in 0.0_f64..=1.0, y in 0usize..4, lam in 0.0_f64..=1.0, t in 0.1_f64..=1.0,
        ) {
            let refined = refine_labels(y, w, &[&pa, &pb], t).unwrap();
            let guessed = guess_labels(&[&qa, &qb], t).unwrap();
            let a = SoftBatch { inputs: vec![vec![0.0]], targets: vec![refined.clone()], origins: vec![Origin::Labeled] };
            let b = SoftBatch { inputs: vec![vec![1.0]], targets: vec![guessed.clone()], origins: vec![Origin::Unlabeled] };
            let mixed = mixup(&a, &b, lam).unwrap();
            prop_assert!((0.5..=1.0).contains(&mixed.lambda));
            for v in [&refined, &guessed, &mixed.targets[0]] {
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(v.iter().all(|&x| x >= 0.0));
            }
        }
    }
}
