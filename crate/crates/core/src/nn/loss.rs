//! Pointwise losses on classifier outputs and the energy score.
//!
//! Every `*_grad` function returns the loss value together with its gradient
//! with respect to the logits.

use crate::error::{Error, Result};
use crate::scalar::{logsumexp, Scalar};

/// Clamp applied inside every logarithm of a probability.
pub const LOG_EPS: f64 = 1e-12;

fn clamped_ln<S: Scalar>(p: S) -> S {
    p.max(S::lit(LOG_EPS)).ln()
}

pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls `dL/dp` back through the softmax Jacobian.
pub fn softmax_backward<S: Scalar>(probs: &[S], d_probs: &[S]) -> Vec<S> {
    let inner: S = probs.iter().zip(d_probs).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(d_probs)
        .map(|(&p, &g)| p * (g - inner))
        .collect()
}

pub fn cross_entropy<S: Scalar>(probs: &[S], label: usize) -> S {
    -clamped_ln(probs[label])
}

/// `-sum_k t_k ln p_k` for a soft target `t`.
pub fn soft_cross_entropy<S: Scalar>(probs: &[S], target: &[S]) -> S {
    -probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| t * clamped_ln(p))
        .sum::<S>()
}

pub fn soft_cross_entropy_grad<S: Scalar>(logits: &[S], target: &[S]) -> (S, Vec<S>) {
    let p = softmax(logits);
    let mass: S = target.iter().copied().sum();
    let grad = p.iter().zip(target).map(|(&pi, &ti)| pi * mass - ti).collect();
    (soft_cross_entropy(&p, target), grad)
}

pub fn cross_entropy_grad<S: Scalar>(logits: &[S], label: usize) -> (S, Vec<S>) {
    let mut p = softmax(logits);
    let value = cross_entropy(&p, label);
    p[label] -= S::one();
    (value, p)
}

fn check_q<S: Scalar>(q: S) -> Result<()> {
    if !(q > S::zero() && q <= S::one()) {
        return Err(Error::param("q", format!("GCE exponent must lie in (0, 1], got {q}")));
    }
    Ok(())
}

/// Generalized cross entropy `(1 - p_y^q) / q`.
pub fn gce_loss<S: Scalar>(probs: &[S], label: usize, q: S) -> Result<S> {
    check_q(q)?;
    let py = probs[label].max(S::zero()).min(S::one());
    Ok((S::one() - py.powf(q)) / q)
}

/// `dL/dl_j = -p_y^q (1[j = y] - p_j)`.
pub fn gce_grad<S: Scalar>(logits: &[S], label: usize, q: S) -> Result<(S, Vec<S>)> {
    let p = softmax(logits);
    let value = gce_loss(&p, label, q)?;
    let pyq = p[label].powf(q);
    let grad = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == label { S::one() } else { S::zero() };
            -pyq * (delta - pj)
        })
        .collect();
    Ok((value, grad))
}

/// Mean over classes of `(p_k - t_k)^2`.
pub fn softmax_mse<S: Scalar>(probs: &[S], target: &[S]) -> S {
    let k = S::from_usize_lossy(probs.len());
    probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<S>()
        / k
}

pub fn softmax_mse_grad<S: Scalar>(logits: &[S], target: &[S]) -> (S, Vec<S>) {
    let p = softmax(logits);
    let k = S::from_usize_lossy(p.len());
    let d_p: Vec<S> = p
        .iter()
        .zip(target)
        .map(|(&pi, &ti)| S::lit(2.0) * (pi - ti) / k)
        .collect();
    (softmax_mse(&p, target), softmax_backward(&p, &d_p))
}

/// Free energy `E = -T log sum_k exp(l_k / T)`.
pub fn energy<S: Scalar>(logits: &[S], temperature: S) -> S {
    let scaled: Vec<S> = logits.iter().map(|&l| l / temperature).collect();
    -temperature * logsumexp(&scaled)
}

/// `dE/dl = -softmax(l / T)`.
pub fn energy_grad<S: Scalar>(logits: &[S], temperature: S) -> (S, Vec<S>) {
    let scaled: Vec<S> = logits.iter().map(|&l| l / temperature).collect();
    let grad = softmax(&scaled).into_iter().map(|p| -p).collect();
    (energy(logits, temperature), grad)
}
