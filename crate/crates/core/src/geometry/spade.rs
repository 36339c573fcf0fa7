//! Energy-margin regularizer: clean features are pushed to low energy,
//! virtual outliers to high energy, through a binary cross-entropy on
//! `sigmoid(E)`.
//!
//! ```text
//! L = mean_clean[-ln(1 - s(E(x)))] + mean_outlier[-ln s(E(v))]
//! ```
//!
//! `1 - s(E)` is evaluated as `s(-E)`. Each log argument is clamped at
//! [`LOG_EPS`]; an empty side contributes nothing.

use crate::error::Result;
use crate::nn::loss::{energy, LOG_EPS};
use crate::nn::DenseNet;
use crate::scalar::{sigmoid, Scalar};

fn clean_term<S: Scalar>(e: S) -> (S, S) {
    let p = sigmoid(-e);
    if p > S::lit(LOG_EPS) {
        (-p.ln(), sigmoid(e))
    } else {
        (-S::lit(LOG_EPS).ln(), S::zero())
    }
}

fn outlier_term<S: Scalar>(e: S) -> (S, S) {
    let p = sigmoid(e);
    if p > S::lit(LOG_EPS) {
        (-p.ln(), -sigmoid(-e))
    } else {
        (-S::lit(LOG_EPS).ln(), S::zero())
    }
}

fn mean_terms<S: Scalar>(energies: &[S], term: fn(S) -> (S, S)) -> (S, Vec<S>) {
    if energies.is_empty() {
        return (S::zero(), Vec::new());
    }
    let n = S::from_usize_lossy(energies.len());
    let mut total = S::zero();
    let grads = energies
        .iter()
        .map(|&e| {
            let (v, g) = term(e);
            total += v;
            g / n
        })
        .collect();
    (total / n, grads)
}

pub fn spade_loss<S: Scalar>(clean_energies: &[S], outlier_energies: &[S]) -> S {
    spade_loss_grad(clean_energies, outlier_energies).0
}

/// Loss value with gradients w.r.t. each clean and each outlier energy.
pub fn spade_loss_grad<S: Scalar>(
    clean_energies: &[S],
    outlier_energies: &[S],
) -> (S, Vec<S>, Vec<S>) {
    let (c, dc) = mean_terms(clean_energies, clean_term);
    let (o, d_o) = mean_terms(outlier_energies, outlier_term);
    (c + o, dc, d_o)
}

/// Evaluates the loss through a network's classifier head on feature vectors.
pub fn spade_loss_on_head<S: Scalar>(
    net: &DenseNet<S>,
    clean_features: &[Vec<S>],
    outliers: &[Vec<S>],
    temperature: S,
) -> Result<S> {
    let energies = |feats: &[Vec<S>]| -> Result<Vec<S>> {
        feats
            .iter()
            .map(|z| Ok(energy(&net.head_logits(z)?, temperature)))
            .collect()
    };
    Ok(spade_loss(&energies(clean_features)?, &energies(outliers)?))
}
