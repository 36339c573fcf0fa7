//! Pairwise contrastive loss over `2N` unit projections, views of the same
//! sample adjacent (`0<->1`, `2<->3`, ...):
//!
//! ```text
//! l(n, m) = s_nm / delta - ln sum_{k != n} exp(s_nk / delta)
//! l_cl    = -1/(2N) * sum_n l(n, partner(n))
//! ```
//!
//! The denominator excludes only the anchor itself, so `l(n, m) <= 0`.

use crate::error::{Error, Result};
use crate::scalar::{dot, logsumexp, Scalar};

fn check<S: Scalar>(projections: &[Vec<S>], delta: S) -> Result<()> {
    if projections.is_empty() || projections.len() % 2 != 0 {
        return Err(Error::param(
            "projections",
            format!("need a nonempty even number of views, got {}", projections.len()),
        ));
    }
    if !(delta > S::zero()) {
        return Err(Error::param("delta", "temperature must be positive"));
    }
    Ok(())
}

fn similarity_rows<S: Scalar>(projections: &[Vec<S>], delta: S) -> Vec<Vec<S>> {
    projections
        .iter()
        .map(|a| projections.iter().map(|b| dot(a, b) / delta).collect())
        .collect()
}

pub fn contrastive_loss<S: Scalar>(projections: &[Vec<S>], delta: S) -> Result<S> {
    check(projections, delta)?;
    let sims = similarity_rows(projections, delta);
    let two_n = projections.len();
    let mut total = S::zero();
    for (n, row) in sims.iter().enumerate() {
        let others: Vec<S> = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != n)
            .map(|(_, &s)| s)
            .collect();
        total += row[n ^ 1] - logsumexp(&others);
    }
    Ok(-total / S::from_usize_lossy(two_n))
}

/// Loss value and `dL/dz_n` for every projection.
pub fn contrastive_loss_grad<S: Scalar>(
    projections: &[Vec<S>],
    delta: S,
) -> Result<(S, Vec<Vec<S>>)> {
    let value = contrastive_loss(projections, delta)?;
    let sims = similarity_rows(projections, delta);
    let two_n = projections.len();
    let dim = projections[0].len();
    let coef = S::one() / (S::from_usize_lossy(two_n) * delta);
    let mut grads = vec![vec![S::zero(); dim]; two_n];
    for (n, row) in sims.iter().enumerate() {
        let m = n ^ 1;
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != n)
            .map(|(_, &s)| s)
            .fold(S::neg_infinity(), S::max);
        let weights: Vec<S> = row
            .iter()
            .enumerate()
            .map(|(k, &s)| if k == n { S::zero() } else { (s - max).exp() })
            .collect();
        let total: S = weights.iter().copied().sum();
        for (k, &w) in weights.iter().enumerate() {
            if k == n {
                continue;
            }
            let a = w / total;
            for d in 0..dim {
                // softmax part: +a_nk z_k on the anchor, +a_nk z_n on each other view
                grads[n][d] += coef * a * projections[k][d];
                grads[k][d] += coef * a * projections[n][d];
            }
        }
        for d in 0..dim {
            grads[n][d] -= coef * projections[m][d];
            grads[m][d] -= coef * projections[n][d];
        }
    }
    Ok((value, grads))
}
