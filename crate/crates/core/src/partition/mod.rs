//! Loss-based sample partitioning.
//!
//! Per epoch: normalize the per-sample GCE losses, fit a two-component GMM,
//! take the posterior of the low-loss component as the clean probability
//! `w_i`, split at `tau_clean`, and push the membership indicator into each
//! sample's sliding window. Samples whose last `v` indicators are all set
//! form the support set.

mod gmm;

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use gmm::{clean_probability, fit_gmm_1d, GaussianComponent, Gmm1d, GmmFit, VARIANCE_FLOOR};

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord<S> {
    pub id: usize,
    /// Normalized loss of the current epoch.
    pub loss: S,
    pub clean_prob: S,
    window: VecDeque<bool>,
}

impl<S: Scalar> LossRecord<S> {
    pub fn window(&self) -> &VecDeque<bool> {
        &self.window
    }
}

/// Per-sample loss histories for one trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionState<S> {
    window_len: usize,
    records: Vec<LossRecord<S>>,
}

impl<S: Scalar> SelectionState<S> {
    pub fn new(ids: impl IntoIterator<Item = usize>, window_len: usize) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::param("window", "window length must be at least 1"));
        }
        let records = ids
            .into_iter()
            .map(|id| LossRecord {
                id,
                loss: S::zero(),
                clean_prob: S::zero(),
                window: VecDeque::with_capacity(window_len),
            })
            .collect();
        Ok(Self {
            window_len,
            records,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn records(&self) -> &[LossRecord<S>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Stores this epoch's (already normalized) losses, in record order.
    pub fn set_losses(&mut self, losses: &[S]) -> Result<()> {
        if losses.len() != self.records.len() {
            return Err(Error::Dimension {
                context: "epoch losses",
                expected: self.records.len(),
                got: losses.len(),
            });
        }
        for (r, &l) in self.records.iter_mut().zip(losses) {
            r.loss = l;
        }
        Ok(())
    }

    pub fn losses(&self) -> Vec<S> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Single-epoch threshold split (labeled `X_t`, unlabeled `U_t`), as ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Full partition of one epoch, including the windowed support set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub support: Vec<usize>,
}

/// Min-max normalizes an epoch's loss vector to `[0, 1]`; a constant vector maps to zeros.
pub fn normalize_losses<S: Scalar>(losses: &[S]) -> Vec<S> {
    let lo = losses.iter().copied().fold(S::infinity(), S::min);
    let hi = losses.iter().copied().fold(S::neg_infinity(), S::max);
    let range = hi - lo;
    if !(range > S::zero()) {
        return vec![S::zero(); losses.len()];
    }
    losses.iter().map(|&l| (l - lo) / range).collect()
}

/// Computes `w_i` for every record, splits at `tau_clean` (inclusive), and
/// appends the membership indicator to each window.
pub fn partition_epoch<S: Scalar>(
    state: &mut SelectionState<S>,
    gmm: &Gmm1d<S>,
    tau_clean: S,
) -> Result<Split> {
    if !(tau_clean > S::zero() && tau_clean < S::one()) {
        return Err(Error::param("tau_clean", format!("must lie in (0, 1), got {tau_clean}")));
    }
    let window_len = state.window_len;
    let mut split = Split::default();
    for r in &mut state.records {
        r.clean_prob = gmm.clean_probability(r.loss);
        let member = r.clean_prob >= tau_clean;
        if r.window.len() == window_len {
            r.window.pop_front();
        }
        r.window.push_back(member);
        if member {
            split.labeled.push(r.id);
        } else {
            split.unlabeled.push(r.id);
        }
    }
    Ok(split)
}

/// Ids whose last `v` window entries are all set. Empty until `v` epochs have been seen.
pub fn support_set<S: Scalar>(records: &[LossRecord<S>], v: usize) -> Vec<usize> {
    if v == 0 {
        return Vec::new();
    }
    records
        .iter()
        .filter(|r| r.window.len() >= v && r.window.iter().rev().take(v).all(|&b| b))
        .map(|r| r.id)
        .collect()
}

/// Writes `epoch,sample_id,loss,w,in_support` rows (header included when `header`).
pub fn write_partition_csv<S: Scalar, W: Write>(
    out: W,
    epoch: usize,
    records: &[LossRecord<S>],
    support: &[usize],
    header: bool,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        wtr.write_record(["epoch", "sample_id", "loss", "w", "in_support"])?;
    }
    let support: std::collections::BTreeSet<usize> = support.iter().copied().collect();
    for r in records {
        wtr.write_record([
            epoch.to_string(),
            r.id.to_string(),
            r.loss.as_f64().to_string(),
            r.clean_prob.as_f64().to_string(),
            u8::from(support.contains(&r.id)).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
