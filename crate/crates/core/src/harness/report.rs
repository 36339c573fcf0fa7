//! Run report written as JSON. Bump [`SCHEMA_VERSION`] on any field change.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::eval::SelectionMetrics;

pub const SCHEMA_VERSION: u32 = 1;

/// Per-term loss values. Terms that were not active are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermLosses {
    pub l_x: f64,
    pub l_u: f64,
    pub l_reg: f64,
    pub l_cl: f64,
    pub l_spade: f64,
    pub total: f64,
}

impl TermLosses {
    pub(crate) fn add(&mut self, other: &TermLosses) {
        self.l_x += other.l_x;
        self.l_u += other.l_u;
        self.l_reg += other.l_reg;
        self.l_cl += other.l_cl;
        self.l_spade += other.l_spade;
        self.total += other.total;
    }

    pub(crate) fn scaled(mut self, factor: f64) -> Self {
        for v in [
            &mut self.l_x,
            &mut self.l_u,
            &mut self.l_reg,
            &mut self.l_cl,
            &mut self.l_spade,
            &mut self.total,
        ] {
            *v *= factor;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryStats {
    pub log_volume: f64,
    pub tau_rej: f64,
    pub n_centroids: usize,
    pub n_candidates: usize,
    pub n_accepted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEpoch {
    pub network: usize,
    /// `|X_t|`.
    pub labeled: usize,
    /// `|X_support|`.
    pub support: usize,
    /// The labeled SSL set fell back to `X_t` because the support set was empty.
    pub support_fallback: bool,
    pub gmm_degenerate: bool,
    pub selection: SelectionMetrics,
    /// `None` when geometry was skipped (empty support set).
    pub geometry: Option<GeometryStats>,
    pub batches: usize,
    /// Means over the epoch's batches, unweighted.
    pub losses: TermLosses,
    pub first_batch: TermLosses,
    pub mean_energy_clean: Option<f64>,
    pub mean_energy_outlier: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda_u: f64,
    pub networks: Vec<NetworkEpoch>,
    pub test_accuracy: f64,
}

impl EpochRecord {
    /// Selection F1 averaged over networks.
    pub fn support_f1(&self) -> f64 {
        self.networks.iter().map(|n| n.selection.f1).sum::<f64>() / self.networks.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupRecord {
    pub epoch: usize,
    pub mean_gce: Vec<f64>,
    pub test_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: f64,
    pub fpr95: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub far: OodMetrics,
    pub near: OodMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub final_support_f1: f64,
    pub ood: OodSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub complete: bool,
    pub error: Option<String>,
    pub config: RunConfig,
    pub warmup: Vec<WarmupRecord>,
    pub epochs: Vec<EpochRecord>,
    pub summary: Option<Summary>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            complete: false,
            error: None,
            config,
            warmup: Vec::new(),
            epochs: Vec::new(),
            summary: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Log-volume of network 0's envelope per epoch (`None` where geometry was skipped).
    pub fn log_volumes(&self) -> Vec<Option<f64>> {
        self.epochs
            .iter()
            .map(|e| e.networks[0].geometry.as_ref().map(|g| g.log_volume))
            .collect()
    }
}
