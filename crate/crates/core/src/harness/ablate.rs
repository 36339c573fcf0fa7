//! Ablation grids over seeds and a comparison CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{run_experiment, RunConfig, RunOptions, RunReport};
use crate::error::{Error, Result};
use crate::geometry::SamplerKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Full method against VOS / contrastive removals.
    Components,
    /// The four outlier samplers.
    Samplers,
    /// Rejection radius at 0.5x, 1x, 1.5x of the auto-scaled value.
    Tau,
}

impl std::str::FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "components" => Ok(Grid::Components),
            "samplers" => Ok(Grid::Samplers),
            "tau" => Ok(Grid::Tau),
            other => Err(Error::Config(format!("unknown grid {other:?} (components, samplers, tau)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

pub fn variants(grid: Grid, base: &RunConfig) -> Vec<Variant> {
    let with = |name: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut config = base.clone();
        f(&mut config);
        Variant { name: name.to_string(), config }
    };
    match grid {
        Grid::Components => vec![
            with("full", &|c| {
                c.ablation.disable_vos = false;
                c.ablation.disable_cl = false;
            }),
            with("no-vos", &|c| {
                c.ablation.disable_vos = true;
                c.ablation.disable_cl = false;
            }),
            with("no-cl", &|c| {
                c.ablation.disable_vos = false;
                c.ablation.disable_cl = true;
            }),
            with("no-vos-no-cl", &|c| {
                c.ablation.disable_vos = true;
                c.ablation.disable_cl = true;
            }),
        ],
        Grid::Samplers => SamplerKind::ALL
            .iter()
            .map(|&kind| with(kind.name(), &|c| c.vos.sampler = kind))
            .collect(),
        Grid::Tau => [0.5, 1.0, 1.5]
            .iter()
            .map(|&s| {
                with(&format!("tau-x{s}"), &|c| {
                    c.vos.tau_auto = true;
                    c.vos.tau_scale = s;
                })
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// `None` on per-variant mean rows.
    pub seed: Option<u64>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub final_support_f1: f64,
    pub far_auroc: f64,
    pub far_fpr95: f64,
    pub near_auroc: f64,
    pub near_fpr95: f64,
}

impl AblationRow {
    pub fn from_report(variant: &str, report: &RunReport) -> Result<Self> {
        let s = report
            .summary
            .as_ref()
            .ok_or_else(|| Error::Config("report has no summary".into()))?;
        Ok(Self {
            variant: variant.to_string(),
            seed: Some(report.config.seed),
            final_accuracy: s.final_accuracy,
            best_accuracy: s.best_accuracy,
            final_support_f1: s.final_support_f1,
            far_auroc: s.ood.far.auroc,
            far_fpr95: s.ood.far.fpr95,
            near_auroc: s.ood.near.auroc,
            near_fpr95: s.ood.near.fpr95,
        })
    }
}

/// Runs every variant for every seed, variants outermost.
pub fn run_grid(variants: &[Variant], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for v in variants {
        for &seed in seeds {
            let config = RunConfig { seed, ..v.config.clone() };
            log::info!("ablation {} seed {seed}", v.name);
            let report = run_experiment(&config, &RunOptions::default())?;
            rows.push(AblationRow::from_report(&v.name, &report)?);
        }
    }
    Ok(rows)
}

/// Per-variant means, in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<AblationRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let group: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == name).collect();
            let m = |f: fn(&AblationRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64;
            AblationRow {
                variant: name.to_string(),
                seed: None,
                final_accuracy: m(|r| r.final_accuracy),
                best_accuracy: m(|r| r.best_accuracy),
                final_support_f1: m(|r| r.final_support_f1),
                far_auroc: m(|r| r.far_auroc),
                far_fpr95: m(|r| r.far_fpr95),
                near_auroc: m(|r| r.near_auroc),
                near_fpr95: m(|r| r.near_fpr95),
            }
        })
        .collect()
}

/// Per-seed rows followed by mean rows (seed column `mean`).
pub fn write_ablation_csv<W: Write>(writer: W, rows: &[AblationRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "variant",
        "seed",
        "final_accuracy",
        "best_accuracy",
        "final_support_f1",
        "far_auroc",
        "far_fpr95",
        "near_auroc",
        "near_fpr95",
    ])?;
    for r in rows.iter().cloned().chain(summarize(rows)) {
        let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
        let nums = [
            r.final_accuracy,
            r.best_accuracy,
            r.final_support_f1,
            r.far_auroc,
            r.far_fpr95,
            r.near_auroc,
            r.near_fpr95,
        ];
        let mut rec = vec![r.variant.clone(), seed];
        rec.extend(nums.iter().map(|v| format!("{v:.6}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
