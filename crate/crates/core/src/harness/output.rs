//! Files written by a run.
//!
//! ```text
//! out_dir/
//!   config.json              resolved configuration
//!   report.json              RunReport (also written for failed runs)
//!   timing.json              wall-clock seconds, kept out of the report
//!   model.json               trained networks (complete runs only)
//!   partition_net{k}.csv     optional, one row per sample per epoch
//!   geometry/epoch_{e}_net{k}.json   optional snapshots
//!   features/epoch_{e}.csv   optional network-0 features and outliers
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Ensemble, Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::partition::{support_set, write_partition_csv};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub dump_partitions: bool,
    pub dump_geometry: bool,
    pub export_features: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema_version: u32,
    pub config: RunConfig,
    pub ensemble: Ensemble,
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, model)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = fs::read_to_string(path)?;
    let model: SavedModel =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if model.ensemble.networks.is_empty() {
        return Err(Error::Format("model file holds no networks".into()));
    }
    Ok(model)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub(crate) fn prepare(dir: &Path, exp: &Experiment) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), exp.config())
}

pub(crate) fn write_epoch(dir: &Path, exp: &Experiment, options: &RunOptions) -> Result<()> {
    let epoch = exp.report().epochs.len();
    let window = exp.config().selection.window;
    if options.dump_partitions {
        for (k, state) in exp.selection_states().iter().enumerate() {
            let path = dir.join(format!("partition_net{k}.csv"));
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            let support = support_set(state.records(), window);
            write_partition_csv(BufWriter::new(file), epoch, state.records(), &support, epoch == 1)?;
        }
    }
    if options.dump_geometry {
        let gdir = dir.join("geometry");
        fs::create_dir_all(&gdir)?;
        for (k, g) in exp.geometry().iter().enumerate() {
            if let Some(g) = g {
                write_json(&gdir.join(format!("epoch_{epoch:03}_net{k}.json")), &g.snapshot(k, exp.config()))?;
            }
        }
    }
    if options.export_features {
        let fdir = dir.join("features");
        fs::create_dir_all(&fdir)?;
        write_features(&fdir.join(format!("epoch_{epoch:03}.csv")), exp)?;
    }
    Ok(())
}

/// Network-0 features of every training sample plus the accepted outliers.
fn write_features(path: &Path, exp: &Experiment) -> Result<()> {
    let net = &exp.networks()[0];
    let train = exp.train_set();
    let support: std::collections::HashSet<usize> = exp.geometry()[0]
        .as_ref()
        .map(|g| g.support_ids.iter().copied().collect())
        .unwrap_or_default();
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["kind".to_string(), "id".into(), "noisy_label".into(), "true_label".into(), "in_support".into()];
    header.extend((0..net.feature_dim()).map(|j| format!("z{j}")));
    out.write_record(&header)?;
    let truth = train.truth();
    for (i, x) in train.features().iter().enumerate() {
        let id = train.ids()[i];
        let mut row = vec![
            "train".to_string(),
            id.to_string(),
            train.noisy_labels()[i].to_string(),
            truth.label(i).to_string(),
            u8::from(support.contains(&id)).to_string(),
        ];
        row.extend(net.forward_features(x)?.iter().map(|v| format!("{v:.16e}")));
        out.write_record(&row)?;
    }
    if let Some(g) = &exp.geometry()[0] {
        for (j, z) in g.outliers.iter().enumerate() {
            let mut row = vec!["outlier".to_string(), j.to_string(), String::new(), String::new(), "0".into()];
            row.extend(z.iter().map(|v| format!("{v:.16e}")));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn write_final(dir: &Path, exp: &Experiment, seconds: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), exp.report())?;
    write_json(&dir.join("timing.json"), &serde_json::json!({ "wall_clock_seconds": seconds }))?;
    if exp.report().complete {
        let model = SavedModel {
            schema_version: super::report::SCHEMA_VERSION,
            config: exp.config().clone(),
            ensemble: exp.ensemble(),
        };
        save_model(&dir.join("model.json"), &model)?;
    }
    Ok(())
}

/// Writes the report and model of an already finished experiment.
pub fn write_run_outputs(dir: &Path, exp: &Experiment, seconds: f64) -> Result<()> {
    prepare(dir, exp)?;
    write_final(dir, exp, seconds)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny;
    use super::super::run_experiment;
    use super::*;

    #[test]
    fn run_writes_all_files_and_model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let options = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            dump_partitions: true,
            dump_geometry: true,
            export_features: true,
        };
        let mut cfg = tiny();
        cfg.train.epochs = 3;
        cfg.selection.window = 2;
        let report = run_experiment(&cfg, &options).unwrap();
        let on_disk: super::super::RunReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(on_disk, report);
        let echoed = RunConfig::load(&dir.path().join("config.json")).unwrap();
        assert_eq!(echoed, cfg);

        let partitions = fs::read_to_string(dir.path().join("partition_net0.csv")).unwrap();
        assert_eq!(partitions.lines().count(), 1 + 3 * 200);
        assert!(partitions.starts_with("epoch,sample_id,loss,w,in_support"));
        assert!(!dir.path().join("geometry/epoch_001_net0.json").exists());
        for e in 2..=3 {
            let has_support = report.epochs[e - 1].networks[0].support > 0;
            assert_eq!(dir.path().join(format!("geometry/epoch_{e:03}_net0.json")).exists(), has_support);
        }
        assert!(dir.path().join("features/epoch_003.csv").exists());

        let model = load_model(&dir.path().join("model.json")).unwrap();
        assert_eq!(model.config, cfg);
        assert_eq!(model.ensemble.networks.len(), 2);
    }

    #[test]
    fn missing_model_is_io_error() {
        let err = load_model(Path::new("/nonexistent/model.json")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
