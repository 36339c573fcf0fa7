use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lnl_core::data::{read_dataset_csv, read_features_csv, write_dataset_csv, write_features_csv};
use lnl_core::geometry::SamplerKind;
use lnl_core::harness::ablate::{run_grid, summarize, variants, write_ablation_csv, Grid};
use lnl_core::harness::{load_model, run_experiment, Experiment, RunConfig, RunOptions};
use lnl_core::{Error, Result};

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "lnl", version, about = "Noisy-label learning experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test/OOD CSVs for a configuration.
    GenData {
        #[command(flatten)]
        base: BaseArgs,
    },
    /// Run warm-up, training and OOD evaluation.
    Train {
        #[command(flatten)]
        base: BaseArgs,
        #[command(flatten)]
        overrides: Overrides,
        /// Append per-epoch partition CSVs.
        #[arg(long)]
        dump_partitions: bool,
        /// Write per-epoch geometry snapshots.
        #[arg(long)]
        dump_geometry: bool,
    },
    /// Score a saved model against OOD feature files.
    OodEval {
        #[arg(long)]
        model: PathBuf,
        /// In-distribution dataset CSV (e.g. test.csv from gen-data).
        #[arg(long)]
        id: PathBuf,
        /// OOD CSV (`id,f0,...`); repeatable.
        #[arg(long, required = true)]
        ood: Vec<PathBuf>,
    },
    /// Run an ablation grid over seeds and write a comparison CSV.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// components, samplers or tau.
        #[arg(long, default_value = "components")]
        grid: Grid,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Train and write per-epoch feature/outlier CSVs for plotting.
    ExportFeatures {
        #[command(flatten)]
        base: BaseArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct BaseArgs {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    disable_vos: bool,
    #[arg(long)]
    disable_cl: bool,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    /// Fixed rejection radius (turns off auto scaling).
    #[arg(long, conflicts_with = "tau_auto")]
    tau_rej: Option<f64>,
    /// Rejection radius from the centroid spread.
    #[arg(long)]
    tau_auto: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.ablation.disable_vos |= self.disable_vos;
        cfg.ablation.disable_cl |= self.disable_cl;
        if let Some(kind) = self.sampler {
            cfg.vos.sampler = kind;
        }
        if let Some(tau) = self.tau_rej {
            cfg.vos.tau_rej = tau;
            cfg.vos.tau_auto = false;
        }
        if self.tau_auto {
            cfg.vos.tau_auto = true;
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn finalize(mut cfg: RunConfig, overrides: &Overrides) -> Result<RunConfig> {
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(base: &BaseArgs) -> Result<()> {
    let cfg = load_config(base.config.as_deref(), base.seed)?;
    let exp = Experiment::new(cfg)?;
    let dir = &base.out_dir;
    fs::create_dir_all(dir)?;
    let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    write_dataset_csv(create("train.csv")?, exp.train_set())?;
    write_dataset_csv(create("test.csv")?, exp.test_set())?;
    let ood = exp.ood_sets();
    let ids = |n: usize| (0..n).collect::<Vec<_>>();
    write_features_csv(create("ood_far.csv")?, &ids(ood.far.len()), &ood.far)?;
    write_features_csv(create("ood_near.csv")?, &ids(ood.near.len()), &ood.near)?;
    say!(
        "wrote {} train, {} test, {} far-OOD, {} near-OOD samples to {} (noise fraction {:.3})",
        exp.train_set().len(),
        exp.test_set().len(),
        ood.far.len(),
        ood.near.len(),
        dir.display(),
        exp.train_set().noise_fraction()
    );
    Ok(())
}

fn train(base: &BaseArgs, overrides: &Overrides, options: RunOptions) -> Result<()> {
    let cfg = finalize(load_config(base.config.as_deref(), base.seed)?, overrides)?;
    let options = RunOptions { out_dir: Some(base.out_dir.clone()), ..options };
    let report = run_experiment(&cfg, &options)?;
    let s = report.summary.as_ref().expect("complete runs carry a summary");
    say!(
        "final acc {:.4} (best {:.4}), support F1 {:.4}, far-OOD AUROC {:.4} FPR95 {:.4}, near-OOD AUROC {:.4} FPR95 {:.4}",
        s.final_accuracy, s.best_accuracy, s.final_support_f1, s.ood.far.auroc, s.ood.far.fpr95, s.ood.near.auroc, s.ood.near.fpr95
    );
    say!("report written to {}", base.out_dir.join("report.json").display());
    Ok(())
}

fn ood_eval(model: &Path, id: &Path, ood: &[PathBuf]) -> Result<()> {
    let saved = load_model(model)?;
    let id_set = read_dataset_csv(File::open(id)?, Some(saved.config.data.n_classes))?;
    let ens = &saved.ensemble;
    let mut results = serde_json::Map::new();
    results.insert("id_accuracy".into(), serde_json::json!(ens.accuracy(&id_set)?));
    for path in ood {
        let (_, feats) = read_features_csv(File::open(path)?)?;
        let m = ens.ood_metrics(id_set.features(), &feats)?;
        results.insert(path.display().to_string(), serde_json::json!({ "auroc": m.auroc, "fpr95": m.fpr95 }));
    }
    say!("{}", serde_json::to_string_pretty(&results)?);
    Ok(())
}

fn ablate(config: Option<&Path>, overrides: &Overrides, grid: Grid, seeds: &[u64], out: &Path) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let base = finalize(load_config(config, None)?, overrides)?;
    let rows = run_grid(&variants(grid, &base), seeds)?;
    write_ablation_csv(BufWriter::new(File::create(out)?), &rows)?;
    for r in summarize(&rows) {
        say!(
            "{:<14} acc {:.4}  f1 {:.4}  far AUROC {:.4}  far FPR95 {:.4}",
            r.variant, r.final_accuracy, r.final_support_f1, r.far_auroc, r.far_fpr95
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { base } => gen_data(&base),
        Command::Train { base, overrides, dump_partitions, dump_geometry } => train(
            &base,
            &overrides,
            RunOptions { dump_partitions, dump_geometry, ..Default::default() },
        ),
        Command::OodEval { model, id, ood } => ood_eval(&model, &id, &ood),
        Command::Ablate { config, overrides, grid, seeds, out } => {
            ablate(config.as_deref(), &overrides, grid, &seeds, &out)
        }
        Command::ExportFeatures { base, overrides } => train(
            &base,
            &overrides,
            RunOptions { export_features: true, dump_geometry: true, ..Default::default() },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
