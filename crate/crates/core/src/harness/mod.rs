//! Experiment driver: warm-up, per-epoch co-divide, geometry, SSL training,
//! evaluation, and the files a run leaves behind.

pub mod ablate;
pub mod config;
mod output;
pub mod report;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_ood, generate_split, inject_noise, LabeledDataset, OodSets};
use crate::error::{Error, Result};
use crate::eval::{accuracy, auroc, fpr_at_95_tpr, selection_metrics, OodScoreSet};
use crate::geometry::{
    auto_rejection_radius, class_centroids, estimate_envelope, filter_outliers, sample_candidates,
    CentroidSet, Envelope, GeometrySnapshot,
};
use crate::nn::loss::{energy, gce_loss, softmax};
use crate::nn::{sgd_step, DenseNet, Momentum};
use crate::objective::{backward, LossSpec, LossTerm, Points};
use crate::partition::{fit_gmm_1d, normalize_losses, partition_epoch, support_set, SelectionState, Split};
use crate::ssl::augment::{strong, weak};
use crate::ssl::{guess_labels, linear_rampup, mixup, refine_labels, sample_lambda, Origin, SoftBatch};
use crate::Network;

pub use config::{derive_seed, LrSchedule, RunConfig};
pub use output::{load_model, save_model, write_run_outputs, RunOptions, SavedModel};
pub use report::{EpochRecord, NetworkEpoch, OodMetrics, OodSummary, RunReport, Summary, TermLosses};

use config::stream;
use report::{GeometryStats, WarmupRecord};

/// Geometry of one network in one epoch.
#[derive(Clone, Debug)]
pub struct EpochGeometry {
    pub envelope: Envelope<f64>,
    pub centroids: CentroidSet<f64>,
    pub tau_rej: f64,
    pub n_candidates: usize,
    pub outliers: Vec<Vec<f64>>,
    pub support_ids: Vec<usize>,
    pub support_features: Vec<Vec<f64>>,
}

impl EpochGeometry {
    pub fn snapshot(&self, network: usize, config: &RunConfig) -> GeometrySnapshot {
        GeometrySnapshot {
            epoch: self.envelope.epoch,
            network,
            b_min: self.envelope.b_min.clone(),
            b_max: self.envelope.b_max.clone(),
            centroids: self.centroids.centroids.clone(),
            tau_rej: self.tau_rej,
            n_candidates: self.n_candidates,
            n_accepted: self.outliers.len(),
            sampler: config.vos.sampler,
        }
    }
}

/// Energy scores of a trained pair of networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub networks: Vec<Network>,
    pub temperature: f64,
}

impl Ensemble {
    /// Mean softmax over networks.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.networks[0].classes()];
        for net in &self.networks {
            for (o, p) in out.iter_mut().zip(softmax(&net.forward_logits(x)?)) {
                *o += p;
            }
        }
        let n = self.networks.len() as f64;
        Ok(out.into_iter().map(|v| v / n).collect())
    }

    /// Mean energy over networks.
    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for net in &self.networks {
            total += energy(&net.forward_logits(x)?, self.temperature);
        }
        Ok(total / self.networks.len() as f64)
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        let scores = data.features().iter().map(|x| self.predict(x)).collect::<Result<Vec<_>>>()?;
        accuracy(&scores, data.truth().labels())
    }

    /// AUROC/FPR95 with `score = -E`, ID = positive.
    pub fn ood_metrics(&self, id: &[Vec<f64>], ood: &[Vec<f64>]) -> Result<OodMetrics> {
        let e = |xs: &[Vec<f64>]| xs.iter().map(|x| self.energy(x)).collect::<Result<Vec<_>>>();
        let scores = OodScoreSet::from_energies(&e(id)?, &e(ood)?)?;
        Ok(OodMetrics { auroc: auroc(&scores), fpr95: fpr_at_95_tpr(&scores) })
    }
}

pub struct Experiment {
    config: RunConfig,
    train: LabeledDataset,
    test: LabeledDataset,
    ood: OodSets,
    nets: Vec<Network>,
    velocity: Vec<Momentum<f64>>,
    states: Vec<SelectionState<f64>>,
    feature_std: Vec<f64>,
    rng: ChaCha8Rng,
    geo_rng: ChaCha8Rng,
    epoch: usize,
    warmed_up: bool,
    geometry: Vec<Option<EpochGeometry>>,
    report: RunReport,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

impl Experiment {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = generate_split(&config.dataset_spec(), config.data.n_test)?;
        let train = inject_noise(&train, &config.noise_spec())?;
        let ood = generate_ood(&config.ood_spec(), &train)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::INIT));
        let shape = config.net_shape();
        let nets = (0..config.n_networks())
            .map(|_| DenseNet::init(&shape, &mut init_rng))
            .collect::<Result<Vec<_>>>()?;
        let velocity = nets.iter().map(Momentum::zeros_like).collect();
        let states = nets
            .iter()
            .map(|_| SelectionState::new(train.ids().iter().copied(), config.selection.window))
            .collect::<Result<Vec<_>>>()?;
        let feature_std = train.train_view().feature_std();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::TRAIN)),
            geo_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::GEOMETRY)),
            geometry: vec![None; nets.len()],
            report: RunReport::new(config.clone()),
            config,
            train,
            test,
            ood,
            nets,
            velocity,
            states,
            feature_std,
            epoch: 0,
            warmed_up: false,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn train_set(&self) -> &LabeledDataset {
        &self.train
    }

    pub fn test_set(&self) -> &LabeledDataset {
        &self.test
    }

    pub fn ood_sets(&self) -> &OodSets {
        &self.ood
    }

    pub fn networks(&self) -> &[Network] {
        &self.nets
    }

    pub fn selection_states(&self) -> &[SelectionState<f64>] {
        &self.states
    }

    /// Geometry computed in the latest epoch, per network.
    pub fn geometry(&self) -> &[Option<EpochGeometry>] {
        &self.geometry
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    pub fn into_report(self) -> RunReport {
        self.report
    }

    pub fn ensemble(&self) -> Ensemble {
        Ensemble { networks: self.nets.clone(), temperature: self.config.train.temperature }
    }

    /// Per-sample GCE loss of every training sample under network `k`.
    pub fn sample_losses(&self, k: usize) -> Result<Vec<f64>> {
        let q = self.config.train.q;
        let view = self.train.train_view();
        view.features
            .iter()
            .zip(view.labels)
            .map(|(x, &y)| gce_loss(&softmax(&self.nets[k].forward_logits(x)?), y, q))
            .collect()
    }

    /// Trains every network independently on all noisy labels with GCE.
    pub fn warmup(&mut self) -> Result<()> {
        if self.warmed_up {
            return Err(Error::Config("warm-up already ran".into()));
        }
        let cfg = self.config.clone();
        let n = self.train.len();
        for e in 0..cfg.train.warmup_epochs {
            let mut mean_gce = Vec::with_capacity(self.nets.len());
            for k in 0..self.nets.len() {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut self.rng);
                let mut total = 0.0;
                let mut batches = 0;
                for (b, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
                    let view = self.train.train_view();
                    let spec = LossSpec::single(LossTerm::Gce {
                        inputs: chunk.iter().map(|&i| view.features[i].clone()).collect(),
                        labels: chunk.iter().map(|&i| view.labels[i]).collect(),
                        q: cfg.train.q,
                    });
                    let (grads, parts) = backward(&self.nets[k], &spec, b).map_err(|err| err.at_epoch(e + 1))?;
                    sgd_step(&mut self.nets[k], &grads, &mut self.velocity[k], &cfg.sgd())?;
                    total += parts.total;
                    batches += 1;
                }
                mean_gce.push(total / batches as f64);
            }
            let test_accuracy = self.ensemble().accuracy(&self.test)?;
            log::info!("warm-up {}: gce {:?} test acc {:.4}", e + 1, mean_gce, test_accuracy);
            self.report.warmup.push(WarmupRecord { epoch: e + 1, mean_gce, test_accuracy });
        }
        self.warmed_up = true;
        Ok(())
    }

    fn compute_geometry(&mut self, k: usize, support: &[usize]) -> Result<Option<EpochGeometry>> {
        if support.is_empty() {
            return Ok(None);
        }
        let epoch = self.epoch + 1;
        let view = self.train.train_view();
        let mut feats = Vec::with_capacity(support.len());
        let mut labels = Vec::with_capacity(support.len());
        for &id in support {
            let i = self.train.index_of(id).expect("support ids come from the training set");
            feats.push(self.nets[k].forward_features(&view.features[i])?);
            labels.push(view.labels[i]);
        }
        let envelope = estimate_envelope(&feats, epoch).expect("nonempty support");
        let centroids = class_centroids(&feats, &labels, epoch)?;
        let vos = &self.config.vos;
        let tau_rej = if vos.tau_auto {
            auto_rejection_radius(&centroids).map_or(vos.tau_rej, |r| r * vos.tau_scale)
        } else {
            vos.tau_rej
        };
        let n_cand = (vos.n_cand_factor * support.len()).min(vos.n_cand_max);
        let candidates = sample_candidates(
            &envelope,
            &centroids,
            &feats,
            &labels,
            n_cand,
            &self.config.sampler(),
            &mut self.geo_rng,
        )?;
        let batch = filter_outliers(candidates, &centroids, tau_rej, vos.sampler)?;
        Ok(Some(EpochGeometry {
            envelope,
            centroids,
            tau_rej,
            n_candidates: batch.n_candidates,
            outliers: batch.outliers,
            support_ids: support.to_vec(),
            support_features: feats,
        }))
    }

    fn views(&mut self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| weak(x, &self.feature_std, &self.config.ssl.augment, &mut self.rng))
            .collect()
    }

    fn mean_probs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.nets.iter().map(|n| Ok(softmax(&n.forward_logits(x)?))).collect()
    }

    /// One epoch of SSL training for network `k`; returns (batches, mean terms, first batch terms).
    fn train_network(
        &mut self,
        k: usize,
        labeled: &[usize],
        unlabeled: &[usize],
        use_outliers: bool,
    ) -> Result<(usize, TermLosses, TermLosses)> {
        let cfg = self.config.clone();
        let b = cfg.train.batch_size;
        let t_sharp = cfg.loss.t_sharp;
        let n_aug = cfg.ssl.n_aug;
        let mut lab = labeled.to_vec();
        let mut unl = unlabeled.to_vec();
        lab.shuffle(&mut self.rng);
        unl.shuffle(&mut self.rng);
        let clean_prob: Vec<f64> = self.states[k].records().iter().map(|r| r.clean_prob).collect();
        let outliers = match (&self.geometry[k], use_outliers) {
            (Some(g), true) => g.outliers.clone(),
            _ => Vec::new(),
        };
        let iters = lab.len().div_ceil(b);
        let mut sums = TermLosses::default();
        let mut first = TermLosses::default();
        let mut u_cursor = 0;
        for step in 0..iters {
            let lb = &lab[step * b..((step + 1) * b).min(lab.len())];
            let ub: Vec<usize> = if unl.is_empty() {
                Vec::new()
            } else {
                (0..b.min(unl.len()))
                    .map(|j| unl[(u_cursor + j) % unl.len()])
                    .collect()
            };
            u_cursor = (u_cursor + ub.len()) % unl.len().max(1);

            let mut lab_views: Vec<Vec<Vec<f64>>> = Vec::with_capacity(lb.len());
            let mut lab_targets = Vec::with_capacity(lb.len());
            for &i in lb {
                let x = self.train.features()[i].clone();
                let views = self.views(&x, n_aug);
                let mut preds = Vec::new();
                for v in &views {
                    preds.extend(self.mean_probs(v)?);
                }
                let refs: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
                let y = self.train.noisy_labels()[i];
                lab_targets.push(refine_labels(y, clean_prob[i].clamp(0.0, 1.0), &refs, t_sharp)?);
                lab_views.push(views);
            }
            let mut unl_views: Vec<Vec<Vec<f64>>> = Vec::with_capacity(ub.len());
            let mut unl_targets = Vec::with_capacity(ub.len());
            for &i in &ub {
                let x = self.train.features()[i].clone();
                let views = self.views(&x, n_aug);
                let mut preds = Vec::new();
                for v in &views {
                    preds.extend(self.mean_probs(v)?);
                }
                let refs: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
                unl_targets.push(guess_labels(&refs, t_sharp)?);
                unl_views.push(views);
            }

            let mut all = SoftBatch::default();
            for a in 0..n_aug {
                for (views, t) in lab_views.iter().zip(&lab_targets) {
                    all.push(views[a].clone(), t.clone(), Origin::Labeled);
                }
            }
            for a in 0..n_aug {
                for (views, t) in unl_views.iter().zip(&unl_targets) {
                    all.push(views[a].clone(), t.clone(), Origin::Unlabeled);
                }
            }
            let lambda = sample_lambda(cfg.ssl.alpha, &mut self.rng)?;
            let mut perm: Vec<usize> = (0..all.len()).collect();
            perm.shuffle(&mut self.rng);
            let mut shuffled = SoftBatch::default();
            for &p in &perm {
                shuffled.push(all.inputs[p].clone(), all.targets[p].clone(), all.origins[p]);
            }
            let mixed = mixup(&all, &shuffled, lambda)?;
            let n_lab = n_aug * lb.len();

            let progress = self.epoch as f64 + step as f64 / iters as f64;
            let lambda_u = cfg.loss.lambda_u * linear_rampup(progress, cfg.ssl.rampup_epochs);
            let mut spec = LossSpec::new()
                .with(
                    1.0,
                    LossTerm::SoftCrossEntropy {
                        inputs: mixed.inputs[..n_lab].to_vec(),
                        targets: mixed.targets[..n_lab].to_vec(),
                    },
                )
                .with(
                    lambda_u,
                    LossTerm::SoftmaxMse {
                        inputs: mixed.inputs[n_lab..].to_vec(),
                        targets: mixed.targets[n_lab..].to_vec(),
                    },
                )
                .with(cfg.loss.lambda_reg, LossTerm::PriorKl { inputs: mixed.inputs.clone() });
            if !cfg.ablation.disable_cl && !ub.is_empty() {
                let mut views = Vec::with_capacity(2 * ub.len());
                for &i in &ub {
                    let x = &self.train.features()[i];
                    for _ in 0..2 {
                        views.push(strong(x, &self.feature_std, &cfg.ssl.augment, &mut self.rng));
                    }
                }
                spec = spec.with(cfg.loss.lambda_cl, LossTerm::Contrastive { views, delta: cfg.loss.delta });
            }
            if !outliers.is_empty() {
                let m = b.min(outliers.len());
                let picked = index::sample(&mut self.geo_rng, outliers.len(), m);
                spec = spec.with(
                    cfg.loss.lambda_spade,
                    LossTerm::Spade {
                        clean: Points::Inputs(lb.iter().map(|&i| self.train.features()[i].clone()).collect()),
                        outliers: picked.iter().map(|j| outliers[j].clone()).collect(),
                        temperature: cfg.train.temperature,
                    },
                );
            }

            let (grads, parts) = backward(&self.nets[k], &spec, step)?;
            let sgd = cfg.sgd_at(progress);
            sgd_step(&mut self.nets[k], &grads, &mut self.velocity[k], &sgd)?;
            let terms = TermLosses {
                l_x: parts.get("l_x").unwrap_or(0.0),
                l_u: parts.get("l_u").unwrap_or(0.0),
                l_reg: parts.get("l_reg").unwrap_or(0.0),
                l_cl: parts.get("l_cl").unwrap_or(0.0),
                l_spade: parts.get("l_spade").unwrap_or(0.0),
                total: parts.total,
            };
            if step == 0 {
                first = terms;
            }
            sums.add(&terms);
        }
        Ok((iters, sums.scaled(1.0 / iters.max(1) as f64), first))
    }

    fn partition_all(&mut self) -> Result<Vec<(Split, Vec<usize>, bool)>> {
        let losses = (0..self.nets.len())
            .map(|k| self.sample_losses(k))
            .collect::<Result<Vec<_>>>()?;
        let n_nets = self.nets.len();
        let mut out = Vec::with_capacity(n_nets);
        for k in 0..n_nets {
            let peer = if n_nets == 2 { 1 - k } else { k };
            let normalized = normalize_losses(&losses[peer]);
            self.states[k].set_losses(&normalized)?;
            let fit = fit_gmm_1d(&normalized, self.config.selection.gmm_max_iters, self.config.selection.gmm_tol)?;
            let split = partition_epoch(&mut self.states[k], &fit.gmm, self.config.selection.tau_clean)?;
            let support = support_set(self.states[k].records(), self.config.selection.window);
            out.push((split, support, fit.gmm.degenerate));
        }
        Ok(out)
    }

    /// Partition, geometry and SSL training for every network, then evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if !self.warmed_up {
            return Err(Error::Config("run_epoch called before warm-up".into()));
        }
        let epoch = self.epoch + 1;
        self.epoch_inner().map_err(|e| e.at_epoch(epoch))
    }

    fn epoch_inner(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let parts = self.partition_all()?;
        for (k, (_, support, _)) in parts.iter().enumerate() {
            self.geometry[k] = self.compute_geometry(k, support)?;
        }
        let use_outliers = !self.config.ablation.disable_vos;
        let mut networks = Vec::with_capacity(self.nets.len());
        for (k, (split, support, degenerate)) in parts.iter().enumerate() {
            let fallback = support.is_empty();
            let labeled: &[usize] = if fallback { &split.labeled } else { support };
            let in_labeled: std::collections::HashSet<usize> = labeled.iter().copied().collect();
            let unlabeled: Vec<usize> = self.train.ids().iter().copied().filter(|id| !in_labeled.contains(id)).collect();
            let (batches, losses, first_batch) = self.train_network(k, labeled, &unlabeled, use_outliers)?;

            let (mut e_clean, mut e_out) = (None, None);
            let geometry = self.geometry[k].as_ref().map(|g| {
                let t = self.config.train.temperature;
                let net = &self.nets[k];
                let clean: Vec<f64> = g
                    .support_ids
                    .iter()
                    .filter_map(|&id| net.forward_logits(&self.train.features()[id]).ok())
                    .map(|l| energy(&l, t))
                    .collect();
                let outl: Vec<f64> = g
                    .outliers
                    .iter()
                    .filter_map(|z| net.head_logits(z).ok())
                    .map(|l| energy(&l, t))
                    .collect();
                e_clean = mean(&clean);
                e_out = mean(&outl);
                GeometryStats {
                    log_volume: g.envelope.log_volume(),
                    tau_rej: g.tau_rej,
                    n_centroids: g.centroids.len(),
                    n_candidates: g.n_candidates,
                    n_accepted: g.outliers.len(),
                }
            });
            networks.push(NetworkEpoch {
                network: k,
                labeled: split.labeled.len(),
                support: support.len(),
                support_fallback: fallback,
                gmm_degenerate: *degenerate,
                selection: selection_metrics(support, &self.train)?,
                geometry,
                batches,
                losses,
                first_batch,
                mean_energy_clean: e_clean,
                mean_energy_outlier: e_out,
            });
        }
        let test_accuracy = self.ensemble().accuracy(&self.test)?;
        let record = EpochRecord {
            epoch,
            lambda_u: self.config.loss.lambda_u * linear_rampup(self.epoch as f64, self.config.ssl.rampup_epochs),
            networks,
            test_accuracy,
        };
        log::info!(
            "epoch {epoch}: test acc {:.4}, support {:?}, f1 {:.3}",
            test_accuracy,
            record.networks.iter().map(|n| n.support).collect::<Vec<_>>(),
            record.support_f1()
        );
        self.epoch = epoch;
        self.report.epochs.push(record.clone());
        Ok(record)
    }

    /// Final OOD evaluation and summary; marks the report complete.
    pub fn finish(&mut self) -> Result<&RunReport> {
        let ens = self.ensemble();
        let id = self.test.features();
        let far = ens.ood_metrics(id, &self.ood.far)?;
        let near = ens.ood_metrics(id, &self.ood.near)?;
        let last = self
            .report
            .epochs
            .last()
            .ok_or_else(|| Error::Config("no training epochs were run".into()))?;
        let best = self.report.epochs.iter().map(|e| e.test_accuracy).fold(f64::NEG_INFINITY, f64::max);
        self.report.summary = Some(Summary {
            best_accuracy: best,
            final_accuracy: last.test_accuracy,
            final_support_f1: last.support_f1(),
            ood: OodSummary { far, near },
        });
        self.report.complete = true;
        Ok(&self.report)
    }

    pub(crate) fn mark_failed(&mut self, error: &Error) {
        self.report.complete = false;
        self.report.error = Some(error.to_string());
    }
}

/// Runs warm-up, all epochs and the final evaluation, writing files per `options`.
///
/// On failure the partial report (flagged incomplete) is still written when an
/// output directory is set.
pub fn run_experiment(config: &RunConfig, options: &RunOptions) -> Result<RunReport> {
    let mut exp = Experiment::new(config.clone())?;
    let started = std::time::Instant::now();
    let result = drive(&mut exp, options);
    if let Err(e) = &result {
        exp.mark_failed(e);
    }
    if let Some(dir) = &options.out_dir {
        output::write_final(dir, &exp, started.elapsed().as_secs_f64())?;
    }
    result?;
    Ok(exp.into_report())
}

fn drive(exp: &mut Experiment, options: &RunOptions) -> Result<()> {
    if let Some(dir) = &options.out_dir {
        output::prepare(dir, exp)?;
    }
    exp.warmup()?;
    for _ in 0..exp.config.train.epochs {
        exp.run_epoch()?;
        if let Some(dir) = &options.out_dir {
            output::write_epoch(dir, exp, options)?;
        }
    }
    exp.finish()?;
    Ok(())
}
