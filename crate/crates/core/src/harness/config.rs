//! Run configuration. Every section has defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, Generator, NoiseMode, NoiseSpec, OodSpec};
use crate::error::{Error, Result};
use crate::geometry::{SamplerConfig, SamplerKind};
use crate::nn::{NetShape, SgdConfig};
use crate::ssl::augment::AugmentConfig;
use crate::ssl::LossWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub generator: Generator,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    pub separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: Generator::GaussianBlobs,
            n_train: 2000,
            n_test: 1000,
            n_classes: 4,
            input_dim: 8,
            separation: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    pub rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { mode: NoiseMode::Symmetric, rate: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodConfig {
    pub n_samples: usize,
    pub near_radius: f64,
    pub near_spread: f64,
}

impl Default for OodConfig {
    fn default() -> Self {
        let d = OodSpec::default();
        Self { n_samples: d.n_samples, near_radius: d.near_radius, near_spread: d.near_spread }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub extractor: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub projector: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { extractor: vec![64, 64], classifier_hidden: vec![], projector: vec![32] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to zero at the last epoch.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    /// Epochs after warm-up.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decay applied to `lr` over the post-warm-up epochs.
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// GCE exponent.
    pub q: f64,
    /// Energy temperature.
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 5,
            epochs: 20,
            batch_size: 64,
            lr: 0.02,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            q: 0.7,
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub tau_clean: f64,
    /// Window length `v`.
    pub window: usize,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { tau_clean: 0.5, window: 3, gmm_max_iters: 100, gmm_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    /// Beta(alpha, alpha) for mixup.
    pub alpha: f64,
    /// Weak views per sample for refinement and guessing.
    pub n_aug: usize,
    pub rampup_epochs: f64,
    pub augment: AugmentConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self { alpha: 4.0, n_aug: 2, rampup_epochs: 16.0, augment: AugmentConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VosConfig {
    pub sampler: SamplerKind,
    pub perturbation_scale: f64,
    /// Candidates per support sample.
    pub n_cand_factor: usize,
    pub n_cand_max: usize,
    /// Fixed rejection radius, used when `tau_auto` is off.
    pub tau_rej: f64,
    /// Scale the radius from the centroid spread instead of using `tau_rej`.
    pub tau_auto: bool,
    /// Multiplier on the auto radius.
    pub tau_scale: f64,
}

impl Default for VosConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Uniform,
            perturbation_scale: 0.1,
            n_cand_factor: 10,
            n_cand_max: 10_000,
            tau_rej: 2.5,
            tau_auto: true,
            tau_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub disable_vos: bool,
    pub disable_cl: bool,
    pub single_network: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; data, noise, OOD sets, init and training streams derive from it.
    pub seed: u64,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub ood: OodConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub loss: LossWeights,
    pub ssl: SslConfig,
    pub vos: VosConfig,
    pub ablation: AblationConfig,
}

/// Sub-stream tags for [`derive_seed`].
pub(crate) mod stream {
    pub const DATA: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const OOD: u64 = 3;
    pub const INIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const GEOMETRY: u64 = 6;
}

/// splitmix64 finalizer over `seed ^ tag`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be nonnegative, got {v}")))
    }
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        require(self.data.n_test > 0, "data.n_test must be positive")?;
        NoiseSpec { mode: self.noise.mode, rate: self.noise.rate, seed: 0 }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        require(self.ood.n_samples > 0, "ood.n_samples must be positive")?;
        positive("ood.near_radius", self.ood.near_radius)?;
        positive("ood.near_spread", self.ood.near_spread)?;

        require(
            !self.model.extractor.is_empty() && self.model.extractor.iter().all(|&w| w > 0),
            "model.extractor needs at least one positive width",
        )?;
        require(
            self.model.classifier_hidden.iter().chain(&self.model.projector).all(|&w| w > 0),
            "model widths must be positive",
        )?;

        let t = &self.train;
        require(t.batch_size >= 2, "train.batch_size must be at least 2")?;
        require(t.epochs > 0, "train.epochs must be positive")?;
        positive("train.lr", t.lr)?;
        require((0.0..1.0).contains(&t.momentum), "train.momentum must lie in [0, 1)")?;
        nonneg("train.weight_decay", t.weight_decay)?;
        require(t.q > 0.0 && t.q <= 1.0, "train.q must lie in (0, 1]")?;
        positive("train.temperature", t.temperature)?;

        let s = &self.selection;
        require(s.tau_clean > 0.0 && s.tau_clean < 1.0, "selection.tau_clean must lie in (0, 1)")?;
        require(s.window >= 1, "selection.window must be at least 1")?;
        require(s.gmm_max_iters >= 1, "selection.gmm_max_iters must be at least 1")?;
        positive("selection.gmm_tol", s.gmm_tol)?;

        self.loss.validate()?;
        positive("ssl.alpha", self.ssl.alpha)?;
        require(self.ssl.n_aug >= 1, "ssl.n_aug must be at least 1")?;
        nonneg("ssl.rampup_epochs", self.ssl.rampup_epochs)?;
        let a = &self.ssl.augment;
        nonneg("ssl.augment.jitter", a.jitter)?;
        positive("ssl.augment.scale_min", a.scale_min)?;
        require(a.scale_min <= a.scale_max, "ssl.augment.scale_min must not exceed scale_max")?;
        require((0.0..1.0).contains(&a.dropout), "ssl.augment.dropout must lie in [0, 1)")?;

        let v = &self.vos;
        nonneg("vos.perturbation_scale", v.perturbation_scale)?;
        require(v.n_cand_factor >= 1 && v.n_cand_max >= 1, "vos candidate counts must be positive")?;
        nonneg("vos.tau_rej", v.tau_rej)?;
        positive("vos.tau_scale", v.tau_scale)?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            generator: self.data.generator,
            n_samples: self.data.n_train,
            n_classes: self.data.n_classes,
            input_dim: self.data.input_dim,
            separation: self.data.separation,
            seed: derive_seed(self.seed, stream::DATA),
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec { mode: self.noise.mode, rate: self.noise.rate, seed: derive_seed(self.seed, stream::NOISE) }
    }

    pub fn ood_spec(&self) -> OodSpec {
        OodSpec {
            n_samples: self.ood.n_samples,
            near_radius: self.ood.near_radius,
            near_spread: self.ood.near_spread,
            seed: derive_seed(self.seed, stream::OOD),
        }
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            input: self.data.input_dim,
            extractor: self.model.extractor.clone(),
            classifier_hidden: self.model.classifier_hidden.clone(),
            classes: self.data.n_classes,
            projector: self.model.projector.clone(),
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { lr: self.train.lr, momentum: self.train.momentum, weight_decay: self.train.weight_decay }
    }

    /// SGD settings at `progress` epochs into the post-warm-up phase.
    pub fn sgd_at(&self, progress: f64) -> SgdConfig {
        let scale = match self.train.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let t = (progress / self.train.epochs.max(1) as f64).clamp(0.0, 1.0);
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        };
        SgdConfig { lr: self.train.lr * scale, ..self.sgd() }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { kind: self.vos.sampler, perturbation_scale: self.vos.perturbation_scale }
    }

    pub fn n_networks(&self) -> usize {
        if self.ablation.single_network { 1 } else { 2 }
    }
}
