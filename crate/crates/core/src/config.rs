//! Run configuration: one JSON document, every key optional, unknown keys
//! rejected, all violations reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curvature::{Backend, FisherTargets, GgnKind, Projection, Sharing};
use crate::data::{DatasetSpec, GeneratorKind};
use crate::diffusion::{make_schedule, MeasurementKind, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{Activation, ArchConfig, OptimizerKind, SamplerMode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub architecture: ArchitectureConfig,
    pub training: TrainingConfig,
    pub sampling: SamplingConfig,
    pub attribution: AttributionConfig,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: GeneratorKind,
    pub n: usize,
    pub data_dim: usize,
    pub components: usize,
    pub spread: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub time_embed_dim: usize,
    /// Hidden widths of a dense network; exclusive with `layers`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
    /// Explicit layer list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<crate::nn::LayerSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub cosine_decay: bool,
    pub sampler: SamplerMode,
    /// Step count when retraining on a subset; half of `steps` if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Number of generated queries.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionConfig {
    pub backend: Backend,
    pub ggn_kind: GgnKind,
    pub sharing: Sharing,
    pub targets: FisherTargets,
    /// Diffusion samples per example in the curvature pass.
    pub samples: usize,
    /// Samples per example in the EK-FAC eigenvalue pass.
    pub correction_samples: usize,
    /// Samples per training gradient.
    pub train_samples: usize,
    pub damping: Vec<f64>,
    pub compression: bool,
    pub d_proj: usize,
    pub projection: Projection,
    pub measurement: MeasurementKind,
    pub measurement_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub subsets: usize,
    pub seeds: usize,
    pub fraction: f64,
    pub queries: usize,
    pub percent: Vec<f64>,
    /// Queries used by the remove-top ablation (the first ones).
    pub remove_queries: usize,
    pub proxy_timesteps: Vec<usize>,
    pub target_timesteps: Vec<usize>,
}


impl Default for DatasetConfig {
    fn default() -> Self {
        let d = DatasetSpec::default_mixture(256, 0);
        Self { kind: d.kind, n: d.n, data_dim: d.data_dim, components: d.components, spread: d.spread, std: d.std }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 100, beta_min: 1e-4, beta_max: 0.05 }
    }
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self { time_embed_dim: 8, hidden: None, activation: Activation::Silu, layers: None }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            optimizer: t.optimizer,
            lr: t.lr,
            steps: t.steps,
            batch_size: t.batch_size,
            log_every: t.log_every,
            cosine_decay: t.cosine_decay,
            sampler: SamplerMode::StrictSupport,
            subset_steps: None,
        }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { count: 16 }
    }
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Ekfac,
            ggn_kind: GgnKind::Model,
            sharing: Sharing::Expand,
            targets: FisherTargets::Sampled,
            samples: 8,
            correction_samples: 8,
            train_samples: 32,
            damping: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            compression: false,
            d_proj: 512,
            projection: Projection::Gaussian,
            measurement: MeasurementKind::SimpleLoss,
            measurement_samples: 250,
        }
    }
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            subsets: 20,
            seeds: 3,
            fraction: 0.5,
            queries: 16,
            percent: vec![0.0, 10.0],
            remove_queries: 5,
            proxy_timesteps: vec![1, 10, 50, 100],
            target_timesteps: vec![1, 10, 50, 100],
        }
    }
}

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

/// Seeds of every stochastic component, derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedPlan {
    pub data: u64,
    pub init: u64,
    pub sampling: u64,
    pub curvature: u64,
    pub train_grads: u64,
    pub measurement: u64,
    pub projection: u64,
    pub subsets: u64,
    /// Seed of the first retraining ensemble member; member `k` uses `+ k`.
    pub retrain: u64,
    pub baseline: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::ConfigViolations(vec![format!("{path}: {}", e.inner())])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Short hex digest of the canonical serialization.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        crate::hex(&Sha256::digest(canon.as_bytes())[..8])
    }

    pub fn seeds(&self) -> SeedPlan {
        let s = self.seed;
        SeedPlan {
            data: s,
            init: s.wrapping_add(1),
            sampling: s.wrapping_add(2),
            curvature: s.wrapping_add(3),
            train_grads: s.wrapping_add(4),
            measurement: s.wrapping_add(5),
            projection: s.wrapping_add(6),
            subsets: s.wrapping_add(7),
            retrain: s.wrapping_add(1000),
            baseline: s.wrapping_add(8),
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let d = &self.dataset;
        DatasetSpec { kind: d.kind, n: d.n, data_dim: d.data_dim, components: d.components, spread: d.spread, std: d.std, seed: self.seeds().data }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.schedule.steps, self.schedule.beta_min, self.schedule.beta_max)
    }

    pub fn arch(&self) -> ArchConfig {
        let a = &self.architecture;
        match &a.layers {
            Some(layers) => ArchConfig { data_dim: self.dataset.data_dim, time_embed_dim: a.time_embed_dim, layers: layers.clone() },
            None => ArchConfig::mlp(self.dataset.data_dim, a.time_embed_dim, a.hidden.as_deref().unwrap_or(&DEFAULT_HIDDEN), a.activation),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            optimizer: t.optimizer,
            lr: t.lr,
            steps: t.steps,
            batch_size: t.batch_size,
            log_every: t.log_every,
            cosine_decay: t.cosine_decay,
            sampler: t.sampler,
        }
    }

    pub fn subset_train_config(&self) -> TrainConfig {
        TrainConfig { steps: self.training.subset_steps.unwrap_or((self.training.steps / 2).max(1)), ..self.train_config() }
    }

    /// Every violated constraint, each prefixed by its path.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, path: &str, msg: &str| {
            if !ok {
                v.push(format!("{path}: {msg}"));
            }
        };
        let d = &self.dataset;
        need(d.n >= 2, "dataset.n", "must be at least 2");
        need(d.data_dim >= 1, "dataset.data_dim", "must be positive");
        need(d.components >= 1, "dataset.components", "must be positive");
        need(d.spread.is_finite(), "dataset.spread", "must be finite");
        need(d.std > 0.0 && d.std.is_finite(), "dataset.std", "must be positive");

        let s = &self.schedule;
        need(s.steps >= 1, "schedule.steps", "must be at least 1");
        need(s.beta_min > 0.0 && s.beta_min < 1.0, "schedule.beta_min", "must lie in (0, 1)");
        need(s.beta_max > 0.0 && s.beta_max < 1.0, "schedule.beta_max", "must lie in (0, 1)");
        need(s.beta_min <= s.beta_max, "schedule.beta_max", "must be at least beta_min");

        let a = &self.architecture;
        need(a.time_embed_dim.is_multiple_of(2), "architecture.time_embed_dim", "must be even");
        need(!(a.hidden.is_some() && a.layers.is_some()), "architecture", "give either `hidden` or `layers`, not both");
        if let Some(h) = &a.hidden {
            need(h.iter().all(|&w| w > 0), "architecture.hidden", "widths must be positive");
        }
        if a.hidden.is_none() || a.layers.is_some() {
            if let Err(e) = self.arch().validate() {
                v.push(format!("architecture.layers: {e}"));
            }
        }

        let t = &self.training;
        let mut need = |ok: bool, path: &str, msg: &str| {
            if !ok {
                v.push(format!("{path}: {msg}"));
            }
        };
        need(t.lr > 0.0 && t.lr.is_finite(), "training.lr", "must be positive");
        need(t.steps >= 1, "training.steps", "must be at least 1");
        need(t.batch_size >= 1, "training.batch_size", "must be at least 1");
        need(t.subset_steps != Some(0), "training.subset_steps", "must be at least 1");
        match t.optimizer {
            OptimizerKind::Sgd { momentum } => need((0.0..1.0).contains(&momentum), "training.optimizer.momentum", "must lie in [0, 1)"),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                need((0.0..1.0).contains(&beta1), "training.optimizer.beta1", "must lie in [0, 1)");
                need((0.0..1.0).contains(&beta2), "training.optimizer.beta2", "must lie in [0, 1)");
                need(eps > 0.0, "training.optimizer.eps", "must be positive");
            }
        }

        need(self.sampling.count >= 1, "sampling.count", "must be at least 1");

        let at = &self.attribution;
        need(at.samples >= 1, "attribution.samples", "must be at least 1");
        need(at.correction_samples >= 1, "attribution.correction_samples", "must be at least 1");
        need(at.train_samples >= 1, "attribution.train_samples", "must be at least 1");
        need(!at.damping.is_empty(), "attribution.damping", "needs at least one value");
        for (i, l) in at.damping.iter().enumerate() {
            need(*l > 0.0 && l.is_finite(), &format!("attribution.damping[{i}]"), "must be positive");
        }
        need(at.d_proj >= 1, "attribution.d_proj", "must be at least 1");
        need(at.measurement_samples >= 1, "attribution.measurement_samples", "must be at least 1");
        if let MeasurementKind::PerTimestepLoss { t } = at.measurement {
            need((1..=s.steps).contains(&t), "attribution.measurement.t", "outside 1..=schedule.steps");
        }

        let e = &self.evaluation;
        need(e.subsets >= 1, "evaluation.subsets", "must be at least 1");
        need(e.seeds >= 1, "evaluation.seeds", "must be at least 1");
        need(e.fraction > 0.0 && e.fraction < 1.0, "evaluation.fraction", "must lie in (0, 1)");
        need(e.queries >= 1 && e.queries <= self.sampling.count, "evaluation.queries", "must lie in 1..=sampling.count");
        need(e.remove_queries <= e.queries, "evaluation.remove_queries", "must not exceed evaluation.queries");
        for (i, p) in e.percent.iter().enumerate() {
            need((0.0..100.0).contains(p), &format!("evaluation.percent[{i}]"), "must lie in [0, 100)");
        }
        for (name, list) in [("evaluation.proxy_timesteps", &e.proxy_timesteps), ("evaluation.target_timesteps", &e.target_timesteps)] {
            for (i, t) in list.iter().enumerate() {
                need((1..=s.steps).contains(t), &format!("{name}[{i}]"), "outside 1..=schedule.steps");
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigViolations(v))
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}
