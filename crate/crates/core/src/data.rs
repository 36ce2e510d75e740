//! Toy training sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Isotropic Gaussian components with means evenly spaced on a circle of
    /// radius `spread` in the first two coordinates.
    GaussianMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_kind")]
    pub kind: GeneratorKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dim")]
    pub data_dim: usize,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_std")]
    pub std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_kind() -> GeneratorKind {
    GeneratorKind::GaussianMixture
}
fn default_n() -> usize {
    256
}
fn default_dim() -> usize {
    2
}
fn default_components() -> usize {
    2
}
fn default_spread() -> f64 {
    1.5
}
fn default_std() -> f64 {
    0.5
}

impl DatasetSpec {
    pub fn default_mixture(n: usize, seed: u64) -> Self {
        Self {
            kind: default_kind(),
            n,
            data_dim: default_dim(),
            components: default_components(),
            spread: default_spread(),
            std: default_std(),
            seed,
        }
    }

    pub fn component_mean(&self, k: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.data_dim];
        let angle = 2.0 * std::f64::consts::PI * k as f64 / self.components as f64;
        mean[0] = self.spread * angle.cos();
        if self.data_dim > 1 {
            mean[1] = self.spread * angle.sin();
        }
        mean
    }
}

/// A training point with a stable identifier. Per-example random streams and
/// reduction order are keyed by `id`, never by position in a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub x: Vec<f64>,
}

/// Attach ids `0..n` in list order.
pub fn with_ids(points: &[Vec<f64>]) -> Vec<Example> {
    points.iter().enumerate().map(|(i, x)| Example { id: i as u64, x: x.clone() }).collect()
}

/// Examples sorted by id; duplicate ids are rejected.
pub fn sorted_by_id(examples: &[Example]) -> Result<Vec<&Example>> {
    let mut order: Vec<&Example> = examples.iter().collect();
    order.sort_by_key(|e| e.id);
    if let Some(w) = order.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Config(format!("duplicate example id {}", w[0].id)));
    }
    Ok(order)
}

pub fn generate(spec: &DatasetSpec) -> Result<Vec<Vec<f64>>> {
    if spec.n == 0 || spec.data_dim == 0 || spec.components == 0 {
        return Err(Error::Config("dataset n, data_dim and components must be positive".into()));
    }
    if !(spec.std > 0.0) || !spec.spread.is_finite() {
        return Err(Error::Config("dataset std must be positive and spread finite".into()));
    }
    let root = RngStream::new(spec.seed).child("dataset");
    Ok((0..spec.n)
        .map(|i| {
            let mut rng = root.index(i as u64).rng();
            let k = rng.uniform_int(0, spec.components - 1);
            spec.component_mean(k).into_iter().map(|m| m + spec.std * rng.normal()).collect()
        })
        .collect())
}
