use serde::{Deserialize, Serialize};

use super::{ArchConfig, EpsilonNet};
use crate::diffusion::{draw_sample, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

/// How minibatch indices are drawn under per-example weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Uniform over the whole dataset; each loss term is scaled by its weight.
    #[default]
    Weighted,
    /// Uniform over examples with positive weight only. Zero-weight training
    /// then follows exactly the same trajectory as training on the subset.
    StrictSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub cosine_decay: bool,
    pub sampler: SamplerMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam { beta1: beta1(), beta2: beta2(), eps: adam_eps() },
            lr: 2e-3,
            steps: 2000,
            batch_size: 64,
            log_every: 100,
            cosine_decay: true,
            sampler: SamplerMode::Weighted,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: EpsilonNet,
    /// Mean weighted minibatch loss per logging interval.
    pub loss_curve: Vec<f64>,
}

enum OptState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, step: i32 },
}

/// Minimise `(1/N) Σ_n w_n ℓ(θ, x_n)` by minibatch stochastic optimisation.
pub fn train(
    mut net: EpsilonNet,
    schedule: &NoiseSchedule,
    dataset: &[Vec<f64>],
    weights: &[f64],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if weights.len() != dataset.len() {
        return Err(Error::Config(format!(
            "{} example weights for {} examples",
            weights.len(),
            dataset.len()
        )));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Config("example weights must lie in [0, 1]".into()));
    }
    if cfg.batch_size == 0 || cfg.log_every == 0 {
        return Err(Error::Config("batch_size and log_every must be positive".into()));
    }
    let support: Vec<usize> = match cfg.sampler {
        SamplerMode::Weighted => (0..dataset.len()).collect(),
        SamplerMode::StrictSupport => (0..dataset.len()).filter(|&i| weights[i] > 0.0).collect(),
    };
    if support.is_empty() {
        return Err(Error::Config("no examples available to train on".into()));
    }

    let p = net.param_count();
    let mut state = match cfg.optimizer {
        OptimizerKind::Sgd { .. } => OptState::Sgd { velocity: vec![0.0; p] },
        OptimizerKind::Adam { .. } => OptState::Adam { m: vec![0.0; p], v: vec![0.0; p], step: 0 },
    };
    let stream = RngStream::new(seed).child("train");
    let mut loss_curve = Vec::new();
    let mut interval_sum = 0.0;
    let mut interval_n = 0usize;
    let mut grad = vec![0.0; p];

    for step in 0..cfg.steps {
        let step_stream = stream.index(step as u64);
        let mut pick = step_stream.child("batch").rng();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        for b in 0..cfg.batch_size {
            let idx = support[pick.uniform_int(0, support.len() - 1)];
            let w = weights[idx];
            let x0 = &dataset[idx];
            let s = draw_sample(schedule, x0.len(), &step_stream.index(b as u64));
            let x_t = q_sample(schedule, x0, s.t, &s.eps);
            let fp = net.forward_pass(&x_t, s.t)?;
            let loss: f64 = fp.output.iter().zip(&s.eps).map(|(y, e)| (y - e).powi(2)).sum();
            batch_loss += w * loss;
            if w == 0.0 {
                continue;
            }
            let cot: Vec<f64> = fp.output.iter().zip(&s.eps).map(|(y, e)| 2.0 * w * (y - e)).collect();
            let bw = net.backward(&fp, &cot);
            for (g, d) in grad.iter_mut().zip(&bw.grad) {
                *g += d;
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        batch_loss *= scale;
        if !batch_loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        grad.iter_mut().for_each(|g| *g *= scale);

        let lr = if cfg.cosine_decay {
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos())
        } else {
            cfg.lr
        };
        match (&mut state, cfg.optimizer) {
            (OptState::Sgd { velocity }, OptimizerKind::Sgd { momentum }) => {
                for ((th, v), g) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = momentum * *v + g;
                    *th -= lr * *v;
                }
            }
            (OptState::Adam { m, v, step: k }, OptimizerKind::Adam { beta1, beta2, eps }) => {
                *k += 1;
                let c1 = 1.0 - beta1.powi(*k);
                let c2 = 1.0 - beta2.powi(*k);
                for (((th, mi), vi), g) in net.params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&grad) {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    *th -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
            _ => unreachable!("optimizer state matches config"),
        }
        if net.params.iter().any(|t| !t.is_finite()) {
            return Err(Error::TrainingDiverged { step });
        }

        interval_sum += batch_loss;
        interval_n += 1;
        if interval_n == cfg.log_every || step + 1 == cfg.steps {
            loss_curve.push(interval_sum / interval_n as f64);
            interval_sum = 0.0;
            interval_n = 0;
        }
    }
    Ok(TrainOutcome { net, loss_curve })
}

/// Initialise from `seed` and train; the seed controls both initialisation
/// and minibatch/noise draws.
pub fn train_from_scratch(
    arch: &ArchConfig,
    schedule: &NoiseSchedule,
    dataset: &[Vec<f64>],
    weights: &[f64],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let net = EpsilonNet::build(arch, seed)?;
    train(net, schedule, dataset, weights, cfg, seed)
}
