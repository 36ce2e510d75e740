//! Gaussian diffusion process, losses, DDPM sampling and measurement functions.

mod measure;

pub use measure::{measure, measurement_gradient, MeasurementFn, MeasurementKind, Query};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Denoiser, EpsilonNet};
use crate::rng::RngStream;

/// Noise schedule, indexed by `t = 1..=T` through the accessor methods.
///
/// The forward process has marginals `x_t = √ᾱ_t x_0 + √(1 − ᾱ_t) ε` with
/// `ᾱ_t = Π_{t' ≤ t} λ_{t'}²`, i.e. per-step variance `1 − λ_t²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub lambda: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
    pub elbo_weight: Vec<f64>,
}

impl NoiseSchedule {
    /// Build from per-step `β_t = 1 − λ_t²`, each in `(0, 1)`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let lambda: Vec<f64> = betas.iter().map(|b| (1.0 - b).sqrt()).collect();
        let mut alpha_bar = Vec::with_capacity(lambda.len());
        let mut acc = 1.0;
        for l in &lambda {
            acc *= l * l;
            alpha_bar.push(acc);
        }
        let sigma: Vec<f64> = (0..lambda.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bar[i]) * (1.0 - lambda[i] * lambda[i])).sqrt()
            })
            .collect();
        let elbo_weight = elbo_weights_from(&lambda, &alpha_bar, &sigma)?;
        Ok(Self { steps: lambda.len(), lambda, alpha_bar, sigma, elbo_weight })
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn elbo_weight(&self, t: usize) -> f64 {
        self.elbo_weight[t - 1]
    }
}

/// Linear β schedule from `beta_min` to `beta_max` over `steps` steps.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule steps must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_min ≤ beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(&betas)
}

/// ELBO weights `w_t = (1 − λ_t²)² / (2 σ_t² λ_t² (1 − ᾱ_t))` for `t ≥ 2`, with
/// `w_1 := w_2`. A single-step schedule uses the large-variance value
/// `σ_1² = 1 − λ_1²`, giving `w_1 = 1 / (2 λ_1²)`.
pub fn elbo_weights_from(lambda: &[f64], alpha_bar: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    let steps = lambda.len();
    if steps == 1 {
        return Ok(vec![1.0 / (2.0 * lambda[0] * lambda[0])]);
    }
    let mut w = vec![0.0; steps];
    for i in 1..steps {
        let l2 = lambda[i] * lambda[i];
        let s2 = sigma[i] * sigma[i];
        if !(s2 > 0.0) {
            return Err(Error::Schedule(format!("sampler variance is zero at t={}", i + 1)));
        }
        w[i] = (1.0 - l2).powi(2) / (2.0 * s2 * l2 * (1.0 - alpha_bar[i]));
        if !(w[i].is_finite() && w[i] > 0.0) {
            return Err(Error::Schedule(format!("ELBO weight not positive and finite at t={}", i + 1)));
        }
    }
    w[0] = w[1];
    Ok(w)
}

pub fn elbo_weights(schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    elbo_weights_from(&schedule.lambda, &schedule.alpha_bar, &schedule.sigma)
}

/// `√ᾱ · x0 + √(1 − ᾱ) · eps`.
pub fn q_sample_with(alpha_bar: f64, x0: &[f64], eps: &[f64]) -> Vec<f64> {
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

pub fn q_sample(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
    q_sample_with(schedule.alpha_bar(t), x0, eps)
}

/// `(1/λ) (x_t − (1 − λ²)/√(1 − ᾱ) · eps)`.
pub fn posterior_mean_with(lambda: f64, alpha_bar: f64, x_t: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if lambda == 0.0 {
        return Err(Error::Schedule("λ_t = 0 in posterior mean".into()));
    }
    let shrink = 1.0 - lambda * lambda;
    let coef = if shrink == 0.0 { 0.0 } else { shrink / (1.0 - alpha_bar).sqrt() };
    Ok(x_t.iter().zip(eps).map(|(x, e)| (x - coef * e) / lambda).collect())
}

pub fn posterior_mean(schedule: &NoiseSchedule, x_t: &[f64], eps: &[f64], t: usize) -> Result<Vec<f64>> {
    posterior_mean_with(schedule.lambda(t), schedule.alpha_bar(t), x_t, eps)
}

/// One Monte Carlo draw of `(t̃, ε)` for the diffusion loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Draw `t̃ ~ Uniform{1..T}` then `ε ~ N(0, I)`, in that order, from `stream`.
pub fn draw_sample(schedule: &NoiseSchedule, data_dim: usize, stream: &RngStream) -> DiffusionSample {
    let mut rng = stream.rng();
    let t = rng.uniform_int(1, schedule.steps);
    let eps = rng.normal_vec(data_dim);
    DiffusionSample { t, eps }
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// MC estimate of `ℓ_t(θ, x0)`. Draw `s` uses `stream.index(s)` with the same
/// layout as [`draw_sample`]; the drawn timestep is replaced by `t`.
pub fn per_timestep_loss<D: Denoiser>(
    net: &D,
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    samples: usize,
    stream: &RngStream,
) -> Result<f64> {
    if !(1..=schedule.steps).contains(&t) {
        return Err(Error::Config(format!("timestep {t} outside 1..={}", schedule.steps)));
    }
    if samples == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut total = 0.0;
    for s in 1..=samples {
        let draw = draw_sample(schedule, x0.len(), &stream.index(s as u64));
        let x_t = q_sample(schedule, x0, t, &draw.eps);
        total += sq_err(&draw.eps, &net.predict(&x_t, t));
    }
    Ok(total / samples as f64)
}

/// MC estimate of the per-example diffusion loss `E_t̃ ℓ_t̃(θ, x0)`.
pub fn diffusion_loss<D: Denoiser>(
    net: &D,
    schedule: &NoiseSchedule,
    x0: &[f64],
    samples: usize,
    stream: &RngStream,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut total = 0.0;
    for s in 1..=samples {
        let draw = draw_sample(schedule, x0.len(), &stream.index(s as u64));
        let x_t = q_sample(schedule, x0, draw.t, &draw.eps);
        total += sq_err(&draw.eps, &net.predict(&x_t, draw.t));
    }
    Ok(total / samples as f64)
}

/// States `x^(T), …, x^(0)` of one ancestral sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Trajectory {
    /// `x^(t)` for `t = 0..=T`.
    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[self.states.len() - 1 - t]
    }

    pub fn sample(&self) -> &[f64] {
        self.states.last().expect("trajectory has T + 1 states")
    }
}

/// Ancestral DDPM sampling with the small-variance sampler.
pub fn ddpm_sample<D: Denoiser + ?Sized>(
    net: &D,
    schedule: &NoiseSchedule,
    seed: u64,
    record: bool,
) -> Result<(Vec<f64>, Option<Trajectory>)> {
    let stream = RngStream::new(seed).child("ddpm");
    let d = net.data_dim();
    let mut x = stream.child("prior").rng().normal_vec(d);
    let mut states = if record { vec![x.clone()] } else { Vec::new() };
    for t in (1..=schedule.steps).rev() {
        let eps = net.predict(&x, t);
        let mut next = posterior_mean(schedule, &x, &eps, t)?;
        if t > 1 {
            let sigma = schedule.sigma(t);
            let z = stream.index(t as u64).rng().normal_vec(d);
            next.iter_mut().zip(&z).for_each(|(v, zi)| *v += sigma * zi);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingDiverged { step: t });
        }
        x = next;
        if record {
            states.push(x.clone());
        }
    }
    let traj = record.then_some(Trajectory { states, seed });
    Ok((x, traj))
}

/// Convenience: the per-example loss gradient, re-exported for measurement code.
pub(crate) fn loss_gradient(
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    x0: &[f64],
    samples: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    crate::nn::per_example_train_gradient(net, schedule, x0, samples, stream)
}
