use serde::{Deserialize, Serialize};

use super::{draw_sample, loss_gradient, per_timestep_loss, posterior_mean, q_sample, diffusion_loss, NoiseSchedule, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Denoiser, EpsilonNet};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementKind {
    SimpleLoss,
    Elbo,
    TrajectoryLogProb,
    PerTimestepLoss { t: usize },
}

impl MeasurementKind {
    pub fn describe(&self) -> String {
        match self {
            MeasurementKind::SimpleLoss => "simple_loss".into(),
            MeasurementKind::Elbo => "elbo".into(),
            MeasurementKind::TrajectoryLogProb => "trajectory_log_prob".into(),
            MeasurementKind::PerTimestepLoss { t } => format!("per_timestep_loss:{t}"),
        }
    }
}

/// Scalar measurement `m(θ, x′)` with its Monte Carlo budget and stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFn {
    pub kind: MeasurementKind,
    pub samples: usize,
    pub stream: RngStream,
}

impl MeasurementFn {
    pub fn new(kind: MeasurementKind, samples: usize, stream: RngStream) -> Self {
        Self { kind, samples, stream }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if let MeasurementKind::PerTimestepLoss { t } = self.kind {
            if !(1..=schedule.steps).contains(&t) {
                return Err(Error::Config(format!("measurement timestep {t} outside 1..={}", schedule.steps)));
            }
        }
        if self.samples == 0 && self.kind != MeasurementKind::TrajectoryLogProb {
            return Err(Error::Config("measurement sample count must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a measurement is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Query {
    Point(Vec<f64>),
    Trajectory(Trajectory),
}

impl Query {
    /// The data point; for a trajectory, its final state `x^(0)`.
    pub fn point(&self) -> &[f64] {
        match self {
            Query::Point(x) => x,
            Query::Trajectory(tr) => tr.sample(),
        }
    }

    fn trajectory(&self, schedule: &NoiseSchedule) -> Result<&Trajectory> {
        match self {
            Query::Trajectory(tr) => {
                if tr.states.len() != schedule.steps + 1 {
                    return Err(Error::Payload(format!(
                        "trajectory has {} states, schedule needs {}",
                        tr.states.len(),
                        schedule.steps + 1
                    )));
                }
                if tr.states.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NumericInput("trajectory state".into()));
                }
                Ok(tr)
            }
            Query::Point(_) => Err(Error::Payload("trajectory log-probability needs a recorded trajectory".into())),
        }
    }
}

fn log_normal(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - sq / (2.0 * var)
}

fn elbo(net: &impl Denoiser, schedule: &NoiseSchedule, x0: &[f64], samples: usize, stream: &RngStream) -> f64 {
    let big_t = schedule.steps as f64;
    let mut total = 0.0;
    for s in 1..=samples {
        let draw = draw_sample(schedule, x0.len(), &stream.index(s as u64));
        let x_t = q_sample(schedule, x0, draw.t, &draw.eps);
        let err: f64 = draw.eps.iter().zip(net.predict(&x_t, draw.t)).map(|(e, y)| (e - y).powi(2)).sum();
        total += big_t * schedule.elbo_weight(draw.t) * err;
    }
    total / samples as f64
}

fn trajectory_log_prob(net: &impl Denoiser, schedule: &NoiseSchedule, tr: &Trajectory) -> Result<f64> {
    let big_t = schedule.steps;
    let x_top = tr.state(big_t);
    let mut total = log_normal(x_top, &vec![0.0; x_top.len()], 1.0);
    for t in 2..=big_t {
        let x_t = tr.state(t);
        let mu = posterior_mean(schedule, x_t, &net.predict(x_t, t), t)?;
        total += log_normal(tr.state(t - 1), &mu, schedule.sigma(t).powi(2));
    }
    Ok(total)
}

/// Evaluate `m(θ, query)`.
pub fn measure<D: Denoiser>(net: &D, schedule: &NoiseSchedule, f: &MeasurementFn, query: &Query) -> Result<f64> {
    f.validate(schedule)?;
    match f.kind {
        MeasurementKind::SimpleLoss => diffusion_loss(net, schedule, query.point(), f.samples, &f.stream),
        MeasurementKind::PerTimestepLoss { t } => {
            per_timestep_loss(net, schedule, query.point(), t, f.samples, &f.stream)
        }
        MeasurementKind::Elbo => Ok(elbo(net, schedule, query.point(), f.samples, &f.stream)),
        MeasurementKind::TrajectoryLogProb => trajectory_log_prob(net, schedule, query.trajectory(schedule)?),
    }
}

/// `∇_θ m(θ, query)`: Monte Carlo for the loss-type measurements with the
/// same frozen draws as [`measure`], exact backprop for the trajectory density.
pub fn measurement_gradient(net: &EpsilonNet, schedule: &NoiseSchedule, f: &MeasurementFn, query: &Query) -> Result<Vec<f64>> {
    f.validate(schedule)?;
    let p = net.param_count();
    match f.kind {
        MeasurementKind::SimpleLoss => loss_gradient(net, schedule, query.point(), f.samples, &f.stream),
        MeasurementKind::PerTimestepLoss { .. } | MeasurementKind::Elbo => {
            let x0 = query.point();
            let big_t = schedule.steps as f64;
            let mut acc = vec![0.0; p];
            for s in 1..=f.samples {
                let draw = draw_sample(schedule, x0.len(), &f.stream.index(s as u64));
                let (t, weight) = match f.kind {
                    MeasurementKind::PerTimestepLoss { t } => (t, 1.0),
                    _ => (draw.t, big_t * schedule.elbo_weight(draw.t)),
                };
                let x_t = q_sample(schedule, x0, t, &draw.eps);
                let fp = net.forward_pass(&x_t, t)?;
                let cot: Vec<f64> = fp.output.iter().zip(&draw.eps).map(|(y, e)| weight * 2.0 * (y - e)).collect();
                let g = net.backward(&fp, &cot).grad;
                acc.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi);
            }
            let n = f.samples as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            Ok(acc)
        }
        MeasurementKind::TrajectoryLogProb => {
            let tr = query.trajectory(schedule)?;
            let mut acc = vec![0.0; p];
            for t in 2..=schedule.steps {
                let x_t = tr.state(t);
                let fp = net.forward_pass(x_t, t)?;
                let mu = posterior_mean(schedule, x_t, &fp.output, t)?;
                let lam = schedule.lambda(t);
                let c = (1.0 - lam * lam) / (1.0 - schedule.alpha_bar(t)).sqrt();
                let k = -c / (lam * schedule.sigma(t).powi(2));
                let cot: Vec<f64> = tr.state(t - 1).iter().zip(&mu).map(|(x, m)| k * (x - m)).collect();
                let g = net.backward(&fp, &cot).grad;
                acc.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi);
            }
            Ok(acc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ddpm_sample, make_schedule};
    use crate::nn::{per_example_train_gradient, Activation, ArchConfig};

    fn net() -> EpsilonNet {
        EpsilonNet::build(&ArchConfig::mlp(2, 4, &[6], Activation::Silu), 21).unwrap()
    }

    fn fd(net: &EpsilonNet, f: impl Fn(&EpsilonNet) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..net.param_count())
            .map(|i| {
                let mut p = net.clone();
                p.params[i] += h;
                let up = f(&p);
                p.params[i] -= 2.0 * h;
                (up - f(&p)) / (2.0 * h)
            })
            .collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let n: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        n / b.iter().map(|y| y * y).sum::<f64>().sqrt()
    }

    #[test]
    fn constant_elbo_weights_scale_simple_loss() {
        let mut s = make_schedule(12, 1e-3, 0.2).unwrap();
        let c = 0.37;
        s.elbo_weight.iter_mut().for_each(|w| *w = c);
        let st = RngStream::new(2).child("m");
        let q = Query::Point(vec![0.3, -0.8]);
        let e = measure(&net(), &s, &MeasurementFn::new(MeasurementKind::Elbo, 30, st.clone()), &q).unwrap();
        let l = measure(&net(), &s, &MeasurementFn::new(MeasurementKind::SimpleLoss, 30, st), &q).unwrap();
        assert!((e - c * 12.0 * l).abs() < 1e-12 * e.abs());
    }

    #[test]
    fn simple_loss_delegates() {
        let s = make_schedule(12, 1e-3, 0.2).unwrap();
        let st = RngStream::new(3);
        let x0 = vec![0.1, 0.4];
        let m = measure(&net(), &s, &MeasurementFn::new(MeasurementKind::SimpleLoss, 9, st.clone()), &Query::Point(x0.clone()))
            .unwrap();
        assert_eq!(m, diffusion_loss(&net(), &s, &x0, 9, &st).unwrap());
        let g = measurement_gradient(&net(), &s, &MeasurementFn::new(MeasurementKind::SimpleLoss, 9, st.clone()), &Query::Point(x0.clone()))
            .unwrap();
        assert_eq!(g, per_example_train_gradient(&net(), &s, &x0, 9, &st).unwrap());
    }

    #[test]
    fn trajectory_log_prob_by_hand() {
        struct Const(f64);
        impl Denoiser for Const {
            fn data_dim(&self) -> usize {
                1
            }
            fn predict(&self, _: &[f64], _: usize) -> Vec<f64> {
                vec![self.0]
            }
        }
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        let tr = Trajectory { states: vec![vec![0.9], vec![0.4], vec![0.35]], seed: 0 };
        let f = MeasurementFn::new(MeasurementKind::TrajectoryLogProb, 1, RngStream::new(0));
        let got = measure(&Const(0.3), &s, &f, &Query::Trajectory(tr)).unwrap();
        // λ_2 = √0.8, ᾱ_2 = 0.72, σ_2² = 1/14
        let lam = 0.8f64.sqrt();
        let mu = (0.9 - 0.2 / 0.28f64.sqrt() * 0.3) / lam;
        let var = 1.0 / 14.0;
        let pi2 = 2.0 * std::f64::consts::PI;
        let expected = -0.5 * pi2.ln() - 0.81 / 2.0 + (-0.5 * (pi2 * var).ln() - (0.4 - mu).powi(2) / (2.0 * var));
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn trajectory_needs_payload() {
        let s = make_schedule(5, 1e-3, 0.2).unwrap();
        let f = MeasurementFn::new(MeasurementKind::TrajectoryLogProb, 1, RngStream::new(0));
        let q = Query::Point(vec![0.0, 0.0]);
        assert!(matches!(measure(&net(), &s, &f, &q), Err(Error::Payload(_))));
        assert!(matches!(measurement_gradient(&net(), &s, &f, &q), Err(Error::Payload(_))));
    }

    #[test]
    fn per_timestep_range_checked() {
        let s = make_schedule(5, 1e-3, 0.2).unwrap();
        let f = MeasurementFn::new(MeasurementKind::PerTimestepLoss { t: 6 }, 3, RngStream::new(0));
        assert!(measure(&net(), &s, &f, &Query::Point(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = make_schedule(10, 1e-3, 0.2).unwrap();
        let n = net();
        let (_, tr) = ddpm_sample(&n, &s, 7, true).unwrap();
        let traj = Query::Trajectory(tr.unwrap());
        let point = Query::Point(vec![0.6, -0.2]);
        let st = RngStream::new(4).child("q");
        for (kind, q) in [
            (MeasurementKind::Elbo, &point),
            (MeasurementKind::PerTimestepLoss { t: 3 }, &point),
            (MeasurementKind::SimpleLoss, &traj),
            (MeasurementKind::TrajectoryLogProb, &traj),
        ] {
            let f = MeasurementFn::new(kind, 5, st.clone());
            let g = measurement_gradient(&n, &s, &f, q).unwrap();
            let num = fd(&n, |m| measure(m, &s, &f, q).unwrap());
            assert!(rel(&g, &num) < 1e-5, "{kind:?}: {}", rel(&g, &num));
            assert_eq!(g, measurement_gradient(&n, &s, &f, q).unwrap());
        }
    }
}
