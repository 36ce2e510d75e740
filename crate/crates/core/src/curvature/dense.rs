use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Backend, CurvatureMeta, CurvatureState, DenseCurvature, FisherTargets, GgnKind, Payload, ProjectedCurvature, Sharing};
use crate::data::{sorted_by_id, Example};
use crate::diffusion::{draw_sample, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{per_example_train_gradient, EpsilonNet};
use crate::par;
use crate::rng::RngStream;

/// Largest parameter count accepted by the dense oracle.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// i.i.d. `N(0, 1/d_proj)` entries.
    #[default]
    Gaussian,
    /// `P = I` with `d_proj = d_param`; a test hook.
    Identity,
}

fn dense_meta(net: &EpsilonNet, backend: Backend, kind: GgnKind, n: usize, samples: usize, stream: &RngStream) -> CurvatureMeta {
    CurvatureMeta {
        backend,
        ggn_kind: kind,
        sharing: Sharing::Expand,
        targets: FisherTargets::Exact,
        n,
        samples,
        correction_samples: 0,
        streams: vec![stream.describe()],
        net_hash: net.fingerprint(),
        param_count: net.param_count(),
    }
}

/// Explicit `d_param × d_param` GGN. The model split is
/// `(2/N) Σ_n (1/S) Σ_s J_nsᵀ J_ns` over the same frozen draws as K-FAC; the
/// loss split is `(1/N) Σ_n g_n g_nᵀ` with `S`-sample-averaged gradients.
pub fn dense_ggn(net: &EpsilonNet, schedule: &NoiseSchedule, dataset: &[Example], kind: GgnKind, samples: usize, stream: &RngStream) -> Result<CurvatureState> {
    let p = net.param_count();
    if p > DENSE_LIMIT {
        return Err(Error::OracleScale(format!("dense GGN needs at most {DENSE_LIMIT} parameters, network has {p}")));
    }
    if dataset.is_empty() || samples == 0 {
        return Err(Error::Config("dense GGN needs a nonempty dataset and at least one sample".into()));
    }
    let order = sorted_by_id(dataset)?;
    let per_example = |ex: &&Example| -> Result<DMatrix<f64>> {
        let ex_stream = stream.index(ex.id);
        let mut m = DMatrix::zeros(p, p);
        match kind {
            GgnKind::Model => {
                for s in 1..=samples {
                    let draw = draw_sample(schedule, ex.x.len(), &ex_stream.index(s as u64));
                    let x_t = q_sample(schedule, &ex.x, draw.t, &draw.eps);
                    for row in net.jacobian(&x_t, draw.t)? {
                        let r = DVector::from_vec(row);
                        m.ger(2.0 / samples as f64, &r, &r, 1.0);
                    }
                }
            }
            GgnKind::Loss => {
                let g = DVector::from_vec(per_example_train_gradient(net, schedule, &ex.x, samples, &ex_stream)?);
                m.ger(1.0, &g, &g, 1.0);
            }
        }
        Ok(m)
    };
    let sum = par::reduce(&order, per_example, |a, b| *a += b)?.expect("dataset is nonempty");
    let matrix = sum / dataset.len() as f64;
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    Ok(CurvatureState {
        meta: dense_meta(net, Backend::DenseGgn, kind, dataset.len(), samples, stream),
        payload: Payload::Dense(DenseCurvature::new(matrix)?),
    })
}

/// Random projection matrix with rows drawn from `proj_seed`.
pub fn projection_matrix(d_proj: usize, d_param: usize, proj_seed: u64) -> DMatrix<f64> {
    let root = RngStream::new(proj_seed).child("projection");
    let scale = 1.0 / (d_proj as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..d_proj).map(|r| root.index(r as u64).rng().normal_vec(d_param)).collect();
    DMatrix::from_fn(d_proj, d_param, |r, c| rows[r][c] * scale)
}

/// TRAK-style empirical Fisher in a random projection of gradient space.
#[allow(clippy::too_many_arguments)]
pub fn projected_ef(
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    dataset: &[Example],
    d_proj: usize,
    proj_seed: u64,
    projection: Projection,
    samples: usize,
    stream: &RngStream,
) -> Result<CurvatureState> {
    let p = net.param_count();
    if d_proj == 0 {
        return Err(Error::Config("d_proj must be at least 1".into()));
    }
    if projection == Projection::Identity && d_proj != p {
        return Err(Error::Config(format!("identity projection needs d_proj = {p}")));
    }
    if dataset.is_empty() || samples == 0 {
        return Err(Error::Config("projected EF needs a nonempty dataset and at least one sample".into()));
    }
    let proj = match projection {
        Projection::Gaussian => Some(projection_matrix(d_proj, p, proj_seed)),
        Projection::Identity => None,
    };
    let project = |g: Vec<f64>| -> Vec<f64> {
        match &proj {
            None => g,
            Some(m) => (m * DVector::from_vec(g)).as_slice().to_vec(),
        }
    };
    let grads = par::map(dataset, |ex| {
        Ok(project(per_example_train_gradient(net, schedule, &ex.x, samples, &stream.index(ex.id))?))
    })?;
    let order = sorted_by_id(dataset)?;
    let pos: std::collections::HashMap<u64, usize> = dataset.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    let sum = par::reduce(
        &order,
        |ex| {
            let g = DVector::from_column_slice(&grads[pos[&ex.id]]);
            Ok(&g * g.transpose())
        },
        |a, b| *a += b,
    )?
    .expect("dataset is nonempty");
    let h = sum / dataset.len() as f64;
    let h = (&h + h.transpose()) * 0.5;
    let grad_matrix = DMatrix::from_fn(dataset.len(), d_proj, |r, c| grads[r][c]);
    let mut meta = dense_meta(net, Backend::ProjectedEf, GgnKind::Loss, dataset.len(), samples, stream);
    meta.streams.push(format!("projection:{proj_seed}"));
    Ok(CurvatureState {
        meta,
        payload: Payload::Projected(ProjectedCurvature {
            seed: proj_seed,
            d_proj,
            projection,
            p: proj,
            grads: grad_matrix,
            train_ids: dataset.iter().map(|e| e.id).collect(),
            h: DenseCurvature::new(h)?,
        }),
    })
}
