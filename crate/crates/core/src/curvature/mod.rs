//! Curvature approximations of the diffusion GGN and damped solves.
//!
//! Per-layer blocks are indexed like the network's parameters: the flat
//! block of a layer with `d_out` outputs and `d_in` bias-augmented inputs is
//! the column-major `d_out × d_in` matrix `V`, so the K-FAC block acts on it
//! as `V ↦ B V A` and equals `A ⊗ B` in flat coordinates.

mod dense;
mod kfac;

pub use dense::{dense_ggn, projected_ef, Projection};
pub use kfac::{accumulate_kfac, ekfac_correct, KfacConfig};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::EpsilonNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Kfac,
    Ekfac,
    DenseGgn,
    ProjectedEf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GgnKind {
    /// Linearise the network; the squared error is the convex outer part.
    Model,
    /// Empirical Fisher of the training loss.
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    Expand,
    Reduce,
}

/// Backward targets for the model-split GGN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FisherTargets {
    /// `ε_mod = stopgrad(ε_θ) + η` with `η ~ N(0, I)`: the MC-Fisher.
    #[default]
    Sampled,
    /// Sum over output coordinates (one backward pass per coordinate), which
    /// is the expectation over `η` in closed form.
    Exact,
    /// `ε_mod := ε`, the training noise. Makes the model-split accumulation
    /// coincide with the loss-split one.
    TrainingNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureMeta {
    pub backend: Backend,
    pub ggn_kind: GgnKind,
    pub sharing: Sharing,
    pub targets: FisherTargets,
    pub n: usize,
    pub samples: usize,
    /// Sample count of the eigenvalue-correction pass (EK-FAC only).
    pub correction_samples: usize,
    /// Random streams used, as path strings.
    pub streams: Vec<String>,
    pub net_hash: String,
    pub param_count: usize,
}

/// Kronecker factors of one layer and their eigendecompositions.
#[derive(Debug, Clone, PartialEq)]
pub struct KronLayer {
    /// `d_in × d_in`
    pub a: DMatrix<f64>,
    /// `d_out × d_out`
    pub b: DMatrix<f64>,
    pub q_a: DMatrix<f64>,
    pub eval_a: DVector<f64>,
    pub q_b: DMatrix<f64>,
    pub eval_b: DVector<f64>,
    /// EK-FAC eigenvalues, `d_out × d_in` in the `(Q_B, Q_A)` basis.
    pub corrected: Option<DMatrix<f64>>,
}

fn eigen(m: &DMatrix<f64>, layer: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen(layer));
    }
    let e = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000).ok_or(Error::Eigen(layer))?;
    let evals = e.eigenvalues.map(|v| v.max(0.0));
    Ok((e.eigenvectors, evals))
}

impl KronLayer {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, layer: usize) -> Result<Self> {
        let (q_a, eval_a) = eigen(&a, layer)?;
        let (q_b, eval_b) = eigen(&b, layer)?;
        Ok(Self { a, b, q_a, eval_a, q_b, eval_b, corrected: None })
    }

    pub fn d_in(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.b.nrows()
    }

    /// Eigenvalues of the block in the Kronecker eigenbasis, `d_out × d_in`.
    pub fn spectrum(&self) -> DMatrix<f64> {
        match &self.corrected {
            Some(c) => c.clone(),
            None => &self.eval_b * self.eval_a.transpose(),
        }
    }

    /// The block as an explicit `d_in·d_out` square matrix.
    pub fn block(&self) -> DMatrix<f64> {
        match &self.corrected {
            None => self.a.kronecker(&self.b),
            Some(c) => {
                let q = self.q_a.kronecker(&self.q_b);
                let d = DVector::from_column_slice(c.as_slice());
                &q * DMatrix::from_diagonal(&d) * q.transpose()
            }
        }
    }

    fn rotate(&self, v: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_column_slice(self.d_out(), self.d_in(), v);
        self.q_b.transpose() * m * &self.q_a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCurvature {
    pub matrix: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub evals: DVector<f64>,
}

impl DenseCurvature {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (q, evals) = eigen(&matrix, 0)?;
        Ok(Self { matrix, q, evals })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCurvature {
    pub seed: u64,
    pub d_proj: usize,
    pub projection: Projection,
    /// `d_proj × d_param`; `None` for the identity projection.
    pub p: Option<DMatrix<f64>>,
    /// Projected per-example gradients, one row per training example.
    pub grads: DMatrix<f64>,
    pub train_ids: Vec<u64>,
    /// `(1/N) Σ (P g)(P g)ᵀ`
    pub h: DenseCurvature,
}

impl ProjectedCurvature {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        match &self.p {
            None => v.to_vec(),
            Some(p) => (p * DVector::from_column_slice(v)).as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Kron(Vec<KronLayer>),
    Dense(DenseCurvature),
    Projected(ProjectedCurvature),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureState {
    pub meta: CurvatureMeta,
    pub payload: Payload,
}

fn check_damping(damping: f64) -> Result<()> {
    if !(damping > 0.0 && damping.is_finite()) {
        return Err(Error::Config(format!("damping must be positive, got {damping}")));
    }
    Ok(())
}

impl CurvatureState {
    pub fn check_net(&self, net: &EpsilonNet) -> Result<()> {
        let hash = net.fingerprint();
        if hash != self.meta.net_hash {
            return Err(Error::Provenance(format!(
                "curvature was built for network {} but got {}",
                &self.meta.net_hash[..12.min(self.meta.net_hash.len())],
                &hash[..12]
            )));
        }
        Ok(())
    }

    fn input_len(&self) -> Vec<usize> {
        match &self.payload {
            Payload::Kron(_) | Payload::Dense(_) => vec![self.meta.param_count],
            Payload::Projected(p) => vec![self.meta.param_count, p.d_proj],
        }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if !self.input_len().contains(&v.len()) {
            return Err(Error::Shape(format!("vector of length {} for curvature of size {:?}", v.len(), self.input_len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericInput("vector to precondition".into()));
        }
        Ok(())
    }

    /// `(H + λI)⁻¹ v`. For the projected backend the result lives in the
    /// projected space; `v` may be given in parameter or projected space.
    pub fn precondition(&self, damping: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_damping(damping)?;
        self.check_len(v)?;
        Ok(match &self.payload {
            Payload::Kron(layers) => {
                let mut out = Vec::with_capacity(v.len());
                let mut off = 0;
                for layer in layers {
                    let len = layer.d_in() * layer.d_out();
                    let mut r = layer.rotate(&v[off..off + len]);
                    r.zip_apply(&layer.spectrum(), |x, s| *x /= s + damping);
                    let back = &layer.q_b * r * layer.q_a.transpose();
                    out.extend_from_slice(back.as_slice());
                    off += len;
                }
                out
            }
            Payload::Dense(d) => dense_solve(d, damping, v),
            Payload::Projected(p) => {
                let pv = if v.len() == p.d_proj && v.len() != self.meta.param_count { v.to_vec() } else { p.project(v) };
                dense_solve(&p.h, damping, &pv)
            }
        })
    }

    /// Half-whitened coordinates `w(v) = (D + λ)^{-1/2} Qᵀ v` in the
    /// eigenbasis of the damped operator, so that
    /// `w(u) · w(v) = uᵀ (H + λI)⁻¹ v`.
    pub fn whiten(&self, damping: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_damping(damping)?;
        let mut c = self.eigen_coords(v)?;
        self.scale_coords(damping, &mut c);
        Ok(c)
    }

    /// `Qᵀ v` (after projection for the projected backend); independent of
    /// the damping, so sweeps can reuse it.
    pub fn eigen_coords(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(match &self.payload {
            Payload::Kron(layers) => {
                let mut out = Vec::with_capacity(v.len());
                let mut off = 0;
                for layer in layers {
                    let len = layer.d_in() * layer.d_out();
                    out.extend_from_slice(layer.rotate(&v[off..off + len]).as_slice());
                    off += len;
                }
                out
            }
            Payload::Dense(d) => (d.q.transpose() * DVector::from_column_slice(v)).as_slice().to_vec(),
            Payload::Projected(p) => {
                let pv = if v.len() == p.d_proj && v.len() != self.meta.param_count { v.to_vec() } else { p.project(v) };
                (p.h.q.transpose() * DVector::from_vec(pv)).as_slice().to_vec()
            }
        })
    }

    /// Divide eigen-coordinates by `√(d + λ)` in place.
    pub fn scale_coords(&self, damping: f64, coords: &mut [f64]) {
        let apply = |c: &mut [f64], spec: &[f64]| {
            for (x, s) in c.iter_mut().zip(spec) {
                *x /= (s + damping).sqrt();
            }
        };
        match &self.payload {
            Payload::Kron(layers) => {
                let mut off = 0;
                for layer in layers {
                    let spec = layer.spectrum();
                    let len = spec.len();
                    apply(&mut coords[off..off + len], spec.as_slice());
                    off += len;
                }
            }
            Payload::Dense(d) => apply(coords, d.evals.as_slice()),
            Payload::Projected(p) => apply(coords, p.h.evals.as_slice()),
        }
    }

    /// Lengths of the whitened segments (one per layer for Kronecker states).
    pub fn segments(&self) -> Vec<usize> {
        match &self.payload {
            Payload::Kron(layers) => layers.iter().map(|l| l.d_in() * l.d_out()).collect(),
            Payload::Dense(_) => vec![self.meta.param_count],
            Payload::Projected(p) => vec![p.d_proj],
        }
    }

    /// The implied operator in parameter space (block diagonal for Kronecker
    /// states). Intended for small networks.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.payload {
            Payload::Kron(layers) => {
                let p = self.meta.param_count;
                let mut m = DMatrix::zeros(p, p);
                let mut off = 0;
                for layer in layers {
                    let blk = layer.block();
                    let n = blk.nrows();
                    m.view_mut((off, off), (n, n)).copy_from(&blk);
                    off += n;
                }
                m
            }
            Payload::Dense(d) => d.matrix.clone(),
            Payload::Projected(p) => p.h.matrix.clone(),
        }
    }

    pub fn describe(&self) -> String {
        let m = &self.meta;
        format!("{:?}/{:?}/{:?}/{:?}/N={}/S={}/S2={}", m.backend, m.ggn_kind, m.sharing, m.targets, m.n, m.samples, m.correction_samples)
            .to_lowercase()
    }
}

fn dense_solve(d: &DenseCurvature, damping: f64, v: &[f64]) -> Vec<f64> {
    let mut r = d.q.transpose() * DVector::from_column_slice(v);
    r.zip_apply(&d.evals, |x, s| *x /= s + damping);
    (&d.q * r).as_slice().to_vec()
}

/// Symmetric-PSD check used by tests and artifact loading.
pub fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    let sym = (m - m.transpose()).amax() <= 1e-10 * m.amax().max(1.0);
    let trace = m.trace().abs().max(1e-300);
    let min = m.clone().symmetric_eigenvalues().min();
    sym && min >= -1e-9 * trace
}
