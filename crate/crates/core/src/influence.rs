//! Influence scores: preconditioned inner products between measurement
//! gradients and per-example training gradients.
//!
//! Both sides are mapped to half-whitened coordinates of the damped
//! curvature (see [`CurvatureState::whiten`]), so a score is the plain dot
//! product `w(∇m_q) · w(∇ℓ_j) = ∇m_qᵀ (H + λI)⁻¹ ∇ℓ_j`. The single-use and
//! cached pipelines compute exactly the same floating-point operations.
//!
//! Scores carry no leading minus: a positive score predicts that removing
//! the training example increases the measurement.

use serde::{Deserialize, Serialize};

use crate::curvature::CurvatureState;
use crate::data::Example;
use crate::diffusion::{measurement_gradient, MeasurementFn, NoiseSchedule, Query};
use crate::error::{Error, Result};
use crate::nn::{per_example_train_gradient, EpsilonNet};
use crate::par;
use crate::rng::RngStream;

/// A measurement to attribute, evaluated on a query payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub id: u64,
    pub query: Query,
    pub measurement: MeasurementFn,
}

/// `∇_θ m(θ, query)`.
pub fn query_gradient(net: &EpsilonNet, schedule: &NoiseSchedule, item: &QueryItem) -> Result<Vec<f64>> {
    measurement_gradient(net, schedule, &item.measurement, &item.query)
}

/// Per-example training-loss gradients; example `j` uses `stream.index(id_j)`.
pub fn train_gradients(net: &EpsilonNet, schedule: &NoiseSchedule, dataset: &[Example], samples: usize, stream: &RngStream) -> Result<Vec<Vec<f64>>> {
    par::map(dataset, |ex| per_example_train_gradient(net, schedule, &ex.x, samples, &stream.index(ex.id)))
}

/// One int8 vector with one absmax scale per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedVec {
    pub payload: Vec<i8>,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedGradients {
    pub codec: String,
    pub segments: Vec<usize>,
    pub vectors: Vec<CompressedVec>,
}

pub const CODEC: &str = "int8-absmax";

/// Symmetric absmax int8 quantisation with one scale `max|v|/127` per segment.
pub fn quantize(vecs: &[Vec<f64>], segments: &[usize]) -> Result<CompressedGradients> {
    let total: usize = segments.iter().sum();
    let vectors = vecs
        .iter()
        .map(|v| {
            if v.len() != total {
                return Err(Error::Shape(format!("vector of length {} for segments totalling {total}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericInput("vector to quantise".into()));
            }
            let mut payload = Vec::with_capacity(total);
            let mut scales = Vec::with_capacity(segments.len());
            let mut off = 0;
            for &len in segments {
                let seg = &v[off..off + len];
                let s = seg.iter().fold(0.0f64, |m, x| m.max(x.abs())) / 127.0;
                scales.push(s);
                payload.extend(seg.iter().map(|x| if s == 0.0 { 0 } else { (x / s).round().clamp(-127.0, 127.0) as i8 }));
                off += len;
            }
            Ok(CompressedVec { payload, scales })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompressedGradients { codec: CODEC.into(), segments: segments.to_vec(), vectors })
}

pub fn dequantize(c: &CompressedGradients) -> Vec<Vec<f64>> {
    c.vectors
        .iter()
        .map(|cv| {
            let mut out = Vec::with_capacity(cv.payload.len());
            let mut off = 0;
            for (&len, &s) in c.segments.iter().zip(&cv.scales) {
                out.extend(cv.payload[off..off + len].iter().map(|&q| q as f64 * s));
                off += len;
            }
            out
        })
        .collect()
}

fn roundtrip(vecs: Vec<Vec<f64>>, segments: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(dequantize(&quantize(&vecs, segments)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub damping: f64,
    pub curvature: String,
    pub measurements: Vec<String>,
    pub train_samples: usize,
    pub train_stream: String,
    pub compression: Option<String>,
    pub net_hash: String,
}

/// `Q × N` grid of influence scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub scores: Vec<Vec<f64>>,
    pub query_ids: Vec<u64>,
    pub train_ids: Vec<u64>,
    pub meta: ScoreMeta,
}

impl ScoreMatrix {
    /// Positions of the `k` highest scores of row `q`; ties go to the lower
    /// training position.
    pub fn top_k(&self, q: usize, k: usize) -> Vec<usize> {
        let row = &self.scores[q];
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }

    /// CSV with a `#` metadata line, a header row and one row per query.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut s = format!(
            "# config_hash={config_hash} damping={} curvature={} compression={}\n",
            self.meta.damping,
            self.meta.curvature,
            self.meta.compression.as_deref().unwrap_or("none")
        );
        s.push_str("query_id");
        for id in &self.train_ids {
            s.push_str(&format!(",train_{id}"));
        }
        s.push('\n');
        for (qid, row) in self.query_ids.iter().zip(&self.scores) {
            s.push_str(&qid.to_string());
            for v in row {
                s.push_str(&format!(",{v:e}"));
            }
            s.push('\n');
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grid(queries: &[Vec<f64>], train: &[Vec<f64>]) -> Vec<Vec<f64>> {
    queries.iter().map(|q| train.iter().map(|g| dot(q, g)).collect()).collect()
}

/// Training-gradient settings shared by both pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainGradSpec {
    pub samples: usize,
    pub stream: RngStream,
}

fn whitened_queries(net: &EpsilonNet, schedule: &NoiseSchedule, state: &CurvatureState, damping: f64, queries: &[QueryItem]) -> Result<Vec<Vec<f64>>> {
    par::map(queries, |q| state.whiten(damping, &query_gradient(net, schedule, q)?))
}

fn whitened_train(net: &EpsilonNet, schedule: &NoiseSchedule, state: &CurvatureState, damping: f64, dataset: &[Example], spec: &TrainGradSpec) -> Result<Vec<Vec<f64>>> {
    par::map(dataset, |ex| {
        let g = per_example_train_gradient(net, schedule, &ex.x, spec.samples, &spec.stream.index(ex.id))?;
        state.whiten(damping, &g)
    })
}

fn score_meta(net: &EpsilonNet, state: &CurvatureState, damping: f64, queries: &[QueryItem], spec: &TrainGradSpec, compress: bool) -> ScoreMeta {
    ScoreMeta {
        damping,
        curvature: state.describe(),
        measurements: queries
            .iter()
            .map(|q| format!("{}/S={}/{}", q.measurement.kind.describe(), q.measurement.samples, q.measurement.stream.describe()))
            .collect(),
        train_samples: spec.samples,
        train_stream: spec.stream.describe(),
        compression: compress.then(|| CODEC.to_string()),
        net_hash: net.fingerprint(),
    }
}

/// Single-use pipeline: precondition the query gradients once, optionally
/// compress them, then sweep over training examples.
#[allow(clippy::too_many_arguments)]
pub fn influence_scores(
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    state: &CurvatureState,
    damping: f64,
    queries: &[QueryItem],
    dataset: &[Example],
    spec: &TrainGradSpec,
    compress: bool,
) -> Result<ScoreMatrix> {
    let mut out = influence_sweep(net, schedule, state, &[damping], queries, dataset, spec, compress)?;
    Ok(out.remove(0))
}

/// [`influence_scores`] for several damping values, sharing the gradient and
/// eigenbasis work. Each matrix is bitwise equal to a single-damping call.
#[allow(clippy::too_many_arguments)]
pub fn influence_sweep(
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    state: &CurvatureState,
    dampings: &[f64],
    queries: &[QueryItem],
    dataset: &[Example],
    spec: &TrainGradSpec,
    compress: bool,
) -> Result<Vec<ScoreMatrix>> {
    state.check_net(net)?;
    for &d in dampings {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Config(format!("damping must be positive, got {d}")));
        }
    }
    let q_coords = par::map(queries, |q| state.eigen_coords(&query_gradient(net, schedule, q)?))?;
    let t_coords = par::map(dataset, |ex| {
        state.eigen_coords(&per_example_train_gradient(net, schedule, &ex.x, spec.samples, &spec.stream.index(ex.id))?)
    })?;
    let segments = state.segments();
    dampings
        .iter()
        .map(|&lam| {
            let scale = |coords: &[Vec<f64>]| -> Vec<Vec<f64>> {
                coords
                    .iter()
                    .map(|c| {
                        let mut c = c.clone();
                        state.scale_coords(lam, &mut c);
                        c
                    })
                    .collect()
            };
            let mut yq = scale(&q_coords);
            if compress {
                yq = roundtrip(yq, &segments)?;
            }
            let scores = grid(&yq, &scale(&t_coords));
            finish(scores, queries, dataset, score_meta(net, state, lam, queries, spec, compress))
        })
        .collect()
}

fn finish(scores: Vec<Vec<f64>>, queries: &[QueryItem], dataset: &[Example], meta: ScoreMeta) -> Result<ScoreMatrix> {
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite influence score".into()));
    }
    Ok(ScoreMatrix {
        scores,
        query_ids: queries.iter().map(|q| q.id).collect(),
        train_ids: dataset.iter().map(|e| e.id).collect(),
        meta,
    })
}

/// Preconditioned (optionally compressed) training gradients for repeated
/// querying.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCache {
    pub damping: f64,
    pub curvature: String,
    pub net_hash: String,
    pub spec: TrainGradSpec,
    pub train_ids: Vec<u64>,
    pub vectors: CachedVectors,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CachedVectors {
    Full(Vec<Vec<f64>>),
    Compressed(CompressedGradients),
}

pub fn build_train_cache(
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    state: &CurvatureState,
    damping: f64,
    dataset: &[Example],
    spec: &TrainGradSpec,
    compress: bool,
) -> Result<TrainCache> {
    state.check_net(net)?;
    let w = whitened_train(net, schedule, state, damping, dataset, spec)?;
    let vectors = if compress { CachedVectors::Compressed(quantize(&w, &state.segments())?) } else { CachedVectors::Full(w) };
    Ok(TrainCache {
        damping,
        curvature: state.describe(),
        net_hash: net.fingerprint(),
        spec: spec.clone(),
        train_ids: dataset.iter().map(|e| e.id).collect(),
        vectors,
    })
}

/// Score incoming queries against a cache.
pub fn score_queries(cache: &TrainCache, net: &EpsilonNet, schedule: &NoiseSchedule, state: &CurvatureState, queries: &[QueryItem]) -> Result<ScoreMatrix> {
    if cache.net_hash != net.fingerprint() || cache.curvature != state.describe() || state.meta.net_hash != cache.net_hash {
        return Err(Error::Provenance("training-gradient cache was built for a different network or curvature".into()));
    }
    let yq = whitened_queries(net, schedule, state, cache.damping, queries)?;
    let train = match &cache.vectors {
        CachedVectors::Full(v) => v.clone(),
        CachedVectors::Compressed(c) => dequantize(c),
    };
    let scores = grid(&yq, &train);
    let compressed = matches!(cache.vectors, CachedVectors::Compressed(_));
    let meta = score_meta(net, state, cache.damping, queries, &cache.spec, compressed);
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite influence score".into()));
    }
    Ok(ScoreMatrix { scores, query_ids: queries.iter().map(|q| q.id).collect(), train_ids: cache.train_ids.clone(), meta })
}

/// Predicted change of each measurement when the examples with ids in
/// `removed` are down-weighted by `fraction` (1 = removal):
/// `(fraction/N) Σ_{j ∈ removed} score[q][j]`.
pub fn predict_subset_delta(sm: &ScoreMatrix, removed: &[u64], n: usize, fraction: f64) -> Result<Vec<f64>> {
    let pos: std::collections::HashMap<u64, usize> = sm.train_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let cols = removed
        .iter()
        .map(|id| pos.get(id).copied().ok_or_else(|| Error::Index(format!("training id {id} not in score matrix"))))
        .collect::<Result<Vec<_>>>()?;
    let eps = fraction / n as f64;
    Ok(sm.scores.iter().map(|row| eps * cols.iter().map(|&c| row[c]).sum::<f64>()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{accumulate_kfac, ekfac_correct, projected_ef, dense_ggn, FisherTargets, GgnKind, KfacConfig, Projection, Sharing};
    use crate::data::{generate, with_ids, DatasetSpec};
    use crate::diffusion::{make_schedule, MeasurementKind};
    use crate::nn::{Activation, ArchConfig};

    struct Fixture {
        net: EpsilonNet,
        sched: NoiseSchedule,
        data: Vec<Example>,
        state: CurvatureState,
        queries: Vec<QueryItem>,
        spec: TrainGradSpec,
    }

    fn fixture() -> Fixture {
        let sched = make_schedule(20, 1e-3, 0.2).unwrap();
        let data = with_ids(&generate(&DatasetSpec::default_mixture(12, 1)).unwrap());
        let net = EpsilonNet::build(&ArchConfig::mlp(2, 4, &[6], Activation::Silu), 3).unwrap();
        let cfg = KfacConfig { ggn_kind: GgnKind::Model, sharing: Sharing::Expand, samples: 3, targets: FisherTargets::Sampled };
        let k = accumulate_kfac(&net, &sched, &data, &cfg, &RngStream::new(1).child("kfac")).unwrap();
        let state = ekfac_correct(&k, &net, &sched, &data, 3, &RngStream::new(1).child("ekfac")).unwrap();
        let queries = (0..3)
            .map(|i| QueryItem {
                id: i,
                query: Query::Point(vec![0.5 - i as f64, 0.3 * i as f64]),
                measurement: MeasurementFn::new(MeasurementKind::SimpleLoss, 4, RngStream::new(2).child("query").index(i)),
            })
            .collect();
        Fixture { net, sched, data, state, queries, spec: TrainGradSpec { samples: 3, stream: RngStream::new(1).child("train") } }
    }

    #[test]
    fn quantize_roundtrip_bounds() {
        let v = vec![vec![0.0; 5], vec![1e-3, -2e-3, 5.0, -7.5, 0.1]];
        let c = quantize(&v, &[2, 3]).unwrap();
        let back = dequantize(&c);
        assert_eq!(back[0], v[0]);
        for (cv, (orig, rec)) in c.vectors.iter().zip(v.iter().zip(&back)) {
            for (i, (a, b)) in orig.iter().zip(rec).enumerate() {
                let s = cv.scales[if i < 2 { 0 } else { 1 }];
                assert!((a - b).abs() <= s / 2.0 + 1e-18);
            }
        }
        assert!(quantize(&[vec![f64::NAN, 0.0]], &[2]).is_err());
    }

    #[test]
    fn matches_naive_pairwise_loop() {
        let f = fixture();
        let sm = influence_scores(&f.net, &f.sched, &f.state, 1e-3, &f.queries, &f.data, &f.spec, false).unwrap();
        for (qi, q) in f.queries.iter().enumerate() {
            for (j, ex) in f.data.iter().enumerate() {
                let gq = query_gradient(&f.net, &f.sched, q).unwrap();
                let gj = per_example_train_gradient(&f.net, &f.sched, &ex.x, 3, &f.spec.stream.index(ex.id)).unwrap();
                let naive = dot(&f.state.whiten(1e-3, &gq).unwrap(), &f.state.whiten(1e-3, &gj).unwrap());
                assert_eq!(sm.scores[qi][j], naive);
                let y = f.state.precondition(1e-3, &gq).unwrap();
                assert!((dot(&y, &gj) - naive).abs() <= 1e-9 * naive.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn cached_pipeline_matches_single_use() {
        let f = fixture();
        let a = influence_scores(&f.net, &f.sched, &f.state, 1e-2, &f.queries, &f.data, &f.spec, false).unwrap();
        let cache = build_train_cache(&f.net, &f.sched, &f.state, 1e-2, &f.data, &f.spec, false).unwrap();
        let b = score_queries(&cache, &f.net, &f.sched, &f.state, &f.queries).unwrap();
        assert_eq!(a.scores, b.scores);
        for (i, q) in f.queries.iter().enumerate() {
            let one = score_queries(&cache, &f.net, &f.sched, &f.state, std::slice::from_ref(q)).unwrap();
            assert_eq!(one.scores[0], b.scores[i]);
        }
    }

    #[test]
    fn sweep_matches_single_calls() {
        let f = fixture();
        let lams = [1e-4, 1e-1];
        let sweep = influence_sweep(&f.net, &f.sched, &f.state, &lams, &f.queries, &f.data, &f.spec, true).unwrap();
        for (lam, sm) in lams.iter().zip(&sweep) {
            let one = influence_scores(&f.net, &f.sched, &f.state, *lam, &f.queries, &f.data, &f.spec, true).unwrap();
            assert_eq!(&one, sm);
        }
    }

    #[test]
    fn large_damping_approaches_inner_product() {
        let f = fixture();
        let lam = 1e8;
        let sm = influence_scores(&f.net, &f.sched, &f.state, lam, &f.queries, &f.data, &f.spec, false).unwrap();
        let gq = query_gradient(&f.net, &f.sched, &f.queries[0]).unwrap();
        for (j, ex) in f.data.iter().enumerate() {
            let gj = per_example_train_gradient(&f.net, &f.sched, &ex.x, 3, &f.spec.stream.index(ex.id)).unwrap();
            let ip = dot(&gq, &gj);
            assert!((sm.scores[0][j] * lam - ip).abs() < 1e-6 * ip.abs(), "{j}");
        }
    }

    #[test]
    fn training_loss_scores_are_symmetric() {
        let f = fixture();
        let queries: Vec<QueryItem> = f
            .data
            .iter()
            .map(|ex| QueryItem {
                id: ex.id,
                query: Query::Point(ex.x.clone()),
                measurement: MeasurementFn::new(MeasurementKind::SimpleLoss, 3, f.spec.stream.index(ex.id)),
            })
            .collect();
        let sm = influence_scores(&f.net, &f.sched, &f.state, 1e-3, &queries, &f.data, &f.spec, false).unwrap();
        for i in 0..f.data.len() {
            for j in 0..f.data.len() {
                assert!((sm.scores[i][j] - sm.scores[j][i]).abs() <= 1e-9 * sm.scores[i][j].abs().max(1e-9));
            }
        }
    }

    #[test]
    fn zero_gradient_gives_zero_column() {
        // ε_θ(x_t) = θ·x_t; at the frozen-sample least-squares θ of example 0
        // its training gradient vanishes
        let arch = ArchConfig {
            data_dim: 1,
            time_embed_dim: 0,
            layers: vec![crate::nn::LayerSpec::Dense { in_dim: 1, out_dim: 1, activation: Activation::Identity, bias: false }],
        };
        let sched = make_schedule(10, 1e-3, 0.2).unwrap();
        let data = with_ids(&[vec![0.7], vec![-1.2], vec![0.3]]);
        let spec = TrainGradSpec { samples: 4, stream: RngStream::new(5) };
        let (mut num, mut den) = (0.0, 0.0);
        for s in 1..=4u64 {
            let d = crate::diffusion::draw_sample(&sched, 1, &spec.stream.index(0).index(s));
            let x_t = crate::diffusion::q_sample(&sched, &data[0].x, d.t, &d.eps);
            num += d.eps[0] * x_t[0];
            den += x_t[0] * x_t[0];
        }
        let net = EpsilonNet::with_params(&arch, vec![num / den]).unwrap();
        let cfg = KfacConfig { ggn_kind: GgnKind::Loss, sharing: Sharing::Expand, samples: 2, targets: FisherTargets::Sampled };
        let state = accumulate_kfac(&net, &sched, &data, &cfg, &RngStream::new(0)).unwrap();
        let queries = vec![QueryItem {
            id: 0,
            query: Query::Point(vec![2.0]),
            measurement: MeasurementFn::new(MeasurementKind::SimpleLoss, 4, RngStream::new(9)),
        }];
        let sm = influence_scores(&net, &sched, &state, 1e-3, &queries, &data, &spec, false).unwrap();
        assert!(sm.scores[0][0].abs() < 1e-12, "{}", sm.scores[0][0]);
        assert!(sm.scores[0][1].abs() > 1e-6);
    }

    #[test]
    fn scores_linear_in_measurement_scale() {
        let f = fixture();
        let sm = influence_scores(&f.net, &f.sched, &f.state, 1e-3, &f.queries, &f.data, &f.spec, false).unwrap();
        let c = 2.5;
        let gq: Vec<f64> = query_gradient(&f.net, &f.sched, &f.queries[1]).unwrap().iter().map(|g| g * c).collect();
        let wq = f.state.whiten(1e-3, &gq).unwrap();
        let train = whitened_train(&f.net, &f.sched, &f.state, 1e-3, &f.data, &f.spec).unwrap();
        for (j, w) in train.iter().enumerate() {
            assert!((dot(&wq, w) - c * sm.scores[1][j]).abs() < 1e-10 * sm.scores[1][j].abs().max(1e-9));
        }
    }

    #[test]
    fn subset_delta_contracts() {
        let f = fixture();
        let sm = influence_scores(&f.net, &f.sched, &f.state, 1e-3, &f.queries, &f.data, &f.spec, false).unwrap();
        let n = f.data.len();
        assert!(predict_subset_delta(&sm, &[], n, 1.0).unwrap().iter().all(|d| *d == 0.0));
        let a = predict_subset_delta(&sm, &[1, 4], n, 1.0).unwrap();
        let b = predict_subset_delta(&sm, &[7], n, 1.0).unwrap();
        let ab = predict_subset_delta(&sm, &[1, 4, 7], n, 1.0).unwrap();
        for q in 0..3 {
            assert!((a[q] + b[q] - ab[q]).abs() < 1e-15 * ab[q].abs().max(1.0));
        }
        let half = predict_subset_delta(&sm, &[1, 4], n, 0.5).unwrap();
        for q in 0..3 {
            assert_eq!(half[q], a[q] * 0.5);
        }
        assert!(matches!(predict_subset_delta(&sm, &[99], n, 1.0), Err(Error::Index(_))));
    }

    #[test]
    fn top_k_breaks_ties_low() {
        let sm = ScoreMatrix {
            scores: vec![vec![1.0, 3.0, 3.0, -1.0, 3.0]],
            query_ids: vec![0],
            train_ids: (0..5).collect(),
            meta: ScoreMeta {
                damping: 1.0,
                curvature: String::new(),
                measurements: vec![],
                train_samples: 1,
                train_stream: String::new(),
                compression: None,
                net_hash: String::new(),
            },
        };
        assert_eq!(sm.top_k(0, 2), vec![1, 2]);
        assert_eq!(sm.top_k(0, 4), vec![1, 2, 4, 0]);
        let csv = sm.to_csv("abc");
        assert!(csv.starts_with("# config_hash=abc"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn identity_projection_matches_dense_loss_scores() {
        let f = fixture();
        let small = EpsilonNet::build(&ArchConfig::mlp(2, 2, &[3], Activation::Silu), 8).unwrap();
        let st = RngStream::new(3);
        let dense = dense_ggn(&small, &f.sched, &f.data, GgnKind::Loss, 2, &st).unwrap();
        let proj = projected_ef(&small, &f.sched, &f.data, small.param_count(), 0, Projection::Identity, 2, &st).unwrap();
        let a = influence_scores(&small, &f.sched, &dense, 1e-3, &f.queries, &f.data, &f.spec, false).unwrap();
        let b = influence_scores(&small, &f.sched, &proj, 1e-3, &f.queries, &f.data, &f.spec, false).unwrap();
        for (ra, rb) in a.scores.iter().zip(&b.scores) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-9), "{x} {y}");
            }
        }
    }

    #[test]
    fn provenance_checked() {
        let f = fixture();
        let other = EpsilonNet::build(&f.net.arch, 77).unwrap();
        assert!(matches!(
            influence_scores(&other, &f.sched, &f.state, 1e-3, &f.queries, &f.data, &f.spec, false),
            Err(Error::Provenance(_))
        ));
        let cache = build_train_cache(&f.net, &f.sched, &f.state, 1e-2, &f.data, &f.spec, true).unwrap();
        assert!(matches!(score_queries(&cache, &other, &f.sched, &f.state, &f.queries), Err(Error::Provenance(_))));
    }
}
