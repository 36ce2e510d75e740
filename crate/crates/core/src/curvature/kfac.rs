use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Backend, CurvatureMeta, CurvatureState, FisherTargets, GgnKind, KronLayer, Payload, Sharing};
use crate::data::{sorted_by_id, Example};
use crate::diffusion::{draw_sample, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{EpsilonNet, ForwardPass};
use crate::par;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfacConfig {
    pub ggn_kind: GgnKind,
    pub sharing: Sharing,
    pub samples: usize,
    #[serde(default)]
    pub targets: FisherTargets,
}

/// One `(t̃, ε)` draw pushed through the network: per-layer activation
/// patches and one or more sets of output gradients, each with a weight.
struct SampleRecord {
    a: Vec<Vec<Vec<f64>>>,
    b_sets: Vec<(f64, Vec<Vec<Vec<f64>>>)>,
}

fn record(net: &EpsilonNet, schedule: &NoiseSchedule, x0: &[f64], stream: &RngStream, kind: GgnKind, targets: FisherTargets) -> Result<SampleRecord> {
    let draw = draw_sample(schedule, x0.len(), stream);
    let x_t = q_sample(schedule, x0, draw.t, &draw.eps);
    let fp: ForwardPass = net.forward_pass(&x_t, draw.t)?;
    let d = net.data_dim();
    let b_sets = match (kind, targets) {
        (GgnKind::Model, FisherTargets::Exact) => (0..d)
            .map(|r| {
                let mut e = vec![0.0; d];
                e[r] = 1.0;
                (2.0, net.backward(&fp, &e).b)
            })
            .collect(),
        (GgnKind::Model, FisherTargets::Sampled) => {
            // target ε_θ + η gives the squared-error cotangent −2η
            let eta = stream.child("eta").rng().normal_vec(d);
            let cot: Vec<f64> = eta.iter().map(|e| -2.0 * e).collect();
            vec![(0.5, net.backward(&fp, &cot).b)]
        }
        (GgnKind::Loss, _) | (GgnKind::Model, FisherTargets::TrainingNoise) => {
            let cot = crate::nn::sq_loss_cotangent(&fp.output, &draw.eps);
            vec![(0.5, net.backward(&fp, &cot).b)]
        }
    };
    Ok(SampleRecord { a: fp.patches().to_vec(), b_sets })
}

fn sum_vec(vs: &[Vec<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(vs[0].len());
    for v in vs {
        out += DVector::from_column_slice(v);
    }
    out
}

fn outer_add(m: &mut DMatrix<f64>, v: &DVector<f64>, w: f64) {
    m.ger(w, v, v, 1.0);
}

#[allow(clippy::ptr_arg)]
fn add_layers(acc: &mut Vec<(DMatrix<f64>, DMatrix<f64>)>, other: Vec<(DMatrix<f64>, DMatrix<f64>)>) {
    for ((a, b), (oa, ob)) in acc.iter_mut().zip(other) {
        *a += oa;
        *b += ob;
    }
}

fn zero_factors(net: &EpsilonNet) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    net.arch
        .layers
        .iter()
        .map(|l| (DMatrix::zeros(l.a_dim(), l.a_dim()), DMatrix::zeros(l.out_channels(), l.out_channels())))
        .collect()
}

fn check_inputs(dataset: &[Example], samples: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("curvature needs a nonempty dataset".into()));
    }
    if samples == 0 {
        return Err(Error::Config("curvature sample count must be at least 1".into()));
    }
    Ok(())
}

/// Unnormalised factor sums for one example.
fn example_factors(net: &EpsilonNet, schedule: &NoiseSchedule, ex: &Example, cfg: &KfacConfig, stream: &RngStream) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    let mut acc = zero_factors(net);
    let ex_stream = stream.index(ex.id);
    let averaged = cfg.ggn_kind == GgnKind::Loss && cfg.sharing == Sharing::Reduce;
    let mut mean_a: Vec<DVector<f64>> = Vec::new();
    let mut mean_b: Vec<DVector<f64>> = Vec::new();
    for s in 1..=cfg.samples {
        let rec = record(net, schedule, &ex.x, &ex_stream.index(s as u64), cfg.ggn_kind, cfg.targets)?;
        for (l, (fa, fb)) in acc.iter_mut().enumerate() {
            let a = &rec.a[l];
            match cfg.sharing {
                Sharing::Expand => {
                    for am in a {
                        outer_add(fa, &DVector::from_column_slice(am), 1.0);
                    }
                    for (w, bs) in &rec.b_sets {
                        for bm in &bs[l] {
                            outer_add(fb, &DVector::from_column_slice(bm), *w);
                        }
                    }
                }
                Sharing::Reduce if averaged => {
                    let (a_hat, b_hat) = (sum_vec(a), sum_vec(&rec.b_sets[0].1[l]));
                    if s == 1 {
                        mean_a.push(a_hat);
                        mean_b.push(b_hat);
                    } else {
                        mean_a[l] += a_hat;
                        mean_b[l] += b_hat;
                    }
                }
                Sharing::Reduce => {
                    outer_add(fa, &sum_vec(a), 1.0);
                    for (w, bs) in &rec.b_sets {
                        outer_add(fb, &sum_vec(&bs[l]), *w);
                    }
                }
            }
        }
    }
    if averaged {
        let inv = 1.0 / cfg.samples as f64;
        for (l, (fa, fb)) in acc.iter_mut().enumerate() {
            outer_add(fa, &(&mean_a[l] * inv), 1.0);
            outer_add(fb, &(&mean_b[l] * inv), 0.5);
        }
    }
    Ok(acc)
}

fn meta(net: &EpsilonNet, backend: Backend, cfg: &KfacConfig, n: usize, streams: Vec<String>) -> CurvatureMeta {
    CurvatureMeta {
        backend,
        ggn_kind: cfg.ggn_kind,
        sharing: cfg.sharing,
        targets: cfg.targets,
        n,
        samples: cfg.samples,
        correction_samples: 0,
        streams,
        net_hash: net.fingerprint(),
        param_count: net.param_count(),
    }
}

/// Accumulate K-FAC factors over the dataset.
///
/// Example `n` uses `stream.index(id_n)`, and its draw `s` uses a further
/// `.index(s)`. Factors are normalised so that `A ⊗ B` approximates the
/// model-split GGN `(2/N) Σ_n E[JᵀJ]`:
/// expand uses `A = (1/NS) ΣΣ_m a aᵀ`, `B = (1/NSM) ΣΣ_m c b bᵀ`, reduce uses
/// position sums `â`, `b̂` with `B` scaled by `1/M²`.
pub fn accumulate_kfac(net: &EpsilonNet, schedule: &NoiseSchedule, dataset: &[Example], cfg: &KfacConfig, stream: &RngStream) -> Result<CurvatureState> {
    check_inputs(dataset, cfg.samples)?;
    let order = sorted_by_id(dataset)?;
    let sums = par::reduce(&order, |ex| example_factors(net, schedule, ex, cfg, stream), add_layers)?
        .expect("dataset is nonempty");
    let n = dataset.len() as f64;
    let per_example = if cfg.ggn_kind == GgnKind::Loss && cfg.sharing == Sharing::Reduce { 1.0 } else { cfg.samples as f64 };
    let layers = sums
        .into_iter()
        .enumerate()
        .map(|(l, (a, b))| {
            let m = net.arch.layers[l].positions() as f64;
            let sharing = match cfg.sharing {
                Sharing::Expand => m,
                Sharing::Reduce => m * m,
            };
            let a = a / (n * per_example);
            let b = b / (n * per_example * sharing);
            KronLayer::new(symmetrise(a), symmetrise(b), l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurvatureState { meta: meta(net, Backend::Kfac, cfg, dataset.len(), vec![stream.describe()]), payload: Payload::Kron(layers) })
}

fn symmetrise(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Layer-gradient matrices `G = Σ_m b_m a_mᵀ` (`d_out × d_in`) for every
/// backward set of one draw.
fn grad_matrices(rec: &SampleRecord, l: usize) -> Vec<(f64, DMatrix<f64>)> {
    rec.b_sets
        .iter()
        .map(|(w, bs)| {
            let mut g = DMatrix::zeros(bs[l][0].len(), rec.a[l][0].len());
            for (am, bm) in rec.a[l].iter().zip(&bs[l]) {
                g.ger(1.0, &DVector::from_column_slice(bm), &DVector::from_column_slice(am), 1.0);
            }
            (*w, g)
        })
        .collect()
}

/// Refit the eigenvalues of a K-FAC state as second moments of layer
/// gradients rotated into the Kronecker eigenbasis, with a fresh pass of
/// `samples` draws from `stream`.
pub fn ekfac_correct(kfac: &CurvatureState, net: &EpsilonNet, schedule: &NoiseSchedule, dataset: &[Example], samples: usize, stream: &RngStream) -> Result<CurvatureState> {
    kfac.check_net(net)?;
    let Payload::Kron(layers) = &kfac.payload else {
        return Err(Error::Config("eigenvalue correction needs a K-FAC state".into()));
    };
    check_inputs(dataset, samples)?;
    let order = sorted_by_id(dataset)?;
    let m = &kfac.meta;
    let cfg = KfacConfig { ggn_kind: m.ggn_kind, sharing: m.sharing, samples, targets: m.targets };
    let averaged = cfg.ggn_kind == GgnKind::Loss && cfg.sharing == Sharing::Reduce;

    let per_example = |ex: &&Example| -> Result<Vec<DMatrix<f64>>> {
        let ex_stream = stream.index(ex.id);
        let mut acc: Vec<DMatrix<f64>> = layers.iter().map(|k| DMatrix::zeros(k.d_out(), k.d_in())).collect();
        let mut mean_g: Vec<DMatrix<f64>> = acc.clone();
        for s in 1..=samples {
            let rec = record(net, schedule, &ex.x, &ex_stream.index(s as u64), cfg.ggn_kind, cfg.targets)?;
            for (l, k) in layers.iter().enumerate() {
                for (w, g) in grad_matrices(&rec, l) {
                    if averaged {
                        mean_g[l] += g;
                    } else {
                        let r = k.q_b.transpose() * g * &k.q_a;
                        acc[l] += r.component_mul(&r) * w;
                    }
                }
            }
        }
        if averaged {
            for (l, k) in layers.iter().enumerate() {
                let r = k.q_b.transpose() * (&mean_g[l] / samples as f64) * &k.q_a;
                acc[l] += r.component_mul(&r) * 0.5;
            }
        }
        Ok(acc)
    };
    let sums = par::reduce(&order, per_example, |acc, other| {
        for (a, o) in acc.iter_mut().zip(other) {
            *a += o;
        }
    })?
    .expect("dataset is nonempty");

    let denom = dataset.len() as f64 * if averaged { 1.0 } else { samples as f64 };
    let mut out = layers.clone();
    for (k, s) in out.iter_mut().zip(sums) {
        k.corrected = Some(s / denom);
    }
    let mut meta = kfac.meta.clone();
    meta.backend = Backend::Ekfac;
    meta.correction_samples = samples;
    meta.streams.push(stream.describe());
    Ok(CurvatureState { meta, payload: Payload::Kron(out) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{dense_ggn, is_symmetric_psd};
    use crate::data::{generate, with_ids, DatasetSpec};
    use crate::diffusion::make_schedule;
    use crate::nn::{Activation, ArchConfig, LayerSpec};

    fn conv_arch() -> ArchConfig {
        ArchConfig {
            data_dim: 2,
            time_embed_dim: 2,
            layers: vec![
                LayerSpec::Conv1d { in_len: 4, in_channels: 1, out_channels: 2, kernel_width: 2, activation: Activation::Silu, bias: true },
                LayerSpec::Dense { in_dim: 6, out_dim: 2, activation: Activation::Identity, bias: true },
            ],
        }
    }

    fn setup(n: usize) -> (NoiseSchedule, Vec<Example>) {
        let sched = make_schedule(20, 1e-3, 0.2).unwrap();
        (sched, with_ids(&generate(&DatasetSpec::default_mixture(n, 2)).unwrap()))
    }

    fn cfg(kind: GgnKind, sharing: Sharing, samples: usize, targets: FisherTargets) -> KfacConfig {
        KfacConfig { ggn_kind: kind, sharing, samples, targets }
    }

    fn kron(st: &CurvatureState) -> &[KronLayer] {
        match &st.payload {
            Payload::Kron(l) => l,
            _ => unreachable!(),
        }
    }

    #[test]
    fn dense_only_expand_equals_reduce() {
        let (sched, data) = setup(6);
        let net = EpsilonNet::build(&ArchConfig::mlp(2, 4, &[5], Activation::Silu), 1).unwrap();
        let st = RngStream::new(3);
        for targets in [FisherTargets::Sampled, FisherTargets::Exact] {
            let e = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Model, Sharing::Expand, 3, targets), &st).unwrap();
            let r = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Model, Sharing::Reduce, 3, targets), &st).unwrap();
            assert_eq!(kron(&e), kron(&r));
        }
        let e = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Loss, Sharing::Expand, 1, FisherTargets::Sampled), &st).unwrap();
        let r = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Loss, Sharing::Reduce, 1, FisherTargets::Sampled), &st).unwrap();
        for (x, y) in kron(&e).iter().zip(kron(&r)) {
            assert!((&x.a - &y.a).amax() < 1e-15 && (&x.b - &y.b).amax() < 1e-15);
        }
    }

    #[test]
    fn factors_are_psd() {
        let (sched, data) = setup(5);
        let net = EpsilonNet::build(&conv_arch(), 2).unwrap();
        for kind in [GgnKind::Model, GgnKind::Loss] {
            for sharing in [Sharing::Expand, Sharing::Reduce] {
                let st = accumulate_kfac(&net, &sched, &data, &cfg(kind, sharing, 3, FisherTargets::Sampled), &RngStream::new(1)).unwrap();
                for l in kron(&st) {
                    assert!(is_symmetric_psd(&l.a) && is_symmetric_psd(&l.b));
                    assert!((&l.q_a.transpose() * &l.q_a - DMatrix::identity(l.d_in(), l.d_in())).amax() < 1e-10);
                    assert!((&l.q_b.transpose() * &l.q_b - DMatrix::identity(l.d_out(), l.d_out())).amax() < 1e-10);
                }
                let ek = ekfac_correct(&st, &net, &sched, &data, 2, &RngStream::new(2)).unwrap();
                assert!(kron(&ek).iter().all(|l| l.corrected.as_ref().unwrap().iter().all(|v| *v >= 0.0)));
            }
        }
    }

    #[test]
    fn single_point_expand_equals_dense_block() {
        let (sched, data) = setup(1);
        let net = EpsilonNet::build(&ArchConfig::mlp(2, 4, &[5, 3], Activation::Silu), 4).unwrap();
        let st = RngStream::new(7);
        let dense = dense_ggn(&net, &sched, &data, GgnKind::Model, 1, &st).unwrap().to_dense();
        for targets in [FisherTargets::Exact, FisherTargets::Sampled] {
            let k = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Model, Sharing::Expand, 1, targets), &st).unwrap();
            if targets == FisherTargets::Exact {
                for (l, layer) in kron(&k).iter().enumerate() {
                    let r = net.layer_range(l);
                    let blk = dense.view((r.start, r.start), (r.len(), r.len()));
                    assert!((layer.block() - blk).amax() < 1e-9, "layer {l}");
                }
            }
            // EK-FAC with the same frozen draw reproduces the K-FAC block
            let ek = ekfac_correct(&k, &net, &sched, &data, 1, &st).unwrap();
            for (a, b) in kron(&k).iter().zip(kron(&ek)) {
                assert!((a.block() - b.block()).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn deep_linear_expand_equals_dense_block() {
        let (sched, data) = setup(7);
        let net = EpsilonNet::build(&ArchConfig::mlp(2, 4, &[3], Activation::Identity), 5).unwrap();
        let st = RngStream::new(8);
        let dense = dense_ggn(&net, &sched, &data, GgnKind::Model, 4, &st).unwrap().to_dense();
        let k = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Model, Sharing::Expand, 4, FisherTargets::Exact), &st).unwrap();
        for (l, layer) in kron(&k).iter().enumerate() {
            let r = net.layer_range(l);
            assert!((layer.block() - dense.view((r.start, r.start), (r.len(), r.len()))).amax() < 1e-9);
        }
    }

    #[test]
    fn ekfac_fits_dense_at_least_as_well() {
        let (sched, data) = setup(4);
        let net = EpsilonNet::build(&conv_arch(), 6).unwrap();
        let st = RngStream::new(5);
        let dense = dense_ggn(&net, &sched, &data, GgnKind::Model, 3, &st).unwrap().to_dense();
        let k = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Model, Sharing::Expand, 3, FisherTargets::Exact), &st).unwrap();
        let e = ekfac_correct(&k, &net, &sched, &data, 3, &st).unwrap();
        let dk = (&dense - k.to_dense()).norm();
        let de = (&dense - e.to_dense()).norm();
        assert!(de <= dk, "{de} > {dk}");
    }

    #[test]
    fn training_noise_hook_matches_loss_split() {
        let (sched, data) = setup(5);
        let net = EpsilonNet::build(&conv_arch(), 3).unwrap();
        let st = RngStream::new(4);
        let m = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Model, Sharing::Expand, 2, FisherTargets::TrainingNoise), &st).unwrap();
        let l = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Loss, Sharing::Expand, 2, FisherTargets::Sampled), &st).unwrap();
        assert_eq!(kron(&m), kron(&l));
    }

    #[test]
    fn permutation_invariant() {
        let (sched, data) = setup(19);
        let net = EpsilonNet::build(&conv_arch(), 3).unwrap();
        let mut shuffled = data.clone();
        shuffled.reverse();
        shuffled.swap(2, 11);
        let c = cfg(GgnKind::Loss, Sharing::Reduce, 2, FisherTargets::Sampled);
        let a = accumulate_kfac(&net, &sched, &data, &c, &RngStream::new(1)).unwrap();
        let b = accumulate_kfac(&net, &sched, &shuffled, &c, &RngStream::new(1)).unwrap();
        assert_eq!(kron(&a), kron(&b));
    }

    #[test]
    fn mismatched_net_rejected() {
        let (sched, data) = setup(3);
        let net = EpsilonNet::build(&conv_arch(), 3).unwrap();
        let other = EpsilonNet::build(&conv_arch(), 4).unwrap();
        let k = accumulate_kfac(&net, &sched, &data, &cfg(GgnKind::Model, Sharing::Expand, 1, FisherTargets::Sampled), &RngStream::new(1)).unwrap();
        assert!(matches!(ekfac_correct(&k, &other, &sched, &data, 1, &RngStream::new(1)), Err(Error::Provenance(_))));
    }
}
