//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use dinf::artifact::{OracleSet, SampleSet};
use dinf::cli::{Command, Workspace};
use dinf::config::RunConfig;
use dinf::curvature::{accumulate_kfac, dense_ggn, ekfac_correct, Backend, CurvatureState, FisherTargets, GgnKind, KfacConfig, Payload, Sharing};
use dinf::data::{generate, with_ids, DatasetSpec, Example};
use dinf::diffusion::{draw_sample, make_schedule, measure, q_sample, MeasurementFn, MeasurementKind, NoiseSchedule, Query};
use dinf::eval::{lds, pearson, predictions_from_scores, random_scores, remove_random_and_retrain, remove_top_and_retrain, spearman, LdsResult, RetrainSetup};
use dinf::influence::{dequantize, influence_scores, influence_sweep, predict_subset_delta, quantize, QueryItem, ScoreMatrix, TrainGradSpec};
use dinf::nn::{per_example_train_gradient, time_embedding, Activation, ArchConfig, EpsilonNet, LayerSpec};
use dinf::rng::RngStream;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn conv_arch() -> ArchConfig {
    ArchConfig {
        data_dim: 2,
        time_embed_dim: 2,
        layers: vec![
            LayerSpec::Conv1d { in_len: 4, in_channels: 1, out_channels: 3, kernel_width: 2, activation: Activation::Silu, bias: true },
            LayerSpec::Dense { in_dim: 9, out_dim: 2, activation: Activation::Identity, bias: true },
        ],
    }
}

fn toy(n: usize, seed: u64) -> (NoiseSchedule, Vec<Example>) {
    (make_schedule(20, 1e-3, 0.2).unwrap(), with_ids(&generate(&DatasetSpec::default_mixture(n, seed)).unwrap()))
}

fn kron_blocks(st: &CurvatureState) -> Vec<DMatrix<f64>> {
    match &st.payload {
        Payload::Kron(l) => l.iter().map(|k| k.block()).collect(),
        _ => unreachable!("kron state expected"),
    }
}

/// Frozen-sample Monte Carlo loss, evaluated independently of the gradient code.
fn frozen_loss(net: &EpsilonNet, sched: &NoiseSchedule, x0: &[f64], samples: usize, stream: &RngStream) -> f64 {
    let mut total = 0.0;
    for s in 1..=samples {
        let d = draw_sample(sched, x0.len(), &stream.index(s as u64));
        let x_t = q_sample(sched, x0, d.t, &d.eps);
        let y = net.forward_pass(&x_t, d.t).unwrap().output;
        total += y.iter().zip(&d.eps).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    total / samples as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sched = make_schedule(50, 1e-4, 0.05).unwrap();
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for (arch, seed) in [(ArchConfig::mlp(2, 8, &[16], Activation::Silu), 1), (conv_arch(), 2)] {
        let net = EpsilonNet::build(&arch, seed).unwrap();
        assert!(net.param_count() <= 500);
        sizes.push(net.param_count());
        let x0 = [0.7, -1.2];
        let stream = RngStream::new(11).index(3);
        let g = per_example_train_gradient(&net, &sched, &x0, 16, &stream).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..net.param_count())
            .map(|i| {
                let mut p = net.params.clone();
                p[i] += h;
                let up = frozen_loss(&EpsilonNet::with_params(&arch, p.clone()).unwrap(), &sched, &x0, 16, &stream);
                p[i] -= 2.0 * h;
                let dn = frozen_loss(&EpsilonNet::with_params(&arch, p).unwrap(), &sched, &x0, 16, &stream);
                (up - dn) / (2.0 * h)
            })
            .collect();
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-6 && secs < 60.0, format!("nets of {sizes:?} params: max relative error {worst:.2e} (< 1e-6), {secs:.1}s (< 60s)"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    // (a) a single point and a single draw
    let (sched, data) = toy(1, 4);
    for seed in 0..3 {
        let net = EpsilonNet::build(&ArchConfig::mlp(2, 4, &[5, 3], Activation::Silu), seed).unwrap();
        let st = RngStream::new(7 + seed);
        let dense = dense_ggn(&net, &sched, &data, GgnKind::Model, 1, &st).unwrap().to_dense();
        let cfg = KfacConfig { ggn_kind: GgnKind::Model, sharing: Sharing::Expand, samples: 1, targets: FisherTargets::Exact };
        let k = accumulate_kfac(&net, &sched, &data, &cfg, &st).unwrap();
        for (l, b) in kron_blocks(&k).iter().enumerate() {
            let r = net.layer_range(l);
            worst = worst.max((b - dense.view((r.start, r.start), (r.len(), r.len()))).amax());
        }
    }
    let a = worst;
    // (b) two identity-activation layers, many points and draws
    let (sched, data) = toy(9, 5);
    let net = EpsilonNet::build(&ArchConfig::mlp(2, 4, &[3], Activation::Identity), 5).unwrap();
    let st = RngStream::new(8);
    let dense = dense_ggn(&net, &sched, &data, GgnKind::Model, 4, &st).unwrap().to_dense();
    let cfg = KfacConfig { ggn_kind: GgnKind::Model, sharing: Sharing::Expand, samples: 4, targets: FisherTargets::Exact };
    let k = accumulate_kfac(&net, &sched, &data, &cfg, &st).unwrap();
    let mut b: f64 = 0.0;
    for (l, blk) in kron_blocks(&k).iter().enumerate() {
        let r = net.layer_range(l);
        b = b.max((blk - dense.view((r.start, r.start), (r.len(), r.len()))).amax());
    }
    check(a < 1e-9 && b < 1e-9, format!("(a) N=S=1 max |diff| {a:.2e}; (b) deep-linear N=9 S=4 max |diff| {b:.2e} (< 1e-9)"))
}

fn criterion_3() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let (sched, data) = toy(6, seed);
        let net = EpsilonNet::build(&conv_arch(), 10 + seed).unwrap();
        let st = RngStream::new(20 + seed);
        let dense = dense_ggn(&net, &sched, &data, GgnKind::Model, 3, &st).unwrap().to_dense();
        let cfg = KfacConfig { ggn_kind: GgnKind::Model, sharing: Sharing::Expand, samples: 3, targets: FisherTargets::Exact };
        let k = accumulate_kfac(&net, &sched, &data, &cfg, &st).unwrap();
        let e = ekfac_correct(&k, &net, &sched, &data, 3, &st).unwrap();
        let dk = (&dense - k.to_dense()).norm();
        let de = (&dense - e.to_dense()).norm();
        ok &= de <= dk;
        lines.push(format!("{de:.4e} ≤ {dk:.4e}"));
    }
    check(ok, format!("‖G−EKFAC‖_F vs ‖G−KFAC‖_F over 3 conv nets: {}", lines.join(", ")))
}

fn criterion_4() -> Outcome {
    let (sched, data) = toy(12, 3);
    let net = EpsilonNet::build(&ArchConfig::mlp(2, 4, &[6], Activation::Silu), 3).unwrap();
    let cfg = KfacConfig { ggn_kind: GgnKind::Model, sharing: Sharing::Expand, samples: 2, targets: FisherTargets::Sampled };
    let k = accumulate_kfac(&net, &sched, &data, &cfg, &RngStream::new(1)).unwrap();
    let e = ekfac_correct(&k, &net, &sched, &data, 2, &RngStream::new(2)).unwrap();
    let p = net.param_count();
    let v: Vec<f64> = RngStream::new(9).rng().normal_vec(p);
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for state in [&k, &e] {
        let h = state.to_dense();
        let mut prev = f64::INFINITY;
        for exp in -8..=0 {
            let lam = 10f64.powi(exp);
            let got = DVector::from_vec(state.precondition(lam, &v).unwrap());
            let reference = (&h + DMatrix::identity(p, p) * lam).lu().solve(&DVector::from_column_slice(&v)).unwrap();
            worst = worst.max((&got - &reference).norm() / reference.norm());
            monotone &= got.norm() <= prev;
            prev = got.norm();
        }
    }
    check(worst < 1e-8 && monotone, format!("K-FAC and EK-FAC vs dense LU over λ ∈ 1e-8..1: max rel err {worst:.2e} (< 1e-8); ‖out‖ nonincreasing: {monotone}"))
}

/// Exact weighted least squares for a one-layer linear ε-network with frozen draws.
fn solve_linear(arch: &ArchConfig, sched: &NoiseSchedule, data: &[Example], weights: &[f64], samples: usize, stream: &RngStream) -> EpsilonNet {
    let d = arch.data_dim;
    let k = arch.input_len() + 1;
    let mut zz = DMatrix::<f64>::zeros(k, k);
    let mut ez = DMatrix::<f64>::zeros(d, k);
    for (ex, w) in data.iter().zip(weights) {
        let st = stream.index(ex.id);
        for s in 1..=samples {
            let draw = draw_sample(sched, d, &st.index(s as u64));
            let x_t = q_sample(sched, &ex.x, draw.t, &draw.eps);
            let mut z = x_t.clone();
            z.extend(time_embedding(draw.t, arch.time_embed_dim));
            z.push(1.0);
            let z = DVector::from_vec(z);
            zz += &z * z.transpose() * *w;
            ez += DVector::from_column_slice(&draw.eps) * z.transpose() * *w;
        }
    }
    let v = ez * zz.try_inverse().expect("design is full rank");
    // parameter index i * d_out + o holds V[o, i]; the bias is input k - 1
    EpsilonNet::with_params(arch, v.as_slice().to_vec()).unwrap()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let sched = make_schedule(30, 1e-3, 0.1).unwrap();
    let data = with_ids(&generate(&DatasetSpec::default_mixture(40, 6)).unwrap());
    let arch = ArchConfig { data_dim: 2, time_embed_dim: 2, layers: vec![LayerSpec::Dense { in_dim: 4, out_dim: 2, activation: Activation::Identity, bias: true }] };
    let samples = 8;
    let stream = RngStream::new(31);
    let n = data.len();
    let base = solve_linear(&arch, &sched, &data, &vec![1.0; n], samples, &stream);
    let state = dense_ggn(&base, &sched, &data, GgnKind::Model, samples, &stream).unwrap();
    let queries: Vec<QueryItem> = (0..4)
        .map(|i| QueryItem {
            id: i,
            query: Query::Point(vec![1.1 - 0.6 * i as f64, 0.4 * i as f64 - 0.5]),
            measurement: MeasurementFn::new(MeasurementKind::SimpleLoss, 64, RngStream::new(40).index(i)),
        })
        .collect();
    let spec = TrainGradSpec { samples, stream: stream.clone() };
    let sm = influence_scores(&base, &sched, &state, 1e-12, &queries, &data, &spec, false).unwrap();
    let eps = 1e-4;
    let group: Vec<u64> = (0..10).collect();
    let predicted = predict_subset_delta(&sm, &group, n, eps).unwrap();
    let weights: Vec<f64> = (0..n).map(|i| if i < 10 { 1.0 - eps } else { 1.0 }).collect();
    let moved = solve_linear(&arch, &sched, &data, &weights, samples, &stream);
    let mut worst: f64 = 0.0;
    for (q, p) in queries.iter().zip(&predicted) {
        let actual = measure(&moved, &sched, &q.measurement, &q.query).unwrap() - measure(&base, &sched, &q.measurement, &q.query).unwrap();
        worst = worst.max((p - actual).abs() / actual.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 5e-3 && secs < 120.0, format!("ε = 1e-4, 10 of 40 examples, 4 queries: max relative error {worst:.2e} (< 5e-3), {secs:.1}s (< 120s)"))
}

struct Method {
    name: String,
    best: (f64, LdsResult),
    sweep: Vec<(f64, LdsResult)>,
    best_scores: ScoreMatrix,
}

struct Desk {
    ws: Workspace,
    _dir: tempfile::TempDir,
    net: EpsilonNet,
    queries: Vec<QueryItem>,
    examples: Vec<Example>,
    oracle: OracleSet,
    ekfac: CurvatureState,
    methods: Vec<Method>,
    exact: LdsResult,
    random: LdsResult,
    secs: f64,
}

const SWEEP: [f64; 8] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(RunConfig::default(), dir.path());
        for c in [Command::Train, Command::Sample, Command::LdsMake] {
            ws.run(&c).unwrap();
        }
        let net: EpsilonNet = ws.load("net.dinf").unwrap();
        let samples: SampleSet = ws.load("samples.dinf").unwrap();
        let oracle: OracleSet = ws.load("oracle.dinf").unwrap();
        let cfg = &ws.cfg;
        let queries = ws.queries(&samples, cfg.attribution.measurement, cfg.evaluation.queries);
        let examples = with_ids(&generate(&cfg.dataset_spec()).unwrap());
        let sched = cfg.noise_schedule().unwrap();
        let spec = TrainGradSpec { samples: cfg.attribution.train_samples, stream: RngStream::new(cfg.seeds().train_grads).child("train") };
        let n = examples.len();

        let mut methods = Vec::new();
        let mut ekfac = None;
        for (name, backend) in [("EK-FAC", Backend::Ekfac), ("K-FAC", Backend::Kfac), ("TRAK (projected EF, d=512)", Backend::ProjectedEf)] {
            let mut variant = cfg.clone();
            variant.attribution.backend = backend;
            let state = Workspace::new(variant, dir.path()).fit_curvature(&net, &examples).unwrap();
            let sms = influence_sweep(&net, &sched, &state, &SWEEP, &queries, &examples, &spec, false).unwrap();
            let sweep: Vec<(f64, LdsResult, ScoreMatrix)> = SWEEP
                .iter()
                .zip(sms)
                .map(|(&d, sm)| (d, lds(&predictions_from_scores(&sm, &oracle.subsets, n).unwrap(), &oracle.oracle).unwrap(), sm))
                .collect();
            let best = sweep.iter().max_by(|a, b| a.1.mean.total_cmp(&b.1.mean)).unwrap();
            methods.push(Method {
                name: name.into(),
                best: (best.0, best.1.clone()),
                best_scores: best.2.clone(),
                sweep: sweep.iter().map(|(d, r, _)| (*d, r.clone())).collect(),
            });
            if backend == Backend::Ekfac {
                ekfac = Some(state);
            }
        }
        let exact_preds: dinf::artifact::Table = ws.load("exact.dinf").unwrap();
        let exact = lds(&exact_preds.rows, &oracle.oracle).unwrap();
        let rs = random_scores(&methods[0].best_scores, cfg.seeds().baseline);
        let random = lds(&predictions_from_scores(&rs, &oracle.subsets, n).unwrap(), &oracle.oracle).unwrap();
        Desk { ws, _dir: dir, net, queries, examples, oracle, ekfac: ekfac.unwrap(), methods, exact, random, secs: start.elapsed().as_secs_f64() }
    })
}

fn criterion_6() -> Outcome {
    let d = desk();
    let sched = d.ws.cfg.noise_schedule().unwrap();
    let lam = d.methods[0].best.0;
    let vecs: Vec<Vec<f64>> = d
        .queries
        .iter()
        .map(|q| d.ekfac.whiten(lam, &dinf::influence::query_gradient(&d.net, &sched, q).unwrap()).unwrap())
        .collect();
    let segs = d.ekfac.segments();
    let c = quantize(&vecs, &segs).unwrap();
    let back = dequantize(&c);
    let mut bound_ok = true;
    for ((v, b), cv) in vecs.iter().zip(&back).zip(&c.vectors) {
        let mut off = 0;
        for (len, s) in segs.iter().zip(&cv.scales) {
            bound_ok &= (off..off + len).all(|i| (v[i] - b[i]).abs() <= s / 2.0 + 1e-300);
            off += len;
        }
    }
    let spec = TrainGradSpec { samples: d.ws.cfg.attribution.train_samples, stream: RngStream::new(d.ws.cfg.seeds().train_grads).child("train") };
    let full = influence_scores(&d.net, &sched, &d.ekfac, lam, &d.queries, &d.examples, &spec, false).unwrap();
    let comp = influence_scores(&d.net, &sched, &d.ekfac, lam, &d.queries, &d.examples, &spec, true).unwrap();
    let mut min_p: f64 = 1.0;
    let mut min_s: f64 = 1.0;
    for (a, b) in full.scores.iter().zip(&comp.scores) {
        min_p = min_p.min(pearson(a, b).unwrap());
        min_s = min_s.min(spearman(a, b).unwrap());
    }
    check(
        bound_ok && min_p > 0.99 && min_s > 0.99,
        format!("|x − x̂| ≤ scale/2 for all elements: {bound_ok}; desk score rows min Pearson {min_p:.5}, min Spearman {min_s:.5} (> 0.99)"),
    )
}

fn criterion_7() -> Outcome {
    let d = desk();
    let mut detail = String::new();
    for m in &d.methods {
        detail.push_str(&format!("\n      {:<28} best λ={:<6e} LDS {:.3} ± {:.3}  sweep [", m.name, m.best.0, m.best.1.mean, m.best.1.stderr));
        detail.push_str(&m.sweep.iter().map(|(_, r)| format!("{:.3}", r.mean)).collect::<Vec<_>>().join(" "));
        detail.push(']');
    }
    detail.push_str(&format!("\n      {:<28} LDS {:.3} ± {:.3}", "exact retraining", d.exact.mean, d.exact.stderr));
    detail.push_str(&format!("\n      {:<28} LDS {:.3} ± {:.3}", "random scores", d.random.mean, d.random.stderr));
    let kfac_influence = &d.methods[0].best.1;
    let trak = &d.methods[2].best.1;
    let all_sweeps = d.methods.iter().flat_map(|m| m.sweep.iter().map(|(_, r)| r.mean));
    let i = all_sweeps.clone().chain([d.random.mean]).all(|v| d.exact.mean > v);
    let ii = kfac_influence.mean > 0.1 && kfac_influence.mean > d.random.mean && d.random.mean.abs() <= 3.0 * d.random.stderr;
    let iii = kfac_influence.mean >= trak.mean;
    let time_ok = d.secs < 3600.0;
    let (m, k, q) = d.oracle.oracle.shape();
    let head = format!(
        "N={} M={m} K={k} Q={q} S={}: (i) exact best {i}; (ii) K-FAC > 0.1 and > random≈0 {ii}; (iii) K-FAC ≥ TRAK {iii}; {:.0}s (< 3600s)",
        d.examples.len(),
        d.ws.cfg.attribution.measurement_samples,
        d.secs
    );
    check(i && ii && iii && time_ok && (m, k, q) == (20, 3, 16), head + &detail)
}

fn criterion_8() -> Outcome {
    let d = desk();
    let cfg = &d.ws.cfg;
    let sched = cfg.noise_schedule().unwrap();
    let data = generate(&cfg.dataset_spec()).unwrap();
    let arch = cfg.arch();
    let tcfg = cfg.train_config();
    let setup = RetrainSetup { arch: &arch, schedule: &sched, dataset: &data, train: &tcfg };
    let queries: Vec<QueryItem> = d.queries.iter().take(5).cloned().collect();
    let mut sm = d.methods[0].best_scores.clone();
    sm.scores.truncate(5);
    sm.query_ids.truncate(5);
    let seed = cfg.seeds().init;
    let zero = remove_top_and_retrain(&sm, 0.0, &setup, seed, &queries).unwrap();
    let top = remove_top_and_retrain(&sm, 10.0, &setup, seed, &queries).unwrap();
    let rnd = remove_random_and_retrain(10.0, &setup, seed, &queries, cfg.seeds().baseline).unwrap();
    let mt = top.deltas.iter().sum::<f64>() / 5.0;
    let mr = rnd.deltas.iter().sum::<f64>() / 5.0;
    let zero_ok = zero.deltas.iter().all(|v| *v == 0.0);
    check(
        zero_ok && mt >= mr && top.removed.iter().all(|r| r.len() == 26),
        format!("0%: all deltas exactly 0 {zero_ok}; 10% (26 removed): mean K-FAC-selected delta {mt:.5} ≥ random {mr:.5}"),
    )
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let cfg = RunConfig::from_json(
        r#"{"dataset": {"n": 48}, "schedule": {"steps": 20}, "architecture": {"hidden": [8]},
            "training": {"steps": 150, "batch_size": 16}, "sampling": {"count": 4},
            "attribution": {"damping": [1e-3, 1e-1], "measurement_samples": 16, "train_samples": 4, "samples": 2, "correction_samples": 2, "compression": true},
            "evaluation": {"subsets": 4, "seeds": 2, "queries": 4, "remove_queries": 2, "proxy_timesteps": [1, 10], "target_timesteps": [5, 20]}}"#,
    )
    .unwrap();
    let cmds = [
        Command::Train,
        Command::Sample,
        Command::Measure,
        Command::Factors,
        Command::Influence,
        Command::Cache,
        Command::LdsMake,
        Command::LdsEval { predictions: None },
        Command::AblateRemoveTop,
        Command::TimestepGrid,
        Command::ExportPlotdata,
    ];
    let mut runs = Vec::new();
    for workers in [1, 4, 8, 1] {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(cfg.clone(), dir.path());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        pool.install(|| cmds.iter().for_each(|c| drop(ws.run(c).unwrap())));
        runs.push(tree_bytes(dir.path()));
    }
    let mut bad = Vec::new();
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.len() != runs[0].len() {
            bad.push(format!("run {i} wrote {} files vs {}", r.len(), runs[0].len()));
        }
        for ((na, ba), (nb, bb)) in runs[0].iter().zip(r) {
            if na != nb || ba != bb {
                bad.push(format!("run {i}: {na} differs"));
            }
        }
    }
    let files = runs[0].len();
    let bytes: usize = runs[0].iter().map(|(_, b)| b.len()).sum();
    check(bad.is_empty(), format!("{files} artifacts ({bytes} bytes) from all 11 commands identical across workers 1, 4, 8 and a rerun {bad:?}"))
}

fn brute_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let below = v.iter().filter(|y| *y < x).count() as f64;
                let same = v.iter().filter(|y| *y == x).count() as f64;
                below + (same + 1.0) / 2.0
            })
            .collect()
    };
    let (a, b) = (rank(xs), rank(ys));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_10() -> Outcome {
    let root = RngStream::new(77);
    let mut worst: f64 = 0.0;
    let mut tied = 0;
    for i in 0..100u64 {
        let mut r = root.index(i).rng();
        let n = r.uniform_int(5, 60);
        let levels = r.uniform_int(2, 12) as f64;
        let xs: Vec<f64> = (0..n).map(|_| (r.uniform(0.0, 1.0) * levels).floor()).collect();
        let ys: Vec<f64> = (0..n).map(|j| if j % 3 == 0 { r.normal() } else { (r.normal() * 2.0).round() }).collect();
        if xs.iter().all(|x| *x == xs[0]) || ys.iter().all(|y| *y == ys[0]) {
            continue;
        }
        tied += 1;
        worst = worst.max((spearman(&xs, &ys).unwrap() - brute_spearman(&xs, &ys)).abs());
    }
    check(worst <= 1e-12 && tied >= 95, format!("{tied} tied random vector pairs: max |Δρ| {worst:.2e} (≤ 1e-12)"))
}

/// Written past the test harness capture so the report appears in plain `cargo test` output.
fn report(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("1 gradient exactness", criterion_1),
        ("2 K-FAC exactness cases", criterion_2),
        ("3 EK-FAC dominance", criterion_3),
        ("4 damped-solve correctness", criterion_4),
        ("5 influence-derivative exactness", criterion_5),
        ("6 compression fidelity", criterion_6),
        ("7 desk LDS benchmark", criterion_7),
        ("8 remove-top ablation", criterion_8),
        ("9 determinism", criterion_9),
        ("10 spearman oracle", criterion_10),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(format!("panicked: {}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()))
        });
        match outcome {
            Ok(d) => report(&format!("PASS criterion {name}: {d}")),
            Err(d) => {
                report(&format!("FAIL criterion {name}: {d}"));
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
