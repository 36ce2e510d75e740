//! Retraining ground truth and the statistics comparing it to predictions.

use serde::{Deserialize, Serialize};

use crate::curvature::CurvatureState;
use crate::data::Example;
use crate::diffusion::{measure, MeasurementFn, MeasurementKind, NoiseSchedule, Query};
use crate::error::{Error, Result};
use crate::influence::{influence_scores, predict_subset_delta, QueryItem, ScoreMatrix, TrainGradSpec};
use crate::nn::{train_from_scratch, ArchConfig, EpsilonNet, TrainConfig};
use crate::par;
use crate::rng::RngStream;

/// `m` random subsets of `⌊n·fraction⌋` distinct indices, each sorted.
pub fn sample_subsets(n: usize, m: usize, fraction: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("subset fraction must lie in (0, 1), got {fraction}")));
    }
    if m == 0 {
        return Err(Error::Config("need at least one subset".into()));
    }
    let k = (n as f64 * fraction).floor() as usize;
    let root = RngStream::new(seed).child("subsets");
    Ok((0..m)
        .map(|i| {
            let mut s = root.index(i as u64).rng().sample_without_replacement(n, k);
            s.sort_unstable();
            s
        })
        .collect())
}

/// Weight vector with ones on `subset` and zeros elsewhere.
pub fn subset_weights(n: usize, subset: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for &i in subset {
        w[i] = 1.0;
    }
    w
}

/// Indices of `0..n` not in `subset`.
pub fn complement(n: usize, subset: &[usize]) -> Vec<usize> {
    let mut keep = vec![false; n];
    for &i in subset {
        keep[i] = true;
    }
    (0..n).filter(|&i| !keep[i]).collect()
}

/// Everything needed to retrain from scratch.
#[derive(Debug, Clone, Copy)]
pub struct RetrainSetup<'a> {
    pub arch: &'a ArchConfig,
    pub schedule: &'a NoiseSchedule,
    pub dataset: &'a [Vec<f64>],
    pub train: &'a TrainConfig,
}

impl RetrainSetup<'_> {
    pub fn train(&self, weights: &[f64], seed: u64) -> Result<EpsilonNet> {
        Ok(train_from_scratch(self.arch, self.schedule, self.dataset, weights, self.train, seed)?.net)
    }
}

/// Retrained models, `M × K`; `None` marks a diverged run.
pub type ModelGrid = Vec<Vec<Option<EpsilonNet>>>;

pub fn retrain_models(setup: &RetrainSetup, weights: &[Vec<f64>], seeds: &[u64]) -> Result<ModelGrid> {
    let jobs: Vec<(usize, usize)> = (0..weights.len()).flat_map(|i| (0..seeds.len()).map(move |k| (i, k))).collect();
    let nets = par::map(&jobs, |&(i, k)| match setup.train(&weights[i], seeds[k]) {
        Ok(net) => Ok(Some(net)),
        Err(Error::TrainingDiverged { step }) => {
            log::warn!("retrain {i}/{k} diverged at step {step}; cell dropped");
            Ok(None)
        }
        Err(e) => Err(e),
    })?;
    let mut grid: ModelGrid = vec![Vec::with_capacity(seeds.len()); weights.len()];
    for ((i, _), net) in jobs.into_iter().zip(nets) {
        grid[i].push(net);
    }
    Ok(grid)
}

/// Oracle measurements `M × K × Q`; missing cells are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTensor {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl OracleTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        let m = self.values.len();
        let k = self.values.first().map_or(0, Vec::len);
        let q = self.values.first().and_then(|v| v.first()).map_or(0, Vec::len);
        (m, k, q)
    }

    /// Seed-averaged measurement per subset and query, over finite cells.
    pub fn ensemble_mean(&self) -> Vec<Vec<f64>> {
        let (_, _, q) = self.shape();
        self.values
            .iter()
            .map(|seeds| {
                (0..q)
                    .map(|j| {
                        let vals: Vec<f64> = seeds.iter().map(|s| s[j]).filter(|v| v.is_finite()).collect();
                        if vals.is_empty() {
                            f64::NAN
                        } else {
                            vals.iter().sum::<f64>() / vals.len() as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn missing(&self) -> usize {
        self.values.iter().flatten().flatten().filter(|v| !v.is_finite()).count()
    }
}

/// Evaluate every model on every query; each query's own measurement stream
/// is shared by all models.
pub fn measure_models(models: &ModelGrid, schedule: &NoiseSchedule, queries: &[QueryItem]) -> Result<OracleTensor> {
    let values = models
        .iter()
        .map(|row| {
            row.iter()
                .map(|net| match net {
                    None => Ok(vec![f64::NAN; queries.len()]),
                    Some(net) => par::map(queries, |q| measure(net, schedule, &q.measurement, &q.query)),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleTensor { values })
}

pub fn retrain_oracle(setup: &RetrainSetup, weights: &[Vec<f64>], seeds: &[u64], queries: &[QueryItem]) -> Result<OracleTensor> {
    measure_models(&retrain_models(setup, weights, seeds)?, setup.schedule, queries)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Tie-aware Spearman rank correlation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("spearman of lengths {} and {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("spearman input".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdsResult {
    pub per_query: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

pub fn summarize(per_query: Vec<f64>) -> LdsResult {
    let q = per_query.len() as f64;
    let mean = per_query.iter().sum::<f64>() / q;
    let stderr = if per_query.len() > 1 {
        (per_query.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (q - 1.0)).sqrt() / q.sqrt()
    } else {
        0.0
    };
    LdsResult { per_query, mean, stderr }
}

/// Per query, Spearman between `predictions[i][q]` and the seed-averaged
/// oracle over subsets `i`. Subsets whose oracle cells are all missing are
/// dropped for that query.
pub fn lds(predictions: &[Vec<f64>], oracle: &OracleTensor) -> Result<LdsResult> {
    let (m, _, q) = oracle.shape();
    if predictions.len() != m || predictions.iter().any(|r| r.len() != q) {
        return Err(Error::Shape(format!("predictions must be {m} × {q}")));
    }
    let mean = oracle.ensemble_mean();
    let per_query = (0..q)
        .map(|j| {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                (0..m).filter(|&i| mean[i][j].is_finite()).map(|i| (predictions[i][j], mean[i][j])).unzip();
            if xs.len() < m {
                log::warn!("query {j}: {} subsets without oracle values dropped", m - xs.len());
            }
            spearman(&xs, &ys)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per_query))
}

/// Predicted measurement change per subset (`M × Q`): removal of each
/// subset's complement.
pub fn predictions_from_scores(sm: &ScoreMatrix, subsets: &[Vec<usize>], n: usize) -> Result<Vec<Vec<f64>>> {
    subsets
        .iter()
        .map(|s| {
            let removed: Vec<u64> = complement(n, s).into_iter().map(|i| sm.train_ids[i]).collect();
            predict_subset_delta(sm, &removed, n, 1.0)
        })
        .collect()
}

/// Scores drawn i.i.d. from `N(0, 1)`: the chance baseline.
pub fn random_scores(like: &ScoreMatrix, seed: u64) -> ScoreMatrix {
    let root = RngStream::new(seed).child("random-scores");
    let mut out = like.clone();
    out.scores = (0..like.scores.len()).map(|q| root.index(q as u64).rng().normal_vec(like.train_ids.len())).collect();
    out.meta.curvature = "random".into();
    out
}

/// Measurement changes after retraining without per-query removal sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalOutcome {
    pub removed: Vec<Vec<usize>>,
    /// `m(θ*(D′)) − m(θ*(D))` per query; NaN for a diverged retrain.
    pub deltas: Vec<f64>,
}

/// Retrain once per query with that query's removal set and the given seed.
pub fn remove_and_retrain(setup: &RetrainSetup, removed: Vec<Vec<usize>>, seed: u64, queries: &[QueryItem]) -> Result<RemovalOutcome> {
    if removed.len() != queries.len() {
        return Err(Error::Shape("one removal set per query".into()));
    }
    let n = setup.dataset.len();
    let base = setup.train(&vec![1.0; n], seed)?;
    let deltas = par::map(&(0..queries.len()).collect::<Vec<_>>(), |&q| {
        let mut w = vec![1.0; n];
        for &i in &removed[q] {
            w[i] = 0.0;
        }
        let item = &queries[q];
        let before = measure(&base, setup.schedule, &item.measurement, &item.query)?;
        match setup.train(&w, seed) {
            Ok(net) => Ok(measure(&net, setup.schedule, &item.measurement, &item.query)? - before),
            Err(Error::TrainingDiverged { step }) => {
                log::warn!("remove-top retrain for query {q} diverged at step {step}");
                Ok(f64::NAN)
            }
            Err(e) => Err(e),
        }
    })?;
    Ok(RemovalOutcome { removed, deltas })
}

pub fn removal_count(n: usize, percent: f64) -> Result<usize> {
    if !(0.0..100.0).contains(&percent) {
        return Err(Error::Config(format!("percent must lie in [0, 100), got {percent}")));
    }
    Ok((percent * n as f64 / 100.0).ceil() as usize)
}

/// Remove the `⌈percent·N/100⌉` highest-scoring examples per query and
/// retrain.
pub fn remove_top_and_retrain(sm: &ScoreMatrix, percent: f64, setup: &RetrainSetup, seed: u64, queries: &[QueryItem]) -> Result<RemovalOutcome> {
    let k = removal_count(setup.dataset.len(), percent)?;
    let removed = (0..sm.scores.len()).map(|q| sm.top_k(q, k)).collect();
    remove_and_retrain(setup, removed, seed, queries)
}

/// Same-size random removals; the comparison arm for remove-top.
pub fn remove_random_and_retrain(percent: f64, setup: &RetrainSetup, seed: u64, queries: &[QueryItem], pick_seed: u64) -> Result<RemovalOutcome> {
    let n = setup.dataset.len();
    let k = removal_count(n, percent)?;
    let root = RngStream::new(pick_seed).child("random-removal");
    let removed = (0..queries.len()).map(|q| root.index(q as u64).rng().sample_without_replacement(n, k)).collect();
    remove_and_retrain(setup, removed, seed, queries)
}

/// Predict with one retrained model per subset (single fixed seed).
pub fn exact_retraining_predictor(setup: &RetrainSetup, weights: &[Vec<f64>], seed: u64, queries: &[QueryItem]) -> Result<Vec<Vec<f64>>> {
    let t = retrain_oracle(setup, weights, &[seed], queries)?;
    Ok(t.values.into_iter().map(|mut seeds| seeds.remove(0)).collect())
}

/// Inputs of the per-timestep cross-LDS grid.
pub struct CrossLdsInput<'a> {
    pub net: &'a EpsilonNet,
    pub schedule: &'a NoiseSchedule,
    pub state: &'a CurvatureState,
    pub damping: f64,
    pub examples: &'a [Example],
    pub train_spec: &'a TrainGradSpec,
    pub points: &'a [Vec<f64>],
    pub samples: usize,
    pub stream: RngStream,
    pub subsets: &'a [Vec<usize>],
    pub models: &'a ModelGrid,
}

fn timestep_queries(points: &[Vec<f64>], t: usize, samples: usize, stream: &RngStream) -> Vec<QueryItem> {
    points
        .iter()
        .enumerate()
        .map(|(i, x)| QueryItem {
            id: i as u64,
            query: Query::Point(x.clone()),
            measurement: MeasurementFn::new(MeasurementKind::PerTimestepLoss { t }, samples, stream.index(i as u64)),
        })
        .collect()
}

/// Entry `(a, b)` is the mean LDS of influence predictions built with the
/// measurement `ℓ_{proxy[a]}` against retrained changes in `ℓ_{target[b]}`.
pub fn timestep_cross_lds(input: &CrossLdsInput, proxy_ts: &[usize], target_ts: &[usize]) -> Result<Vec<Vec<f64>>> {
    let n = input.examples.len();
    let oracles = target_ts
        .iter()
        .map(|&t| measure_models(input.models, input.schedule, &timestep_queries(input.points, t, input.samples, &input.stream)))
        .collect::<Result<Vec<_>>>()?;
    proxy_ts
        .iter()
        .map(|&tp| {
            let qs = timestep_queries(input.points, tp, input.samples, &input.stream);
            let sm = influence_scores(input.net, input.schedule, input.state, input.damping, &qs, input.examples, input.train_spec, false)?;
            let preds = predictions_from_scores(&sm, input.subsets, n)?;
            oracles.iter().map(|o| Ok(lds(&preds, o)?.mean)).collect::<Result<Vec<_>>>()
        })
        .collect()
}
