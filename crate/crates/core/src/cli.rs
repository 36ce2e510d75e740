//! Command-line front end. Every command reads the run config, loads the
//! artifacts it depends on from the output directory, checks their
//! provenance, and writes its own container artifacts plus a CSV summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::artifact::{load, save, Artifact, OracleSet, SampleSet, Table};
use crate::config::{parse_config, RunConfig};
use crate::curvature::{accumulate_kfac, dense_ggn, ekfac_correct, projected_ef, Backend, CurvatureState, KfacConfig, Payload};
use crate::data::{generate, with_ids, Example};
use crate::diffusion::{ddpm_sample, measure, MeasurementFn, MeasurementKind, NoiseSchedule, Query};
use crate::error::{Error, Result};
use crate::eval::{
    exact_retraining_predictor, lds, predictions_from_scores, random_scores, remove_random_and_retrain, remove_top_and_retrain, retrain_models,
    retrain_oracle, sample_subsets, subset_weights, timestep_cross_lds, CrossLdsInput, LdsResult, RetrainSetup,
};
use crate::influence::{build_train_cache, influence_sweep, score_queries, QueryItem, ScoreMatrix, TrainCache, TrainGradSpec};
use crate::nn::{train_from_scratch, EpsilonNet};
use crate::par;
use crate::rng::RngStream;

#[derive(Debug, Parser)]
#[command(name = "dinf", version, about = "Influence functions for toy diffusion models")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; never changes output bytes.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Replace the master seed of the config.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Train the base model.
    Train,
    /// Generate query samples with the base model.
    Sample,
    /// Evaluate the configured measurement on every sample.
    Measure,
    /// Fit the configured curvature backend.
    Factors,
    /// Score every training example for every query, for each damping value.
    Influence,
    /// Precompute preconditioned training gradients, then score queries against them.
    Cache,
    /// Draw LDS subsets and retrain on each.
    LdsMake,
    /// LDS of every available predictor, or of a predictions file.
    LdsEval {
        /// CSV with one row per subset and one column per query.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Retrain without the top-scoring examples and compare with random removals.
    AblateRemoveTop,
    /// LDS grid of per-timestep proxy measurements against per-timestep targets.
    TimestepGrid,
    /// Plain tables for external plotting.
    ExportPlotdata,
}

/// A config bound to an output directory.
pub struct Workspace {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

fn fmt_row(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

impl Workspace {
    pub fn new(cfg: RunConfig, out: &Path) -> Self {
        let hash = cfg.hash();
        Self { cfg, hash, out: out.to_path_buf() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn save<A: Artifact>(&self, a: &A, name: &str) -> Result<()> {
        save(a, &self.hash, &self.path(name))
    }

    /// Load an input artifact produced under this same config.
    pub fn load<A: Artifact>(&self, name: &str) -> Result<A> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::Artifact(format!("{} not found; run the producing command first", path.display())));
        }
        let (a, hash) = load::<A>(&path)?;
        if hash != self.hash {
            return Err(Error::Provenance(format!("{name} was written under config {hash}, current config is {}", self.hash)));
        }
        Ok(a)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(p, text)?;
        Ok(())
    }

    fn header(&self, what: &str) -> String {
        format!("# config_hash={} {what}\n", self.hash)
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        self.cfg.noise_schedule()
    }

    fn dataset(&self) -> Result<Vec<Vec<f64>>> {
        generate(&self.cfg.dataset_spec())
    }

    fn net(&self) -> Result<EpsilonNet> {
        self.load("net.dinf")
    }

    fn samples(&self, net: &EpsilonNet) -> Result<SampleSet> {
        let s: SampleSet = self.load("samples.dinf")?;
        if s.net_hash != net.fingerprint() {
            return Err(Error::Provenance("samples.dinf was generated by a different network".into()));
        }
        Ok(s)
    }

    fn curvature(&self, net: &EpsilonNet) -> Result<CurvatureState> {
        let c: CurvatureState = self.load("curvature.dinf")?;
        c.check_net(net)?;
        Ok(c)
    }

    fn scores(&self, k: usize, net: &EpsilonNet) -> Result<ScoreMatrix> {
        let s: ScoreMatrix = self.load(&format!("scores-{k}.dinf"))?;
        if s.meta.net_hash != net.fingerprint() {
            return Err(Error::Provenance(format!("scores-{k}.dinf was computed for a different network")));
        }
        Ok(s)
    }

    fn train_spec(&self) -> TrainGradSpec {
        TrainGradSpec { samples: self.cfg.attribution.train_samples, stream: RngStream::new(self.cfg.seeds().train_grads).child("train") }
    }

    /// Queries built from the first `count` samples, each with its own
    /// measurement stream.
    pub fn queries(&self, samples: &SampleSet, kind: MeasurementKind, count: usize) -> Vec<QueryItem> {
        let root = RngStream::new(self.cfg.seeds().measurement).child("query");
        samples
            .trajectories
            .iter()
            .take(count)
            .enumerate()
            .map(|(i, tr)| QueryItem {
                id: i as u64,
                query: match kind {
                    MeasurementKind::TrajectoryLogProb => Query::Trajectory(tr.clone()),
                    _ => Query::Point(tr.sample().to_vec()),
                },
                measurement: MeasurementFn::new(kind, self.cfg.attribution.measurement_samples, root.index(i as u64)),
            })
            .collect()
    }

    fn eval_queries(&self, net: &EpsilonNet) -> Result<Vec<QueryItem>> {
        let samples = self.samples(net)?;
        Ok(self.queries(&samples, self.cfg.attribution.measurement, self.cfg.evaluation.queries))
    }

    pub fn run(&self, cmd: &Command) -> Result<String> {
        std::fs::create_dir_all(&self.out)?;
        match cmd {
            Command::Train => self.train(),
            Command::Sample => self.sample(),
            Command::Measure => self.measure(),
            Command::Factors => self.factors(),
            Command::Influence => self.influence(),
            Command::Cache => self.cache(),
            Command::LdsMake => self.lds_make(),
            Command::LdsEval { predictions } => self.lds_eval(predictions.as_deref()),
            Command::AblateRemoveTop => self.ablate(),
            Command::TimestepGrid => self.timestep_grid(),
            Command::ExportPlotdata => self.export_plotdata(),
        }
    }

    fn train(&self) -> Result<String> {
        let data = self.dataset()?;
        let schedule = self.schedule()?;
        let out = train_from_scratch(&self.cfg.arch(), &schedule, &data, &vec![1.0; data.len()], &self.cfg.train_config(), self.cfg.seeds().init)?;
        self.save(&out.net, "net.dinf")?;
        let mut t = Table::new("loss_curve", &["step", "loss"]);
        let every = self.cfg.training.log_every.max(1);
        t.rows = out.loss_curve.iter().enumerate().map(|(i, &l)| vec![((i + 1) * every).min(self.cfg.training.steps) as f64, l]).collect();
        self.save(&t, "loss.dinf")?;
        self.write_text("train.csv", &t.to_csv(&self.hash))?;
        let last = out.loss_curve.last().copied().unwrap_or(f64::NAN);
        Ok(format!("trained {} parameters on {} examples; final loss {last:.5}", out.net.param_count(), data.len()))
    }

    fn sample(&self) -> Result<String> {
        let net = self.net()?;
        let schedule = self.schedule()?;
        let base = self.cfg.seeds().sampling;
        let seeds: Vec<u64> = (0..self.cfg.sampling.count as u64).map(|i| base.wrapping_add(i)).collect();
        let trajectories = par::map(&seeds, |&s| Ok(ddpm_sample(&net, &schedule, s, true)?.1.expect("trajectory recorded")))?;
        let set = SampleSet { net_hash: net.fingerprint(), trajectories };
        self.save(&set, "samples.dinf")?;
        let mut csv = self.header("samples");
        csv.push_str("query_id,seed");
        for j in 0..net.data_dim() {
            let _ = write!(csv, ",x{j}");
        }
        csv.push('\n');
        for (i, tr) in set.trajectories.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{}", tr.seed, fmt_row(tr.sample()));
        }
        self.write_text("samples.csv", &csv)?;
        Ok(format!("generated {} samples", set.trajectories.len()))
    }

    fn measure(&self) -> Result<String> {
        let net = self.net()?;
        let schedule = self.schedule()?;
        let samples = self.samples(&net)?;
        let queries = self.queries(&samples, self.cfg.attribution.measurement, samples.trajectories.len());
        let vals = par::map(&queries, |q| measure(&net, &schedule, &q.measurement, &q.query))?;
        let mut t = Table::new(&format!("measurement:{}", self.cfg.attribution.measurement.describe()), &["query_id", "value"]);
        t.rows = vals.iter().enumerate().map(|(i, v)| vec![i as f64, *v]).collect();
        self.save(&t, "measurements.dinf")?;
        self.write_text("measure.csv", &t.to_csv(&self.hash))?;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        Ok(format!("measured {} queries; mean {mean:.5}", vals.len()))
    }

    /// Fit the configured curvature backend for `net`.
    pub fn fit_curvature(&self, net: &EpsilonNet, examples: &[Example]) -> Result<CurvatureState> {
        let a = &self.cfg.attribution;
        let schedule = self.schedule()?;
        let root = RngStream::new(self.cfg.seeds().curvature);
        let kcfg = KfacConfig { ggn_kind: a.ggn_kind, sharing: a.sharing, samples: a.samples, targets: a.targets };
        match a.backend {
            Backend::Kfac => accumulate_kfac(net, &schedule, examples, &kcfg, &root.child("kfac")),
            Backend::Ekfac => {
                let k = accumulate_kfac(net, &schedule, examples, &kcfg, &root.child("kfac"))?;
                ekfac_correct(&k, net, &schedule, examples, a.correction_samples, &root.child("ekfac"))
            }
            Backend::DenseGgn => dense_ggn(net, &schedule, examples, a.ggn_kind, a.samples, &root.child("dense")),
            Backend::ProjectedEf => projected_ef(net, &schedule, examples, a.d_proj, self.cfg.seeds().projection, a.projection, a.train_samples, &root.child("projected")),
        }
    }

    fn factors(&self) -> Result<String> {
        let net = self.net()?;
        let examples = with_ids(&self.dataset()?);
        let state = self.fit_curvature(&net, &examples)?;
        self.save(&state, "curvature.dinf")?;
        let mut csv = self.header(&state.describe());
        csv.push_str("block,dim,trace,max_eigenvalue\n");
        match &state.payload {
            Payload::Kron(layers) => {
                for (l, k) in layers.iter().enumerate() {
                    let s = k.spectrum();
                    let _ = writeln!(csv, "{l},{},{},{}", k.d_in() * k.d_out(), s.sum(), s.max());
                }
            }
            Payload::Dense(d) => {
                let _ = writeln!(csv, "0,{},{},{}", d.evals.len(), d.evals.sum(), d.evals.max());
            }
            Payload::Projected(p) => {
                let _ = writeln!(csv, "0,{},{},{}", p.d_proj, p.h.evals.sum(), p.h.evals.max());
            }
        }
        self.write_text("factors.csv", &csv)?;
        Ok(format!("fitted {}", state.describe()))
    }

    fn influence(&self) -> Result<String> {
        let net = self.net()?;
        let schedule = self.schedule()?;
        let state = self.curvature(&net)?;
        let queries = self.eval_queries(&net)?;
        let examples = with_ids(&self.dataset()?);
        let a = &self.cfg.attribution;
        let sms = influence_sweep(&net, &schedule, &state, &a.damping, &queries, &examples, &self.train_spec(), a.compression)?;
        let mut csv = self.header("influence");
        csv.push_str("index,damping,file,mean_abs_score\n");
        for (k, sm) in sms.iter().enumerate() {
            self.save(sm, &format!("scores-{k}.dinf"))?;
            self.write_text(&format!("scores-{k}.csv"), &sm.to_csv(&self.hash))?;
            let n = (sm.scores.len() * sm.train_ids.len()) as f64;
            let mean_abs = sm.scores.iter().flatten().map(|v| v.abs()).sum::<f64>() / n;
            let _ = writeln!(csv, "{k},{},scores-{k}.dinf,{mean_abs}", sm.meta.damping);
        }
        self.write_text("influence.csv", &csv)?;
        Ok(format!("scored {} queries × {} examples at {} damping values", queries.len(), examples.len(), sms.len()))
    }

    fn cache(&self) -> Result<String> {
        let net = self.net()?;
        let schedule = self.schedule()?;
        let state = self.curvature(&net)?;
        let examples = with_ids(&self.dataset()?);
        let a = &self.cfg.attribution;
        let cache = build_train_cache(&net, &schedule, &state, a.damping[0], &examples, &self.train_spec(), a.compression)?;
        self.save(&cache, "cache.dinf")?;
        let cache: TrainCache = self.load("cache.dinf")?;
        if cache.net_hash != net.fingerprint() {
            return Err(Error::Provenance("cache.dinf was built for a different network".into()));
        }
        let sm = score_queries(&cache, &net, &schedule, &state, &self.eval_queries(&net)?)?;
        self.save(&sm, "cache-scores.dinf")?;
        self.write_text("cache-scores.csv", &sm.to_csv(&self.hash))?;
        Ok(format!("cached {} training vectors; scored {} queries", cache.train_ids.len(), sm.query_ids.len()))
    }

    fn retrain_seeds(&self) -> Vec<u64> {
        let base = self.cfg.seeds().retrain;
        (0..self.cfg.evaluation.seeds as u64).map(|k| base.wrapping_add(k)).collect()
    }

    fn subsets(&self) -> Result<Vec<Vec<usize>>> {
        let e = &self.cfg.evaluation;
        sample_subsets(self.cfg.dataset.n, e.subsets, e.fraction, self.cfg.seeds().subsets)
    }

    fn lds_make(&self) -> Result<String> {
        let net = self.net()?;
        let queries = self.eval_queries(&net)?;
        let data = self.dataset()?;
        let schedule = self.schedule()?;
        let arch = self.cfg.arch();
        let tcfg = self.cfg.subset_train_config();
        let setup = RetrainSetup { arch: &arch, schedule: &schedule, dataset: &data, train: &tcfg };
        let subsets = self.subsets()?;
        let weights: Vec<Vec<f64>> = subsets.iter().map(|s| subset_weights(data.len(), s)).collect();
        let seeds = self.retrain_seeds();
        let oracle = retrain_oracle(&setup, &weights, &seeds, &queries)?;
        let exact_seed = self.cfg.seeds().retrain.wrapping_add(seeds.len() as u64);
        let exact = exact_retraining_predictor(&setup, &weights, exact_seed, &queries)?;
        let missing = oracle.missing();
        let set = OracleSet { net_hash: net.fingerprint(), subsets, seeds, query_ids: queries.iter().map(|q| q.id).collect(), oracle };
        self.save(&set, "oracle.dinf")?;
        let q = queries.len();
        let mut t = Table::new("exact_retraining", &(0..q).map(|j| format!("q{j}")).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>());
        t.rows = exact;
        self.save(&t, "exact.dinf")?;
        let mut csv = self.header("oracle ensemble means");
        csv.push_str(&format!("subset,{}\n", (0..q).map(|j| format!("q{j}")).collect::<Vec<_>>().join(",")));
        for (i, row) in set.oracle.ensemble_mean().iter().enumerate() {
            let _ = writeln!(csv, "{i},{}", fmt_row(row));
        }
        self.write_text("lds-make.csv", &csv)?;
        let (m, k, _) = set.oracle.shape();
        Ok(format!("retrained {m} subsets × {k} seeds ({missing} missing cells) plus {m} exact-predictor runs"))
    }

    fn lds_eval(&self, predictions: Option<&Path>) -> Result<String> {
        let net = self.net()?;
        let set: OracleSet = self.load("oracle.dinf")?;
        if set.net_hash != net.fingerprint() {
            return Err(Error::Provenance("oracle.dinf belongs to a different base network".into()));
        }
        if let Some(p) = predictions {
            let preds = read_prediction_csv(p)?;
            let r = lds(&preds, &set.oracle)?;
            let mut out = String::new();
            let mut csv = self.header("lds of external predictions");
            csv.push_str("query,lds\n");
            for (j, v) in r.per_query.iter().enumerate() {
                let _ = writeln!(out, "query {j}: LDS {v:.3}");
                let _ = writeln!(csv, "{j},{v}");
            }
            let _ = write!(out, "mean LDS {:.3} ± {:.3}", r.mean, r.stderr);
            self.write_text("lds-predictions.csv", &csv)?;
            return Ok(out);
        }

        let n = self.cfg.dataset.n;
        let mut rows: Vec<(String, f64, LdsResult)> = Vec::new();
        for (k, &d) in self.cfg.attribution.damping.iter().enumerate() {
            let sm = self.scores(k, &net)?;
            rows.push((sm.meta.curvature.clone(), d, lds(&predictions_from_scores(&sm, &set.subsets, n)?, &set.oracle)?));
        }
        let rs = random_scores(&self.scores(0, &net)?, self.cfg.seeds().baseline);
        rows.push(("random".into(), f64::NAN, lds(&predictions_from_scores(&rs, &set.subsets, n)?, &set.oracle)?));
        let exact: Table = self.load("exact.dinf")?;
        rows.push(("exact_retraining".into(), f64::NAN, lds(&exact.rows, &set.oracle)?));

        let mut t = Table::new("lds", &["method", "damping", "mean", "stderr"]);
        let mut csv = self.header("lds");
        csv.push_str("method,damping,mean,stderr\n");
        let mut out = String::new();
        for (i, (name, d, r)) in rows.iter().enumerate() {
            t.rows.push(vec![i as f64, *d, r.mean, r.stderr]);
            let _ = writeln!(csv, "{name},{d},{},{}", r.mean, r.stderr);
            let _ = writeln!(out, "{name:<40} damping {d:<8e} LDS {:.3} ± {:.3}", r.mean, r.stderr);
        }
        self.save(&t, "lds.dinf")?;
        self.write_text("lds.csv", &csv)?;
        Ok(out.trim_end().to_owned())
    }

    fn ablate(&self) -> Result<String> {
        let net = self.net()?;
        let sm = self.scores(0, &net)?;
        let data = self.dataset()?;
        let schedule = self.schedule()?;
        let arch = self.cfg.arch();
        let tcfg = self.cfg.train_config();
        let setup = RetrainSetup { arch: &arch, schedule: &schedule, dataset: &data, train: &tcfg };
        let nq = self.cfg.evaluation.remove_queries;
        let queries: Vec<QueryItem> = self.eval_queries(&net)?.into_iter().take(nq).collect();
        let mut sm = sm;
        sm.scores.truncate(nq);
        sm.query_ids.truncate(nq);
        let seed = self.cfg.seeds().init;
        let mut t = Table::new("remove_top", &["percent", "query", "top_delta", "random_delta"]);
        let mut csv = self.header("remove-top ablation");
        csv.push_str("percent,mean_top_delta,mean_random_delta\n");
        let mut out = String::new();
        for &p in &self.cfg.evaluation.percent {
            let top = remove_top_and_retrain(&sm, p, &setup, seed, &queries)?;
            let rnd = remove_random_and_retrain(p, &setup, seed, &queries, self.cfg.seeds().baseline)?;
            for q in 0..queries.len() {
                t.rows.push(vec![p, q as f64, top.deltas[q], rnd.deltas[q]]);
            }
            let mt = mean(&top.deltas);
            let mr = mean(&rnd.deltas);
            let _ = writeln!(csv, "{p},{mt},{mr}");
            let _ = writeln!(out, "remove {p}%: top-influence delta {mt:.5}, random delta {mr:.5}");
        }
        self.save(&t, "remove-top.dinf")?;
        self.write_text("remove-top.csv", &csv)?;
        Ok(out.trim_end().to_owned())
    }

    fn timestep_grid(&self) -> Result<String> {
        let net = self.net()?;
        let schedule = self.schedule()?;
        let state = self.curvature(&net)?;
        let samples = self.samples(&net)?;
        let data = self.dataset()?;
        let examples = with_ids(&data);
        let arch = self.cfg.arch();
        let tcfg = self.cfg.subset_train_config();
        let setup = RetrainSetup { arch: &arch, schedule: &schedule, dataset: &data, train: &tcfg };
        let subsets = self.subsets()?;
        let weights: Vec<Vec<f64>> = subsets.iter().map(|s| subset_weights(data.len(), s)).collect();
        let models = retrain_models(&setup, &weights, &self.retrain_seeds())?;
        let points = samples.samples().into_iter().take(self.cfg.evaluation.queries).collect::<Vec<_>>();
        let spec = self.train_spec();
        let e = &self.cfg.evaluation;
        let input = CrossLdsInput {
            net: &net,
            schedule: &schedule,
            state: &state,
            damping: self.cfg.attribution.damping[0],
            examples: &examples,
            train_spec: &spec,
            points: &points,
            samples: self.cfg.attribution.measurement_samples,
            stream: RngStream::new(self.cfg.seeds().measurement).child("timestep"),
            subsets: &subsets,
            models: &models,
        };
        let grid = timestep_cross_lds(&input, &e.proxy_timesteps, &e.target_timesteps)?;
        let mut t = Table::new("timestep_grid", &["proxy_t", "target_t", "lds"]);
        for (a, &tp) in e.proxy_timesteps.iter().enumerate() {
            for (b, &tt) in e.target_timesteps.iter().enumerate() {
                t.rows.push(vec![tp as f64, tt as f64, grid[a][b]]);
            }
        }
        self.save(&t, "timestep-grid.dinf")?;
        self.write_text("timestep-grid.csv", &t.to_csv(&self.hash))?;
        Ok(format!("{}×{} timestep grid written", grid.len(), e.target_timesteps.len()))
    }

    fn export_plotdata(&self) -> Result<String> {
        let mut written = Vec::new();
        if self.path("lds.dinf").exists() {
            let t: Table = self.load("lds.dinf")?;
            let mut sweep = Table::new("damping_sweep", &["damping", "mean_lds", "stderr"]);
            let mut bars = Table::new("lds_bars", &["method", "mean_lds", "stderr"]);
            for r in &t.rows {
                if r[1].is_finite() {
                    sweep.rows.push(vec![r[1], r[2], r[3]]);
                }
                bars.rows.push(vec![r[0], r[2], r[3]]);
            }
            self.write_text("plotdata/damping_sweep.csv", &sweep.to_csv(&self.hash))?;
            self.write_text("plotdata/lds_bars.csv", &bars.to_csv(&self.hash))?;
            written.extend(["damping_sweep.csv", "lds_bars.csv"]);
        }
        if self.path("oracle.dinf").exists() {
            let set: OracleSet = self.load("oracle.dinf")?;
            let mean = set.oracle.ensemble_mean();
            let q = set.query_ids.len();
            let mut t = Table::new("oracle_mean", &(0..q).map(|j| format!("q{j}")).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>());
            t.rows = mean;
            self.write_text("plotdata/oracle_mean.csv", &t.to_csv(&self.hash))?;
            written.push("oracle_mean.csv");
        }
        for (src, dst) in [("timestep-grid.dinf", "timestep_grid.csv"), ("remove-top.dinf", "remove_top.csv"), ("loss.dinf", "loss_curve.csv")] {
            if self.path(src).exists() {
                let t: Table = self.load(src)?;
                self.write_text(&format!("plotdata/{dst}"), &t.to_csv(&self.hash))?;
                written.push(dst);
            }
        }
        if written.is_empty() {
            return Err(Error::Artifact("nothing to export; run the evaluation commands first".into()));
        }
        Ok(format!("exported {}", written.join(", ")))
    }
}

fn mean(v: &[f64]) -> f64 {
    let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    f.iter().sum::<f64>() / f.len() as f64
}

/// Rows of numbers; `#` lines and a non-numeric header row are skipped, and
/// a leading integer index column matching the row number is dropped.
pub fn read_prediction_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let cells: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match cells {
            Ok(c) => rows.push(c),
            Err(_) if rows.is_empty() => continue,
            Err(e) => return Err(Error::Config(format!("{}: {e} in `{line}`", path.display()))),
        }
    }
    let indexed = !rows.is_empty() && rows.iter().enumerate().all(|(i, r)| r.len() > 1 && r[0] == i as f64);
    let header_has_index = text.lines().find(|l| !l.starts_with('#')).is_some_and(|h| h.starts_with("subset,"));
    if indexed && header_has_index {
        for r in &mut rows {
            r.remove(0);
        }
    }
    Ok(rows)
}

/// Entry point behind `main`: parse flags, configure the pool, run.
pub fn main_with(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed_override {
        cfg.seed = s;
    }
    let ws = Workspace::new(cfg, &cli.out);
    match cli.workers {
        Some(0) => Err(Error::Config("--workers must be at least 1".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build().map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| ws.run(&cli.command))
        }
        None => ws.run(&cli.command),
    }
}
