//! The `DINF1` container: named little-endian tensors behind a checksum.
//!
//! Layout: magic `DINF1`, then per record `u32` name length, UTF-8 name,
//! `u8` dtype tag, `u32` rank, `u64` dims, raw payload; finally a `u64`
//! checksum (leading 8 bytes of SHA-256 over everything before it, read
//! little-endian).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curvature::{CurvatureMeta, CurvatureState, DenseCurvature, KronLayer, Payload, ProjectedCurvature};
use crate::curvature::Projection;
use crate::diffusion::{NoiseSchedule, Trajectory};
use crate::error::{Error, Result};
use crate::eval::OracleTensor;
use crate::influence::{CachedVectors, CompressedGradients, CompressedVec, ScoreMatrix, ScoreMeta, TrainCache, TrainGradSpec};
use crate::nn::{ArchConfig, EpsilonNet};

pub const MAGIC: &[u8; 5] = b"DINF1";

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I8(Vec<i8>),
    U64(Vec<u64>),
}

impl Data {
    fn tag(&self) -> u8 {
        match self {
            Data::F64(_) => 0,
            Data::F32(_) => 1,
            Data::I8(_) => 2,
            Data::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            Data::F64(v) => v.len(),
            Data::F32(v) => v.len(),
            Data::I8(v) => v.len(),
            Data::U64(v) => v.len(),
        }
    }

    fn dtype(&self) -> &'static str {
        ["f64", "f32", "i8", "u64"][self.tag() as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Data,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    records: Vec<Record>,
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| Error::Artifact("truncated record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.name.as_str())
    }

    pub fn push(&mut self, name: &str, dims: &[usize], data: Data) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::Artifact(format!("duplicate record `{name}`")));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::Artifact(format!("record `{name}`: dims {dims:?} hold {count} values, got {}", data.len())));
        }
        self.records.push(Record { name: name.into(), dims: dims.iter().map(|&d| d as u64).collect(), data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, dims: &[usize], v: Vec<f64>) -> Result<()> {
        self.push(name, dims, Data::F64(v))
    }

    pub fn push_u64(&mut self, name: &str, v: Vec<u64>) -> Result<()> {
        let n = v.len();
        self.push(name, &[n], Data::U64(v))
    }

    /// Strings are stored as `i8` bytes.
    pub fn push_str(&mut self, name: &str, s: &str) -> Result<()> {
        let bytes: Vec<i8> = s.bytes().map(|b| b as i8).collect();
        let n = bytes.len();
        self.push(name, &[n], Data::I8(bytes))
    }

    pub fn push_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.push_str(name, &serde_json::to_string(value)?)
    }

    /// Row-major `rows × cols`; all rows must share a length.
    pub fn push_rows(&mut self, name: &str, rows: &[Vec<f64>]) -> Result<()> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Artifact(format!("record `{name}`: ragged rows")));
        }
        self.push_f64(name, &[rows.len(), cols], rows.concat())
    }

    /// Column-major, matching nalgebra storage.
    pub fn push_matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        self.push_f64(name, &[m.nrows(), m.ncols()], m.as_slice().to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    fn require(&self, name: &str) -> Result<&Record> {
        self.get(name).ok_or_else(|| Error::Artifact(format!("missing record `{name}`")))
    }

    pub fn f64(&self, name: &str) -> Result<(&[u64], &[f64])> {
        let r = self.require(name)?;
        match &r.data {
            Data::F64(v) => Ok((&r.dims, v)),
            d => Err(Error::Artifact(format!("record `{name}` is {}, expected f64", d.dtype()))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.require(name)?.data {
            Data::U64(v) => Ok(v),
            d => Err(Error::Artifact(format!("record `{name}` is {}, expected u64", d.dtype()))),
        }
    }

    pub fn i8s(&self, name: &str) -> Result<(&[u64], &[i8])> {
        let r = self.require(name)?;
        match &r.data {
            Data::I8(v) => Ok((&r.dims, v)),
            d => Err(Error::Artifact(format!("record `{name}` is {}, expected i8", d.dtype()))),
        }
    }

    pub fn str(&self, name: &str) -> Result<String> {
        let bytes: Vec<u8> = self.i8s(name)?.1.iter().map(|&b| b as u8).collect();
        String::from_utf8(bytes).map_err(|_| Error::Artifact(format!("record `{name}` is not UTF-8")))
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_str(&self.str(name)?).map_err(|e| Error::Artifact(format!("record `{name}`: {e}")))
    }

    pub fn rows(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let (dims, v) = self.f64(name)?;
        let [r, c] = two_dims(name, dims)?;
        Ok(if c == 0 { vec![Vec::new(); r] } else { v.chunks(c).map(<[f64]>::to_vec).collect() })
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (dims, v) = self.f64(name)?;
        let [r, c] = two_dims(name, dims)?;
        Ok(DMatrix::from_column_slice(r, c, v))
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.f64(name)?.1.to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.tag());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &r.data {
                Data::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
                Data::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Artifact("not a DINF1 container".into()));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if checksum(body) != stored {
            return Err(Error::Artifact("checksum mismatch".into()));
        }
        let mut rd = Reader { buf: body, pos: MAGIC.len() };
        let mut c = Container::new();
        while rd.pos < body.len() {
            let len = rd.u32()? as usize;
            let name = std::str::from_utf8(rd.take(len)?).map_err(|_| Error::Artifact("record name is not UTF-8".into()))?.to_owned();
            let tag = rd.take(1)?[0];
            let rank = rd.u32()? as usize;
            let dims = (0..rank).map(|_| rd.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Artifact("dims overflow".into()))?;
            let width = match tag {
                0 | 3 => 8,
                1 => 4,
                2 => 1,
                t => return Err(Error::Artifact(format!("unknown dtype tag {t}"))),
            };
            let raw = rd.take(count.checked_mul(width).ok_or_else(|| Error::Artifact("payload overflow".into()))?)?;
            let data = match tag {
                0 => Data::F64(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
                1 => Data::F32(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
                2 => Data::I8(raw.iter().map(|&b| b as i8).collect()),
                _ => Data::U64(raw.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect()),
            };
            c.push(&name, &dims, data)?;
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn two_dims(name: &str, dims: &[u64]) -> Result<[usize; 2]> {
    match dims {
        [r, c] => Ok([*r as usize, *c as usize]),
        _ => Err(Error::Artifact(format!("record `{name}` has rank {}, expected 2", dims.len()))),
    }
}

/// A typed payload stored in a container under a `kind` record.
pub trait Artifact: Sized {
    const KIND: &'static str;
    fn encode(&self, c: &mut Container) -> Result<()>;
    fn decode(c: &Container) -> Result<Self>;
}

/// Container holding `a`, its kind and the producing config hash.
pub fn pack<A: Artifact>(a: &A, config_hash: &str) -> Result<Container> {
    let mut c = Container::new();
    c.push_str("kind", A::KIND)?;
    c.push_str("config_hash", config_hash)?;
    a.encode(&mut c)?;
    Ok(c)
}

pub fn unpack<A: Artifact>(c: &Container) -> Result<A> {
    let kind = c.str("kind")?;
    if kind != A::KIND {
        return Err(Error::Artifact(format!("expected a `{}` artifact, found `{kind}`", A::KIND)));
    }
    A::decode(c)
}

pub fn save<A: Artifact>(a: &A, config_hash: &str, path: &Path) -> Result<()> {
    pack(a, config_hash)?.write(path)
}

/// Returns the artifact and the config hash it was written under.
pub fn load<A: Artifact>(path: &Path) -> Result<(A, String)> {
    let c = Container::read(path).map_err(|e| match e {
        Error::Artifact(m) => Error::Artifact(format!("{}: {m}", path.display())),
        e => e,
    })?;
    Ok((unpack(&c)?, c.str("config_hash")?))
}

impl Artifact for EpsilonNet {
    const KIND: &'static str = "net";

    fn encode(&self, c: &mut Container) -> Result<()> {
        c.push_json("arch", &self.arch)?;
        c.push_f64("params", &[self.params.len()], self.params.clone())?;
        c.push_str("net_hash", &self.fingerprint())
    }

    fn decode(c: &Container) -> Result<Self> {
        let arch: ArchConfig = c.json("arch")?;
        let net = EpsilonNet::with_params(&arch, c.vector("params")?)?;
        if net.fingerprint() != c.str("net_hash")? {
            return Err(Error::Artifact("net hash does not match its parameters".into()));
        }
        Ok(net)
    }
}

impl Artifact for NoiseSchedule {
    const KIND: &'static str = "schedule";

    fn encode(&self, c: &mut Container) -> Result<()> {
        let t = self.steps;
        c.push_f64("lambda", &[t], self.lambda.clone())?;
        c.push_f64("alpha_bar", &[t], self.alpha_bar.clone())?;
        c.push_f64("sigma", &[t], self.sigma.clone())?;
        c.push_f64("elbo_weight", &[t], self.elbo_weight.clone())
    }

    fn decode(c: &Container) -> Result<Self> {
        let lambda = c.vector("lambda")?;
        Ok(Self { steps: lambda.len(), lambda, alpha_bar: c.vector("alpha_bar")?, sigma: c.vector("sigma")?, elbo_weight: c.vector("elbo_weight")? })
    }
}

/// Generated samples with their full trajectories and sampler seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub net_hash: String,
    pub trajectories: Vec<Trajectory>,
}

impl SampleSet {
    pub fn samples(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().map(|t| t.sample().to_vec()).collect()
    }
}

impl Artifact for SampleSet {
    const KIND: &'static str = "samples";

    fn encode(&self, c: &mut Container) -> Result<()> {
        c.push_str("net_hash", &self.net_hash)?;
        c.push_u64("seeds", self.trajectories.iter().map(|t| t.seed).collect())?;
        let steps = self.trajectories.first().map_or(0, |t| t.states.len());
        let d = self.trajectories.first().and_then(|t| t.states.first()).map_or(0, Vec::len);
        let flat: Vec<f64> = self.trajectories.iter().flat_map(|t| t.states.iter().flatten().copied()).collect();
        c.push_f64("states", &[self.trajectories.len(), steps, d], flat)
    }

    fn decode(c: &Container) -> Result<Self> {
        let seeds = c.u64s("seeds")?;
        let (dims, flat) = c.f64("states")?;
        let [n, steps, d] = match dims {
            [a, b, c] => [*a as usize, *b as usize, *c as usize],
            _ => return Err(Error::Artifact("states must be rank 3".into())),
        };
        if seeds.len() != n {
            return Err(Error::Artifact("one seed per trajectory".into()));
        }
        let trajectories = (0..n)
            .map(|i| Trajectory { seed: seeds[i], states: (0..steps).map(|s| flat[(i * steps + s) * d..][..d].to_vec()).collect() })
            .collect();
        Ok(Self { net_hash: c.str("net_hash")?, trajectories })
    }
}

fn push_dense(c: &mut Container, prefix: &str, d: &DenseCurvature) -> Result<()> {
    c.push_matrix(&format!("{prefix}.matrix"), &d.matrix)?;
    c.push_matrix(&format!("{prefix}.q"), &d.q)?;
    c.push_f64(&format!("{prefix}.evals"), &[d.evals.len()], d.evals.as_slice().to_vec())
}

fn read_dense(c: &Container, prefix: &str) -> Result<DenseCurvature> {
    Ok(DenseCurvature {
        matrix: c.matrix(&format!("{prefix}.matrix"))?,
        q: c.matrix(&format!("{prefix}.q"))?,
        evals: DVector::from_vec(c.vector(&format!("{prefix}.evals"))?),
    })
}

#[derive(Serialize, Deserialize)]
struct ProjectedMeta {
    seed: u64,
    d_proj: usize,
    projection: Projection,
}

impl Artifact for CurvatureState {
    const KIND: &'static str = "curvature";

    fn encode(&self, c: &mut Container) -> Result<()> {
        c.push_json("meta", &self.meta)?;
        match &self.payload {
            Payload::Kron(layers) => {
                c.push_str("payload", "kron")?;
                c.push_u64("layers", vec![layers.len() as u64])?;
                for (l, k) in layers.iter().enumerate() {
                    c.push_matrix(&format!("kron.{l}.a"), &k.a)?;
                    c.push_matrix(&format!("kron.{l}.b"), &k.b)?;
                    c.push_matrix(&format!("kron.{l}.q_a"), &k.q_a)?;
                    c.push_f64(&format!("kron.{l}.eval_a"), &[k.eval_a.len()], k.eval_a.as_slice().to_vec())?;
                    c.push_matrix(&format!("kron.{l}.q_b"), &k.q_b)?;
                    c.push_f64(&format!("kron.{l}.eval_b"), &[k.eval_b.len()], k.eval_b.as_slice().to_vec())?;
                    if let Some(m) = &k.corrected {
                        c.push_matrix(&format!("kron.{l}.corrected"), m)?;
                    }
                }
                Ok(())
            }
            Payload::Dense(d) => {
                c.push_str("payload", "dense")?;
                push_dense(c, "dense", d)
            }
            Payload::Projected(p) => {
                c.push_str("payload", "projected")?;
                c.push_json("projected.meta", &ProjectedMeta { seed: p.seed, d_proj: p.d_proj, projection: p.projection })?;
                if let Some(m) = &p.p {
                    c.push_matrix("projected.p", m)?;
                }
                c.push_matrix("projected.grads", &p.grads)?;
                c.push_u64("projected.train_ids", p.train_ids.clone())?;
                push_dense(c, "projected.h", &p.h)
            }
        }
    }

    fn decode(c: &Container) -> Result<Self> {
        let meta: CurvatureMeta = c.json("meta")?;
        let payload = match c.str("payload")?.as_str() {
            "kron" => {
                let n = c.u64s("layers")?.first().copied().unwrap_or(0) as usize;
                let layers = (0..n)
                    .map(|l| {
                        let corrected = match c.get(&format!("kron.{l}.corrected")) {
                            Some(_) => Some(c.matrix(&format!("kron.{l}.corrected"))?),
                            None => None,
                        };
                        Ok(KronLayer {
                            a: c.matrix(&format!("kron.{l}.a"))?,
                            b: c.matrix(&format!("kron.{l}.b"))?,
                            q_a: c.matrix(&format!("kron.{l}.q_a"))?,
                            eval_a: DVector::from_vec(c.vector(&format!("kron.{l}.eval_a"))?),
                            q_b: c.matrix(&format!("kron.{l}.q_b"))?,
                            eval_b: DVector::from_vec(c.vector(&format!("kron.{l}.eval_b"))?),
                            corrected,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Payload::Kron(layers)
            }
            "dense" => Payload::Dense(read_dense(c, "dense")?),
            "projected" => {
                let m: ProjectedMeta = c.json("projected.meta")?;
                let p = match c.get("projected.p") {
                    Some(_) => Some(c.matrix("projected.p")?),
                    None => None,
                };
                Payload::Projected(ProjectedCurvature {
                    seed: m.seed,
                    d_proj: m.d_proj,
                    projection: m.projection,
                    p,
                    grads: c.matrix("projected.grads")?,
                    train_ids: c.u64s("projected.train_ids")?.to_vec(),
                    h: read_dense(c, "projected.h")?,
                })
            }
            other => return Err(Error::Artifact(format!("unknown curvature payload `{other}`"))),
        };
        Ok(Self { meta, payload })
    }
}

impl Artifact for ScoreMatrix {
    const KIND: &'static str = "scores";

    fn encode(&self, c: &mut Container) -> Result<()> {
        c.push_json("meta", &self.meta)?;
        c.push_u64("query_ids", self.query_ids.clone())?;
        c.push_u64("train_ids", self.train_ids.clone())?;
        c.push_f64("scores", &[self.query_ids.len(), self.train_ids.len()], self.scores.concat())
    }

    fn decode(c: &Container) -> Result<Self> {
        let meta: ScoreMeta = c.json("meta")?;
        let scores = c.rows("scores")?;
        let query_ids = c.u64s("query_ids")?.to_vec();
        let train_ids = c.u64s("train_ids")?.to_vec();
        if scores.len() != query_ids.len() || scores.iter().any(|r| r.len() != train_ids.len()) {
            return Err(Error::Artifact("score grid does not match its ids".into()));
        }
        Ok(Self { scores, query_ids, train_ids, meta })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    damping: f64,
    curvature: String,
    net_hash: String,
    spec: TrainGradSpec,
}

impl Artifact for TrainCache {
    const KIND: &'static str = "train_cache";

    fn encode(&self, c: &mut Container) -> Result<()> {
        let meta = CacheMeta { damping: self.damping, curvature: self.curvature.clone(), net_hash: self.net_hash.clone(), spec: self.spec.clone() };
        c.push_json("meta", &meta)?;
        c.push_u64("train_ids", self.train_ids.clone())?;
        match &self.vectors {
            CachedVectors::Full(v) => c.push_rows("vectors", v),
            CachedVectors::Compressed(g) => {
                c.push_str("codec", &g.codec)?;
                c.push_u64("segments", g.segments.iter().map(|&s| s as u64).collect())?;
                let n = g.vectors.len();
                let d: usize = g.segments.iter().sum();
                c.push("payload", &[n, d], Data::I8(g.vectors.iter().flat_map(|v| v.payload.iter().copied()).collect()))?;
                c.push_f64("scales", &[n, g.segments.len()], g.vectors.iter().flat_map(|v| v.scales.iter().copied()).collect())
            }
        }
    }

    fn decode(c: &Container) -> Result<Self> {
        let meta: CacheMeta = c.json("meta")?;
        let vectors = if c.get("vectors").is_some() {
            CachedVectors::Full(c.rows("vectors")?)
        } else {
            let segments: Vec<usize> = c.u64s("segments")?.iter().map(|&s| s as usize).collect();
            let d: usize = segments.iter().sum();
            let (_, payload) = c.i8s("payload")?;
            let scales = c.rows("scales")?;
            let vectors = scales
                .into_iter()
                .enumerate()
                .map(|(i, s)| CompressedVec { payload: payload[i * d..(i + 1) * d].to_vec(), scales: s })
                .collect();
            CachedVectors::Compressed(CompressedGradients { codec: c.str("codec")?, segments, vectors })
        };
        Ok(Self {
            damping: meta.damping,
            curvature: meta.curvature,
            net_hash: meta.net_hash,
            spec: meta.spec,
            train_ids: c.u64s("train_ids")?.to_vec(),
            vectors,
        })
    }
}

/// Retraining ground truth: subsets, seeds and the `M × K × Q` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSet {
    pub net_hash: String,
    pub subsets: Vec<Vec<usize>>,
    pub seeds: Vec<u64>,
    pub query_ids: Vec<u64>,
    pub oracle: OracleTensor,
}

impl Artifact for OracleSet {
    const KIND: &'static str = "oracle";

    fn encode(&self, c: &mut Container) -> Result<()> {
        c.push_str("net_hash", &self.net_hash)?;
        c.push_u64("seeds", self.seeds.clone())?;
        c.push_u64("query_ids", self.query_ids.clone())?;
        c.push_u64("subset_sizes", self.subsets.iter().map(|s| s.len() as u64).collect())?;
        c.push_u64("subset_members", self.subsets.iter().flatten().map(|&i| i as u64).collect())?;
        let (m, k, q) = self.oracle.shape();
        c.push_f64("values", &[m, k, q], self.oracle.values.iter().flatten().flatten().copied().collect())
    }

    fn decode(c: &Container) -> Result<Self> {
        let sizes = c.u64s("subset_sizes")?;
        let members = c.u64s("subset_members")?;
        let mut subsets = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &s in sizes {
            let s = s as usize;
            let chunk = members.get(at..at + s).ok_or_else(|| Error::Artifact("subset members truncated".into()))?;
            subsets.push(chunk.iter().map(|&i| i as usize).collect());
            at += s;
        }
        let (dims, flat) = c.f64("values")?;
        let [m, k, q] = match dims {
            [a, b, c] => [*a as usize, *b as usize, *c as usize],
            _ => return Err(Error::Artifact("values must be rank 3".into())),
        };
        let values = (0..m).map(|i| (0..k).map(|j| flat[(i * k + j) * q..][..q].to_vec()).collect()).collect();
        Ok(Self { net_hash: c.str("net_hash")?, subsets, seeds: c.u64s("seeds")?.to_vec(), query_ids: c.u64s("query_ids")?.to_vec(), oracle: OracleTensor { values } })
    }
}

/// A named-column numeric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(title: &str, columns: &[&str]) -> Self {
        Self { title: title.into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    /// CSV with a `#` header line carrying the config hash.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut s = format!("# config_hash={config_hash} table={}\n{}\n", self.title, self.columns.join(","));
        for r in &self.rows {
            s.push_str(&r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

impl Artifact for Table {
    const KIND: &'static str = "table";

    fn encode(&self, c: &mut Container) -> Result<()> {
        c.push_str("title", &self.title)?;
        c.push_json("columns", &self.columns)?;
        c.push_f64("rows", &[self.rows.len(), self.columns.len()], self.rows.concat())
    }

    fn decode(c: &Container) -> Result<Self> {
        let columns: Vec<String> = c.json("columns")?;
        let (_, flat) = c.f64("rows")?;
        let rows = if columns.is_empty() { Vec::new() } else { flat.chunks(columns.len()).map(<[f64]>::to_vec).collect() };
        Ok(Self { title: c.str("title")?, columns, rows })
    }
}
