//! Hierarchical, path-addressed random streams.
//!
//! Every stochastic quantity in the toolkit is drawn from a generator derived
//! from a root seed plus a path of labels and indices. Two streams with the
//! same `(root_seed, path)` produce identical draws, independent of which
//! thread asks for them or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathElem {
    Label(String),
    Index(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub root_seed: u64,
    pub path: Vec<PathElem>,
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        Self { root_seed, path: Vec::new() }
    }

    /// Child stream addressed by a label, e.g. `"kfac"` or `"query"`.
    pub fn child(&self, label: &str) -> Self {
        let mut path = self.path.clone();
        path.push(PathElem::Label(label.to_owned()));
        Self { root_seed: self.root_seed, path }
    }

    /// Child stream addressed by an index, e.g. an example id or sample number.
    pub fn index(&self, i: u64) -> Self {
        let mut path = self.path.clone();
        path.push(PathElem::Index(i));
        Self { root_seed: self.root_seed, path }
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"dinf-rng-v1");
        h.update(self.root_seed.to_le_bytes());
        for elem in &self.path {
            match elem {
                PathElem::Label(s) => {
                    h.update([0u8]);
                    h.update((s.len() as u64).to_le_bytes());
                    h.update(s.as_bytes());
                }
                PathElem::Index(i) => {
                    h.update([1u8]);
                    h.update(i.to_le_bytes());
                }
            }
        }
        let digest = h.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        StreamRng(ChaCha12Rng::from_seed(self.seed_bytes()))
    }

    /// Human-readable path, used in artifact metadata.
    pub fn describe(&self) -> String {
        let mut s = format!("{}", self.root_seed);
        for elem in &self.path {
            match elem {
                PathElem::Label(l) => {
                    s.push('/');
                    s.push_str(l);
                }
                PathElem::Index(i) => s.push_str(&format!("/{i}")),
            }
        }
        s
    }
}

/// Generator handed out by [`RngStream::rng`].
pub struct StreamRng(ChaCha12Rng);

impl StreamRng {
    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform draw from `lo..=hi`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        self.0.random_range(lo..=hi)
    }

    /// Uniform draw from `lo..hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.0, n, k).into_vec()
    }

    pub fn inner(&mut self) -> &mut ChaCha12Rng {
        &mut self.0
    }
}
