//! Hash-derived, splittable random streams.
//!
//! Every stream is identified by a master seed plus a derivation path of
//! `(label, index)` steps. The ChaCha8 key of a stream is the SHA-256 of that
//! identity, so a child's draws never depend on how many values its parent
//! (or any sibling) has consumed, nor on the order in which streams are
//! derived. Work split across threads therefore reproduces serial output.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub label: String,
    pub index: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path: Vec<PathStep>,
    rng: ChaCha8Rng,
}

fn key_for(seed: u64, path: &[PathStep]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"strokesynth.rng.v1");
    h.update(seed.to_le_bytes());
    for step in path {
        h.update((step.label.len() as u64).to_le_bytes());
        h.update(step.label.as_bytes());
        h.update(step.index.to_le_bytes());
    }
    h.finalize().into()
}

impl RngStream {
    /// Root stream for a master seed.
    pub fn new(seed: u64) -> Self {
        Self::from_path(seed, Vec::new())
    }

    /// Rebuilds a stream from a recorded identity (fresh, no draws consumed).
    pub fn from_path(seed: u64, path: Vec<PathStep>) -> Self {
        let rng = ChaCha8Rng::from_seed(key_for(seed, &path));
        Self { seed, path, rng }
    }

    pub fn derive(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(PathStep {
            label: label.to_owned(),
            index,
        });
        Self::from_path(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[PathStep] {
        &self.path
    }

    /// Uniform on `[a, b)`; exactly `a` when `a == b`.
    pub fn uniform(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a <= b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter(format!("uniform({a}, {b})")));
        }
        if a == b {
            return Ok(a);
        }
        let u: f64 = self.rng.random();
        Ok(a + (b - a) * u)
    }

    /// Uniform integer on the inclusive range `[lo, hi]`.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        if lo >= hi {
            return lo;
        }
        self.rng.random_range(lo..=hi)
    }

    pub fn normal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("normal({mu}, {sigma})")));
        }
        let z: f64 = self.rng.sample(StandardNormal);
        Ok(mu + sigma * z)
    }

    /// Standard normal draw without parameter checks, for hot loops.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("bernoulli({p})")));
        }
        let u: f64 = self.rng.random();
        Ok(u < p)
    }

    /// `10^n` with `n ~ Normal(mu, sigma)`.
    pub fn log10_normal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        Ok(10f64.powf(self.normal(mu, sigma)?))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
