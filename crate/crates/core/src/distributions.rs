//! Entry distributions for Wigner matrices and the random streams that drive them.
//!
//! Every admissible entry law is symmetric with finite moments of all orders,
//! and is parameterized by its standard deviation so that laws with the same
//! variance can be swapped freely.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result, RmtError};

/// Shape of a symmetric entry law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryKind {
    Gaussian,
    /// Uniform on `{-sigma, +sigma}`.
    Rademacher,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`.
    UniformSymmetric,
    /// Atoms `±a` with total mass `p` and `±ratio·a` with mass `1 - p`, with
    /// `a` fixed by the variance. `ratio = 0` puts an atom at the origin and
    /// gives `m4 / sigma^4 = 1 / p`.
    TwoPointMix {
        p: f64,
        ratio: f64,
    },
}

impl EntryKind {
    /// Parses a config identifier. `twopoint` needs its parameters supplied separately.
    pub fn from_name(name: &str, two_point: Option<(f64, f64)>) -> Result<Self> {
        match name {
            "gaussian" => Ok(EntryKind::Gaussian),
            "rademacher" => Ok(EntryKind::Rademacher),
            "uniform" => Ok(EntryKind::UniformSymmetric),
            "twopoint" => match two_point {
                Some((p, ratio)) => Ok(EntryKind::TwoPointMix { p, ratio }),
                None => param_err("law 'twopoint' requires p and ratio"),
            },
            other => param_err(format!(
                "unknown law '{other}' (expected gaussian, rademacher, uniform or twopoint)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EntryKind::Gaussian => "gaussian",
            EntryKind::Rademacher => "rademacher",
            EntryKind::UniformSymmetric => "uniform",
            EntryKind::TwoPointMix { .. } => "twopoint",
        }
    }
}

/// A symmetric entry distribution together with its second and fourth moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryLaw {
    kind: EntryKind,
    sigma: f64,
    sigma2: f64,
    m4: f64,
    // Largest atom of the two-point mixture, or the uniform half-width.
    scale: f64,
}

/// Builds an entry law with standard deviation `sigma`.
pub fn make_entry_law(kind: EntryKind, sigma: f64) -> Result<EntryLaw> {
    EntryLaw::new(kind, sigma)
}

impl EntryLaw {
    pub fn new(kind: EntryKind, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return param_err(format!("sigma must be positive and finite, got {sigma}"));
        }
        let s2 = sigma * sigma;
        let (m4, scale) = match kind {
            EntryKind::Gaussian => (3.0 * s2 * s2, sigma),
            EntryKind::Rademacher => (s2 * s2, sigma),
            EntryKind::UniformSymmetric => (1.8 * s2 * s2, 3f64.sqrt() * sigma),
            EntryKind::TwoPointMix { p, ratio } => {
                if !(p > 0.0 && p <= 1.0) {
                    return param_err(format!("two-point mass p must lie in (0, 1], got {p}"));
                }
                if !(ratio >= 0.0 && ratio.is_finite()) {
                    return param_err(format!("two-point ratio must be >= 0, got {ratio}"));
                }
                let norm = p + (1.0 - p) * ratio * ratio;
                let a = sigma / norm.sqrt();
                let a4 = a.powi(4);
                (a4 * (p + (1.0 - p) * ratio.powi(4)), a)
            }
        };
        Ok(EntryLaw {
            kind,
            sigma,
            sigma2: s2,
            m4,
            scale,
        })
    }

    pub fn kind(&self) -> EntryKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Fourth moment `∫ x⁴ dμ`.
    pub fn m4(&self) -> f64 {
        self.m4
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Standardized excess kurtosis `m4 / sigma^4 - 3`.
    pub fn excess_kurtosis(&self) -> f64 {
        self.m4 / (self.sigma2 * self.sigma2) - 3.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            EntryKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.sigma * z
            }
            EntryKind::Rademacher => {
                if rng.next_u32() & 1 == 0 {
                    self.sigma
                } else {
                    -self.sigma
                }
            }
            EntryKind::UniformSymmetric => {
                let u: f64 = rng.random();
                self.scale * (2.0 * u - 1.0)
            }
            EntryKind::TwoPointMix { p, ratio } => {
                let bits = rng.next_u64();
                let sign = if bits & 1 == 0 { 1.0 } else { -1.0 };
                // 53 high bits give a uniform in [0, 1).
                let u = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                let magnitude = if u < p { self.scale } else { ratio * self.scale };
                sign * magnitude
            }
        }
    }
}

impl fmt::Display for EntryLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(sigma={})", self.name(), self.sigma)
    }
}

/// Draws one value from `law`.
pub fn sample_entry(law: &EntryLaw, rng: &mut RngStream) -> f64 {
    law.sample(rng)
}

/// Draws from `N(mean, variance)`; zero variance returns `mean` exactly.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: f64, variance: f64, rng: &mut R) -> Result<f64> {
    if !(variance >= 0.0) {
        return param_err(format!("variance must be non-negative, got {variance}"));
    }
    if variance == 0.0 {
        return Ok(mean);
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + variance.sqrt() * z)
}

/// Counter-based random stream identified by `(seed, stream_id)`.
///
/// Streams with the same seed and different ids are disjoint ChaCha8
/// keystreams, so replications can be handed out to workers in any order.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream on the same seed, positioned at its start.
    pub fn fork(&self, stream_id: u64) -> Self {
        RngStream::new(self.seed, stream_id)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

impl FromStr for EntryKind {
    type Err = RmtError;

    fn from_str(s: &str) -> Result<Self> {
        EntryKind::from_name(s, None)
    }
}
