//! Eigenvalue extraction, outlier counting, fluctuation rescaling and
//! resolvent traces.

use faer::Side;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensembles::SpikeSpec;
use crate::error::{param_err, Result, RmtError};
use crate::lanczos::{extreme_eigenvalues, LanczosOptions};
use crate::matrix::{HermitianMatrix, Scalar};
use crate::theory::{c_theta, rho_theta};

/// Below this dimension the dense solver is used even when only a few
/// eigenvalues are requested.
pub const DENSE_CUTOFF: usize = 400;

/// All eigenvalues of a Hermitian matrix in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    eigenvalues: Vec<f64>,
}

impl SpectralSample {
    pub fn from_descending(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.windows(2).any(|w| !(w[0] >= w[1])) {
            return param_err("eigenvalues must be sorted in descending order");
        }
        Ok(SpectralSample { eigenvalues })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn largest(&self) -> Option<f64> {
        self.eigenvalues.first().copied()
    }
}

fn dense_ascending<T: Scalar>(h: &HermitianMatrix<T>) -> Result<Vec<f64>> {
    if !h.all_finite() {
        return Err(RmtError::NonFinite);
    }
    h.as_ref()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| RmtError::Eigen(format!("{e:?}")))
}

pub fn eigenvalues_sorted<T: Scalar>(h: &HermitianMatrix<T>) -> Result<SpectralSample> {
    let mut ev = dense_ascending(h)?;
    ev.reverse();
    Ok(SpectralSample { eigenvalues: ev })
}

/// The `n_top` largest (descending) and `n_bottom` smallest (ascending)
/// eigenvalues. Large matrices go through Lanczos, small ones through the
/// dense solver.
pub fn extreme_eigenvalues_of<T: Scalar, R: Rng + ?Sized>(
    h: &HermitianMatrix<T>,
    n_top: usize,
    n_bottom: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = h.dim();
    if n_top + n_bottom > n {
        return Err(RmtError::Dimension(format!(
            "requested {} extreme eigenvalues of a {n} x {n} matrix",
            n_top + n_bottom
        )));
    }
    if n <= DENSE_CUTOFF {
        let ev = dense_ascending(h)?;
        let top = ev.iter().rev().take(n_top).copied().collect();
        let bottom = ev.iter().take(n_bottom).copied().collect();
        return Ok((top, bottom));
    }
    if !h.all_finite() {
        return Err(RmtError::NonFinite);
    }
    let r = extreme_eigenvalues(h.as_ref(), n_top, n_bottom, &LanczosOptions::default(), rng)?;
    Ok((r.top, r.bottom))
}

/// Rescaled fluctuations of the outliers attached to one supercritical spike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeFluctuation {
    pub spike_index: usize,
    pub theta: f64,
    pub rho: f64,
    pub c: f64,
    /// 1-based rank of the first eigenvalue used.
    pub first_rank: usize,
    pub eigenvalues: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationRecord {
    pub n: usize,
    pub replication: u64,
    pub spikes: Vec<SpikeFluctuation>,
}

impl FluctuationRecord {
    pub fn spike(&self, spike_index: usize) -> Option<&SpikeFluctuation> {
        self.spikes.iter().find(|s| s.spike_index == spike_index)
    }
}

pub fn rescale_fluctuations(
    eigs: &SpectralSample,
    spec: &SpikeSpec,
    n: usize,
    replication: u64,
) -> Result<FluctuationRecord> {
    rescale_top(eigs.eigenvalues(), spec, n, replication)
}

/// Same as [`rescale_fluctuations`] from the leading eigenvalues only;
/// `top` must hold at least the `k_plus` largest, descending.
pub fn rescale_top(top: &[f64], spec: &SpikeSpec, n: usize, replication: u64) -> Result<FluctuationRecord> {
    let sigma = spec.sigma;
    let sqrt_n = (n as f64).sqrt();
    let mut spikes = Vec::new();
    for j in spec.supercritical() {
        let s = &spec.spikes[j];
        let offset = spec.rank_offset(j);
        let end = offset + s.multiplicity;
        if end > top.len() {
            return Err(RmtError::Dimension(format!(
                "spike {j} needs eigenvalue ranks up to {end}, only {} available",
                top.len()
            )));
        }
        let rho = rho_theta(s.theta, sigma)?;
        let c = c_theta(s.theta, sigma)?;
        let eigenvalues = top[offset..end].to_vec();
        let xi: Vec<f64> = eigenvalues.iter().map(|l| c * sqrt_n * (l - rho)).collect();
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(RmtError::NonFinite);
        }
        spikes.push(SpikeFluctuation {
            spike_index: j,
            theta: s.theta,
            rho,
            c,
            first_rank: offset + 1,
            eigenvalues,
            xi,
        });
    }
    Ok(FluctuationRecord { n, replication, spikes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierCount {
    /// Eigenvalues above `2σ + δ`.
    pub above: usize,
    /// Eigenvalues below `−2σ − δ`.
    pub below: usize,
}

pub fn count_outliers(eigs: &[f64], sigma: f64, delta: f64) -> Result<OutlierCount> {
    if !(delta > 0.0) {
        return param_err(format!("delta must be positive, got {delta}"));
    }
    let edge = 2.0 * sigma + delta;
    Ok(OutlierCount {
        above: eigs.iter().filter(|&&l| l > edge).count(),
        below: eigs.iter().filter(|&&l| l < -edge).count(),
    })
}

/// Normalized trace functionals of `Ĝ(ρ) = (ρI − M)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventTraces {
    pub tr1: f64,
    pub tr2: f64,
    pub diag2: f64,
}

pub fn resolvent_traces<T: Scalar>(minor: &HermitianMatrix<T>, rho: f64) -> Result<ResolventTraces> {
    let n = minor.dim();
    if n == 0 {
        return Err(RmtError::Dimension("empty matrix".into()));
    }
    if !minor.all_finite() {
        return Err(RmtError::NonFinite);
    }
    let evd = minor
        .as_ref()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| RmtError::Eigen(format!("{e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let lambda_max = s[n - 1].re();
    if !(rho > lambda_max) {
        return Err(RmtError::Pole { rho, lambda_max });
    }
    let g: Vec<f64> = (0..n).map(|l| 1.0 / (rho - s[l].re())).collect();
    let nf = n as f64;
    let tr1 = g.iter().sum::<f64>() / nf;
    let tr2 = g.iter().map(|x| x * x).sum::<f64>() / nf;
    let mut gii = vec![0.0; n];
    for (l, gl) in g.iter().enumerate() {
        let col = u.col(l);
        for (i, d) in gii.iter_mut().enumerate() {
            *d += col[i].abs_sq() * gl;
        }
    }
    let diag2 = gii.iter().map(|x| x * x).sum::<f64>() / nf;
    Ok(ResolventTraces { tr1, tr2, diag2 })
}
