//! Closed-form limits: outlier locations, rescaling constants, limiting
//! variances, semicircle quantities and the covariance of the
//! sesquilinear-form central limit theorem.

use faer::{c64, Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result, RmtError};

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return param_err(format!("sigma must be positive, got {sigma}"));
    }
    Ok(())
}

fn check_supercritical(theta: f64, sigma: f64) -> Result<()> {
    check_sigma(sigma)?;
    if !(theta.abs() > sigma) {
        return param_err(format!("need |theta| > sigma, got theta = {theta}, sigma = {sigma}"));
    }
    Ok(())
}

fn check_variance_inputs(theta: f64, sigma: f64, m4: f64, t: u32) -> Result<()> {
    check_supercritical(theta, sigma)?;
    if t != 2 && t != 4 {
        return param_err(format!("t must be 2 or 4, got {t}"));
    }
    let s4 = sigma.powi(4);
    if !(m4 >= s4 * (1.0 - 1e-12)) {
        return param_err(format!("m4 = {m4} is below sigma^4 = {s4}"));
    }
    Ok(())
}

/// Almost-sure outlier location `θ + σ²/θ`.
pub fn rho_theta(theta: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if theta == 0.0 || !theta.is_finite() {
        return param_err("theta must be finite and non-zero");
    }
    Ok(theta + sigma * sigma / theta)
}

/// Rescaling constant `θ²/(θ² − σ²)`.
pub fn c_theta(theta: f64, sigma: f64) -> Result<f64> {
    check_supercritical(theta, sigma)?;
    let t2 = theta * theta;
    Ok(t2 / (t2 - sigma * sigma))
}

/// Variance of the Gaussian part of the rank-one limit:
/// `(t/4)(m4 − 3σ⁴)/θ² + (t/2)σ⁴/(θ² − σ²)`.
pub fn v_theta(theta: f64, sigma: f64, m4: f64, t: u32) -> Result<f64> {
    check_variance_inputs(theta, sigma, m4, t)?;
    let t = t as f64;
    let s4 = sigma.powi(4);
    let t2 = theta * theta;
    Ok(t / 4.0 * (m4 - 3.0 * s4) / t2 + t / 2.0 * s4 / (t2 - sigma * sigma))
}

/// Entry variances `(v_pp, v_pl)` of the Gaussian matrix `H` in the
/// finite-support limit.
pub fn h_variance_profile(theta: f64, sigma: f64, m4: f64, t: u32) -> Result<(f64, f64)> {
    let vpp = v_theta(theta, sigma, m4, t)?;
    let vpl = sigma.powi(4) / (theta * theta - sigma * sigma);
    Ok((vpp, vpl))
}

/// GU(O)E parameter `θ²σ²/(θ² − σ²)` of the spread-eigenvector limit.
pub fn guoe_tau(theta: f64, sigma: f64) -> Result<f64> {
    check_supercritical(theta, sigma)?;
    let t2 = theta * theta;
    let s2 = sigma * sigma;
    Ok(t2 * s2 / (t2 - s2))
}

/// Semicircle density with variance `σ²`.
pub fn semicircle_density(x: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let s2 = sigma * sigma;
    let r = 4.0 * s2 - x * x;
    if r <= 0.0 {
        return Ok(0.0);
    }
    Ok(r.sqrt() / (2.0 * std::f64::consts::PI * s2))
}

/// Semicircle distribution function.
pub fn semicircle_cdf(x: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let edge = 2.0 * sigma;
    if x <= -edge {
        return Ok(0.0);
    }
    if x >= edge {
        return Ok(1.0);
    }
    let u = x / edge;
    let pi = std::f64::consts::PI;
    Ok(0.5 + (u * (1.0 - u * u).sqrt() + u.asin()) / pi)
}

/// Limits of `tr Ĝ(ρ_θ)`, `tr Ĝ(ρ_θ)²` and of the mean squared diagonal of `Ĝ(ρ_θ)`:
/// `(1/θ, 1/(θ² − σ²), 1/θ²)`.
pub fn resolvent_limits(theta: f64, sigma: f64) -> Result<(f64, f64, f64)> {
    check_sigma(sigma)?;
    if !(theta > sigma) {
        return param_err(format!("need theta > sigma, got theta = {theta}"));
    }
    let t2 = theta * theta;
    Ok((1.0 / theta, 1.0 / (t2 - sigma * sigma), 1.0 / t2))
}

/// All closed-form values attached to one spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryValues {
    pub theta: f64,
    pub sigma: f64,
    pub m4: f64,
    pub t: u32,
    pub rho: f64,
    pub c: f64,
    pub v: f64,
    pub tau_guoe: f64,
    pub h_vpp: f64,
    pub h_vpl: f64,
    pub stieltjes1: f64,
    pub stieltjes2: f64,
    pub diag2_limit: f64,
}

impl TheoryValues {
    pub fn compute(theta: f64, sigma: f64, m4: f64, t: u32) -> Result<Self> {
        let (h_vpp, h_vpl) = h_variance_profile(theta, sigma, m4, t)?;
        let (stieltjes1, stieltjes2, diag2_limit) = resolvent_limits(theta, sigma)?;
        Ok(TheoryValues {
            theta,
            sigma,
            m4,
            t,
            rho: rho_theta(theta, sigma)?,
            c: c_theta(theta, sigma)?,
            v: v_theta(theta, sigma, m4, t)?,
            tau_guoe: guoe_tau(theta, sigma)?,
            h_vpp,
            h_vpl,
            stieltjes1,
            stieltjes2,
            diag2_limit,
        })
    }
}

/// Joint moments of the coordinate pair `(x, y)` entering the
/// sesquilinear-form central limit theorem. All matrices are `K × K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormMoments {
    /// `ρ(l) = E[x̄_l y_l]`.
    pub rho: Vec<c64>,
    /// `E[x̄_l y_{l'}]`.
    pub xbar_y: Vec<Vec<c64>>,
    /// `E[x̄_l x̄_{l'}]`.
    pub xbar_xbar: Vec<Vec<c64>>,
    /// `E[y_l y_{l'}]`.
    pub y_y: Vec<Vec<c64>>,
    /// `E[x̄_l y_l x̄_{l'} y_{l'}]`.
    pub fourth: Vec<Vec<c64>>,
}

impl FormMoments {
    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    /// Moments for `x = y = L ε`, with `ε` a vector of i.i.d. standardized
    /// entries of excess kurtosis `kappa` and `L L^T = cov`. In the complex
    /// case `x = (z + i z')/√2` with `z, z'` independent copies of `L ε`.
    pub fn identical_linear(cov: &[Vec<f64>], kappa: f64, complex: bool) -> Result<Self> {
        let k = cov.len();
        if k == 0 || cov.iter().any(|r| r.len() != k) {
            return param_err("covariance must be a non-empty square matrix");
        }
        let l = cholesky_lower(cov)?;
        let c = |a: usize, b: usize| cov[a][b];
        let cum4 = |a: usize, b: usize, cc: usize, d: usize| -> f64 {
            kappa * (0..k).map(|m| l[a][m] * l[b][m] * l[cc][m] * l[d][m]).sum::<f64>()
        };
        let z = |x: f64| c64::new(x, 0.0);
        let grid = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<c64>> {
            (0..k).map(|a| (0..k).map(|b| z(f(a, b))).collect()).collect()
        };
        let rho = (0..k).map(|a| z(c(a, a))).collect();
        let xbar_y = grid(&|a, b| c(a, b));
        let (xbar_xbar, y_y, fourth) = if complex {
            (
                grid(&|_, _| 0.0),
                grid(&|_, _| 0.0),
                grid(&|a, b| c(a, a) * c(b, b) + c(a, b) * c(b, a) + cum4(a, a, b, b) / 2.0),
            )
        } else {
            (
                grid(&|a, b| c(a, b)),
                grid(&|a, b| c(a, b)),
                grid(&|a, b| c(a, a) * c(b, b) + 2.0 * c(a, b) * c(a, b) + cum4(a, a, b, b)),
            )
        };
        Ok(FormMoments {
            rho,
            xbar_y,
            xbar_xbar,
            y_y,
            fourth,
        })
    }
}

fn cholesky_lower(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = cov.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[i][m] * l[j][m]).sum();
            if i == j {
                let d = cov[i][i] - s;
                if !(d > 0.0) {
                    return param_err("covariance matrix is not positive definite");
                }
                l[i][j] = d.sqrt();
            } else {
                if (cov[i][j] - cov[j][i]).abs() > 1e-12 {
                    return param_err("covariance matrix is not symmetric");
                }
                l[i][j] = (cov[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Lower Cholesky factor of a small covariance matrix.
pub fn covariance_factor(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    cholesky_lower(cov)
}

/// Limiting covariance `B = B1 + B2 + B3` of the normalized sesquilinear forms.
///
/// `omega`, `tr2n` and `tr2tn` are the limits of `(1/n)Σ a_ii²`,
/// `(1/n) Tr A²` and `(1/n) Tr A Aᵀ` for the weight matrix `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SesquilinearCovariance {
    pub omega: f64,
    pub tr2n: f64,
    pub tr2tn: f64,
    pub moments: FormMoments,
    pub b1: Vec<Vec<c64>>,
    pub b2: Vec<Vec<c64>>,
    pub b3: Vec<Vec<c64>>,
    pub b: Vec<Vec<c64>>,
}

impl SesquilinearCovariance {
    /// Real part of `B` (the covariance itself whenever the forms are real).
    pub fn b_real(&self) -> Vec<Vec<f64>> {
        self.b.iter().map(|r| r.iter().map(|v| v.re).collect()).collect()
    }
}

pub fn sesquilinear_covariance(
    omega: f64,
    tr2n: f64,
    tr2tn: f64,
    moments: FormMoments,
) -> Result<SesquilinearCovariance> {
    let k = moments.dim();
    let square = |m: &Vec<Vec<c64>>| m.len() == k && m.iter().all(|r| r.len() == k);
    if k == 0
        || !square(&moments.xbar_y)
        || !square(&moments.xbar_xbar)
        || !square(&moments.y_y)
        || !square(&moments.fourth)
    {
        return Err(RmtError::Dimension("form moments must all be K x K".into()));
    }
    // Cauchy-Schwarz on the second moments
    for l in 0..k {
        let bound = moments.fourth[l][l].re.abs().sqrt();
        if moments.rho[l].norm() > bound * (1.0 + 1e-9) + 1e-12 {
            return param_err(format!("inconsistent moments: |rho({l})| exceeds sqrt(E|x y|^2)"));
        }
    }
    let mut b1 = vec![vec![c64::new(0.0, 0.0); k]; k];
    let mut b2 = b1.clone();
    let mut b3 = b1.clone();
    let mut b = b1.clone();
    for l in 0..k {
        for lp in 0..k {
            b1[l][lp] = (moments.fourth[l][lp] - moments.rho[l] * moments.rho[lp]) * omega;
            b2[l][lp] = moments.xbar_y[l][lp] * moments.xbar_y[lp][l] * (tr2n - omega);
            b3[l][lp] = moments.xbar_xbar[l][lp] * moments.y_y[l][lp] * (tr2tn - omega);
            b[l][lp] = b1[l][lp] + b2[l][lp] + b3[l][lp];
        }
    }
    let scale = b
        .iter()
        .flat_map(|r| r.iter().map(|v| v.norm()))
        .fold(0.0, f64::max)
        .max(1.0);
    for l in 0..k {
        for lp in 0..k {
            if (b[l][lp] - b[lp][l]).norm() > 1e-10 * scale {
                return Err(RmtError::Consistency("B is not symmetric".into()));
            }
        }
    }
    let real = b.iter().all(|r| r.iter().all(|v| v.im.abs() <= 1e-12 * scale));
    if real {
        let m = Mat::from_fn(k, k, |i, j| b[i][j].re);
        let eig = m
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| RmtError::Eigen(format!("{e:?}")))?;
        if eig[0] < -1e-10 * scale {
            return Err(RmtError::Consistency(format!(
                "B is not positive semidefinite (smallest eigenvalue {:.3e})",
                eig[0]
            )));
        }
    }
    Ok(SesquilinearCovariance {
        omega,
        tr2n,
        tr2tn,
        moments,
        b1,
        b2,
        b3,
        b,
    })
}
