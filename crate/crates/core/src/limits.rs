//! Samplers for the limiting fluctuation laws and for the finite-`N`
//! matrix `V_{k_j,N}` whose eigenvalues approximate them.

use faer::linalg::matmul::matmul_with_conj;
use faer::linalg::solvers::Llt;
use faer::{c64, Accum, Conj, Mat, MatRef, Par, Side};
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_gaussian, EntryLaw, RngStream};
use crate::ensembles::{orthonormality_defect, sample_wigner, sample_wigner_entry, DeformedModel, Geometry};
use crate::error::{param_err, Result, RmtError};
use crate::matrix::{compress, FieldKind, HermitianMatrix, Scalar};
use crate::spectral::{eigenvalues_sorted, extreme_eigenvalues_of};
use crate::theory::{guoe_tau, h_variance_profile, rho_theta, v_theta};

const FRAME_TOL: f64 = 1e-10;

/// How the entry law enters the real rank-one limit `X + N(0, v)`.
///
/// `Plain` takes `X ~ μ`. `ScaledDiagonal` takes `X = √2·Y` with `Y ~ μ`,
/// matching the real diagonal of the sampled Wigner matrix. The two agree in
/// the complex case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealDiagConvention {
    Plain,
    #[default]
    ScaledDiagonal,
}

impl RealDiagConvention {
    pub fn mu_scale(self, field: FieldKind) -> f64 {
        match (self, field) {
            (RealDiagConvention::ScaledDiagonal, FieldKind::Real) => std::f64::consts::SQRT_2,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RealDiagConvention::Plain => "plain",
            RealDiagConvention::ScaledDiagonal => "scaled_diagonal",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "plain" => Ok(RealDiagConvention::Plain),
            "scaled_diagonal" | "scaled" => Ok(RealDiagConvention::ScaledDiagonal),
            other => param_err(format!(
                "unknown real diagonal convention '{other}' (expected plain or scaled_diagonal)"
            )),
        }
    }
}

/// A sampleable limiting law of rescaled outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LimitLaw {
    /// `mu_scale·X + N(0, v)` with `X ~ law`.
    ConvolutionMuGauss { law: EntryLaw, v: f64, mu_scale: f64 },
    /// Eigenvalues of a `kdim × kdim` GU(O)E matrix with parameter `tau`.
    GuoeEigenvalues { kdim: usize, tau: f64, field: FieldKind },
    /// Eigenvalues of `U*(W + H)U` for a `K × k` frame `U` given by its rows.
    FrameVEigenvalues {
        frame: Vec<Vec<f64>>,
        law: EntryLaw,
        theta: f64,
        sigma: f64,
        field: FieldKind,
    },
}

impl LimitLaw {
    /// Number of eigenvalues one draw returns.
    pub fn dim(&self) -> usize {
        match self {
            LimitLaw::ConvolutionMuGauss { .. } => 1,
            LimitLaw::GuoeEigenvalues { kdim, .. } => *kdim,
            LimitLaw::FrameVEigenvalues { frame, .. } => frame.first().map_or(0, |r| r.len()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LimitLaw::ConvolutionMuGauss { .. } => "convolution_mu_gauss",
            LimitLaw::GuoeEigenvalues { .. } => "guoe_eigenvalues",
            LimitLaw::FrameVEigenvalues { .. } => "frame_v_eigenvalues",
        }
    }
}

pub fn sample_convolution_law(law: &EntryLaw, v: f64, rng: &mut RngStream) -> Result<f64> {
    sample_scaled_convolution(law, 1.0, v, rng)
}

/// `mu_scale·X + G` with `X ~ law` and `G ~ N(0, v)` independent.
pub fn sample_scaled_convolution(law: &EntryLaw, mu_scale: f64, v: f64, rng: &mut RngStream) -> Result<f64> {
    if !(v >= 0.0) {
        return param_err(format!("variance must be non-negative, got {v}"));
    }
    let x = law.sample(rng);
    let g = sample_gaussian(0.0, v, rng)?;
    Ok(mu_scale * x + g)
}

/// Gaussian Hermitian matrix with off-diagonal `E|H_pl|² = tau` and diagonal
/// variance `(t/2)·tau`.
pub fn sample_guoe<T: Scalar>(kdim: usize, tau: f64, rng: &mut RngStream) -> Result<HermitianMatrix<T>> {
    if kdim == 0 {
        return param_err("GU(O)E dimension must be at least 1");
    }
    if !(tau > 0.0) {
        return param_err(format!("tau must be positive, got {tau}"));
    }
    let diag_sd = (T::FIELD.t() as f64 / 2.0 * tau).sqrt();
    let off_sd = tau.sqrt();
    Ok(HermitianMatrix::from_upper(kdim, |i, j| {
        if i == j {
            T::from_real(diag_sd * f64::standard_normal(rng))
        } else {
            T::standard_normal(rng).scale(off_sd)
        }
    }))
}

/// Gaussian Hermitian matrix with diagonal variance `vpp` and off-diagonal
/// `E|H_pl|² = vpl`.
pub fn sample_h_profile<T: Scalar>(kdim: usize, vpp: f64, vpl: f64, rng: &mut RngStream) -> HermitianMatrix<T> {
    let (dsd, osd) = (vpp.sqrt(), vpl.sqrt());
    HermitianMatrix::from_upper(kdim, |i, j| {
        if i == j {
            T::from_real(dsd * f64::standard_normal(rng))
        } else {
            T::standard_normal(rng).scale(osd)
        }
    })
}

pub(crate) fn frame_to_mat(rows: &[Vec<f64>]) -> Result<Mat<f64>> {
    let big = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    if big == 0 || k == 0 || k > big || rows.iter().any(|r| r.len() != k) {
        return Err(RmtError::Construction(format!(
            "frame must be K x k with 1 <= k <= K, got {big} rows"
        )));
    }
    let u = Mat::from_fn(big, k, |i, j| rows[i][j]);
    let defect = orthonormality_defect(u.as_ref());
    if defect > FRAME_TOL {
        return Err(RmtError::Construction(format!(
            "frame columns are not orthonormal (defect {defect:.3e})"
        )));
    }
    Ok(u)
}

pub(crate) fn mat_to_rows(u: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..u.nrows())
        .map(|i| (0..u.ncols()).map(|j| u[(i, j)]).collect())
        .collect()
}

/// Descending eigenvalues of `U* X U`.
pub fn frame_v_eigenvalues<T: Scalar>(u: MatRef<'_, f64>, x: &HermitianMatrix<T>) -> Result<Vec<f64>> {
    if x.dim() != u.nrows() {
        return Err(RmtError::Dimension(format!(
            "frame has {} rows, matrix is {}x{}",
            u.nrows(),
            x.dim(),
            x.dim()
        )));
    }
    let v = compress(x.as_ref(), u);
    Ok(eigenvalues_sorted(&v)?.eigenvalues().to_vec())
}

fn sample_frame_v<T: Scalar>(
    u: MatRef<'_, f64>,
    law: &EntryLaw,
    theta: f64,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let big = u.nrows();
    let (vpp, vpl) = h_variance_profile(theta, sigma, law.m4(), T::FIELD.t())?;
    let w = sample_wigner::<T>(big, law, rng);
    let h = sample_h_profile::<T>(big, vpp, vpl, rng);
    let x = HermitianMatrix::from_upper(big, |i, j| w.get(i, j) + h.get(i, j));
    frame_v_eigenvalues(u, &x)
}

/// One draw of the descending eigenvalues of `U*(W_K + H_K)U`.
pub fn sample_limit_v_case_a(
    frame: &[Vec<f64>],
    law: &EntryLaw,
    theta: f64,
    sigma: f64,
    field: FieldKind,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let u = frame_to_mat(frame)?;
    if (law.sigma() - sigma).abs() > 1e-12 * sigma {
        return param_err("sigma does not match the entry law");
    }
    match field {
        FieldKind::Real => sample_frame_v::<f64>(u.as_ref(), law, theta, sigma, rng),
        FieldKind::Complex => sample_frame_v::<c64>(u.as_ref(), law, theta, sigma, rng),
    }
}

fn guoe_eigs(kdim: usize, tau: f64, field: FieldKind, rng: &mut RngStream) -> Result<Vec<f64>> {
    let e = match field {
        FieldKind::Real => eigenvalues_sorted(&sample_guoe::<f64>(kdim, tau, rng)?)?,
        FieldKind::Complex => eigenvalues_sorted(&sample_guoe::<c64>(kdim, tau, rng)?)?,
    };
    Ok(e.eigenvalues().to_vec())
}

/// One draw from `law`, as a descending vector.
pub fn sample_limit_eigs(law: &LimitLaw, rng: &mut RngStream) -> Result<Vec<f64>> {
    match law {
        LimitLaw::ConvolutionMuGauss { law, v, mu_scale } => {
            Ok(vec![sample_scaled_convolution(law, *mu_scale, *v, rng)?])
        }
        LimitLaw::GuoeEigenvalues { kdim, tau, field } => guoe_eigs(*kdim, *tau, *field, rng),
        LimitLaw::FrameVEigenvalues {
            frame,
            law,
            theta,
            sigma,
            field,
        } => sample_limit_v_case_a(frame, law, *theta, *sigma, *field, rng),
    }
}

/// Prepared sampler for repeated draws from one law.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    law: LimitLaw,
    frame: Option<Mat<f64>>,
}

impl LimitSampler {
    pub fn new(law: LimitLaw) -> Result<Self> {
        let frame = match &law {
            LimitLaw::FrameVEigenvalues {
                frame, law: mu, sigma, ..
            } => {
                if (mu.sigma() - sigma).abs() > 1e-12 * sigma {
                    return param_err("sigma does not match the entry law");
                }
                Some(frame_to_mat(frame)?)
            }
            LimitLaw::GuoeEigenvalues { kdim, tau, .. } => {
                if *kdim == 0 || !(*tau > 0.0) {
                    return param_err("GU(O)E needs kdim >= 1 and tau > 0");
                }
                None
            }
            LimitLaw::ConvolutionMuGauss { v, .. } => {
                if !(*v >= 0.0) {
                    return param_err("variance must be non-negative");
                }
                None
            }
        };
        Ok(LimitSampler { law, frame })
    }

    pub fn law(&self) -> &LimitLaw {
        &self.law
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        match (&self.law, &self.frame) {
            (
                LimitLaw::FrameVEigenvalues {
                    law,
                    theta,
                    sigma,
                    field,
                    ..
                },
                Some(u),
            ) => match field {
                FieldKind::Real => sample_frame_v::<f64>(u.as_ref(), law, *theta, *sigma, rng),
                FieldKind::Complex => sample_frame_v::<c64>(u.as_ref(), law, *theta, *sigma, rng),
            },
            (law, _) => sample_limit_eigs(law, rng),
        }
    }
}

/// Limiting law of the rescaled outliers of spike `j`.
///
/// Canonical rank-one spikes get the convolution law, spikes whose support
/// grows with `N` get the GU(O)E law, and every other geometry gets the
/// frame law built on the spike's own frame.
pub fn select_limit(
    model: &DeformedModel,
    j: usize,
    field: FieldKind,
    convention: RealDiagConvention,
) -> Result<LimitLaw> {
    let spec = &model.spec;
    let spike = spec
        .spikes
        .get(j)
        .ok_or_else(|| RmtError::Parameter(format!("no spike with index {j}")))?;
    let sigma = spec.sigma;
    if !(spike.theta > sigma) {
        return param_err(format!("spike {j} (theta = {}) is not supercritical", spike.theta));
    }
    let block = model.frame.block(j);
    if block.grows_with_n {
        return Ok(LimitLaw::GuoeEigenvalues {
            kdim: spike.multiplicity,
            tau: guoe_tau(spike.theta, sigma)?,
            field,
        });
    }
    if matches!(spike.geometry, Geometry::Canonical) && spike.multiplicity == 1 {
        return Ok(LimitLaw::ConvolutionMuGauss {
            law: model.law,
            v: v_theta(spike.theta, sigma, model.law.m4(), field.t())?,
            mu_scale: convention.mu_scale(field),
        });
    }
    Ok(LimitLaw::FrameVEigenvalues {
        frame: mat_to_rows(block.frame.as_ref()),
        law: model.law,
        theta: spike.theta,
        sigma,
        field,
    })
}

/// Closed-form `E|V_pq|²` for `V = U*(W + H)U`, with `W` a Wigner matrix of
/// variance `sigma2` and `H` Gaussian with profile `(vpp, vpl)`.
pub fn frame_v_entry_variances(u: MatRef<'_, f64>, sigma2: f64, vpp: f64, vpl: f64, field: FieldKind) -> Vec<Vec<f64>> {
    let big = u.nrows();
    let k = u.ncols();
    let d = field.t() as f64 / 2.0 * sigma2 + vpp;
    let o = sigma2 + vpl;
    let mut out = vec![vec![0.0; k]; k];
    for p in 0..k {
        for q in 0..k {
            let mut s = 0.0;
            for i in 0..big {
                s += d * u[(i, p)].powi(2) * u[(i, q)].powi(2);
                for l in 0..big {
                    if l == i {
                        continue;
                    }
                    s += match field {
                        FieldKind::Complex => o * u[(i, p)].powi(2) * u[(l, q)].powi(2),
                        FieldKind::Real if i < l => o * (u[(i, p)] * u[(l, q)] + u[(l, p)] * u[(i, q)]).powi(2),
                        FieldKind::Real => 0.0,
                    };
                }
            }
            out[p][q] = s;
        }
    }
    out
}

/// Cholesky factor of `ρI − (W/√N + A)`, where `w` is an unnormalized
/// Wigner block, `inv_sqrt_n = 1/√N` and `a` is the non-zero leading block of
/// the deformation. Fails with [`RmtError::Pole`] when `ρ` is not above the
/// spectrum.
pub fn shifted_cholesky<T: Scalar>(
    w: MatRef<'_, T>,
    inv_sqrt_n: f64,
    a: MatRef<'_, f64>,
    rho: f64,
    rng: &mut RngStream,
) -> Result<Llt<T>> {
    let m = w.nrows();
    let alen = a.nrows();
    if alen > m {
        return Err(RmtError::Dimension("deformation block exceeds the minor".into()));
    }
    let x = Mat::from_fn(m, m, |i, l| {
        let mut v = -w[(i, l)].scale(inv_sqrt_n);
        if i < alen && l < alen {
            v -= T::from_real(a[(i, l)]);
        }
        if i == l {
            v += T::from_real(rho);
        }
        v
    });
    match x.as_ref().llt(Side::Lower) {
        Ok(f) => Ok(f),
        Err(_) => {
            let minor = HermitianMatrix::from_upper(m, |i, l| T::from_real(if i == l { rho } else { 0.0 }) - x[(i, l)]);
            let mut probe = rng.fork(u64::MAX);
            let (top, _) = extreme_eigenvalues_of(&minor, 1, 0, &mut probe)?;
            Err(RmtError::Pole {
                rho,
                lambda_max: top[0],
            })
        }
    }
}

fn finite_n_v_batch<T: Scalar>(
    model: &DeformedModel,
    j: usize,
    draws: usize,
    rng: &mut RngStream,
) -> Result<Vec<HermitianMatrix<T>>> {
    let spec = &model.spec;
    let frame = &model.frame;
    let n = model.n();
    let spike = spec
        .spikes
        .get(j)
        .ok_or_else(|| RmtError::Parameter(format!("no spike with index {j}")))?;
    let sigma = spec.sigma;
    if !(spike.theta > sigma) {
        return param_err(format!("spike {j} (theta = {}) is not supercritical", spike.theta));
    }
    let k = frame.k();
    if k == 0 || k >= n {
        return param_err(format!("need 0 < k < N, got k = {k}, N = {n}"));
    }
    let rho = rho_theta(spike.theta, sigma)?;
    let m = n - k;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();

    let mut w = sample_wigner::<T>(n, &model.law, rng);
    let a = frame.minor_perturbation();
    let llt = shifted_cholesky(w.as_ref().submatrix(k, k, m, m), inv_sqrt_n, a, rho, rng)?;
    let shift = m as f64 * sigma * sigma / spike.theta;
    let block = frame.block(j);
    let off = block.offset;
    let kj = block.width;
    let mut out = Vec::with_capacity(draws);
    for d in 0..draws {
        if d > 0 {
            // fresh W_k and Y, same minor
            for q in 0..n {
                for p in 0..k.min(q + 1) {
                    w.set(p, q, sample_wigner_entry(&model.law, p == q, rng));
                }
            }
        }
        let wd = w.as_ref();
        // Z = L⁻¹ Y*, so that Y Ĝ Y* = Z* Z
        let mut z = Mat::from_fn(m, k, |i, p| wd[(p, k + i)].conjugate());
        llt.L().solve_lower_triangular_in_place(z.as_mut());
        let mut zz = Mat::<T>::zeros(k, k);
        matmul_with_conj(
            zz.as_mut(),
            Accum::Replace,
            z.as_ref().transpose(),
            Conj::Yes,
            z.as_ref(),
            Conj::No,
            T::from_real(1.0),
            Par::Seq,
        );
        let b = HermitianMatrix::from_upper(kj, |p, q| {
            let (pp, qq) = (off + p, off + q);
            let mut v = wd[(pp, qq)] + zz[(pp, qq)].scale(inv_sqrt_n);
            if p == q {
                v -= T::from_real(shift * inv_sqrt_n);
            }
            v
        });
        out.push(compress(b.as_ref(), block.frame.as_ref()));
    }
    Ok(out)
}

/// One draw of `V_{k_j,N} = U*[B_{k,N}]_{K_j} U` for spike `j`. A draw whose
/// minor has an eigenvalue above `ρ_{θ_j}` returns [`RmtError::Pole`].
pub fn empirical_v_finite_n<T: Scalar>(
    model: &DeformedModel,
    j: usize,
    rng: &mut RngStream,
) -> Result<HermitianMatrix<T>> {
    Ok(finite_n_v_batch::<T>(model, j, 1, rng)?.remove(0))
}

/// `draws` matrices `V_{k_j,N}` sharing one minor `M_{N−k}`, each with
/// fresh `W_k` and `Y`.
pub fn empirical_v_batch<T: Scalar>(
    model: &DeformedModel,
    j: usize,
    draws: usize,
    rng: &mut RngStream,
) -> Result<Vec<HermitianMatrix<T>>> {
    if draws == 0 {
        return param_err("need at least one draw");
    }
    finite_n_v_batch::<T>(model, j, draws, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::EntryKind;
    use crate::ensembles::{dct_basis, Spike, SpikeSpec};

    fn gauss() -> EntryLaw {
        EntryLaw::new(EntryKind::Gaussian, 1.0).unwrap()
    }

    fn rad() -> EntryLaw {
        EntryLaw::new(EntryKind::Rademacher, 1.0).unwrap()
    }

    fn mean_var(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn convolution_degenerate_and_bimodal() {
        let mut rng = RngStream::new(10, 0);
        for _ in 0..100 {
            let x = sample_convolution_law(&rad(), 0.0, &mut rng).unwrap();
            assert!(x == 1.0 || x == -1.0);
        }
        let n = 20_000;
        let s: Vec<f64> = (0..n)
            .map(|_| sample_convolution_law(&rad(), 0.01, &mut rng).unwrap())
            .collect();
        let mean_abs = s.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        assert!((0.97..=1.03).contains(&mean_abs));
        assert!(sample_convolution_law(&rad(), -0.1, &mut rng).is_err());
    }

    #[test]
    fn guoe_scalar_conventions() {
        let mut rng = RngStream::new(11, 0);
        let n = 40_000;
        let tau = 1.5;
        let r: Vec<f64> = (0..n)
            .map(|_| sample_guoe::<f64>(1, tau, &mut rng).unwrap().get(0, 0))
            .collect();
        let c: Vec<f64> = (0..n)
            .map(|_| sample_guoe::<c64>(1, tau, &mut rng).unwrap().get(0, 0).re)
            .collect();
        let (_, vr) = mean_var(&r);
        let (_, vc) = mean_var(&c);
        assert!((vr - 2.0 * tau).abs() < 0.05 * 2.0 * tau);
        assert!((vc - tau).abs() < 0.05 * tau);
        assert!(sample_guoe::<f64>(0, 1.0, &mut rng).is_err());
        assert!(sample_guoe::<f64>(2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn guoe_entry_variances() {
        let mut rng = RngStream::new(12, 0);
        let n = 20_000;
        let tau = 0.7;
        let mut off = Vec::with_capacity(n);
        let mut offim = Vec::with_capacity(n);
        for _ in 0..n {
            let h = sample_guoe::<c64>(3, tau, &mut rng).unwrap();
            assert!(h.is_exactly_hermitian());
            off.push(h.get(0, 2).re);
            offim.push(h.get(0, 2).im);
        }
        let (_, vr) = mean_var(&off);
        let (_, vi) = mean_var(&offim);
        let se = tau / 2.0 * (2.0 / n as f64).sqrt();
        assert!((vr - tau / 2.0).abs() < 4.0 * se);
        assert!((vi - tau / 2.0).abs() < 4.0 * se);
    }

    #[test]
    fn frame_v_zero_draws() {
        let u = dct_basis(4);
        let sub = u.as_ref().subcols(0, 2);
        let x = HermitianMatrix::<f64>::zeros(4);
        assert_eq!(frame_v_eigenvalues(sub, &x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn limit_dispatch_shapes() {
        let mut rng = RngStream::new(13, 0);
        let a = LimitLaw::ConvolutionMuGauss {
            law: gauss(),
            v: 1.0,
            mu_scale: 1.0,
        };
        assert_eq!(sample_limit_eigs(&a, &mut rng).unwrap().len(), 1);
        let b = LimitLaw::GuoeEigenvalues {
            kdim: 3,
            tau: 1.0,
            field: FieldKind::Real,
        };
        let e = sample_limit_eigs(&b, &mut rng).unwrap();
        assert_eq!(e.len(), 3);
        assert!(e.windows(2).all(|w| w[0] >= w[1]));
        let f = 0.5f64.sqrt();
        let c = LimitLaw::FrameVEigenvalues {
            frame: vec![vec![f, 0.0], vec![f, 0.0], vec![0.0, 1.0]],
            law: rad(),
            theta: 2.0,
            sigma: 1.0,
            field: FieldKind::Complex,
        };
        let e = sample_limit_eigs(&c, &mut rng).unwrap();
        assert_eq!(e.len(), 2);
        assert!(e[0] >= e[1]);
        let bad = LimitLaw::FrameVEigenvalues {
            frame: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            law: rad(),
            theta: 2.0,
            sigma: 1.0,
            field: FieldKind::Real,
        };
        assert!(sample_limit_eigs(&bad, &mut rng).is_err());
        assert!(LimitSampler::new(bad).is_err());
    }

    #[test]
    fn entry_variance_formula_matches_sampling() {
        let f = 0.5f64.sqrt();
        let rows = vec![vec![f, 0.0], vec![f, 0.0], vec![0.0, 1.0]];
        let u = frame_to_mat(&rows).unwrap();
        let (theta, sigma) = (2.0, 1.0);
        for field in [FieldKind::Real, FieldKind::Complex] {
            let (vpp, vpl) = h_variance_profile(theta, sigma, rad().m4(), field.t()).unwrap();
            let want = frame_v_entry_variances(u.as_ref(), 1.0, vpp, vpl, field);
            let mut rng = RngStream::new(14, 0);
            let n = 30_000;
            let mut acc = [[0.0f64; 2]; 2];
            for _ in 0..n {
                let x: HermitianMatrix<c64> = match field {
                    FieldKind::Complex => {
                        let w = sample_wigner::<c64>(3, &rad(), &mut rng);
                        let h = sample_h_profile::<c64>(3, vpp, vpl, &mut rng);
                        HermitianMatrix::from_upper(3, |i, j| w.get(i, j) + h.get(i, j))
                    }
                    FieldKind::Real => {
                        let w = sample_wigner::<f64>(3, &rad(), &mut rng);
                        let h = sample_h_profile::<f64>(3, vpp, vpl, &mut rng);
                        HermitianMatrix::from_upper(3, |i, j| c64::new(w.get(i, j) + h.get(i, j), 0.0))
                    }
                };
                let v = compress(x.as_ref(), u.as_ref());
                for p in 0..2 {
                    for q in 0..2 {
                        acc[p][q] += v.get(p, q).abs_sq();
                    }
                }
            }
            for p in 0..2 {
                for q in 0..2 {
                    let got = acc[p][q] / n as f64;
                    assert!(
                        (got - want[p][q]).abs() < 0.05 * want[p][q],
                        "{field:?} {p}{q}: {got} vs {}",
                        want[p][q]
                    );
                }
            }
        }
    }

    #[test]
    fn select_limit_variants() {
        let law = gauss();
        let spec = SpikeSpec::new(
            1.0,
            vec![
                Spike::canonical(4.0, 1),
                Spike::new(3.0, 1, Geometry::spread(4)),
                Spike::new(2.0, 2, Geometry::spread_growing(0.3)),
                Spike::canonical(0.5, 1),
            ],
        )
        .unwrap();
        let model = DeformedModel::new(400, law, spec).unwrap();
        let conv = RealDiagConvention::ScaledDiagonal;
        match select_limit(&model, 0, FieldKind::Real, conv).unwrap() {
            LimitLaw::ConvolutionMuGauss { mu_scale, v, .. } => {
                assert!((mu_scale - 2f64.sqrt()).abs() < 1e-15);
                assert!((v - v_theta(4.0, 1.0, 3.0, 4).unwrap()).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        match select_limit(&model, 0, FieldKind::Complex, conv).unwrap() {
            LimitLaw::ConvolutionMuGauss { mu_scale, .. } => assert_eq!(mu_scale, 1.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            select_limit(&model, 1, FieldKind::Real, conv).unwrap(),
            LimitLaw::FrameVEigenvalues { .. }
        ));
        match select_limit(&model, 2, FieldKind::Real, conv).unwrap() {
            LimitLaw::GuoeEigenvalues { kdim, tau, .. } => {
                assert_eq!(kdim, 2);
                assert!((tau - 4.0 / 3.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(select_limit(&model, 3, FieldKind::Real, conv).is_err());
    }

    #[test]
    fn finite_n_v_is_hermitian_and_scaled() {
        let spec = SpikeSpec::new(
            1.0,
            vec![Spike::new(3.0, 2, Geometry::spread(3)), Spike::canonical(0.5, 1)],
        )
        .unwrap();
        let model = DeformedModel::new(300, rad(), spec).unwrap();
        let mut rng = RngStream::new(15, 0);
        let v: HermitianMatrix<c64> = empirical_v_finite_n(&model, 0, &mut rng).unwrap();
        assert_eq!(v.dim(), 2);
        assert!(v.is_exactly_hermitian());
        assert!(v.all_finite());
        assert!(empirical_v_finite_n::<f64>(&model, 1, &mut rng).is_err());
    }

    #[test]
    fn batch_shares_minor_and_refreshes_rows() {
        let spec = SpikeSpec::new(1.0, vec![Spike::new(3.0, 1, Geometry::spread(2))]).unwrap();
        let model = DeformedModel::new(120, gauss(), spec).unwrap();
        let rng = RngStream::new(17, 0);
        let single: HermitianMatrix<f64> = empirical_v_finite_n(&model, 0, &mut rng.clone()).unwrap();
        let batch: Vec<HermitianMatrix<f64>> = empirical_v_batch(&model, 0, 3, &mut rng.clone()).unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(batch[0], single);
        assert_ne!(batch[1], batch[0]);
        assert_ne!(batch[2], batch[1]);
    }

    #[test]
    fn finite_n_v_matches_explicit_resolvent() {
        // Independent route: dense inverse of ρI − M_{N−k} from the same draw.
        let spec = SpikeSpec::new(1.0, vec![Spike::canonical(2.0, 1), Spike::canonical(0.4, 1)]).unwrap();
        let n = 60;
        let model = DeformedModel::new(n, gauss(), spec).unwrap();
        let rng = RngStream::new(16, 3);
        let v: HermitianMatrix<f64> = empirical_v_finite_n(&model, 0, &mut rng.clone()).unwrap();
        let w = sample_wigner::<f64>(n, &model.law, &mut rng.clone());
        let rho = 2.5;
        let k = 1;
        let m = n - k;
        let x = Mat::from_fn(m, m, |i, l| {
            let mut v = -w.get(k + i, k + l) / (n as f64).sqrt();
            if i == 0 && l == 0 {
                v -= 0.4;
            }
            if i == l {
                v += rho;
            }
            v
        });
        use faer::prelude::Solve;
        let g = x.partial_piv_lu().solve(Mat::<f64>::identity(m, m));
        let mut q = 0.0;
        for i in 0..m {
            for l in 0..m {
                q += w.get(0, k + i) * g[(i, l)] * w.get(0, k + l);
            }
        }
        let want = w.get(0, 0) + (q - m as f64 * 0.5) / (n as f64).sqrt();
        assert!((v.get(0, 0) - want).abs() < 1e-10, "{} vs {want}", v.get(0, 0));
    }
}
