//! Lanczos iteration with full reorthogonalization for a few extreme
//! eigenvalues of a dense Hermitian matrix.

use faer::linalg::matmul::matmul_with_conj;
use faer::reborrow::*;
use faer::{Accum, Conj, Mat, MatRef, Par, Side};
use rand::Rng;

use crate::error::{Result, RmtError};
use crate::matrix::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    /// Residual tolerance relative to the spectral scale.
    pub tol: f64,
    /// Defaults to the matrix dimension.
    pub max_iter: Option<usize>,
    pub check_every: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tol: 1e-11,
            max_iter: None,
            check_every: 4,
        }
    }
}

/// Converged extreme Ritz values: `top` descending, `bottom` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeEigenvalues {
    pub top: Vec<f64>,
    pub bottom: Vec<f64>,
    pub iterations: usize,
}

fn dot_re<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        s += (a[(i, 0)].conjugate() * b[(i, 0)]).re();
    }
    s
}

fn norm<T: Scalar>(a: MatRef<'_, T>) -> f64 {
    (0..a.nrows()).map(|i| a[(i, 0)].abs_sq()).sum::<f64>().sqrt()
}

/// Removes the components of `w` along the first `j` columns of `q`, twice.
fn reorthogonalize<T: Scalar>(q: MatRef<'_, T>, j: usize, w: &mut Mat<T>, h: &mut Mat<T>) {
    if j == 0 {
        return;
    }
    let basis = q.subcols(0, j);
    for _ in 0..2 {
        let mut hj = h.as_mut().subrows_mut(0, j);
        matmul_with_conj(
            hj.rb_mut(),
            Accum::Replace,
            basis.transpose(),
            Conj::Yes,
            w.as_ref(),
            Conj::No,
            T::from_real(1.0),
            Par::Seq,
        );
        matmul_with_conj(
            w.as_mut(),
            Accum::Add,
            basis,
            Conj::No,
            hj.rb(),
            Conj::No,
            T::from_real(-1.0),
            Par::Seq,
        );
    }
}

fn random_unit<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    q: MatRef<'_, T>,
    j: usize,
    rng: &mut R,
    h: &mut Mat<T>,
) -> Option<Mat<T>> {
    for _ in 0..4 {
        let mut w = Mat::from_fn(n, 1, |_, _| T::standard_normal(rng));
        reorthogonalize(q, j, &mut w, h);
        let nw = norm(w.as_ref());
        if nw > 1e-8 {
            let inv = 1.0 / nw;
            for i in 0..n {
                w[(i, 0)] = w[(i, 0)].scale(inv);
            }
            return Some(w);
        }
    }
    None
}

/// The `n_top` largest and `n_bottom` smallest eigenvalues of `m`.
pub fn extreme_eigenvalues<T: Scalar, R: Rng + ?Sized>(
    m: MatRef<'_, T>,
    n_top: usize,
    n_bottom: usize,
    opts: &LanczosOptions,
    rng: &mut R,
) -> Result<ExtremeEigenvalues> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(RmtError::Dimension("matrix must be square".into()));
    }
    if n_top + n_bottom > n {
        return Err(RmtError::Dimension(format!(
            "requested {} eigenvalues of a {n} x {n} matrix",
            n_top + n_bottom
        )));
    }
    if n_top + n_bottom == 0 {
        return Ok(ExtremeEigenvalues {
            top: vec![],
            bottom: vec![],
            iterations: 0,
        });
    }
    let max_iter = opts.max_iter.unwrap_or(n).clamp(1, n);
    let mut q = Mat::<T>::zeros(n, max_iter);
    let mut h = Mat::<T>::zeros(max_iter, 1);
    let mut alpha: Vec<f64> = Vec::with_capacity(max_iter);
    let mut beta: Vec<f64> = Vec::with_capacity(max_iter);
    let mut w = Mat::<T>::zeros(n, 1);

    let start = random_unit(n, q.as_ref(), 0, rng, &mut h)
        .ok_or_else(|| RmtError::Eigen("could not draw a start vector".into()))?;
    q.col_mut(0).copy_from(start.col(0));

    let needed = n_top + n_bottom;
    let mut j = 0;
    loop {
        matmul_with_conj(
            w.as_mut(),
            Accum::Replace,
            m,
            Conj::No,
            q.as_ref().subcols(j, 1),
            Conj::No,
            T::from_real(1.0),
            Par::Seq,
        );
        if !(0..n).all(|i| w[(i, 0)].finite()) {
            return Err(RmtError::NonFinite);
        }
        let a = dot_re(q.as_ref().subcols(j, 1), w.as_ref());
        alpha.push(a);
        reorthogonalize(q.as_ref(), j + 1, &mut w, &mut h);
        let b = norm(w.as_ref());
        let steps = j + 1;

        let last = steps == max_iter;
        if last || (steps >= needed && steps % opts.check_every.max(1) == 0) || b == 0.0 {
            let (vals, resid) = tridiagonal_ritz(&alpha, &beta, b)?;
            let scale = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) + 1.0;
            let tol = opts.tol * scale;
            let k = vals.len();
            if k >= needed {
                let top_ok = (0..n_top).all(|i| resid[k - 1 - i] <= tol);
                let bottom_ok = (0..n_bottom).all(|i| resid[i] <= tol);
                if (top_ok && bottom_ok) || steps == n {
                    let top = (0..n_top).map(|i| vals[k - 1 - i]).collect();
                    let bottom = (0..n_bottom).map(|i| vals[i]).collect();
                    return Ok(ExtremeEigenvalues {
                        top,
                        bottom,
                        iterations: steps,
                    });
                }
            }
            if last {
                return Err(RmtError::Eigen(format!(
                    "Lanczos did not converge in {max_iter} iterations"
                )));
            }
        }

        let next = if b > 1e-12 * (alpha.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) + 1.0) {
            beta.push(b);
            let inv = 1.0 / b;
            Mat::from_fn(n, 1, |i, _| w[(i, 0)].scale(inv))
        } else {
            // invariant subspace found: continue in its orthogonal complement
            beta.push(0.0);
            random_unit(n, q.as_ref(), steps, rng, &mut h)
                .ok_or_else(|| RmtError::Eigen("Krylov restart failed".into()))?
        };
        q.col_mut(steps).copy_from(next.col(0));
        j = steps;
    }
}

/// Ascending Ritz values of the tridiagonal matrix and their residual bounds.
fn tridiagonal_ritz(alpha: &[f64], beta: &[f64], b_last: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = alpha.len();
    let t = Mat::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let evd = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| RmtError::Eigen(format!("{e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let vals = (0..k).map(|i| s[i]).collect();
    let resid = (0..k).map(|i| (b_last * u[(k - 1, i)]).abs()).collect();
    Ok((vals, resid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{EntryKind, EntryLaw, RngStream};
    use crate::ensembles::sample_wigner;
    use crate::matrix::HermitianMatrix;
    use faer::c64;

    fn dense_sorted<T: Scalar>(m: &HermitianMatrix<T>) -> Vec<f64> {
        m.as_ref().self_adjoint_eigenvalues(Side::Lower).unwrap()
    }

    fn check_against_dense<T: Scalar>(n: usize, seed: u64) {
        let law = EntryLaw::new(EntryKind::Gaussian, 1.0).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let mut w: HermitianMatrix<T> = sample_wigner(n, &law, &mut rng);
        w.scale_in_place(1.0 / (n as f64).sqrt());
        // plant two outliers
        let mut data = w.clone();
        data.set(0, 0, data.get(0, 0) + T::from_real(3.0));
        data.set(1, 1, data.get(1, 1) + T::from_real(-2.5));
        let dense = dense_sorted(&data);
        let got = extreme_eigenvalues(data.as_ref(), 3, 2, &LanczosOptions::default(), &mut rng).unwrap();
        for i in 0..3 {
            assert!(
                (got.top[i] - dense[n - 1 - i]).abs() < 1e-9,
                "top {i}: {} vs {}",
                got.top[i],
                dense[n - 1 - i]
            );
        }
        for i in 0..2 {
            assert!((got.bottom[i] - dense[i]).abs() < 1e-9);
        }
        assert!(got.iterations < n);
    }

    #[test]
    fn matches_dense_real() {
        check_against_dense::<f64>(300, 1);
    }

    #[test]
    fn matches_dense_complex() {
        check_against_dense::<c64>(250, 2);
    }

    #[test]
    fn small_and_degenerate() {
        let mut rng = RngStream::new(3, 0);
        let m = HermitianMatrix::<f64>::from_diagonal(&[3.0, 1.0, 2.0]);
        let got = extreme_eigenvalues(m.as_ref(), 2, 1, &LanczosOptions::default(), &mut rng).unwrap();
        assert!((got.top[0] - 3.0).abs() < 1e-12 && (got.top[1] - 2.0).abs() < 1e-12);
        assert!((got.bottom[0] - 1.0).abs() < 1e-12);

        // identity: the Krylov space is one-dimensional, so restarts are needed
        let id = HermitianMatrix::<f64>::from_diagonal(&[1.0; 6]);
        let got = extreme_eigenvalues(id.as_ref(), 3, 0, &LanczosOptions::default(), &mut rng).unwrap();
        assert!(got.top.iter().all(|v| (v - 1.0).abs() < 1e-12));

        assert!(extreme_eigenvalues(id.as_ref(), 4, 3, &LanczosOptions::default(), &mut rng).is_err());
    }
}
