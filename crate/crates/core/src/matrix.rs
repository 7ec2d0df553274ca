//! Dense Hermitian matrices over the real or complex field.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use faer::traits::{ComplexField, Conjugate};
use faer::{c64, Mat, MatRef};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RmtError};

/// Real-symmetric or complex-Hermitian setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Real,
    Complex,
}

impl FieldKind {
    /// Fluctuation constant: 4 for real matrices, 2 for complex.
    pub fn t(self) -> u32 {
        match self {
            FieldKind::Real => 4,
            FieldKind::Complex => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Real => "real",
            FieldKind::Complex => "complex",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "real" => Ok(FieldKind::Real),
            "complex" => Ok(FieldKind::Complex),
            other => Err(RmtError::Parameter(format!(
                "unknown field '{other}' (expected real or complex)"
            ))),
        }
    }
}

/// The ensemble field together with its `t` constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleField {
    pub kind: FieldKind,
    pub t: u32,
}

impl EnsembleField {
    pub fn new(kind: FieldKind) -> Self {
        EnsembleField { kind, t: kind.t() }
    }
}

impl From<FieldKind> for EnsembleField {
    fn from(kind: FieldKind) -> Self {
        EnsembleField::new(kind)
    }
}

/// Scalar types the simulator works over: `f64` and `c64`.
pub trait Scalar:
    ComplexField<Real = f64>
    + Conjugate<Canonical = Self>
    + Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const FIELD: FieldKind;

    fn from_real(x: f64) -> Self;
    /// Drops `im` in the real field.
    fn from_parts(re: f64, im: f64) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn conjugate(self) -> Self;
    fn abs_sq(self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn finite(self) -> bool;

    /// Standard Gaussian with `E|z|^2 = 1` (circular in the complex case).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    const FIELD: FieldKind = FieldKind::Real;

    #[inline]
    fn from_real(x: f64) -> Self {
        x
    }
    #[inline]
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn im(self) -> f64 {
        0.0
    }
    #[inline]
    fn conjugate(self) -> Self {
        self
    }
    #[inline]
    fn abs_sq(self) -> f64 {
        self * self
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn finite(self) -> bool {
        self.is_finite()
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for c64 {
    const FIELD: FieldKind = FieldKind::Complex;

    #[inline]
    fn from_real(x: f64) -> Self {
        c64::new(x, 0.0)
    }
    #[inline]
    fn from_parts(re: f64, im: f64) -> Self {
        c64::new(re, im)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn im(self) -> f64 {
        self.im
    }
    #[inline]
    fn conjugate(self) -> Self {
        c64::new(self.re, -self.im)
    }
    #[inline]
    fn abs_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        c64::new(self.re * s, self.im * s)
    }
    #[inline]
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        c64::new(a, b).scale(std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Dense Hermitian matrix. Every constructor writes the lower triangle as the
/// conjugate of the upper one, so `M == M*` holds bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix<T: Scalar> {
    data: Mat<T>,
}

impl<T: Scalar> HermitianMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        HermitianMatrix {
            data: Mat::from_fn(n, n, |_, _| T::from_real(0.0)),
        }
    }

    /// Builds from the upper triangle: `f(i, j)` is called for `i <= j` only.
    /// Diagonal values are projected onto the reals.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[(i, i)] = T::from_real(d);
        }
        m
    }

    /// Wraps a dense matrix after checking it is Hermitian within `tol`
    /// (absolute, entrywise). The stored matrix is re-symmetrized from its upper triangle.
    pub fn from_dense(m: MatRef<'_, T>, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(RmtError::Dimension(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        for j in 0..n {
            for i in 0..=j {
                let a = m[(i, j)];
                let b = m[(j, i)].conjugate();
                if !a.finite() || !b.finite() {
                    return Err(RmtError::NonFinite);
                }
                if (a - b).abs_sq().sqrt() > tol {
                    return Err(RmtError::Parameter(format!("matrix is not Hermitian at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_upper(n, |i, j| m[(i, j)]))
    }

    /// Sets entry `(i, j)` and its mirror.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        if i == j {
            self.data[(i, i)] = T::from_real(v.re());
        } else {
            self.data[(i, j)] = v;
            self.data[(j, i)] = v.conjugate();
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[(i, j)]
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_ref(&self) -> MatRef<'_, T> {
        self.data.as_ref()
    }

    pub fn into_inner(self) -> Mat<T> {
        self.data
    }

    pub fn scale_in_place(&mut self, s: f64) {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                self.data[(i, j)] = self.data[(i, j)].scale(s);
            }
        }
    }

    /// Adds a real symmetric block whose top-left corner sits at `(offset, offset)`.
    pub fn add_real_block(&mut self, offset: usize, block: MatRef<'_, f64>) -> Result<()> {
        let b = block.nrows();
        if block.ncols() != b || offset + b > self.dim() {
            return Err(RmtError::Dimension(format!(
                "block of size {}x{} at offset {offset} does not fit in dimension {}",
                block.nrows(),
                block.ncols(),
                self.dim()
            )));
        }
        for j in 0..b {
            for i in 0..=j {
                let v = self.data[(offset + i, offset + j)] + T::from_real(block[(i, j)]);
                self.set(offset + i, offset + j, v);
            }
        }
        Ok(())
    }

    /// Principal submatrix on indices `start..start + len`.
    pub fn principal(&self, start: usize, len: usize) -> HermitianMatrix<T> {
        HermitianMatrix {
            data: self.data.as_ref().submatrix(start, start, len, len).to_owned(),
        }
    }

    /// Exact conjugate-symmetry check.
    pub fn is_exactly_hermitian(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| {
            self.data[(j, j)].im() == 0.0 && (0..j).all(|i| self.data[(i, j)] == self.data[(j, i)].conjugate())
        })
    }

    pub fn all_finite(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| self.data[(i, j)].finite()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)].re()).sum()
    }

    /// Squared Hilbert-Schmidt norm.
    pub fn frobenius_sq(&self) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                s += self.data[(i, j)].abs_sq();
            }
        }
        s
    }

    /// Upper bound on the spectral norm (max absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.data[(i, j)].abs_sq().sqrt()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `U^* X U` for a Hermitian `x` and a real frame `u` with orthonormal columns.
pub fn compress<T: Scalar>(x: MatRef<'_, T>, u: MatRef<'_, f64>) -> HermitianMatrix<T> {
    let big = u.nrows();
    let k = u.ncols();
    debug_assert_eq!(x.nrows(), big);
    // tmp = X U
    let mut tmp = Mat::from_fn(big, k, |_, _| T::from_real(0.0));
    for q in 0..k {
        for l in 0..big {
            let ulq = u[(l, q)];
            if ulq == 0.0 {
                continue;
            }
            for i in 0..big {
                tmp[(i, q)] += x[(i, l)].scale(ulq);
            }
        }
    }
    HermitianMatrix::from_upper(k, |p, q| {
        let mut s = T::from_real(0.0);
        for i in 0..big {
            s += tmp[(i, q)].scale(u[(i, p)]);
        }
        s
    })
}
