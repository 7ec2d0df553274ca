//! Wigner matrices, finite-rank deformations and the deformed model `W/√N + A`.
//!
//! Real case: off-diagonal entries are drawn from μ and diagonal entries are
//! `√2·X` with `X ~ μ`. Complex case: real and imaginary parts of each
//! off-diagonal entry are `X/√2`, and the diagonal is drawn from μ directly.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::distributions::{EntryLaw, RngStream};
use crate::error::{Result, RmtError};
use crate::matrix::{HermitianMatrix, Scalar};

const FRAME_TOL: f64 = 1e-12;

/// One Wigner entry: diagonal when `diag`, strictly upper triangular otherwise.
#[inline]
pub fn sample_wigner_entry<T: Scalar>(law: &EntryLaw, diag: bool, rng: &mut RngStream) -> T {
    let complex = T::FIELD == crate::matrix::FieldKind::Complex;
    if diag {
        let x = law.sample(rng);
        if complex {
            T::from_real(x)
        } else {
            T::from_real(std::f64::consts::SQRT_2 * x)
        }
    } else if complex {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let re = law.sample(rng) * s;
        let im = law.sample(rng) * s;
        T::from_parts(re, im)
    } else {
        T::from_real(law.sample(rng))
    }
}

/// Samples an `n × n` Wigner matrix with entry law `law`.
pub fn sample_wigner<T: Scalar>(n: usize, law: &EntryLaw, rng: &mut RngStream) -> HermitianMatrix<T> {
    HermitianMatrix::from_upper(n, |i, j| sample_wigner_entry(law, i == j, rng))
}

/// Eigenvector geometry of one spike.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    /// Eigenvectors are canonical basis vectors (`K_j = k_j`).
    #[default]
    Canonical,
    /// Eigenvectors spread evenly over `K_j` coordinates. Either a fixed
    /// `width`, or `floor(N^exponent)` coordinates so that `K_j` grows with `N`.
    SpreadUniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exponent: Option<f64>,
    },
    /// User-supplied `K_j × k_j` frame with orthonormal columns, given row by row.
    ExplicitFrame { rows: Vec<Vec<f64>> },
}

impl Geometry {
    pub fn spread(width: usize) -> Self {
        Geometry::SpreadUniform {
            width: Some(width),
            exponent: None,
        }
    }

    pub fn spread_growing(exponent: f64) -> Self {
        Geometry::SpreadUniform {
            width: None,
            exponent: Some(exponent),
        }
    }

    /// True when the support width grows with `N` (spread eigenvectors with
    /// vanishing coordinates).
    pub fn grows_with_n(&self) -> bool {
        matches!(self, Geometry::SpreadUniform { exponent: Some(_), .. })
    }
}

/// One eigenvalue `theta` of the deformation with multiplicity and geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spike {
    pub theta: f64,
    #[serde(default = "one")]
    pub multiplicity: usize,
    #[serde(default)]
    pub geometry: Geometry,
}

fn one() -> usize {
    1
}

impl Spike {
    pub fn new(theta: f64, multiplicity: usize, geometry: Geometry) -> Self {
        Spike {
            theta,
            multiplicity,
            geometry,
        }
    }

    pub fn canonical(theta: f64, multiplicity: usize) -> Self {
        Spike::new(theta, multiplicity, Geometry::Canonical)
    }

    /// Number of canonical coordinates carrying this spike's eigenvectors at size `n`.
    pub fn width(&self, n: usize) -> Result<usize> {
        let k = self.multiplicity;
        let w = match &self.geometry {
            Geometry::Canonical => k,
            Geometry::SpreadUniform { width, exponent } => match (width, exponent) {
                (Some(w), None) => *w,
                (None, Some(e)) => {
                    if !(*e > 0.0 && *e < 1.0) {
                        return Err(RmtError::Construction(format!(
                            "spread exponent must lie in (0, 1), got {e}"
                        )));
                    }
                    (n as f64).powf(*e).floor() as usize
                }
                _ => {
                    return Err(RmtError::Construction(
                        "spread_uniform needs exactly one of width or exponent".into(),
                    ))
                }
            },
            Geometry::ExplicitFrame { rows } => rows.len(),
        };
        if w < k {
            return Err(RmtError::Construction(format!(
                "spike theta = {}: support width {w} is smaller than multiplicity {k}",
                self.theta
            )));
        }
        Ok(w)
    }
}

/// The deformation `A_N` described by its spikes and the reference `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSpec {
    pub sigma: f64,
    pub spikes: Vec<Spike>,
}

impl SpikeSpec {
    pub fn new(sigma: f64, spikes: Vec<Spike>) -> Result<Self> {
        let spec = SpikeSpec { sigma, spikes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(RmtError::Construction(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        for (i, s) in self.spikes.iter().enumerate() {
            if !s.theta.is_finite() || s.theta == 0.0 {
                return Err(RmtError::Construction(format!(
                    "spike {i}: theta must be finite and non-zero, got {}",
                    s.theta
                )));
            }
            if s.multiplicity == 0 {
                return Err(RmtError::Construction(format!("spike {i}: multiplicity must be >= 1")));
            }
            if i > 0 && !(self.spikes[i - 1].theta > s.theta) {
                return Err(RmtError::Construction(
                    "spike values must be strictly decreasing".into(),
                ));
            }
            if let Geometry::ExplicitFrame { rows } = &s.geometry {
                frame_from_rows(rows, s.multiplicity)?;
            }
        }
        Ok(())
    }

    /// Total rank `r`.
    pub fn rank(&self) -> usize {
        self.spikes.iter().map(|s| s.multiplicity).sum()
    }

    /// Indices of spikes with `theta > sigma`, in order.
    pub fn supercritical(&self) -> Vec<usize> {
        (0..self.spikes.len())
            .filter(|&j| self.spikes[j].theta > self.sigma)
            .collect()
    }

    /// Indices of spikes with `theta < -sigma`.
    pub fn supercritical_negative(&self) -> Vec<usize> {
        (0..self.spikes.len())
            .filter(|&j| self.spikes[j].theta < -self.sigma)
            .collect()
    }

    /// `k_{+σ}`: total multiplicity of spikes above `sigma`.
    pub fn k_plus(&self) -> usize {
        self.supercritical().iter().map(|&j| self.spikes[j].multiplicity).sum()
    }

    pub fn k_minus(&self) -> usize {
        self.supercritical_negative()
            .iter()
            .map(|&j| self.spikes[j].multiplicity)
            .sum()
    }

    /// `k`: number of canonical coordinates spanned by the supercritical eigenvectors.
    pub fn k_support(&self, n: usize) -> Result<usize> {
        self.supercritical().iter().map(|&j| self.spikes[j].width(n)).sum()
    }

    /// Number of eigenvalues ranked above spike `j` (`k̂_{j-1}`).
    pub fn rank_offset(&self, j: usize) -> usize {
        self.spikes[..j].iter().map(|s| s.multiplicity).sum()
    }

    /// Default outlier margin: a quarter of the gap between the smallest
    /// supercritical outlier location and the bulk edge.
    pub fn default_delta(&self) -> Option<f64> {
        let s = self.sigma;
        self.spikes
            .iter()
            .filter(|sp| sp.theta.abs() > s)
            .map(|sp| (sp.theta.abs() + s * s / sp.theta.abs() - 2.0 * s) / 4.0)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
    }
}

fn frame_from_rows(rows: &[Vec<f64>], k: usize) -> Result<Mat<f64>> {
    let big = rows.len();
    if big < k {
        return Err(RmtError::Construction(format!(
            "explicit frame has {big} rows but multiplicity is {k}"
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != k {
            return Err(RmtError::Construction(format!(
                "explicit frame row {i} has {} entries, expected {k}",
                r.len()
            )));
        }
    }
    let f = Mat::from_fn(big, k, |i, j| rows[i][j]);
    check_orthonormal(f.as_ref())?;
    Ok(f)
}

fn check_orthonormal(f: MatRef<'_, f64>) -> Result<()> {
    let g = orthonormality_defect(f);
    if g > FRAME_TOL {
        return Err(RmtError::Construction(format!(
            "frame columns are not orthonormal (max |U*U - I| = {g:.3e})"
        )));
    }
    Ok(())
}

/// `max |U^T U - I|` over all entries.
pub fn orthonormality_defect(f: MatRef<'_, f64>) -> f64 {
    let k = f.ncols();
    let mut worst: f64 = 0.0;
    for p in 0..k {
        for q in 0..k {
            let dot: f64 = (0..f.nrows()).map(|i| f[(i, p)] * f[(i, q)]).sum();
            let target = if p == q { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

/// Orthonormal DCT-II basis of size `width`; column 0 is the uniform vector.
pub fn dct_basis(width: usize) -> Mat<f64> {
    let w = width as f64;
    Mat::from_fn(width, width, |i, p| {
        if p == 0 {
            1.0 / w.sqrt()
        } else {
            (2.0 / w).sqrt() * (std::f64::consts::PI * (i as f64 + 0.5) * p as f64 / w).cos()
        }
    })
}

/// Extends the orthonormal columns of `f` to a square orthonormal basis.
fn complete_basis(f: MatRef<'_, f64>) -> Mat<f64> {
    let big = f.nrows();
    let mut cols: Vec<Vec<f64>> = (0..f.ncols()).map(|j| (0..big).map(|i| f[(i, j)]).collect()).collect();
    for e in 0..big {
        if cols.len() == big {
            break;
        }
        let mut v = vec![0.0; big];
        v[e] = 1.0;
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    Mat::from_fn(big, big, |i, j| cols[j][i])
}

/// Placement and eigenvector frame of one spike inside `A_N`.
#[derive(Debug, Clone)]
pub struct SpikeBlock {
    pub theta: f64,
    pub multiplicity: usize,
    /// First canonical coordinate of the block.
    pub offset: usize,
    /// `K_j`.
    pub width: usize,
    /// `U_{K_j × k_j}`.
    pub frame: Mat<f64>,
    /// `frame` completed to a `K_j × K_j` orthonormal basis.
    pub basis: Mat<f64>,
    pub grows_with_n: bool,
}

/// Eigenvector frame of the deformation at a fixed size `n`.
#[derive(Debug, Clone)]
pub struct SpikeFrame {
    n: usize,
    sigma: f64,
    blocks: Vec<SpikeBlock>,
    span: usize,
    k: usize,
    u_k: Mat<f64>,
    perturbation: Mat<f64>,
}

impl SpikeFrame {
    pub fn new(spec: &SpikeSpec, n: usize) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.spikes.len());
        let mut offset = 0;
        for s in &spec.spikes {
            let width = s.width(n)?;
            let frame = match &s.geometry {
                Geometry::Canonical => Mat::from_fn(width, width, |i, j| if i == j { 1.0 } else { 0.0 }),
                Geometry::SpreadUniform { .. } => {
                    let dct = dct_basis(width);
                    dct.as_ref().subcols(0, s.multiplicity).to_owned()
                }
                Geometry::ExplicitFrame { rows } => frame_from_rows(rows, s.multiplicity)?,
            };
            let basis = match &s.geometry {
                Geometry::SpreadUniform { .. } => dct_basis(width),
                _ => complete_basis(frame.as_ref()),
            };
            blocks.push(SpikeBlock {
                theta: s.theta,
                multiplicity: s.multiplicity,
                offset,
                width,
                frame,
                basis,
                grows_with_n: s.geometry.grows_with_n(),
            });
            offset += width;
        }
        let span = offset;
        if span > n {
            return Err(RmtError::Construction(format!(
                "spike blocks need {span} coordinates but N = {n}"
            )));
        }
        let k: usize = blocks.iter().filter(|b| b.theta > spec.sigma).map(|b| b.width).sum();

        let mut u_k = Mat::<f64>::zeros(k, k);
        for b in blocks.iter().filter(|b| b.theta > spec.sigma) {
            for i in 0..b.width {
                for j in 0..b.width {
                    u_k[(b.offset + i, b.offset + j)] = b.basis[(i, j)];
                }
            }
        }

        let mut perturbation = Mat::<f64>::zeros(span, span);
        for b in &blocks {
            for q in 0..b.width {
                for p in 0..=q {
                    let v: f64 = b.theta
                        * (0..b.multiplicity)
                            .map(|c| b.frame[(p, c)] * b.frame[(q, c)])
                            .sum::<f64>();
                    perturbation[(b.offset + p, b.offset + q)] = v;
                    perturbation[(b.offset + q, b.offset + p)] = v;
                }
            }
        }

        Ok(SpikeFrame {
            n,
            sigma: spec.sigma,
            blocks,
            span,
            k,
            u_k,
            perturbation,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn blocks(&self) -> &[SpikeBlock] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &SpikeBlock {
        &self.blocks[j]
    }

    /// `k`: leading coordinates carrying the supercritical eigenvectors.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of leading coordinates where `A_N` is non-zero.
    pub fn span(&self) -> usize {
        self.span
    }

    /// `U_k`, block-diagonal over the supercritical spikes.
    pub fn u_k(&self) -> MatRef<'_, f64> {
        self.u_k.as_ref()
    }

    /// Non-zero leading `span × span` block of `A_N`.
    pub fn perturbation_block(&self) -> MatRef<'_, f64> {
        self.perturbation.as_ref()
    }

    /// Dense `A_N`.
    pub fn dense<T: Scalar>(&self) -> HermitianMatrix<T> {
        let mut a = HermitianMatrix::<T>::zeros(self.n);
        a.add_real_block(0, self.perturbation.as_ref())
            .expect("perturbation block fits by construction");
        a
    }

    /// `A_{N-k}`: the deformation restricted to coordinates `k..N`, as its
    /// non-zero leading block (possibly empty).
    pub fn minor_perturbation(&self) -> MatRef<'_, f64> {
        let len = self.span - self.k;
        self.perturbation.as_ref().submatrix(self.k, self.k, len, len)
    }

    /// Turns a Wigner sample into `W/√N + A_N` in place.
    pub fn assemble_in_place<T: Scalar>(&self, w: &mut HermitianMatrix<T>) -> Result<()> {
        if w.dim() != self.n {
            return Err(RmtError::Dimension(format!(
                "Wigner matrix has dimension {}, frame was built for N = {}",
                w.dim(),
                self.n
            )));
        }
        w.scale_in_place(1.0 / (self.n as f64).sqrt());
        w.add_real_block(0, self.perturbation.as_ref())
    }
}

/// Builds the dense deformation `A_N` and its eigenvector frame.
pub fn build_spike_frame(spec: &SpikeSpec, n: usize) -> Result<(HermitianMatrix<f64>, SpikeFrame)> {
    let frame = SpikeFrame::new(spec, n)?;
    Ok((frame.dense::<f64>(), frame))
}

/// `M = W/√N + A` with `N = dim(W)`.
pub fn assemble_deformed<T: Scalar>(w: &HermitianMatrix<T>, a: &HermitianMatrix<T>) -> Result<HermitianMatrix<T>> {
    let n = w.dim();
    if a.dim() != n {
        return Err(RmtError::Dimension(format!(
            "W is {n}x{n} but A is {}x{}",
            a.dim(),
            a.dim()
        )));
    }
    let s = 1.0 / (n as f64).sqrt();
    Ok(HermitianMatrix::from_upper(n, |i, j| {
        w.get(i, j).scale(s) + a.get(i, j)
    }))
}

/// Block decomposition `W = [[W_k, Y], [Y*, W_{N-k}]]`.
pub fn split_blocks<T: Scalar>(
    w: &HermitianMatrix<T>,
    k: usize,
) -> Result<(HermitianMatrix<T>, Mat<T>, HermitianMatrix<T>)> {
    let n = w.dim();
    if k == 0 || k >= n {
        return Err(RmtError::Parameter(format!(
            "block size k = {k} must satisfy 0 < k < N = {n}"
        )));
    }
    let wk = w.principal(0, k);
    let y = w.as_ref().submatrix(0, k, k, n - k).to_owned();
    let rest = w.principal(k, n - k);
    Ok((wk, y, rest))
}

/// A deformed Wigner model: size, entry law and spike frame.
#[derive(Debug, Clone)]
pub struct DeformedModel {
    pub law: EntryLaw,
    pub spec: SpikeSpec,
    pub frame: SpikeFrame,
}

impl DeformedModel {
    pub fn new(n: usize, law: EntryLaw, spec: SpikeSpec) -> Result<Self> {
        if (law.sigma() - spec.sigma).abs() > 1e-12 * spec.sigma {
            return Err(RmtError::Parameter(format!(
                "spike spec sigma {} does not match entry law sigma {}",
                spec.sigma,
                law.sigma()
            )));
        }
        let frame = SpikeFrame::new(&spec, n)?;
        Ok(DeformedModel { law, spec, frame })
    }

    pub fn n(&self) -> usize {
        self.frame.n()
    }

    pub fn sigma(&self) -> f64 {
        self.law.sigma()
    }

    /// Draws `M_N = W_N/√N + A_N`.
    pub fn sample<T: Scalar>(&self, rng: &mut RngStream) -> HermitianMatrix<T> {
        let mut w = sample_wigner::<T>(self.n(), &self.law, rng);
        self.frame
            .assemble_in_place(&mut w)
            .expect("dimensions agree by construction");
        w
    }
}
