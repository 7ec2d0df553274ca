//! Empirical distribution tools: two-sample Kolmogorov-Smirnov test,
//! moments, covariances and quantile pairs.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result, RmtError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub d: f64,
    pub n: usize,
    pub m: usize,
    pub p_value: f64,
}

impl KsReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Kolmogorov survival function `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut k = 1.0f64;
    loop {
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if (k as u64) % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
        k += 1.0;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted_copy(a: &[f64]) -> Result<Vec<f64>> {
    if a.iter().any(|x| x.is_nan()) {
        return param_err("sample contains NaN");
    }
    let mut v = a.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).expect("NaN filtered above"));
    Ok(v)
}

/// Exact two-sample statistic with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsReport> {
    if a.is_empty() || b.is_empty() {
        return param_err("KS test needs two non-empty samples");
    }
    let sa = sorted_copy(a)?;
    let sb = sorted_copy(b)?;
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = sa[i].min(sb[j]);
        while i < n && sa[i] == x {
            i += 1;
        }
        while j < m && sb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    let lambda = d * (nf * mf / (nf + mf)).sqrt();
    Ok(KsReport {
        d,
        n,
        m,
        p_value: kolmogorov_q(lambda),
    })
}

/// One-sample statistic against a continuous distribution function.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsReport> {
    if a.is_empty() {
        return param_err("KS test needs a non-empty sample");
    }
    let s = sorted_copy(a)?;
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsReport {
        d,
        n: s.len(),
        m: 0,
        p_value: kolmogorov_q(d * n.sqrt()),
    })
}

pub fn normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (2.0 * variance).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased.
    pub variance: f64,
    /// `m3 / m2^{3/2}`; needs three points and non-zero spread.
    pub skewness: Option<f64>,
    /// `m4 / m2² − 3`; needs four points and non-zero spread.
    pub excess_kurtosis: Option<f64>,
}

pub fn sample_moments(a: &[f64]) -> Result<Moments> {
    let n = a.len();
    if n < 2 {
        return param_err("moments need at least two values");
    }
    let nf = n as f64;
    let mean = a.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in a {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let variance = m2 / (nf - 1.0);
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let spread = m2 > 0.0;
    Ok(Moments {
        n,
        mean,
        variance,
        skewness: (n >= 3 && spread).then(|| m3 / m2.powf(1.5)),
        excess_kurtosis: (n >= 4 && spread).then(|| m4 / (m2 * m2) - 3.0),
    })
}

/// Unbiased sample covariance of equally long vectors.
pub fn empirical_covariance(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if vectors.len() < 2 {
        return param_err("covariance needs at least two vectors");
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(RmtError::Dimension("vectors must share a non-zero length".into()));
    }
    let nf = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut c = vec![vec![0.0; d]; d];
    for v in vectors {
        for a in 0..d {
            let da = v[a] - mean[a];
            for b in a..d {
                c[a][b] += da * (v[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            c[a][b] /= nf - 1.0;
            c[b][a] = c[a][b];
        }
    }
    Ok(c)
}

fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// `q` matched quantiles at probabilities `i/(q−1)`, linearly interpolated.
pub fn qq_pairs(a: &[f64], b: &[f64], q: usize) -> Result<Vec<(f64, f64)>> {
    if q < 2 {
        return param_err("need at least two quantiles");
    }
    if a.is_empty() || b.is_empty() {
        return param_err("QQ pairs need two non-empty samples");
    }
    let sa = sorted_copy(a)?;
    let sb = sorted_copy(b)?;
    Ok((0..q)
        .map(|i| {
            let p = i as f64 / (q - 1) as f64;
            (quantile_sorted(&sa, p), quantile_sorted(&sb, p))
        })
        .collect())
}

/// `‖A − B‖_F / ‖B‖_F`.
pub fn frobenius_relative(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(RmtError::Dimension("matrices differ in shape".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y).powi(2);
            den += y * y;
        }
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64, stream: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, stream);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().d, 0.0);
        assert_eq!(ks_two_sample(&[0.0, 0.0], &[1.0, 1.0]).unwrap().d, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.5, 2.5]).unwrap().d, 0.5);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(ks_two_sample(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn ks_ties_are_grouped() {
        // identical discrete samples in different orders give d = 0
        let a = [1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let b = [-1.0, -1.0, 1.0, -1.0, 1.0, 1.0];
        assert_eq!(ks_two_sample(&a, &b).unwrap().d, 0.0);
        let c = [1.0, 1.0, 1.0, -1.0];
        assert!((ks_two_sample(&a, &c).unwrap().d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_values() {
        // standard table values
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 5e-4);
        assert!((kolmogorov_q(1.63) - 0.0098).abs() < 5e-4);
        assert_eq!(kolmogorov_q(0.1), 1.0);
        assert!(kolmogorov_q(5.0) < 1e-12);
    }

    #[test]
    fn one_sample_normal() {
        let x = normals(20_000, 1, 0);
        let r = ks_one_sample(&x, |v| normal_cdf(v, 0.0, 1.0)).unwrap();
        assert!(r.d < 0.015);
        let shifted = ks_one_sample(&x, |v| normal_cdf(v, 0.3, 1.0)).unwrap();
        assert!(shifted.p_value < 1e-6);
        assert!((normal_cdf(0.0, 0.0, 2.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.96, 0.0, 1.0) - 0.975).abs() < 1e-4);
    }

    #[test]
    fn moments_examples() {
        let m = sample_moments(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.variance, 0.0);
        assert!(m.excess_kurtosis.is_none());
        let m = sample_moments(&[-1.0, 1.0]).unwrap();
        assert_eq!(m.mean, 0.0);
        assert_eq!(m.variance, 2.0);
        assert!(m.skewness.is_none());
        assert!(sample_moments(&[1.0]).is_err());
        let x = normals(1_000_000, 2, 0);
        let m = sample_moments(&x).unwrap();
        assert!(m.excess_kurtosis.unwrap().abs() < 0.02);
        assert!(m.skewness.unwrap().abs() < 0.01);
    }

    #[test]
    fn covariance_examples() {
        let c = empirical_covariance(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(c.iter().flatten().all(|&v| v == 0.0));
        let c = empirical_covariance(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(c, vec![vec![2.0, 0.0], vec![0.0, 0.0]]);
        assert!(empirical_covariance(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let a = normals(100_000, 3, 0);
        let b = normals(100_000, 3, 1);
        let v: Vec<Vec<f64>> = a.iter().zip(&b).map(|(x, y)| vec![*x, *y]).collect();
        let c = empirical_covariance(&v).unwrap();
        assert!(c[0][1].abs() < 0.01);
        assert_eq!(c[0][1], c[1][0]);
    }

    #[test]
    fn qq_examples() {
        let a = [3.0, 1.0, 2.0, 5.0];
        for (x, y) in qq_pairs(&a, &a, 7).unwrap() {
            assert_eq!(x, y);
        }
        let ends = qq_pairs(&a, &[10.0, 20.0], 2).unwrap();
        assert_eq!(ends, vec![(1.0, 10.0), (5.0, 20.0)]);
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        for (x, y) in qq_pairs(&a, &b, 9).unwrap() {
            assert!((y - 2.0 * x).abs() < 1e-12);
        }
        assert!(qq_pairs(&a, &a, 1).is_err());
        assert!(qq_pairs(&[], &a, 3).is_err());
    }

    #[test]
    fn ks_self_calibration() {
        let trials = 500;
        let mut rejections = 0;
        for t in 0..trials {
            let a = normals(10_000, 4, 2 * t);
            let b = normals(10_000, 4, 2 * t + 1);
            if ks_two_sample(&a, &b).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let frac = rejections as f64 / trials as f64;
        assert!((0.03..=0.08).contains(&frac), "rejection fraction {frac}");
    }

    proptest! {
        #[test]
        fn ks_permutation_invariant(a in prop::collection::vec(-10.0f64..10.0, 1..40),
                                    b in prop::collection::vec(-10.0f64..10.0, 1..40),
                                    shift in 0usize..40) {
            let d = ks_two_sample(&a, &b).unwrap().d;
            let mut ra = a.clone();
            ra.rotate_left(shift % a.len());
            let mut rb = b.clone();
            rb.reverse();
            prop_assert_eq!(ks_two_sample(&ra, &rb).unwrap().d, d);
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn ks_monotone_transform_invariant(a in prop::collection::vec(-3.0f64..3.0, 1..40),
                                           b in prop::collection::vec(-3.0f64..3.0, 1..40)) {
            let d = ks_two_sample(&a, &b).unwrap().d;
            let f = |x: &f64| x.exp() * 3.0 - 1.0;
            let ta: Vec<f64> = a.iter().map(f).collect();
            let tb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(ks_two_sample(&ta, &tb).unwrap().d, d);
        }

        #[test]
        fn p_value_monotone_in_lambda(x in 0.0f64..3.0, dx in 0.0f64..1.0) {
            prop_assert!(kolmogorov_q(x + dx) <= kolmogorov_q(x) + 1e-15);
        }
    }
}
