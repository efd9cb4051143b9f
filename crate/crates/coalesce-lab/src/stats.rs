//! Empirical-distribution utilities: moment estimators with standard
//! errors, Kolmogorov-Smirnov distance to a normal reference, and a
//! permutation-calibrated total-variation test for integer samples.

use crate::error::{Error, Result};
use crate::rng::SeqRng;
use crate::special::normal_cdf;
use std::collections::HashMap;

/// Mean/variance estimates with standard errors.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Moments {
    pub mean: f64,
    /// Unbiased sample variance (divisor M-1).
    pub variance: f64,
    pub se_mean: f64,
    /// Standard error of the variance via the fourth central moment.
    pub se_variance: f64,
}

pub fn moments(xs: &[f64]) -> Result<Moments> {
    let m = xs.len();
    if m < 2 {
        return Err(Error::SampleSize(format!("need at least 2 values, got {m}")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite sample value".to_string()));
    }
    let mf = m as f64;
    let mean = xs.iter().sum::<f64>() / mf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let variance = m2 / (mf - 1.0);
    let mu4 = m4 / mf;
    // Var(s^2) ~ (mu4 - sigma^4 (M-3)/(M-1)) / M
    let var_of_var = (mu4 - variance * variance * (mf - 3.0) / (mf - 1.0)) / mf;
    Ok(Moments {
        mean,
        variance,
        se_mean: (variance / mf).sqrt(),
        se_variance: var_of_var.max(0.0).sqrt(),
    })
}

/// Kolmogorov-Smirnov distance of a sample to N(mean, sigma_sq).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub sample_size: usize,
    pub ref_mean: f64,
    pub ref_sigma_sq: f64,
}

/// Exact sup over the sample atoms of |F_M(z+-) - Phi(z)|, the standard
/// two-sided evaluation on a (possibly tied) sorted sample.
pub fn ks_to_normal(xs: &[f64], mean: f64, sigma_sq: f64) -> Result<KsResult> {
    if xs.is_empty() {
        return Err(Error::SampleSize("empty sample".to_string()));
    }
    if !sigma_sq.is_finite() || sigma_sq <= 0.0 {
        return Err(Error::Domain(format!("sigma_sq must be positive, got {sigma_sq}")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite sample value".to_string()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len() as f64;
    let sd = sigma_sq.sqrt();
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let phi = normal_cdf((x - mean) / sd);
        sup = sup
            .max(((i + 1) as f64 / m - phi).abs())
            .max((i as f64 / m - phi).abs());
    }
    Ok(KsResult {
        statistic: sup,
        sample_size: sorted.len(),
        ref_mean: mean,
        ref_sigma_sq: sigma_sq,
    })
}

/// Total-variation distance between two integer samples plus a permutation
/// threshold (99th percentile of TV under random re-partitions of the
/// pooled sample).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct TvResult {
    pub tv: f64,
    pub threshold: f64,
}

const PERMUTATIONS: usize = 200;

pub fn two_sample_tv(a: &[i64], b: &[i64], seed: u64) -> Result<TvResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::SampleSize("both samples must be non-empty".to_string()));
    }
    let tv = tv_distance(a, b);
    let mut pooled: Vec<i64> = a.iter().chain(b).copied().collect();
    let mut rng = SeqRng::new(seed);
    let mut nulls = Vec::with_capacity(PERMUTATIONS);
    for _ in 0..PERMUTATIONS {
        rng.shuffle(&mut pooled);
        nulls.push(tv_distance(&pooled[..a.len()], &pooled[a.len()..]));
    }
    nulls.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let idx = ((PERMUTATIONS as f64) * 0.99).ceil() as usize - 1;
    Ok(TvResult { tv, threshold: nulls[idx] })
}

fn tv_distance(a: &[i64], b: &[i64]) -> f64 {
    let mut counts: HashMap<i64, (f64, f64)> = HashMap::new();
    let wa = 1.0 / a.len() as f64;
    let wb = 1.0 / b.len() as f64;
    for &x in a {
        counts.entry(x).or_default().0 += wa;
    }
    for &x in b {
        counts.entry(x).or_default().1 += wb;
    }
    0.5 * counts.values().map(|(pa, pb)| (pa - pb).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_hand_cases() {
        let m = moments(&[0.0, 2.0]).unwrap();
        assert_eq!(m.mean, 1.0);
        assert_eq!(m.variance, 2.0);
        let c = moments(&[3.0; 50]).unwrap();
        assert_eq!(c.variance, 0.0);
        assert_eq!(c.se_mean, 0.0);
        assert_eq!(c.se_variance, 0.0);
        assert!(moments(&[1.0]).is_err());
        assert!(moments(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn moments_normal_self_test() {
        let mut rng = crate::rng::SeqRng::new(2024);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.normal()).collect();
        let m = moments(&xs).unwrap();
        assert!(m.mean.abs() < 3.0 * m.se_mean, "mean {} se {}", m.mean, m.se_mean);
        assert!((m.variance - 1.0).abs() < 3.0 * m.se_variance);
    }

    #[test]
    fn moments_concatenation_shrinks_variance_estimate_gap() {
        let base = [1.0, 2.0, 4.0, 7.0];
        let m1 = moments(&base).unwrap();
        let rep: Vec<f64> = base.iter().copied().cycle().take(4 * 50).collect();
        let mk = moments(&rep).unwrap();
        assert!((mk.mean - m1.mean).abs() < 1e-12);
        // population variance of the base points
        let pop = base.iter().map(|x| (x - m1.mean).powi(2)).sum::<f64>() / 4.0;
        assert!((mk.variance - pop).abs() < pop * 0.01);
    }

    #[test]
    fn ks_constant_sample_at_reference_mean() {
        let r = ks_to_normal(&[0.0; 7], 0.0, 1.0).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-15);
        let one = ks_to_normal(&[0.0], 0.0, 1.0).unwrap();
        assert!((one.statistic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_normal_sample_is_small() {
        let mut rng = crate::rng::SeqRng::new(7);
        let xs: Vec<f64> = (0..10_000).map(|_| 2.0 + 1.5 * rng.normal()).collect();
        let r = ks_to_normal(&xs, 2.0, 2.25).unwrap();
        // 99% KS quantile at M=1e4 is 1.628/sqrt(M) = 0.0163
        assert!(r.statistic <= 0.02, "ks = {}", r.statistic);
    }

    #[test]
    fn ks_affine_invariance() {
        let mut rng = crate::rng::SeqRng::new(99);
        let xs: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let base = ks_to_normal(&xs, 0.1, 0.8).unwrap().statistic;
        let (a, b) = (3.5, -2.0);
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let scaled = ks_to_normal(&ys, a * 0.1 + b, a * a * 0.8).unwrap().statistic;
        assert!((base - scaled).abs() < 1e-9, "{base} vs {scaled}");
    }

    #[test]
    fn ks_rejects_bad_inputs() {
        assert!(ks_to_normal(&[], 0.0, 1.0).is_err());
        assert!(ks_to_normal(&[0.0], 0.0, 0.0).is_err());
        assert!(ks_to_normal(&[0.0], 0.0, -1.0).is_err());
    }

    #[test]
    fn tv_identical_and_disjoint() {
        let a: Vec<i64> = (0..100).map(|i| i % 7).collect();
        let r = two_sample_tv(&a, &a, 1).unwrap();
        assert_eq!(r.tv, 0.0);
        let b: Vec<i64> = a.iter().map(|x| x + 100).collect();
        let r = two_sample_tv(&a, &b, 1).unwrap();
        assert!((r.tv - 1.0).abs() < 1e-12);
        assert!(two_sample_tv(&[], &a, 1).is_err());
    }

    #[test]
    fn tv_is_symmetric_and_bounded() {
        let a: Vec<i64> = (0..150).map(|i| (i * i) % 11).collect();
        let b: Vec<i64> = (0..80).map(|i| (i * 3) % 13).collect();
        let ab = two_sample_tv(&a, &b, 5).unwrap();
        let ba = two_sample_tv(&b, &a, 5).unwrap();
        assert!((ab.tv - ba.tv).abs() < 1e-15);
        assert!(ab.tv >= 0.0 && ab.tv <= 1.0);
    }

    #[test]
    fn tv_null_self_consistency() {
        // two independent draws from one integer law stay under the threshold
        // for the vast majority of seeds
        let mut pass = 0;
        for seed in 0..20u64 {
            let mut rng = crate::rng::SeqRng::new(seed);
            let a: Vec<i64> = (0..10_000).map(|_| (3.0 + rng.normal()).round() as i64).collect();
            let b: Vec<i64> = (0..10_000).map(|_| (3.0 + rng.normal()).round() as i64).collect();
            let r = two_sample_tv(&a, &b, seed ^ 0xABCD).unwrap();
            if r.tv < r.threshold {
                pass += 1;
            }
        }
        assert!(pass >= 19, "only {pass}/20 under threshold");
    }
}
