//! Closed-form cluster-count statistics.
//!
//! For a system of coalescing Brownian particles started from every point
//! of the line, the number of distinct images of an interval of length `u`
//! at time `t` has
//!
//! ```text
//! mean       1 + a/sqrt(pi),                               a = u/sqrt(t)
//! variance   3a/sqrt(pi) - (4a/pi) I2(a)
//!              + (4/pi)(1 - e^{-a^2/2}) + erfc(a/2)^2 - 1,
//! I2(a) = sqrt(pi/2) erf(a/sqrt(2))
//! ```
//!
//! and a limit variance per unit length of `(3 - 2*sqrt(2))/sqrt(pi t)`.
//! The variance and second-moment expressions here are derived directly
//! from the two-point cluster density (see [`pair_density`]) and are
//! cross-checked against quadrature of that density and against Monte
//! Carlo in the acceptance suite. Everything is a function of the scale
//! ratio `a = u/sqrt(t)` alone, which is the diffusive scaling invariance
//! of the particle system.

use crate::error::{Error, Result};
use crate::special::{erf, erfc};
use std::f64::consts::PI;

/// Time horizon and interval length for the closed-form queries.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct FlowParams {
    pub t: f64,
    pub u: f64,
}

impl FlowParams {
    /// Requires `t > 0`, `u >= 0`, both finite.
    pub fn new(t: f64, u: f64) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::domain(format!("t must be positive and finite, got {t}")));
        }
        if !u.is_finite() || u < 0.0 {
            return Err(Error::domain(format!("u must be non-negative and finite, got {u}")));
        }
        Ok(FlowParams { t, u })
    }

    /// Scale ratio `u / sqrt(t)`.
    pub fn scale_ratio(&self) -> f64 {
        self.u / self.t.sqrt()
    }
}

/// Mean, variance, second moment and limit variance in one record.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ClosedFormSummary {
    pub mean: f64,
    pub variance: f64,
    pub second_moment: f64,
    pub sigma_sq: f64,
}

/// Normalized upper Gaussian tail `(1/sqrt(pi)) int_z^inf e^{-r^2/4} dr = erfc(z/2)`.
///
/// The kernel's scalar building block. Defined by the same integral for
/// all reals (the integrand is entire); `gauss_tail(-z) + gauss_tail(z) = 2`.
pub fn gauss_tail(z: f64) -> Result<f64> {
    finite(z)?;
    Ok(erfc(z / 2.0))
}

/// First derivative of [`gauss_tail`]: `-(1/sqrt(pi)) e^{-z^2/4}`.
pub fn gauss_tail_d1(z: f64) -> Result<f64> {
    finite(z)?;
    Ok(d1_raw(z))
}

/// Second derivative of [`gauss_tail`]: `(z/(2 sqrt(pi))) e^{-z^2/4}`.
pub fn gauss_tail_d2(z: f64) -> Result<f64> {
    finite(z)?;
    Ok(d2_raw(z))
}

#[inline]
pub(crate) fn d1_raw(z: f64) -> f64 {
    -(1.0 / PI.sqrt()) * (-z * z / 4.0).exp()
}

#[inline]
pub(crate) fn d2_raw(z: f64) -> f64 {
    z / (2.0 * PI.sqrt()) * (-z * z / 4.0).exp()
}

fn finite(z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite argument {z}")))
    }
}

/// Expected cluster count `1 + u/sqrt(pi t)`.
pub fn mean_clusters(p: &FlowParams) -> f64 {
    1.0 + p.scale_ratio() / PI.sqrt()
}

/// Second moment of the cluster count.
pub fn second_moment_clusters(p: &FlowParams) -> f64 {
    let a = p.scale_ratio();
    let i2 = (PI / 2.0).sqrt() * erf(a / std::f64::consts::SQRT_2);
    let fa = erfc(a / 2.0);
    a * a / PI + 5.0 * a / PI.sqrt() - (4.0 * a / PI) * i2
        + (4.0 / PI) * (1.0 - (-a * a / 2.0).exp())
        + fa * fa
}

/// Variance of the cluster count.
pub fn var_clusters(p: &FlowParams) -> f64 {
    let a = p.scale_ratio();
    let i2 = (PI / 2.0).sqrt() * erf(a / std::f64::consts::SQRT_2);
    let fa = erfc(a / 2.0);
    3.0 * a / PI.sqrt() - (4.0 * a / PI) * i2
        + (4.0 / PI) * (1.0 - (-a * a / 2.0).exp())
        + fa * fa
        - 1.0
}

/// Limit variance per unit interval length, `(3 - 2 sqrt(2)) / sqrt(pi t)`.
pub fn sigma_sq(t: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    Ok((3.0 - 2.0 * std::f64::consts::SQRT_2) / (PI * t).sqrt())
}

/// All four closed forms for one parameter point.
pub fn summary(p: &FlowParams) -> ClosedFormSummary {
    ClosedFormSummary {
        mean: mean_clusters(p),
        variance: var_clusters(p),
        second_moment: second_moment_clusters(p),
        sigma_sq: sigma_sq(p.t).expect("FlowParams guarantees t > 0"),
    }
}

/// Two-point cluster density
/// `rho_t(v1,v2) = (1/(pi t)) (1 + (z/2) e^{-z^2/4} sqrt(pi) erfc(z/2) - e^{-z^2/2})`
/// with `z = |v2-v1|/sqrt(t)`. Symmetric, translation invariant, and zero
/// at coincident points.
pub fn pair_density(t: f64, v1: f64, v2: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    finite(v1)?;
    finite(v2)?;
    Ok(pair_density_raw(t, v1, v2))
}

pub(crate) fn pair_density_raw(t: f64, v1: f64, v2: f64) -> f64 {
    let z = (v2 - v1).abs() / t.sqrt();
    let e4 = (-z * z / 4.0).exp();
    (1.0 / (PI * t)) * (1.0 + (z / 2.0) * e4 * PI.sqrt() * erfc(z / 2.0) - e4 * e4)
}

/// Upper bound on the spatial strong-mixing coefficient at separation `n`,
/// in both forms: the integral form `2 sqrt(2/(pi t)) int_n^inf e^{-r^2/2t} dr
/// = 2 erfc(n/sqrt(2t))` and the cruder Gaussian-tail estimate
/// `(2/n) sqrt(2/(pi t)) e^{-n^2/2t}` (which dominates the integral form
/// for t <= 1).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct MixingBound {
    pub integral_form: f64,
    pub tail_form: f64,
}

pub fn mixing_bound(t: f64, n: u32) -> Result<MixingBound> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    if n < 1 {
        return Err(Error::domain("n must be >= 1".to_string()));
    }
    let nf = n as f64;
    Ok(MixingBound {
        integral_form: 2.0 * erfc(nf / (2.0 * t).sqrt()),
        tail_form: (2.0 / nf) * (2.0 / (PI * t)).sqrt() * (-nf * nf / (2.0 * t)).exp(),
    })
}

/// Claimed large-`a` asymptote of the k-th moment: `(u/sqrt(pi t))^k`.
pub fn moment_asymptote(k: u32, p: &FlowParams) -> Result<f64> {
    if k < 1 {
        return Err(Error::domain("k must be >= 1".to_string()));
    }
    Ok((p.u / (PI * p.t).sqrt()).powi(k as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }

    #[test]
    fn tail_at_zero_and_underflow() {
        assert_eq!(gauss_tail(0.0).unwrap(), 1.0);
        let far = gauss_tail(40.0).unwrap();
        assert!(far > 0.0 && far < 1e-170, "gauss_tail(40) = {far}");
        // strictly decreasing wherever doubles can resolve the tail
        // (below z ~ -11 the value rounds to exactly 2)
        let mut prev = f64::INFINITY;
        for i in -22..=100 {
            let v = gauss_tail(i as f64 / 2.0).unwrap();
            assert!(v < prev, "not decreasing at z = {}", i as f64 / 2.0);
            prev = v;
        }
        assert!(gauss_tail(f64::NAN).is_err());
        assert!(gauss_tail(f64::INFINITY).is_err());
    }

    #[test]
    fn tail_at_two_matches_quadrature_oracle_value() {
        // (1/sqrt(pi)) int_2^inf e^{-r^2/4} dr = erfc(1), mpmath 30 digits
        assert!(rel(gauss_tail(2.0).unwrap(), 0.1572992070502851306588) < 1e-13);
    }

    #[test]
    fn tail_derivatives() {
        assert!(rel(gauss_tail_d1(0.0).unwrap(), -0.5641895835477562869481) < 1e-15);
        assert_eq!(gauss_tail_d2(0.0).unwrap(), 0.0);
        // central finite difference of gauss_tail at z=1, h=1e-5
        let h = 1e-5;
        let fd = (gauss_tail(1.0 + h).unwrap() - gauss_tail(1.0 - h).unwrap()) / (2.0 * h);
        assert!(
            (fd - gauss_tail_d1(1.0).unwrap()).abs() <= 1e-8,
            "fd = {fd}, d1 = {}",
            gauss_tail_d1(1.0).unwrap()
        );
        for z in [-3.0, -0.5, 0.5, 3.0] {
            assert!(gauss_tail_d1(z).unwrap() < 0.0);
            assert_eq!(gauss_tail_d2(z).unwrap().signum(), z.signum());
        }
    }

    proptest! {
        #[test]
        fn tail_reflection(z in -30.0f64..30.0) {
            let s = gauss_tail(z).unwrap() + gauss_tail(-z).unwrap();
            prop_assert!((s - 2.0).abs() < 1e-13);
        }

        #[test]
        fn closed_forms_are_scale_invariant(
            t in 0.01f64..100.0,
            u in 0.0f64..50.0,
            eps in 0.1f64..10.0,
        ) {
            let p = FlowParams::new(t, u).unwrap();
            let q = FlowParams::new(eps * eps * t, eps * u).unwrap();
            prop_assert!(rel(mean_clusters(&p), mean_clusters(&q)) < 1e-12);
            prop_assert!((var_clusters(&p) - var_clusters(&q)).abs()
                <= 1e-12 * var_clusters(&p).abs().max(1e-30));
        }

        #[test]
        fn pair_density_translation_and_symmetry(
            t in 0.05f64..20.0,
            v in -50.0f64..50.0,
            w in -30.0f64..30.0,
            shift in -100.0f64..100.0,
        ) {
            let d = pair_density(t, v, v + w).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert!(rel(d, pair_density(t, v + w, v).unwrap()) < 1e-14);
            prop_assert!(rel(d, pair_density(t, v + shift, v + w + shift).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn mean_examples() {
        let t_any = FlowParams::new(3.7, 0.0).unwrap();
        assert_eq!(mean_clusters(&t_any), 1.0);
        let p = FlowParams::new(1.0, PI.sqrt()).unwrap();
        assert!(rel(mean_clusters(&p), 2.0) < 1e-14);
        let q = FlowParams::new(4.0, 2.0 * PI.sqrt()).unwrap();
        assert!(rel(mean_clusters(&q), 2.0) < 1e-14);
    }

    #[test]
    fn second_moment_examples() {
        let p0 = FlowParams::new(1.0, 0.0).unwrap();
        assert!(rel(second_moment_clusters(&p0), 1.0) < 1e-14);
        // moment identity at (1, 10)
        let p = FlowParams::new(1.0, 10.0).unwrap();
        let m = mean_clusters(&p);
        assert!(rel(second_moment_clusters(&p), m * m + var_clusters(&p)) < 1e-10);
        // value pinned by quadrature of the pair density (mpmath, 30 digits)
        let p1 = FlowParams::new(1.0, 1.0).unwrap();
        assert!(
            rel(second_moment_clusters(&p1), 2.780744083597546866495) < 1e-8,
            "E nu^2(1,1) = {}",
            second_moment_clusters(&p1)
        );
    }

    #[test]
    fn variance_examples() {
        let p0 = FlowParams::new(1.0, 0.0).unwrap();
        assert_eq!(var_clusters(&p0), 0.0);
        // quadrature-pinned values
        assert!(rel(var_clusters(&FlowParams::new(1.0, 1.0).unwrap()), 0.334055030318243621061) < 1e-12);
        assert!(rel(var_clusters(&FlowParams::new(1.0, 10.0).unwrap()), 1.241235835110544176996) < 1e-12);
        // large-a ratio: approaches 3 - 2 sqrt(2) with an O(1/a) constant term;
        // 4.8e-3 away at a = 100, 4.8e-5 away at a = 1e4
        let lim = 3.0 - 2.0 * std::f64::consts::SQRT_2;
        let r100 = var_clusters(&FlowParams::new(1.0, 100.0).unwrap()) / (100.0 / PI.sqrt());
        assert!((r100 - lim).abs() < 5e-3, "ratio at a=100: {r100}");
        let r1e4 = var_clusters(&FlowParams::new(1.0, 1e4).unwrap()) / (1e4 / PI.sqrt());
        assert!((r1e4 - lim).abs() < 1e-4, "ratio at a=1e4: {r1e4}");
        // small-a ratio tends to 1 (Bernoulli regime: the interval holds one
        // cluster boundary with probability ~ a/sqrt(pi))
        let rs = var_clusters(&FlowParams::new(1.0, 1e-4).unwrap()) / (1e-4 / PI.sqrt());
        assert!((rs - 1.0).abs() < 1e-3, "small-u ratio: {rs}");
    }

    #[test]
    fn variance_nonnegative_and_increasing_in_u() {
        let mut prev = 0.0;
        let mut u = 0.1;
        while u <= 100.0 {
            let v = var_clusters(&FlowParams::new(1.0, u).unwrap());
            assert!(v >= 0.0);
            assert!(v > prev, "variance not increasing at u = {u}");
            prev = v;
            u *= 1.25;
        }
    }

    #[test]
    fn sigma_sq_values() {
        let s1 = sigma_sq(1.0).unwrap();
        assert!(rel(s1, 0.096799629037538149084) < 1e-14);
        assert!(rel(sigma_sq(4.0).unwrap(), s1 / 2.0) < 1e-14);
        assert!(sigma_sq(0.0).is_err());
        assert!(sigma_sq(-1.0).is_err());
        // limit of var/u at u = 1e4 within 1e-4 (absolute)
        let v = var_clusters(&FlowParams::new(1.0, 1e4).unwrap()) / 1e4;
        assert!((v - s1).abs() < 1e-4);
    }

    #[test]
    fn pair_density_examples() {
        assert_eq!(pair_density(1.0, 2.5, 2.5).unwrap(), 0.0);
        assert!(rel(pair_density(1.0, 0.0, 50.0).unwrap(), 1.0 / PI) < 1e-12);
        assert!(rel(pair_density(1.0, 0.0, 1.0).unwrap(), 0.2305892694175108201159) < 1e-13);
        assert!(pair_density(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn mixing_bound_behaviour() {
        let b = mixing_bound(1.0, 1).unwrap();
        assert!(rel(b.integral_form, 0.6346210157258282056591) < 1e-13);
        assert!(rel(b.tail_form, 0.9678828980765733991913) < 1e-13);
        // monotone decay to zero, integral dominated by tail for t <= 1,
        // and log-concavity of the integral form
        for &t in &[0.25, 1.0] {
            let mut prev = f64::INFINITY;
            let mut logs = Vec::new();
            for n in 1..=10 {
                let m = mixing_bound(t, n).unwrap();
                assert!(m.integral_form < prev);
                assert!(m.integral_form <= m.tail_form, "t={t} n={n}");
                prev = m.integral_form;
                logs.push(m.integral_form.ln());
            }
            for w in logs.windows(3) {
                assert!(w[2] - w[1] <= w[1] - w[0] + 1e-12, "log-concavity violated");
            }
        }
        assert!(mixing_bound(1.0, 0).is_err());
        assert!(mixing_bound(-1.0, 3).is_err());
    }

    #[test]
    fn moment_asymptote_examples() {
        let p = FlowParams::new(1.0, 3.0).unwrap();
        assert!(rel(moment_asymptote(1, &p).unwrap(), 3.0 / PI.sqrt()) < 1e-15);
        assert!(moment_asymptote(0, &p).is_err());
        // second moment approaches its asymptote at large a
        let big = FlowParams::new(1.0, 100.0).unwrap();
        let ratio = second_moment_clusters(&big) / moment_asymptote(2, &big).unwrap();
        assert!((ratio - 1.0).abs() < 0.05, "ratio = {ratio}");
    }

    #[test]
    fn summary_consistency_grid() {
        // 50-point (t,u) grid: variance = second_moment - mean^2 to 1e-10 rel
        for i in 0..10 {
            for j in 0..5 {
                let t = 0.05 * 4.0f64.powi(i % 5) * (1.0 + 0.3 * j as f64);
                let u = 0.2 * 3.0f64.powi(i % 4) + j as f64;
                let p = FlowParams::new(t, u).unwrap();
                let s = summary(&p);
                let lhs = s.variance;
                let rhs = s.second_moment - s.mean * s.mean;
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-12),
                    "inconsistent at t={t} u={u}: {lhs} vs {rhs}"
                );
                assert!(s.mean >= 1.0 && s.variance >= 0.0);
            }
        }
    }

    #[test]
    fn flow_params_validation() {
        assert!(FlowParams::new(0.0, 1.0).is_err());
        assert!(FlowParams::new(-1.0, 1.0).is_err());
        assert!(FlowParams::new(1.0, -0.5).is_err());
        assert!(FlowParams::new(f64::NAN, 1.0).is_err());
        assert!(FlowParams::new(1.0, f64::INFINITY).is_err());
    }
}
