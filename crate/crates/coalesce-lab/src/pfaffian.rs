//! Pfaffians, the 2x2 matrix kernel of the cluster point process, n-point
//! densities, and factorial moments by quadrature.
//!
//! The cluster positions at a fixed time form a Pfaffian point process:
//! the n-point density is the Pfaffian of the 2n x 2n antisymmetric matrix
//! tiled from 2x2 kernel blocks
//!
//! ```text
//! K_t(u,v) = (1/sqrt(t)) [ -T''(w)   -T'(w)            ]      w = (v-u)/sqrt(t)
//!                        [  T'(w)    sign(w) T(|w|)    ]
//! ```
//!
//! where `T = gauss_tail` from [`crate::analytic`]. Two Pfaffian
//! evaluators are provided: a Laplace-expansion oracle for small orders
//! and a production skew-elimination routine (Parlett-Reid style, partial
//! pivoting). Factorial moments integrate the n-point density over
//! `[0,u]^n`; the integrand has a |v_i - v_j| kink across every diagonal,
//! so the n-fold integral is evaluated as n! times the integral over the
//! ordered sector, mapped to the unit cube (where the integrand is
//! smooth) and handled by a fixed Gauss-Legendre product rule.

use crate::analytic::{d1_raw, d2_raw, FlowParams};
use crate::error::{Error, Result};
use crate::gauss::gauss_legendre;
use crate::special::erfc;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

/// Max order for the Laplace-expansion oracle (factorial cost).
const MAX_RECURSIVE_ORDER: usize = 12;
/// Desk-scale cap on the number of density points.
const MAX_DENSITY_POINTS: usize = 6;
/// Cap on factorial-moment dimension.
const MAX_MOMENT_DIM: usize = 4;

static NEGATIVE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// How many density evaluations were clamped from [-1e-12 * scale, 0) to 0.
pub fn negative_clamp_count() -> u64 {
    NEGATIVE_CLAMPS.load(Ordering::Relaxed)
}

/// Even-order real antisymmetric matrix.
#[derive(Clone, Debug)]
pub struct SkewMatrix {
    order: usize,
    // row-major, full storage
    a: Vec<f64>,
}

impl SkewMatrix {
    /// Build from the strict upper triangle, row-major:
    /// `(0,1), (0,2), ..., (0,n-1), (1,2), ...`. The lower triangle and the
    /// zero diagonal are filled in, so antisymmetry holds exactly.
    pub fn from_upper(order: usize, upper: &[f64]) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::contract(format!("order must be even and positive, got {order}")));
        }
        let need = order * (order - 1) / 2;
        if upper.len() != need {
            return Err(Error::contract(format!(
                "upper triangle of order {order} needs {need} entries, got {}",
                upper.len()
            )));
        }
        if upper.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("non-finite entry".to_string()));
        }
        let mut a = vec![0.0; order * order];
        let mut k = 0;
        for i in 0..order {
            for j in (i + 1)..order {
                a[i * order + j] = upper[k];
                a[j * order + i] = -upper[k];
                k += 1;
            }
        }
        Ok(SkewMatrix { order, a })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.order + j]
    }
}

/// Pfaffian by Laplace expansion along the first row:
/// `Pf(A) = sum_j (-1)^j a_{0j} Pf(A without rows/cols 0, j)`.
/// Reference oracle; order is capped at 12.
pub fn pfaffian_recursive(a: &SkewMatrix) -> Result<f64> {
    if a.order > MAX_RECURSIVE_ORDER {
        return Err(Error::Size(format!(
            "recursive pfaffian capped at order {MAX_RECURSIVE_ORDER}, got {}",
            a.order
        )));
    }
    let mut rows: Vec<usize> = (0..a.order).collect();
    Ok(expand(a, &mut rows))
}

fn expand(a: &SkewMatrix, rows: &mut Vec<usize>) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    let r0 = rows[0];
    let mut sign = 1.0;
    let mut sum = 0.0;
    for pos in 1..rows.len() {
        let rj = rows[pos];
        let coef = a.get(r0, rj);
        if coef != 0.0 {
            let mut rest: Vec<usize> =
                rows.iter().copied().filter(|&r| r != r0 && r != rj).collect();
            sum += sign * coef * expand(a, &mut rest);
        }
        sign = -sign;
    }
    sum
}

/// Pfaffian by skew-symmetric Gaussian elimination with partial pivoting.
pub fn pfaffian(a: &SkewMatrix) -> Result<f64> {
    let mut buf = a.a.clone();
    Ok(pfaffian_in_place(&mut buf, a.order))
}

/// Eliminates in place; `a` is a full row-major skew matrix of even order n.
pub(crate) fn pfaffian_in_place(a: &mut [f64], n: usize) -> f64 {
    debug_assert!(n % 2 == 0 && a.len() == n * n);
    let idx = |i: usize, j: usize| i * n + j;
    let mut pf = 1.0;
    let mut k = 0;
    while k + 1 < n {
        // pivot: largest |a[k][j]| over j > k
        let mut jmax = k + 1;
        let mut amax = a[idx(k, k + 1)].abs();
        for j in (k + 2)..n {
            let v = a[idx(k, j)].abs();
            if v > amax {
                amax = v;
                jmax = j;
            }
        }
        if amax == 0.0 {
            return 0.0;
        }
        if jmax != k + 1 {
            pf = -pf;
            for c in 0..n {
                a.swap(idx(k + 1, c), idx(jmax, c));
            }
            for r in 0..n {
                a.swap(idx(r, k + 1), idx(r, jmax));
            }
        }
        let piv = a[idx(k, k + 1)];
        pf *= piv;
        for i in (k + 2)..n {
            let aki = a[idx(k, i)];
            let bki = a[idx(k + 1, i)];
            if aki == 0.0 && bki == 0.0 {
                continue;
            }
            for j in (i + 1)..n {
                let upd = (aki * a[idx(k + 1, j)] - a[idx(k, j)] * bki) / piv;
                let v = a[idx(i, j)] - upd;
                a[idx(i, j)] = v;
                a[idx(j, i)] = -v;
            }
        }
        k += 2;
    }
    pf
}

/// The 2x2 kernel block `K_t(u, v)`; at `u == v` the (2,2) entry is 0
/// (strict antisymmetry of the assembled matrix requires sign(0) -> 0).
pub fn kernel_block(t: f64, u: f64, v: f64) -> Result<[[f64; 2]; 2]> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::domain("non-finite point".to_string()));
    }
    let st = t.sqrt();
    Ok(kernel_block_raw(st, (v - u) / st))
}

#[inline]
fn kernel_block_raw(sqrt_t: f64, w: f64) -> [[f64; 2]; 2] {
    let d1 = d1_raw(w);
    let d2 = d2_raw(w);
    let s22 = if w == 0.0 {
        0.0
    } else {
        w.signum() * erfc(w.abs() / 2.0)
    };
    [
        [-d2 / sqrt_t, -d1 / sqrt_t],
        [d1 / sqrt_t, s22 / sqrt_t],
    ]
}

/// A strictly increasing point configuration at a fixed time.
#[derive(Clone, Debug)]
pub struct PointConfig {
    t: f64,
    points: Vec<f64>,
}

impl PointConfig {
    /// Sorts the input; rejects ties, non-finite points, t <= 0 and more
    /// than 6 points.
    pub fn new(t: f64, mut points: Vec<f64>) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::domain(format!("t must be positive, got {t}")));
        }
        if points.is_empty() || points.len() > MAX_DENSITY_POINTS {
            return Err(Error::contract(format!(
                "need 1..={MAX_DENSITY_POINTS} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::contract("non-finite point".to_string()));
        }
        points.sort_by(|x, y| x.partial_cmp(y).unwrap());
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("tied points".to_string()));
        }
        Ok(PointConfig { t, points })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// n-point density: Pfaffian of the tiled 2n x 2n kernel matrix.
/// Clamps roundoff-negative values in `[-1e-12 * scale, 0)` to zero
/// (counted, see [`negative_clamp_count`]); more negative values are an
/// assembly bug and raise an accuracy error.
pub fn rho_n(cfg: &PointConfig) -> Result<f64> {
    let mut buf = [0.0; (2 * MAX_DENSITY_POINTS) * (2 * MAX_DENSITY_POINTS)];
    rho_n_raw(cfg.t, &cfg.points, &mut buf)
}

/// `buf` must hold at least (2n)^2 entries.
fn rho_n_raw(t: f64, pts: &[f64], buf: &mut [f64]) -> Result<f64> {
    let n = pts.len();
    let dim = 2 * n;
    let st = t.sqrt();
    let a = &mut buf[..dim * dim];
    a.fill(0.0);
    for i in 0..n {
        for j in i..n {
            let blk = kernel_block_raw(st, (pts[j] - pts[i]) / st);
            for (r, row) in blk.iter().enumerate() {
                for (c, &val) in row.iter().enumerate() {
                    let ri = 2 * i + r;
                    let cj = 2 * j + c;
                    if ri < cj {
                        a[ri * dim + cj] = val;
                        a[cj * dim + ri] = -val;
                    }
                }
            }
        }
    }
    let pf = pfaffian_in_place(a, dim);
    if pf >= 0.0 {
        return Ok(pf);
    }
    // natural magnitude of an n-point density at this time scale
    let scale = (PI * t).powf(-(n as f64) / 2.0).max(1.0);
    if pf >= -1e-12 * scale {
        NEGATIVE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        Ok(0.0)
    } else {
        Err(Error::Accuracy(format!(
            "n-point density evaluated to {pf} (scale {scale}); kernel assembly is suspect"
        )))
    }
}

/// Descriptor of the fixed product Gauss-Legendre rule used for factorial
/// moments.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct QuadratureSpec {
    pub dimension: usize,
    pub nodes_per_axis: usize,
}

impl QuadratureSpec {
    pub fn new(dimension: usize, nodes_per_axis: usize) -> Result<Self> {
        if dimension == 0 || dimension > MAX_MOMENT_DIM {
            return Err(Error::contract(format!(
                "dimension must be 1..={MAX_MOMENT_DIM}, got {dimension}"
            )));
        }
        if nodes_per_axis < 2 {
            return Err(Error::contract("nodes_per_axis must be >= 2".to_string()));
        }
        Ok(QuadratureSpec { dimension, nodes_per_axis })
    }

    /// Spec used by default for each dimension: 64 / 64 / 24 / 12 nodes.
    pub fn default_for(dimension: usize) -> Result<Self> {
        let nodes = match dimension {
            1 | 2 => 64,
            3 => 24,
            4 => 12,
            _ => {
                return Err(Error::contract(format!(
                    "dimension must be 1..={MAX_MOMENT_DIM}, got {dimension}"
                )))
            }
        };
        QuadratureSpec::new(dimension, nodes)
    }
}

/// Quadrature value with a rule-doubling (Richardson-style) error estimate.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
}

/// n-th factorial moment of the particle count in `[0, u]`:
/// the n-fold integral of the n-point density. The reported value uses the
/// doubled rule; the error estimate is the difference between the
/// `nodes_per_axis` and `2 * nodes_per_axis` rules.
pub fn factorial_moment(n: usize, p: &FlowParams, q: &QuadratureSpec) -> Result<QuadratureResult> {
    if n == 0 || n > MAX_MOMENT_DIM {
        return Err(Error::contract(format!("n must be 1..={MAX_MOMENT_DIM}, got {n}")));
    }
    if q.dimension != n {
        return Err(Error::contract(format!(
            "quadrature dimension {} does not match moment order {n}",
            q.dimension
        )));
    }
    if p.u == 0.0 {
        return Ok(QuadratureResult { value: 0.0, error_estimate: 0.0 });
    }
    let coarse = simplex_integral(n, p.t, p.u, q.nodes_per_axis)?;
    let fine = simplex_integral(n, p.t, p.u, 2 * q.nodes_per_axis)?;
    Ok(QuadratureResult {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

/// n! times the integral of rho_n over the ordered sector 0 < v1 < ... < vn < u,
/// mapped onto the unit cube by v_n = u x_n, v_{k} = v_{k+1} x_k.
fn simplex_integral(n: usize, t: f64, u: f64, nodes: usize) -> Result<f64> {
    let (xg, wg) = gauss_legendre(nodes);
    // map to [0,1]
    let x01: Vec<f64> = xg.iter().map(|x| 0.5 * (x + 1.0)).collect();
    let w01: Vec<f64> = wg.iter().map(|w| 0.5 * w).collect();
    let nfact = [1.0, 1.0, 2.0, 6.0, 24.0][n];

    // outer axis split for parallelism; partials are tree-summed in index
    // order, so the result is identical for any worker count
    use rayon::prelude::*;
    let partials: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|i_out| {
            let mut buf = [0.0; (2 * MAX_DENSITY_POINTS) * (2 * MAX_DENSITY_POINTS)];
            let mut pts = [0.0; MAX_DENSITY_POINTS];
            let v_top = u * x01[i_out];
            pts[n - 1] = v_top;
            inner_sum(n, n - 1, t, v_top, &x01, &w01, &mut pts, &mut buf)
                .map(|s| w01[i_out] * u * s)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(nfact * tree_sum(&partials))
}

/// Sums over the remaining `level` coordinates below `upper`.
/// Returns sum over nodes of w * (jacobian factors below) * rho.
fn inner_sum(
    n: usize,
    level: usize,
    t: f64,
    upper: f64,
    x01: &[f64],
    w01: &[f64],
    pts: &mut [f64; MAX_DENSITY_POINTS],
    buf: &mut [f64],
) -> Result<f64> {
    if level == 0 {
        return rho_n_raw(t, &pts[..n], buf);
    }
    let mut acc = 0.0;
    for (&x, &w) in x01.iter().zip(w01) {
        let v = upper * x;
        pts[level - 1] = v;
        // dv_{level} = upper dx, one factor of `upper` per nested level
        acc += w * upper * inner_sum(n, level - 1, t, v, x01, w01, pts, buf)?;
    }
    Ok(acc)
}

fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let mid = n / 2;
            tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
        }
    }
}

/// `t^{k/2} * factorial_moment(k)` along a decreasing sequence of times;
/// the sequence approaches `(u/sqrt(pi))^k` as t -> 0+. Raises an accuracy
/// error if any cell's rule-doubling estimate exceeds 10% of its value.
pub fn moment_limit_check(k: usize, u: f64, t_sequence: &[f64]) -> Result<Vec<f64>> {
    if k == 0 || k > 3 {
        return Err(Error::contract(format!("k must be 1..=3, got {k}")));
    }
    if t_sequence.is_empty()
        || t_sequence.iter().any(|&t| !t.is_finite() || t <= 0.0)
        || t_sequence.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::contract(
            "t_sequence must be strictly decreasing and positive".to_string(),
        ));
    }
    let q = QuadratureSpec::default_for(k)?;
    let mut out = Vec::with_capacity(t_sequence.len());
    for &t in t_sequence {
        let p = FlowParams::new(t, u)?;
        let fm = factorial_moment(k, &p, &q)?;
        if fm.error_estimate > 0.1 * fm.value.abs() {
            return Err(Error::Accuracy(format!(
                "quadrature resolution insufficient at t={t}: value {} +/- {}",
                fm.value, fm.error_estimate
            )));
        }
        out.push(t.powf(k as f64 / 2.0) * fm.value);
    }
    Ok(out)
}
