//! Shared oracles for integration tests. Deliberately independent of the
//! crate's own numeric paths: quadrature here is adaptive Gauss-Kronrod
//! (the crate uses fixed product Gauss-Legendre), the determinant is a
//! plain LU factorization (the crate computes Pfaffians by skew
//! elimination).

/// Gauss-Kronrod 7-15 nodes (positive half) and weights.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
/// Gauss-7 weights for the embedded rule (XGK indices 1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    // Gauss-7 nodes are the odd-index Kronrod abscissae (XGK[7] = 0 included)
    for (i, (&x, &w)) in XGK.iter().zip(&WGK).enumerate() {
        let contrib = if x == 0.0 { f(c) } else { f(c - h * x) + f(c + h * x) };
        kronrod += w * contrib;
        if i % 2 == 1 {
            gauss += WG[i / 2] * contrib;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptive Gauss-Kronrod quadrature by interval bisection. The absolute
/// tolerance is floored at the panel's own roundoff scale so the recursion
/// terminates once double precision is exhausted.
pub fn quad_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        let floor = 5e-16 * val.abs() + 1e-305;
        if err <= tol.max(floor) || depth >= 20 {
            return val;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, tol / 2.0, depth + 1) + rec(f, m, b, tol / 2.0, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// Determinant by LU factorization with partial pivoting; row-major n x n.
pub fn det_lu(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        let mut best = m[k * n + k].abs();
        for r in (k + 1)..n {
            let v = m[r * n + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != k {
            for c in 0..n {
                m.swap(k * n + c, piv * n + c);
            }
            det = -det;
        }
        let d = m[k * n + k];
        det *= d;
        for r in (k + 1)..n {
            let factor = m[r * n + k] / d;
            if factor == 0.0 {
                continue;
            }
            for c in k..n {
                m[r * n + c] -= factor * m[k * n + c];
            }
        }
    }
    det
}

/// Relative difference helper.
pub fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}
