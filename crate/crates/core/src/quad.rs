//! Quadrature primitives: Gauss–Kronrod 7–15 adaptive integration and
//! Gauss–Legendre node generation for Nyström grids.

// Node/weight tables keep their full published precision.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

/// Kronrod abscissae for the 7–15 pair (positive half, descending).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights embedded in the Kronrod rule (nodes XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 7–15 panel on [a, b]. Returns (integral, error estimate).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = WGK[7] * f(c);
    let mut gauss = WG[3] * f(c);
    for i in 0..7 {
        let x = h * XGK[i];
        let fl = f(c - x);
        let fr = f(c + x);
        kron += WGK[i] * (fl + fr);
        if i % 2 == 1 {
            gauss += WG[i / 2] * (fl + fr);
        }
    }
    let integral = kron * h;
    let err = ((kron - gauss) * h).abs();
    (integral, err)
}

/// Adaptive Gauss–Kronrod integration of `f` over [a, b] to absolute tolerance
/// `abs_tol`. Bisects the worst panel first; errors out rather than returning a
/// value whose error estimate exceeds the tolerance.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    const MAX_PANELS: usize = 4000;
    // (neg error, value, a, b) — simple worst-first queue.
    let (v0, e0) = gk15(f, a, b);
    let mut panels: Vec<(f64, f64, f64, f64)> = vec![(e0, v0, a, b)];
    let mut total_err = e0;
    while total_err > abs_tol {
        if panels.len() >= MAX_PANELS {
            return Err(Error::QuadratureFailure(format!(
                "error estimate {total_err:e} above tolerance {abs_tol:e} after {MAX_PANELS} panels on [{a}, {b}]"
            )));
        }
        // Worst panel.
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
            .expect("nonempty");
        let (err, _val, pa, pb) = panels.swap_remove(idx);
        total_err -= err;
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            // Interval at floating-point resolution; accept its estimate.
            let (v, _) = gk15(f, pa, pb);
            panels.push((0.0, v, pa, pb));
            continue;
        }
        for (qa, qb) in [(pa, mid), (mid, pb)] {
            let (v, e) = gk15(f, qa, qb);
            total_err += e;
            panels.push((e, v, qa, qb));
        }
    }
    Ok(pairwise_sum_by(&panels, |p| p.1))
}

/// Adaptive integration over [a, b] with known interior kinks: the interval is
/// pre-split at each point of `splits` strictly inside (a, b).
pub fn adaptive_split<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    splits: &[f64],
    abs_tol: f64,
) -> Result<f64> {
    let mut cuts: Vec<f64> = splits.iter().copied().filter(|&s| s > a && s < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);
    let per = abs_tol / (edges.len() - 1) as f64;
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += adaptive(f, w[0], w[1], per)?;
    }
    Ok(total)
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial with Chebyshev-angle initial guesses.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    (
        xs.iter().map(|x| c + h * x).collect(),
        ws.iter().map(|w| w * h).collect(),
    )
}

/// Pairwise (cascade) summation: deterministic, order-independent-of-worker-count
/// reduction with O(log n) error growth.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(xs, |&x| x)
}

pub fn pairwise_sum_by<T, F: Fn(&T) -> f64 + Copy>(xs: &[T], f: F) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => f(&xs[0]),
        2 => f(&xs[0]) + f(&xs[1]),
        n => {
            let mid = n / 2;
            pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
        }
    }
}
