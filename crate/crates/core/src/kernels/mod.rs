//! Correlation kernels and determinantal densities for systems of diffusions
//! with polynomial coefficients.
//!
//! Everything here is built from two ingredients supplied by the sibling
//! modules: per-level transition densities (and their spatial derivatives)
//! from [`crate::pearson`], and the backward-in-time polynomial flow from
//! [`crate::polyflow`].  On top of those this module assembles
//!
//! * the biorthogonal families `Ψ_j^{(n)}` / `Φ_i^{(n)}` ([`psi`], [`phi`]),
//! * the fixed-time extended kernel of the interlacing particle array driven
//!   by one-sided collisions ([`array_kernel`]), together with its squared
//!   Bessel form built from a random-walk boundary sum
//!   ([`bessel_array_kernel`]),
//! * the space-time kernel of `N` non-colliding diffusions
//!   ([`spacetime_kernel`]) with its divided-difference/polynomial families
//!   ([`q_func`], [`p_poly`]) and correlation determinants ([`corr_rho`]),
//! * determinantal transition densities: the non-colliding semigroup density
//!   ([`noncolliding_density`]), the signed density on interlacing arrays
//!   ([`signed_array_density`]), the collision-system transition density
//!   ([`collision_density`]), and the unnormalized invariant density
//!   ([`invariant_measure_density`]).
//!
//! Numerical policy: antiderivatives of densities (`∂^{-m}`) are evaluated by
//! adaptive Gauss–Kronrod quadrature at absolute tolerance `1e-9`, with
//! infinite endpoints truncated where the integrand falls below `1e-14` of
//! its running peak.  Kernel evaluations are memoized keyed by the exact bit
//! patterns of their inputs, so repeated evaluation on a quadrature grid (as
//! done by the Fredholm module) is deterministic and cheap.

mod bessel;
mod densities;
mod ips;
mod psi_phi;
mod spacetime;

pub use bessel::{
    bessel_array_kernel, bessel_array_kernel_mc, bessel_commutation_check, rw_expectation,
    rw_expectation_mc,
};
pub use densities::{
    collision_density, invariant_measure_density, noncolliding_density, signed_array_density,
};
pub use ips::array_kernel;
pub(crate) use ips::jump_term;
pub use psi_phi::{phi, psi, psi_alt};
pub use spacetime::{p_poly, q_func, q_func_sum, spacetime_kernel};

use std::cell::RefCell;

use dashmap::DashMap;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pearson::{DensityProvider, Family, LevelSystem, Side};
use crate::quad;

/// Absolute quadrature tolerance for antiderivatives of densities.
pub(crate) const INT_TOL: f64 = 1e-9;
/// Relative tail threshold for truncating infinite integration limits.
pub(crate) const TAIL_REL: f64 = 1e-14;

/// Shared input for the kernel builders: the level system, the initial
/// configuration `x` tagged with its chamber, and (for the fixed-time
/// kernels) the evaluation time.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    /// Level system; `sys.n` is the number of particles / array height.
    pub sys: LevelSystem,
    /// Initial configuration, one coordinate per particle, sorted per `side`.
    pub x: Vec<f64>,
    /// Chamber tag: `Up` means nondecreasing `x`, `Down` nonincreasing.
    pub side: Side,
    /// Fixed evaluation time for the level-indexed kernels; `None` for the
    /// space-time kernel, whose times come in through the index set.
    pub t: Option<f64>,
}

impl KernelConfig {
    pub fn new(sys: LevelSystem, x: Vec<f64>, side: Side, t: Option<f64>) -> Result<Self> {
        if x.len() != sys.n {
            return Err(Error::InvalidArgument(format!(
                "kernel config: got {} coordinates for an N = {} system",
                x.len(),
                sys.n
            )));
        }
        let (l, r) = (sys.spec.l, sys.spec.r);
        for &v in &x {
            if !v.is_finite() || v < l || v > r {
                return Err(Error::InvalidArgument(format!(
                    "kernel config: coordinate {v} outside the state interval [{l}, {r}]"
                )));
            }
        }
        let sorted = match side {
            Side::Up => x.windows(2).all(|w| w[0] <= w[1]),
            Side::Down => x.windows(2).all(|w| w[0] >= w[1]),
        };
        if !sorted {
            return Err(Error::InvalidArgument(format!(
                "kernel config: x must be sorted {} for the {} chamber",
                match side {
                    Side::Up => "nondecreasingly",
                    Side::Down => "nonincreasingly",
                },
                side.as_str()
            )));
        }
        if let Some(tv) = t {
            if !tv.is_finite() || tv <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "kernel config: need finite t > 0, got {tv}"
                )));
            }
        }
        Ok(KernelConfig { sys, x, side, t })
    }

    /// Number of particles (equivalently the height of the array).
    pub fn n(&self) -> usize {
        self.sys.n
    }

    /// The fixed time, or an error for configurations built without one.
    pub fn fixed_time(&self) -> Result<f64> {
        self.t.ok_or_else(|| {
            Error::InvalidArgument("this kernel requires a fixed time t in the config".into())
        })
    }
}

/// Index half of an extended-kernel argument: a level of the array (for the
/// fixed-time kernels) or a time (for the space-time kernel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelIndex {
    Level(usize),
    Time(f64),
}

impl KernelIndex {
    fn key(self) -> (u64, u64) {
        match self {
            KernelIndex::Level(n) => (0, n as u64),
            KernelIndex::Time(t) => (1, t.to_bits()),
        }
    }
}

impl std::fmt::Display for KernelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelIndex::Level(n) => write!(f, "level {n}"),
            KernelIndex::Time(t) => write!(f, "time {t}"),
        }
    }
}

/// Declared index set of an extended kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexDomain {
    /// Level indices, strictly increasing.
    Levels(Vec<usize>),
    /// Observation times, strictly increasing.
    Times(Vec<f64>),
}

impl IndexDomain {
    pub fn contains(&self, idx: KernelIndex) -> bool {
        match (self, idx) {
            (IndexDomain::Levels(ls), KernelIndex::Level(n)) => ls.contains(&n),
            (IndexDomain::Times(ts), KernelIndex::Time(t)) => ts.contains(&t),
            _ => false,
        }
    }
}

type KernelEval =
    Box<dyn Fn((KernelIndex, f64), (KernelIndex, f64)) -> Result<f64> + Send + Sync>;

/// A correlation kernel on `(index, point)` pairs, together with its declared
/// index domain and chamber tag.  Values are memoized keyed by the exact bit
/// patterns of the arguments, so evaluation is deterministic and repeated
/// grid sweeps cost one computation per distinct argument pair.
pub struct ExtendedKernel {
    evaluator: KernelEval,
    domain: IndexDomain,
    side: Side,
    cache: DashMap<[u64; 6], f64>,
}

impl ExtendedKernel {
    pub(crate) fn new(evaluator: KernelEval, domain: IndexDomain, side: Side) -> Self {
        ExtendedKernel { evaluator, domain, side, cache: DashMap::new() }
    }

    pub fn domain(&self) -> &IndexDomain {
        &self.domain
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Evaluate the kernel at a pair of `(index, point)` arguments.
    pub fn eval(&self, p1: (KernelIndex, f64), p2: (KernelIndex, f64)) -> Result<f64> {
        for (idx, y) in [p1, p2] {
            if !self.domain.contains(idx) {
                return Err(Error::InvalidArgument(format!(
                    "kernel argument {idx} outside the declared index domain"
                )));
            }
            if !y.is_finite() {
                return Err(Error::InvalidArgument(format!("kernel point {y} is not finite")));
            }
        }
        let (a1, b1) = p1.0.key();
        let (a2, b2) = p2.0.key();
        let key = [a1, b1, p1.1.to_bits(), a2, b2, p2.1.to_bits()];
        if let Some(v) = self.cache.get(&key) {
            return Ok(*v);
        }
        let v = (self.evaluator)(p1, p2)?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "kernel evaluation at ({}, {}), ({}, {}) is not finite",
                p1.0, p1.1, p2.0, p2.1
            )));
        }
        self.cache.insert(key, v);
        Ok(v)
    }
}

/// Correlation function: `det( K(pt_i, pt_j) )_{i,j}` over the given points.
pub fn corr_rho(kernel: &ExtendedKernel, pts: &[(KernelIndex, f64)]) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::InvalidArgument(
            "correlation function needs at least one point".into(),
        ));
    }
    let m = pts.len();
    let mut entries = Vec::with_capacity(m * m);
    for &p1 in pts {
        for &p2 in pts {
            entries.push(kernel.eval(p1, p2)?);
        }
    }
    let mat = DMatrix::from_row_slice(m, m, &entries);
    Ok(mat.determinant())
}

// ---------------------------------------------------------------------------
// Quadrature plumbing shared by the kernel builders.
// ---------------------------------------------------------------------------

/// `1/k!` for small `k`.
pub(crate) fn inv_factorial(k: usize) -> f64 {
    let mut v = 1.0;
    for j in 1..=k {
        v /= j as f64;
    }
    v
}

/// `(-1)^k` for a possibly negative exponent.
pub(crate) fn neg_one_pow(k: i64) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Adaptive integration of a fallible integrand over a finite interval.
/// The first evaluation error aborts the quadrature.
pub(crate) fn integrate_result<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    integrate_result_split(f, a, b, &[], tol)
}

/// Same as [`integrate_result`], pre-splitting at known interior kinks.
pub(crate) fn integrate_result_split<F>(
    f: &F,
    a: f64,
    b: f64,
    splits: &[f64],
    tol: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if a >= b {
        return Ok(0.0);
    }
    let slot: RefCell<Option<Error>> = RefCell::new(None);
    let g = |w: f64| match f(w) {
        Ok(v) => v,
        Err(e) => {
            slot.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let v = quad::adaptive_split(&g, a, b, splits, tol)?;
    if let Some(e) = slot.into_inner() {
        return Err(e);
    }
    if !v.is_finite() {
        return Err(Error::Numerical(format!(
            "integral over [{a}, {b}] evaluated to a non-finite value"
        )));
    }
    Ok(v)
}

/// Location/width hint for truncating integrals of a transition density:
/// `center` is roughly the mean of the distribution, `scale` its spread.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub center: f64,
    pub scale: f64,
}

/// Window of the squared-Bessel density `y ↦ e^{tB^{(δ)}}(x, y)`.
pub(crate) fn besq_window(delta: f64, t: f64, x: f64) -> Window {
    let center = (x + delta * t).max(0.0);
    let scale = (4.0 * x * t + 2.0 * delta.abs() * t * t + 4.0 * t * t).sqrt().max(1e-3);
    Window { center, scale }
}

/// Window of the forward variable of `provider.density(t, x, ·)`.
pub(crate) fn provider_window(p: &DensityProvider, t: f64, x: f64) -> Result<Window> {
    if let Some(delta) = p.besq_delta() {
        return Ok(besq_window(delta, t, x));
    }
    match p.family {
        Family::Brownian | Family::Ou => {
            let a0 = p.sys.spec.a0;
            let (b1, b0) = p.sys.level_drift_coeffs(p.level)?;
            let (center, var) = if b1 == 0.0 {
                (x + b0 * t, 2.0 * a0 * t)
            } else {
                let e = (b1 * t).exp();
                (x * e + b0 * (b1 * t).exp_m1() / b1, a0 * (2.0 * b1 * t).exp_m1() / b1)
            };
            Ok(Window { center, scale: var.sqrt().max(1e-6) })
        }
        _ => Ok(Window { center: x, scale: t.sqrt().max(1.0) }),
    }
}

/// Finite replacement for an infinite integration limit: probe the integrand
/// geometrically from `anchor` in `direction` (±1) and stop once it has
/// fallen below `TAIL_REL` of its running peak at two consecutive probes.
pub(crate) fn truncated_endpoint<F>(
    f: &F,
    anchor: f64,
    direction: f64,
    scale: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut peak = 0.0f64;
    let mut run = 0usize;
    for j in 0..56 {
        let pt = anchor + direction * scale * (2.0f64).powi(j);
        let v = f(pt)?.abs();
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "integrand is not finite at {pt} while truncating a tail"
            )));
        }
        if v > peak {
            peak = v;
            run = 0;
        } else if peak > 0.0 && v <= TAIL_REL * peak {
            run += 1;
            if run >= 2 {
                return Ok(pt);
            }
        } else {
            run = 0;
        }
        if peak == 0.0 && j >= 20 {
            // Nothing detected within 2^20 scales: the integrand carries no
            // visible mass in this direction; any endpoint out here works.
            return Ok(pt);
        }
    }
    Err(Error::TruncationFailure(format!(
        "integrand tail never fell below {TAIL_REL:e} of its peak probing from {anchor}"
    )))
}

/// m-fold antiderivative anchored at the left boundary:
/// `(∂^{-m} f)(y) = ∫_left^y (y-w)^{m-1}/(m-1)! · f(w) dw`,
/// with `left` possibly `-∞` (truncated using `window`).
pub(crate) fn lower_integral<F>(
    f: &F,
    m: usize,
    y: f64,
    left: f64,
    window: Window,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if m == 0 {
        return Err(Error::InvalidArgument("antiderivative order must be >= 1".into()));
    }
    let fac = inv_factorial(m - 1);
    let g = |w: f64| Ok(f(w)? * (y - w).powi((m - 1) as i32) * fac);
    let lo = if left.is_finite() {
        left
    } else {
        let anchor = y.min(window.center);
        truncated_endpoint(&g, anchor, -1.0, window.scale)?
    };
    integrate_result(&g, lo, y, INT_TOL)
}

/// m-fold antiderivative anchored at the right boundary, with the sign that
/// makes it a right inverse of the derivative:
/// `(∂̂^{-m} f)(x) = -∫_x^right (x-w)^{m-1}/(m-1)! · f(w) dw`,
/// with `right` possibly `+∞` (truncated using `window`).
pub(crate) fn upper_integral<F>(
    f: &F,
    m: usize,
    x: f64,
    right: f64,
    window: Window,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if m == 0 {
        return Err(Error::InvalidArgument("antiderivative order must be >= 1".into()));
    }
    let fac = inv_factorial(m - 1);
    let g = |w: f64| Ok(f(w)? * (x - w).powi((m - 1) as i32) * fac);
    let hi = if right.is_finite() {
        right
    } else {
        let anchor = x.max(window.center);
        truncated_endpoint(&g, anchor, 1.0, window.scale)?
    };
    integrate_result(&g, x, hi, INT_TOL).map(|v| -v)
}

/// Integral of `f` over the whole state interval `(l, r)`, truncating
/// infinite endpoints around `window`.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn line_integral<F>(
    f: &F,
    l: f64,
    r: f64,
    window: Window,
    tol: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let lo = if l.is_finite() {
        l
    } else {
        truncated_endpoint(f, window.center, -1.0, window.scale)?
    };
    let hi = if r.is_finite() {
        r
    } else {
        truncated_endpoint(f, window.center.max(lo), 1.0, window.scale)?
    };
    integrate_result(f, lo, hi, tol)
}

/// Vandermonde product `∏_{i<j} (v_j - v_i)`.
pub(crate) fn vandermonde(v: &[f64]) -> f64 {
    let mut prod = 1.0;
    for j in 1..v.len() {
        for i in 0..j {
            prod *= v[j] - v[i];
        }
    }
    prod
}
