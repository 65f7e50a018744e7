//! The biorthogonal families `Ψ_j^{(n)}` and `Φ_i^{(n)}` underlying the
//! fixed-time kernel of the interlacing array.
//!
//! With `ρ^{(k)}(t, x, y)` the level-k transition density, `c^{(k)}` the
//! constant part of the level-drift divergence and `C(k) = Σ_{j=k}^{N-1}
//! c^{(j)}`, the functions are (writing `i = n - j` for the particle index)
//!
//! ```text
//! Ψ_{n-i}^{(n)}(y) = (-1)^{N-n} e^{t C(n)} ∂_x^{n-i} ρ^{(n)}(t, x, y)|_{x=x_i}      (i ≤ n)
//! Ψ_{n-i}^{(n)}(y) = (-1)^{N-i} e^{t C(i)} (∂^{-(i-n)} ρ^{(i)}(t, x_i, ·))(y)       (i > n)
//! Φ_i^{(n)}(z)     = (-1)^{i+n-N} e^{-t C(n)} (e^{-t L^{(n)}} q_i^{(n)})(z),
//! ```
//!
//! where `q_i^{(n)}` is the degree-i polynomial with `∂^i q_k^{(n)}` equal to
//! `(-1)^k k!/(k-i)! ⋅ (…)` pinned at the initial coordinates (see
//! [`crate::polyflow::q_polys`]), and `∂^{-m}` is the m-fold antiderivative
//! anchored at the left end of the state interval.  The two `Ψ`
//! representations agree on the overlap `i ≤ n`; [`psi_alt`] exposes the
//! alternative z-derivative form as a numerical cross-check.
//!
//! The families are biorthogonal: `∫ Ψ_i^{(n)} Φ_j^{(n)} = δ_{ij}` for
//! `i, j = 0, …, n-1`.

use crate::error::{Error, Result};
use crate::polyflow::{flow, q_polys, Poly};

use super::{lower_integral, neg_one_pow, provider_window, KernelConfig};

fn check_level(cfg: &KernelConfig, n: usize) -> Result<()> {
    if n >= 1 && n <= cfg.n() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "level index {n} outside 1..={}",
            cfg.n()
        )))
    }
}

/// Particle index `i = n - j`, validated to lie in `1..=N`.
fn particle_index(cfg: &KernelConfig, n: usize, j: i64) -> Result<usize> {
    let i = n as i64 - j;
    if i >= 1 && i <= cfg.n() as i64 {
        Ok(i as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "Ψ subscript {j} at level {n} needs particle index n-j in 1..={}, got {i}",
            cfg.n()
        )))
    }
}

/// `Ψ_j^{(n)}(y)` for `j = n-N, …, n-1`.
///
/// For `j ≥ 0` this takes x-derivatives of the level-n density at the
/// particle coordinate; for `j < 0` it integrates the level-`(n-j)` density
/// from the left boundary.
pub fn psi(cfg: &KernelConfig, n: usize, j: i64, y: f64) -> Result<f64> {
    check_level(cfg, n)?;
    let i = particle_index(cfg, n, j)?;
    let t = cfg.fixed_time()?;
    let nn = cfg.n() as i64;
    if i <= n {
        let p = cfg.sys.provider(n)?;
        let scale = neg_one_pow(nn - n as i64) * (t * cfg.sys.c_sum(n)?).exp();
        Ok(scale * p.density_dx(n - i, t, cfg.x[i - 1], y)?)
    } else {
        psi_tail(cfg, n, i, y)
    }
}

/// The integral representation used for `i = n - j > n`.
fn psi_tail(cfg: &KernelConfig, n: usize, i: usize, y: f64) -> Result<f64> {
    let t = cfg.fixed_time()?;
    let nn = cfg.n() as i64;
    let p = cfg.sys.provider(i)?;
    let xi = cfg.x[i - 1];
    let f = |w: f64| p.density(t, xi, w);
    let window = provider_window(&p, t, xi)?;
    let v = lower_integral(&f, i - n, y, cfg.sys.spec.l, window)?;
    Ok(neg_one_pow(nn - i as i64) * (t * cfg.sys.c_sum(i)?).exp() * v)
}

/// Alternative representation of `Ψ_j^{(n)}` that differentiates the
/// level-`i` density in its forward variable instead:
///
/// ```text
/// Ψ_{n-i}^{(n)}(y) = (-1)^{N-i} e^{t C(i)} ∂_y^{n-i} ρ^{(i)}(t, x_i, y).
/// ```
///
/// Agrees with [`psi`] (which uses the level-n density for `i ≤ n`); the two
/// routes share no density evaluations, so their agreement exercises the
/// intertwining between consecutive level generators.
pub fn psi_alt(cfg: &KernelConfig, n: usize, j: i64, y: f64) -> Result<f64> {
    check_level(cfg, n)?;
    let i = particle_index(cfg, n, j)?;
    if i > n {
        return psi_tail(cfg, n, i, y);
    }
    let t = cfg.fixed_time()?;
    let nn = cfg.n() as i64;
    let p = cfg.sys.provider(i)?;
    let scale = neg_one_pow(nn - i as i64) * (t * cfg.sys.c_sum(i)?).exp();
    Ok(scale * p.density_dy(n - i, t, cfg.x[i - 1], y)?)
}

/// `Φ_i^{(n)}` as an explicit polynomial of degree exactly `i`
/// (`i = 0, …, n-1`), obtained by running the degree-preserving backward
/// flow `e^{-t L^{(n)}}` on the pinned polynomial `q_i^{(n)}`.
pub fn phi(cfg: &KernelConfig, n: usize, i: usize) -> Result<Poly> {
    check_level(cfg, n)?;
    if i >= n {
        return Err(Error::InvalidArgument(format!(
            "Φ subscript {i} at level {n} must lie in 0..={}",
            n - 1
        )));
    }
    let t = cfg.fixed_time()?;
    let q = q_polys(&cfg.x, n)?;
    let flowed = flow(&cfg.sys, n, -t, &q[i])?;
    let nn = cfg.n() as i64;
    let scale = neg_one_pow(i as i64 + n as i64 - nn) * (-t * cfg.sys.c_sum(n)?).exp();
    Ok(flowed.scale(scale))
}
