//! Space-time correlation kernel of `N` non-colliding diffusions.
//!
//! The kernel factorizes through two biorthogonal families built from the
//! base diffusion `L` (the top level of the system) and the initial
//! configuration `x ∈ 𝕎^↑`:
//!
//! * `𝒬_i(s, y)` — the divided difference of `z ↦ ρ(s, z, y)` over
//!   `x_1, …, x_i`, with repeated coordinates handled confluently
//!   (derivative rows).  See [`q_func`]; [`q_func_sum`] is the
//!   partial-fraction form valid for distinct coordinates.
//! * `𝒫_i(t, ·)` — the degree-`(i-1)` polynomial `e^{-tL} ∏_{k<i} (z - x_k)`.
//!   See [`p_poly`].
//!
//! They are biorthogonal (`∫ 𝒬_i(s, y) 𝒫_j(s, y) dy = δ_{ij}`) and
//! propagate in opposite directions:
//! `∫ 𝒬_i(s, w) ρ(t-s, w, y) dw = 𝒬_i(t, y)` and
//! `e^{(t-s)L} 𝒫_i(t, ·) = 𝒫_i(s, ·)`.  The kernel over a finite set of
//! observation times is
//!
//! ```text
//! K[(s,y1); (t,y2)] = -ρ(s-t, y2, y1) 1{t < s} + Σ_{i=1}^N 𝒬_i(s, y1) 𝒫_i(t, y2).
//! ```

use std::sync::Arc;

use dashmap::DashMap;

use crate::error::{Error, Result};
use crate::pearson::{Family, Side};
use crate::polyflow::{divided_difference, flow, Poly};

use super::{ExtendedKernel, IndexDomain, KernelConfig, KernelIndex};

fn check_particle(cfg: &KernelConfig, i: usize) -> Result<()> {
    if i >= 1 && i <= cfg.n() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "particle index {i} outside 1..={}",
            cfg.n()
        )))
    }
}

fn check_up(cfg: &KernelConfig) -> Result<()> {
    if cfg.side != Side::Up {
        return Err(Error::InvalidArgument(
            "the non-colliding construction takes a nondecreasing configuration (up chamber)"
                .into(),
        ));
    }
    Ok(())
}

fn check_time(s: f64) -> Result<()> {
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("need a finite time > 0, got {s}")));
    }
    Ok(())
}

/// `𝒬_i(s, y)`: divided difference of `z ↦ ρ(s, z, y)` over `x_1, …, x_i`.
/// Exactly repeated coordinates produce derivative rows
/// (`f[x,…,x] = ∂^{m-1} f(x)/(m-1)!` for `m` copies), which requires
/// analytic x-derivatives of the density — configurations with repeats are
/// rejected for the `Custom` family.
pub fn q_func(cfg: &KernelConfig, i: usize, s: f64, y: f64) -> Result<f64> {
    check_up(cfg)?;
    check_particle(cfg, i)?;
    check_time(s)?;
    let pts = &cfg.x[..i];
    let has_repeats = pts.windows(2).any(|w| w[0] == w[1]);
    if has_repeats && matches!(cfg.sys.family(), Family::Custom) {
        return Err(Error::InvalidModel(
            "repeated initial coordinates need analytic density derivatives; \
             not available for a custom density"
                .into(),
        ));
    }
    let p = cfg.sys.provider(cfg.n())?;
    divided_difference(&|ord, z| p.density_dx(ord, s, z, y), pts)
}

/// Partial-fraction form of `𝒬_i`, valid only for pairwise-distinct
/// coordinates: `Σ_{m=1}^i ρ(s, x_m, y) / ∏_{k≠m} (x_m - x_k)`.
pub fn q_func_sum(cfg: &KernelConfig, i: usize, s: f64, y: f64) -> Result<f64> {
    check_up(cfg)?;
    check_particle(cfg, i)?;
    check_time(s)?;
    let pts = &cfg.x[..i];
    let p = cfg.sys.provider(cfg.n())?;
    let mut sum = 0.0;
    for m in 0..i {
        let mut denom = 1.0;
        for k in 0..i {
            if k != m {
                denom *= pts[m] - pts[k];
            }
        }
        if denom == 0.0 {
            return Err(Error::InvalidArgument(
                "partial-fraction form needs pairwise-distinct coordinates".into(),
            ));
        }
        sum += p.density(s, pts[m], y)? / denom;
    }
    Ok(sum)
}

/// `𝒫_i(t, ·) = e^{-tL} ∏_{k=1}^{i-1} (z - x_k)`, a monic polynomial of
/// degree `i-1`.
pub fn p_poly(cfg: &KernelConfig, i: usize, t: f64) -> Result<Poly> {
    check_up(cfg)?;
    check_particle(cfg, i)?;
    check_time(t)?;
    let mut prod = Poly::one();
    for k in 0..i - 1 {
        prod = prod.mul(&Poly::new(vec![-cfg.x[k], 1.0]));
    }
    flow(&cfg.sys, cfg.n(), -t, &prod)
}

/// Build the space-time extended kernel over the given strictly increasing
/// observation times.
pub fn spacetime_kernel(cfg: &KernelConfig, times: &[f64]) -> Result<ExtendedKernel> {
    check_up(cfg)?;
    if times.is_empty() {
        return Err(Error::InvalidArgument("need at least one observation time".into()));
    }
    for &s in times {
        check_time(s)?;
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "observation times must be strictly increasing".into(),
        ));
    }
    let n = cfg.n();
    // 𝒫_i(t, ·) for every observation time.
    let mut pp: Vec<Vec<Poly>> = Vec::with_capacity(times.len());
    for &t in times {
        pp.push((1..=n).map(|i| p_poly(cfg, i, t)).collect::<Result<_>>()?);
    }
    let provider = cfg.sys.provider(n)?;
    let ctx = Arc::new((
        cfg.clone(),
        times.to_vec(),
        pp,
        provider,
        DashMap::<(u64, u64, u64), f64>::new(),
    ));
    let evaluator = {
        let ctx = Arc::clone(&ctx);
        move |(i1, y1): (KernelIndex, f64), (i2, y2): (KernelIndex, f64)| -> Result<f64> {
            let (cfg, times, pp, provider, q_cache) =
                (&ctx.0, &ctx.1, &ctx.2, &ctx.3, &ctx.4);
            let (s, t) = match (i1, i2) {
                (KernelIndex::Time(a), KernelIndex::Time(b)) => (a, b),
                _ => {
                    return Err(Error::InvalidArgument(
                        "the space-time kernel is indexed by times".into(),
                    ))
                }
            };
            let t_pos = times
                .iter()
                .position(|&tt| tt == t)
                .expect("domain check admits only listed times");
            let mut sum = if t < s {
                -provider.density(s - t, y2, y1)?
            } else {
                0.0
            };
            for i in 1..=cfg.n() {
                let key = (i as u64, s.to_bits(), y1.to_bits());
                let qv = match q_cache.get(&key) {
                    Some(v) => *v,
                    None => {
                        let v = q_func(cfg, i, s, y1)?;
                        q_cache.insert(key, v);
                        v
                    }
                };
                sum += qv * pp[t_pos][i - 1].eval(y2);
            }
            Ok(sum)
        }
    };
    Ok(ExtendedKernel::new(
        Box::new(evaluator),
        IndexDomain::Times(times.to_vec()),
        cfg.side,
    ))
}
