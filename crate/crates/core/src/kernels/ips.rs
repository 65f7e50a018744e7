//! Fixed-time extended kernel of the interlacing particle array.
//!
//! For levels `n1, n2 ∈ {1, …, N}` and points `y1, y2` the kernel is
//!
//! ```text
//! K[(n1,y1); (n2,y2)] = -(y1-y2)^{n2-n1-1}/(n2-n1-1)! · 1{y2 < y1} · 1{n2 > n1}
//!                      + Σ_{k=1}^{n2} Ψ_{n1-k}^{(n1)}(y1) Φ_{n2-k}^{(n2)}(y2),
//! ```
//!
//! with the biorthogonal families from [`super::psi_phi`].  Terms with
//! `k ≤ n1` use derivative representations of Ψ; terms with `k > n1` fall
//! back to iterated antiderivatives of lower-level densities.  The same
//! construction serves both chambers — only the ordering convention of the
//! initial configuration differs.

use std::sync::Arc;

use dashmap::DashMap;

use crate::error::{Error, Result};
use crate::pearson::Side;
use crate::polyflow::Poly;

use super::{
    inv_factorial, psi, phi, ExtendedKernel, IndexDomain, KernelConfig, KernelIndex,
};

/// The jump part `-(y1-y2)^{n2-n1-1}/(n2-n1-1)! 1{y2<y1} 1{n2>n1}`.
pub(crate) fn jump_term(n1: usize, y1: f64, n2: usize, y2: f64) -> f64 {
    if n2 > n1 && y2 < y1 {
        let m = n2 - n1 - 1;
        -(y1 - y2).powi(m as i32) * inv_factorial(m)
    } else {
        0.0
    }
}

/// Build the fixed-time extended kernel of the array started from
/// `cfg.x` with one-sided pushing in the direction of `side`.
pub fn array_kernel(cfg: &KernelConfig, side: Side) -> Result<ExtendedKernel> {
    if cfg.side != side {
        return Err(Error::InvalidArgument(format!(
            "config is tagged {} but the kernel was requested for {}",
            cfg.side.as_str(),
            side.as_str()
        )));
    }
    cfg.fixed_time()?;
    let n = cfg.n();
    // Φ_{n2-k}^{(n2)} for every level: polynomials, cheap to precompute.
    let mut phis: Vec<Vec<Poly>> = Vec::with_capacity(n + 1);
    phis.push(Vec::new()); // level 0 unused
    for lev in 1..=n {
        phis.push((0..lev).map(|i| phi(cfg, lev, i)).collect::<Result<_>>()?);
    }
    let ctx = Arc::new((cfg.clone(), phis, DashMap::<(u64, u64, u64), f64>::new()));
    let evaluator = {
        let ctx = Arc::clone(&ctx);
        move |(i1, y1): (KernelIndex, f64), (i2, y2): (KernelIndex, f64)| -> Result<f64> {
            let (cfg, phis, psi_cache) = (&ctx.0, &ctx.1, &ctx.2);
            let (n1, n2) = match (i1, i2) {
                (KernelIndex::Level(a), KernelIndex::Level(b)) => (a, b),
                _ => {
                    return Err(Error::InvalidArgument(
                        "the array kernel is indexed by levels".into(),
                    ))
                }
            };
            let mut sum = jump_term(n1, y1, n2, y2);
            for k in 1..=n2 {
                let j = n1 as i64 - k as i64;
                let key = (n1 as u64, j as u64, y1.to_bits());
                let psi_v = match psi_cache.get(&key) {
                    Some(v) => *v,
                    None => {
                        let v = psi(cfg, n1, j, y1)?;
                        psi_cache.insert(key, v);
                        v
                    }
                };
                sum += psi_v * phis[n2][n2 - k].eval(y2);
            }
            Ok(sum)
        }
    };
    Ok(ExtendedKernel::new(
        Box::new(evaluator),
        IndexDomain::Levels((1..=n).collect()),
        side,
    ))
}
