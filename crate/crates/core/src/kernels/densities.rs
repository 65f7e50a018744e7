//! Determinantal transition densities: the non-colliding semigroup, the
//! signed density on interlacing arrays, the collision-system transition
//! density, and the (unnormalized) invariant density.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pearson::{Family, LevelSystem, Side};

use super::{
    inv_factorial, lower_integral, provider_window, upper_integral, vandermonde,
    KernelConfig,
};

fn check_points(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::InvalidArgument(format!(
            "got {} coordinates for an N = {n} system",
            y.len()
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("coordinates must be finite".into()));
    }
    Ok(())
}

/// Transition density of `N` non-colliding copies of the base diffusion,
/// from `cfg.x` (nondecreasing; exact repeats handled confluently) to the
/// strictly increasing `y`, in time `t`:
///
/// ```text
/// P_t(x, y) = e^{-t λ_N} · Δ(y)/Δ(x) · det( ρ(t, x_i, y_j) )_{i,j=1..N},
/// ```
///
/// where `Δ` is the Vandermonde product and `λ_N = (1/6) N(N-1) (2a₂(N-2) + 3b₁)`.
/// Repeated starting coordinates replace rows by scaled x-derivative rows
/// (`∂^p ρ / p!`) and drop the corresponding factors from `Δ(x)`.  Points `y`
/// outside the open chamber (ties, wrong order, or outside the state
/// interval) return 0.
pub fn noncolliding_density(cfg: &KernelConfig, t: f64, y: &[f64]) -> Result<f64> {
    if cfg.side != Side::Up {
        return Err(Error::InvalidArgument(
            "the non-colliding density takes a nondecreasing configuration".into(),
        ));
    }
    if t <= 0.0 || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("need finite t > 0, got {t}")));
    }
    let n = cfg.n();
    check_points(y, n)?;
    let (l, r) = (cfg.sys.spec.l, cfg.sys.spec.r);
    if y.windows(2).any(|w| w[0] >= w[1]) || y.iter().any(|&v| v <= l || v >= r) {
        return Ok(0.0);
    }

    // Group exactly-equal starting coordinates: (value, multiplicity).
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for &v in &cfg.x {
        match groups.last_mut() {
            Some((g, m)) if *g == v => *m += 1,
            _ => groups.push((v, 1)),
        }
    }
    if groups.iter().any(|&(_, m)| m > 1) && matches!(cfg.sys.family(), Family::Custom) {
        return Err(Error::InvalidModel(
            "repeated starting coordinates need analytic density derivatives; \
             not available for a custom density"
                .into(),
        ));
    }
    let provider = cfg.sys.provider(n)?;
    let mut entries = Vec::with_capacity(n * n);
    for &(v, m) in &groups {
        for p in 0..m {
            let fac = inv_factorial(p);
            for &yj in y {
                entries.push(provider.density_dx(p, t, v, yj)? * fac);
            }
        }
    }
    let det = DMatrix::from_row_slice(n, n, &entries).determinant();
    let mut denom = 1.0;
    for h in 1..groups.len() {
        for g in 0..h {
            denom *=
                (groups[h].0 - groups[g].0).powi((groups[h].1 * groups[g].1) as i32);
        }
    }
    Ok((-t * cfg.sys.lambda_n()).exp() * vandermonde(y) * det / denom)
}

/// Validate an interlacing array `levels[m]` = level `m+1` (length `m+1`):
/// every consecutive pair must satisfy
/// `z_i^{(n+1)} < z_i^{(n)} ≤ z_{i+1}^{(n+1)}`.
fn check_interlacing(levels: &[Vec<f64>]) -> Result<()> {
    for (m, level) in levels.iter().enumerate() {
        if level.len() != m + 1 {
            return Err(Error::InvalidArgument(format!(
                "level {} must hold {} coordinates, got {}",
                m + 1,
                m + 1,
                level.len()
            )));
        }
        if !level.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("array coordinates must be finite".into()));
        }
    }
    for lev in 1..levels.len() {
        for i in 0..lev {
            let lower = levels[lev][i];
            let mid = levels[lev - 1][i];
            let upper = levels[lev][i + 1];
            if !(lower < mid && mid <= upper) {
                return Err(Error::InvalidArgument(format!(
                    "interlacing violated between levels {} and {}: need {lower} < {mid} ≤ {upper}",
                    lev, lev + 1
                )));
            }
        }
    }
    Ok(())
}

/// Signed transition density of the full interlacing array at time `cfg.t`,
/// started from the nondecreasing `cfg.x` placed along the array edge:
///
/// ```text
/// (-1)^{N(N-1)/2} e^{-t Σ_{k=1}^{N-1} k c^{(k)}}
///     · det( ∂_{x_i}^{N-i} ρ(t, x_i, y_j^{(N)}) )_{i,j=1..N}
/// ```
///
/// on the interlacing cone (error off it), where `ρ` is the base (top-level)
/// density and `y^{(N)}` the top row of `levels`.  Interior levels enter
/// only through the interlacing constraint; integrating them out against
/// Lebesgue measure reproduces [`collision_density`] on the edge
/// coordinates.
pub fn signed_array_density(cfg: &KernelConfig, levels: &[Vec<f64>]) -> Result<f64> {
    if cfg.side != Side::Up {
        return Err(Error::InvalidArgument(
            "the signed array density takes a nondecreasing configuration".into(),
        ));
    }
    let t = cfg.fixed_time()?;
    let n = cfg.n();
    if levels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} levels, got {}",
            levels.len()
        )));
    }
    check_interlacing(levels)?;
    let top = &levels[n - 1];
    let provider = cfg.sys.provider(n)?;
    let mut entries = Vec::with_capacity(n * n);
    for i in 1..=n {
        for &yj in top {
            entries.push(provider.density_dx(n - i, t, cfg.x[i - 1], yj)?);
        }
    }
    let det = DMatrix::from_row_slice(n, n, &entries).determinant();
    let mut csum = 0.0;
    for k in 1..n {
        csum += k as f64 * cfg.sys.constant_c(k)?;
    }
    let sign = if (n * (n - 1) / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign * (-t * csum).exp() * det)
}

/// Transition density of the particle system with one-sided collisions
/// (pushing toward `side`), evaluated at the edge coordinates `y` sorted for
/// that chamber.  It is the determinant
///
/// ```text
/// det( [∂^{j-i} ρ^{(i)}(t, x_i, ·)](y_j) )_{i,j=1..N},
/// ```
///
/// with `∂^{j-i}` acting in the forward variable: a derivative for `j ≥ i`,
/// and for `j < i` the `(i-j)`-fold antiderivative anchored at the left end
/// of the state interval for the up chamber, or at the right end (with the
/// one-sided sign) for the down chamber.  Points off the chamber return 0.
pub fn collision_density(cfg: &KernelConfig, side: Side, y: &[f64]) -> Result<f64> {
    if cfg.side != side {
        return Err(Error::InvalidArgument(format!(
            "config is tagged {} but the density was requested for {}",
            cfg.side.as_str(),
            side.as_str()
        )));
    }
    let t = cfg.fixed_time()?;
    let n = cfg.n();
    check_points(y, n)?;
    let sorted = match side {
        Side::Up => y.windows(2).all(|w| w[0] <= w[1]),
        Side::Down => y.windows(2).all(|w| w[0] >= w[1]),
    };
    if !sorted {
        return Ok(0.0);
    }
    let (l, r) = (cfg.sys.spec.l, cfg.sys.spec.r);
    if y.iter().any(|&v| v < l || v > r) {
        return Ok(0.0);
    }
    let mut entries = Vec::with_capacity(n * n);
    for i in 1..=n {
        let provider = cfg.sys.provider(i)?;
        let xi = cfg.x[i - 1];
        let window = provider_window(&provider, t, xi)?;
        for (j, &yj) in y.iter().enumerate() {
            let j = j + 1;
            let entry = if j >= i {
                provider.density_dy(j - i, t, xi, yj)?
            } else {
                let f = |w: f64| provider.density(t, xi, w);
                match side {
                    Side::Up => lower_integral(&f, i - j, yj, l, window)?,
                    Side::Down => upper_integral(&f, i - j, yj, r, window)?,
                }
            };
            entries.push(entry);
        }
    }
    Ok(DMatrix::from_row_slice(n, n, &entries).determinant())
}

/// Unnormalized invariant density of the non-colliding system:
/// `M(y) = ∏_i m(y_i) · Δ(y)²` on the open up-chamber (0 off it), where `m`
/// is the speed density of the base diffusion.  It is invariant whenever the
/// base speed measure has moments up to order `2N-2`.
pub fn invariant_measure_density(sys: &LevelSystem, y: &[f64]) -> Result<f64> {
    check_points(y, sys.n)?;
    let (l, r) = (sys.spec.l, sys.spec.r);
    if y.windows(2).any(|w| w[0] >= w[1]) || y.iter().any(|&v| v <= l || v >= r) {
        return Ok(0.0);
    }
    let anchor = sys.spec.default_anchor();
    let mut prod = 1.0;
    for &v in y {
        prod *= sys.spec.speed_density(anchor, v)?;
    }
    let vdm = vandermonde(y);
    Ok(prod * vdm * vdm)
}
