//! Root trajectories of the flowed polynomial.
//!
//! If `p_t = e^{tL^{(k)}} p` has simple real roots `𝔷₁(t), …, 𝔷_M(t)`, they
//! obey the coupled ODE
//!
//! `∂_t 𝔷_i = −b^{(k)}(𝔷_i) + 2 a(𝔷_i) Σ_{j≠i} 1/(𝔷_j − 𝔷_i)`,
//!
//! integrated here with an adaptive step-doubling Runge–Kutta scheme. The
//! integrator refuses configurations whose minimum pairwise gap falls below a
//! configured threshold (roots collide in finite time when they attract).

use super::Poly;
use crate::error::{Error, Result};
use crate::pearson::LevelSystem;
use nalgebra::DMatrix;

/// Real roots of `p` via eigenvalues of the companion matrix.
///
/// Errors if the polynomial is constant or has roots with a significant
/// imaginary part.
pub fn poly_roots(p: &Poly) -> Result<Vec<f64>> {
    let d = p.degree();
    if d == 0 {
        return Err(Error::InvalidArgument(
            "root finding needs a nonconstant polynomial".into(),
        ));
    }
    let lead = p.leading();
    let mut companion = DMatrix::zeros(d, d);
    for i in 1..d {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..d {
        companion[(i, d - 1)] = -p.coeff(i) / lead;
    }
    let eig = companion.complex_eigenvalues();
    let scale = p.coeffs().iter().map(|c| c.abs()).fold(1.0, f64::max);
    let mut roots = Vec::with_capacity(d);
    for lambda in eig.iter() {
        if lambda.im.abs() > 1e-7 * lambda.re.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "polynomial has a complex root {} + {}i (coefficient scale {scale:.3e})",
                lambda.re, lambda.im
            )));
        }
        roots.push(lambda.re);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(roots)
}

#[derive(Debug, Clone)]
pub struct RootFlowConfig {
    /// Collision threshold: error out when a pairwise gap drops below this.
    pub min_gap: f64,
    /// Local error tolerance per unit step (scaled by root magnitude).
    pub tol: f64,
    /// Hard cap on accepted integrator steps.
    pub max_steps: usize,
}

impl Default for RootFlowConfig {
    fn default() -> Self {
        RootFlowConfig { min_gap: 1e-7, tol: 1e-10, max_steps: 200_000 }
    }
}

/// Integrate the root ODE for level `k`, starting from the roots of `p` at
/// `t_grid[0]`; returns one sorted root vector per grid time.
pub fn root_flow(
    sys: &LevelSystem,
    k: usize,
    p: &Poly,
    t_grid: &[f64],
    cfg: &RootFlowConfig,
) -> Result<Vec<Vec<f64>>> {
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "root flow needs a strictly increasing time grid with at least two points".into(),
        ));
    }
    let (b1k, b0k) = sys.level_drift_coeffs(k)?;
    let spec = &sys.spec;
    let mut z = poly_roots(p)?;
    check_gaps(&z, cfg.min_gap)?;

    let velocity = |z: &[f64], out: &mut Vec<f64>| -> Result<()> {
        out.clear();
        for (i, &zi) in z.iter().enumerate() {
            let mut s = 0.0;
            for (j, &zj) in z.iter().enumerate() {
                if j == i {
                    continue;
                }
                let gap = zj - zi;
                if gap.abs() < cfg.min_gap {
                    return Err(Error::RootCollision { gap: gap.abs() });
                }
                s += 1.0 / gap;
            }
            out.push(-(b1k * zi + b0k) + 2.0 * spec.a(zi) * s);
        }
        Ok(())
    };

    let mut out = Vec::with_capacity(t_grid.len());
    out.push(z.clone());
    let mut steps = 0usize;
    for seg in t_grid.windows(2) {
        let (mut t, t_end) = (seg[0], seg[1]);
        let mut h = (t_end - t) / 16.0;
        while t < t_end {
            if steps >= cfg.max_steps {
                return Err(Error::Numerical(format!(
                    "root flow exceeded {} steps before t = {t_end}",
                    cfg.max_steps
                )));
            }
            if h < 1e-14 * (t_end - t_grid[0]).abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "root flow step size underflow at t = {t} (roots nearly colliding?)"
                )));
            }
            let h_try = h.min(t_end - t);
            // one RK4 step of size h_try vs two of size h_try/2
            let full = rk4(&velocity, &z, h_try)?;
            let half = rk4(&velocity, &rk4(&velocity, &z, h_try / 2.0)?, h_try / 2.0)?;
            let scale = z.iter().map(|v| v.abs()).fold(1.0, f64::max);
            let err = full
                .iter()
                .zip(&half)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / 15.0;
            if err <= cfg.tol * scale * (h_try.abs().max(1e-3)) {
                // accept (with the fifth-order extrapolated value)
                z = full
                    .iter()
                    .zip(&half)
                    .map(|(a, b)| b + (b - a) / 15.0)
                    .collect();
                check_gaps(&z, cfg.min_gap)?;
                t += h_try;
                steps += 1;
                if err < 1e-30 {
                    h = h_try * 4.0;
                } else {
                    h = h_try * 0.9 * (cfg.tol * scale * h_try.abs().max(1e-3) / err).powf(0.2);
                }
            } else {
                h = h_try * 0.5;
            }
        }
        out.push(z.clone());
    }
    Ok(out)
}

fn check_gaps(z: &[f64], min_gap: f64) -> Result<()> {
    for i in 1..z.len() {
        let gap = (z[i] - z[i - 1]).abs();
        if gap < min_gap {
            return Err(Error::RootCollision { gap });
        }
    }
    Ok(())
}

fn rk4<F>(f: &F, z: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut Vec<f64>) -> Result<()>,
{
    let n = z.len();
    let mut k1 = Vec::with_capacity(n);
    let mut k2 = Vec::with_capacity(n);
    let mut k3 = Vec::with_capacity(n);
    let mut k4 = Vec::with_capacity(n);
    let mut tmp = vec![0.0; n];
    f(z, &mut k1)?;
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = z[i] + h * k3[i];
    }
    f(&tmp, &mut k4)?;
    Ok((0..n)
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}
