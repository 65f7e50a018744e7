//! Squared-Bessel form of the array kernel, built from a random-walk
//! boundary expectation instead of per-level biorthogonal sums.
//!
//! Let `R` be the left-continuous random walk `R_k = R_0 - (E_1 + … + E_k)`
//! with i.i.d. unit-exponential steps, stopped at
//! `τ = min{k ≥ 0 : R_k ≥ x_{k+1}}` for a nonincreasing configuration `x`.
//! The boundary sum
//!
//! ```text
//! S^{(n)}(y1, y2) = Σ_{k=0}^{n-1} (y1 - x_{n-k})_+^{n-k-1}/(n-k-1)! · q_k^{(n)}(y2)
//!                 = E_{R_0 = y1}[ e^{y1 - R_τ} (R_τ - y2)^{n-τ-1}/(n-τ-1)! · 1{τ < n} ]
//! ```
//!
//! identifies a pinned-polynomial sum with a stopped-walk expectation
//! ([`rw_expectation`] / [`rw_expectation_mc`]).  Sandwiching it between
//! squared-Bessel semigroups of dimensions `4-θ-2N` (forward, in `y1`) and
//! `θ+2N-2n2` (backward, in `y2`) yields the kernel of the one-sided
//! squared-Bessel array ([`bessel_array_kernel`]):
//!
//! ```text
//! B[(n1,y1); (n2,y2)] = -(y1-y2)^{n2-n1-1}/(n2-n1-1)! 1{y2<y1} 1{n2>n1}
//!   + ∂_{y1}^{n1} ∫_0^∞ e^{tB^{(4-θ-2N)}}(y1, w) ·
//!        Σ_{k=0}^{n2-1} (w - x_{n2-k})_+^{n2-k-1}/(n2-k-1)! [e^{-tB_{n2}} q_k^{(n2)}](y2) dw,
//! ```
//!
//! where `B_{n2}` is the level-`n2` generator.  Because its dimensions drop
//! by 2 per derivative, the outer semigroup commutes with antiderivatives:
//! `∂_z^{-k} e^{tB^{(θ)}}(x, ·) (z) = ∫_x^∞ e^{tB^{(4-θ-2k)}}(z, y)
//! (y-x)^{k-1}/(k-1)! dy` — verified numerically by
//! [`bessel_commutation_check`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::pearson::{besq_density, besq_density_dx, Family, Side};
use crate::polyflow::{flow, q_polys, Poly};
use crate::quad::gauss_legendre_on;

use super::ips::jump_term;
use super::{
    integrate_result, integrate_result_split, inv_factorial, truncated_endpoint,
    ExtendedKernel, IndexDomain, KernelConfig, KernelIndex, INT_TOL,
};

fn check_walk_args(x: &[f64], n: usize) -> Result<()> {
    if n == 0 || n > x.len() {
        return Err(Error::InvalidArgument(format!(
            "walk depth {n} outside 1..={}",
            x.len()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("walk barriers must be finite".into()));
    }
    if x.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "walk barriers must be nonincreasing".into(),
        ));
    }
    Ok(())
}

/// Closed form of the stopped-walk expectation: the pinned-polynomial sum
/// `Σ_{k=0}^{n-1} (y1 - x_{n-k})_+^{n-k-1}/(n-k-1)! · q_k^{(n)}(y2; x)`.
pub fn rw_expectation(x: &[f64], n: usize, y1: f64, y2: f64) -> Result<f64> {
    check_walk_args(x, n)?;
    let q = q_polys(x, n)?;
    let mut sum = 0.0;
    for k in 0..n {
        let a = x[n - k - 1]; // x_{n-k}, 1-based
        if y1 > a {
            let m = n - k - 1;
            sum += (y1 - a).powi(m as i32) * inv_factorial(m) * q[k].eval(y2);
        }
    }
    Ok(sum)
}

/// Monte Carlo estimate of the stopped-walk expectation
/// `E_{R_0=y1}[e^{y1-R_τ} (R_τ-y2)^{n-τ-1}/(n-τ-1)! 1{τ<n}]`.
/// Returns `(mean, standard error)`.
pub fn rw_expectation_mc(
    x: &[f64],
    n: usize,
    y1: f64,
    y2: f64,
    walks: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_walk_args(x, n)?;
    if walks < 2 {
        return Err(Error::InvalidArgument("need at least 2 walks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for w in 0..walks {
        let mut r = y1;
        let mut payoff = 0.0;
        for (k, &barrier) in x.iter().enumerate().take(n) {
            if r >= barrier {
                let m = n - k - 1;
                payoff = (y1 - r).exp() * (r - y2).powi(m as i32) * inv_factorial(m);
                break;
            }
            let e: f64 = rng.sample(Exp1);
            r -= e;
        }
        let delta = payoff - mean;
        mean += delta / (w + 1) as f64;
        m2 += delta * (payoff - mean);
    }
    let var = m2 / (walks - 1) as f64;
    Ok((mean, (var / walks as f64).sqrt()))
}

/// Context shared by the exact and Monte Carlo kernel evaluators.
struct BesselCtx {
    cfg: KernelConfig,
    t: f64,
    delta_star: f64,
    /// `q_flow[n][k] = e^{-t B_n} q_k^{(n)}` for `n = 1..=N`, `k = 0..n-1`.
    q_flow: Vec<Vec<Poly>>,
}

impl BesselCtx {
    fn new(cfg: &KernelConfig) -> Result<Self> {
        let theta = match cfg.sys.family() {
            Family::SquaredBessel { theta } if theta >= 2.0 => theta,
            Family::SquaredBessel { theta } => {
                return Err(Error::InvalidModel(format!(
                    "the squared-Bessel array kernel needs dimension θ ≥ 2, got {theta}"
                )))
            }
            other => {
                return Err(Error::InvalidModel(format!(
                    "the random-walk kernel construction is specific to the squared-Bessel family, got {other:?}"
                )))
            }
        };
        if cfg.side != Side::Down {
            return Err(Error::InvalidArgument(
                "the squared-Bessel array kernel pushes downward: config must be tagged down".into(),
            ));
        }
        let t = cfg.fixed_time()?;
        let n = cfg.n();
        let mut q_flow: Vec<Vec<Poly>> = vec![Vec::new()];
        for lev in 1..=n {
            let qs = q_polys(&cfg.x, lev)?;
            q_flow.push(
                qs.iter().map(|q| flow(&cfg.sys, lev, -t, q)).collect::<Result<_>>()?,
            );
        }
        Ok(BesselCtx {
            cfg: cfg.clone(),
            t,
            delta_star: 4.0 - theta - 2.0 * n as f64,
            q_flow,
        })
    }

    /// Smallest barrier entering the level-`n2` boundary sum; the integrand
    /// vanishes left of it.
    fn support_left(&self, n2: usize) -> f64 {
        self.cfg.x[n2 - 1]
    }

    /// Interior kinks of the boundary sum on `(lo, ∞)`.
    fn kinks(&self, n2: usize) -> Vec<f64> {
        self.cfg.x[..n2 - 1].to_vec()
    }

    /// The boundary sum `S(w)` with the `y2` dependence collapsed through
    /// precomputed flowed pinned polynomials.
    fn boundary_sum(&self, n2: usize, w: f64, qf_at_y2: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, qv) in qf_at_y2.iter().enumerate() {
            let a = self.cfg.x[n2 - k - 1];
            if w > a {
                let m = n2 - k - 1;
                s += (w - a).powi(m as i32) * inv_factorial(m) * qv;
            }
        }
        s
    }

    fn qf_at(&self, n2: usize, y2: f64) -> Vec<f64> {
        self.q_flow[n2].iter().map(|p| p.eval(y2)).collect()
    }

    /// Upper truncation point for the `w` integral at level pair `(n1, n2)`.
    fn upper_cut(&self, n1: usize, n2: usize, y1: f64, qf_at_y2: &[f64]) -> Result<f64> {
        let lo = self.support_left(n2);
        let g = |w: f64| -> Result<f64> {
            Ok(besq_density_dx(self.delta_star, n1, self.t, y1, w)?
                * self.boundary_sum(n2, w, qf_at_y2))
        };
        // The outer factor, read backwards, is a dimension-(4-δ*) density
        // ending at y1: its w-mass sits near y1 with spread ~ √(4 y1 t).
        let scale = (4.0 * y1 * self.t
            + (self.delta_star.abs() + 4.0) * self.t * self.t)
            .sqrt()
            .max(1e-3);
        truncated_endpoint(&g, y1.max(lo), 1.0, scale)
    }
}

fn level_pair(i1: KernelIndex, i2: KernelIndex) -> Result<(usize, usize)> {
    match (i1, i2) {
        (KernelIndex::Level(a), KernelIndex::Level(b)) => Ok((a, b)),
        _ => Err(Error::InvalidArgument("the array kernel is indexed by levels".into())),
    }
}

/// Build the squared-Bessel array kernel (dimension `θ ≥ 2`, downward
/// pushing) from the random-walk boundary sum.  Mathematically it coincides
/// with [`super::array_kernel`] on the same configuration; the two
/// evaluations share no intermediate quantities.
pub fn bessel_array_kernel(cfg: &KernelConfig) -> Result<ExtendedKernel> {
    let ctx = std::sync::Arc::new(BesselCtx::new(cfg)?);
    let n = cfg.n();
    let evaluator = {
        let ctx = std::sync::Arc::clone(&ctx);
        move |(i1, y1): (KernelIndex, f64), (i2, y2): (KernelIndex, f64)| -> Result<f64> {
            let (n1, n2) = level_pair(i1, i2)?;
            let qf = ctx.qf_at(n2, y2);
            let lo = ctx.support_left(n2);
            let hi = ctx.upper_cut(n1, n2, y1, &qf)?;
            let g = |w: f64| -> Result<f64> {
                Ok(besq_density_dx(ctx.delta_star, n1, ctx.t, y1, w)?
                    * ctx.boundary_sum(n2, w, &qf))
            };
            let integral = integrate_result_split(&g, lo, hi, &ctx.kinks(n2), INT_TOL)?;
            Ok(jump_term(n1, y1, n2, y2) + integral)
        }
    };
    Ok(ExtendedKernel::new(
        Box::new(evaluator),
        IndexDomain::Levels((1..=n).collect()),
        Side::Down,
    ))
}

/// Monte Carlo evaluation of one entry of the squared-Bessel array kernel,
/// replacing the closed-form boundary sum by stopped-walk sampling with
/// common random numbers across the quadrature grid.  Returns
/// `(estimate, standard error)` from 16 batch means.
pub fn bessel_array_kernel_mc(
    cfg: &KernelConfig,
    p1: (usize, f64),
    p2: (usize, f64),
    walks: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    const BATCHES: usize = 16;
    let ctx = BesselCtx::new(cfg)?;
    let (n1, y1) = p1;
    let (n2, y2) = p2;
    let n = cfg.n();
    if n1 == 0 || n1 > n || n2 == 0 || n2 > n {
        return Err(Error::InvalidArgument(format!(
            "level pair ({n1}, {n2}) outside 1..={n}"
        )));
    }
    let per_batch = walks / BATCHES;
    if per_batch < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} walks for {BATCHES} batches",
            2 * BATCHES
        )));
    }

    // Quadrature grid: Gauss–Legendre panels between the kinks of the
    // boundary sum, truncated where the exact integrand dies out.
    let qf = ctx.qf_at(n2, y2);
    let lo = ctx.support_left(n2);
    let hi = ctx.upper_cut(n1, n2, y1, &qf)?;
    let mut cuts: Vec<f64> = vec![lo];
    for &k in &ctx.kinks(n2) {
        if k > lo && k < hi {
            cuts.push(k);
        }
    }
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut nodes: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for seg in cuts.windows(2) {
        let panels = 6;
        for p in 0..panels {
            let a = seg[0] + (seg[1] - seg[0]) * p as f64 / panels as f64;
            let b = seg[0] + (seg[1] - seg[0]) * (p + 1) as f64 / panels as f64;
            let (xs, ws) = gauss_legendre_on(16, a, b);
            nodes.extend(xs);
            weights.extend(ws);
        }
    }
    let dens: Vec<f64> = nodes
        .iter()
        .map(|&w| besq_density_dx(ctx.delta_star, n1, ctx.t, y1, w))
        .collect::<Result<_>>()?;

    // Flowed monomials at y2 give the payoff polynomial in R_τ: expanding
    // (R - y2)^m/m! and flowing y2^p term by term yields coefficients
    // coef_τ[d] of R^d, with m = n2 - 1 - τ.
    let fm: Vec<f64> = (0..n2)
        .map(|p| flow(&cfg.sys, n2, -ctx.t, &Poly::monomial(p, 1.0)).map(|q| q.eval(y2)))
        .collect::<Result<_>>()?;
    let mut coef: Vec<Vec<f64>> = Vec::with_capacity(n2);
    for tau in 0..n2 {
        let m = n2 - 1 - tau;
        let mut c = vec![0.0; m + 1];
        for (d, cd) in c.iter_mut().enumerate() {
            let p = m - d;
            *cd = if p % 2 == 0 { 1.0 } else { -1.0 }
                * inv_factorial(p)
                * inv_factorial(d)
                * fm[p];
        }
        coef.push(c);
    }

    let jump = jump_term(n1, y1, n2, y2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch_vals = Vec::with_capacity(BATCHES);
    let mut gsum = vec![0.0f64; n2]; // partial sums of the walk increments
    let mut egsum = vec![0.0f64; n2]; // e^{G_k}
    let mut acc = vec![0.0f64; nodes.len()];
    for _ in 0..BATCHES {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..per_batch {
            gsum[0] = 0.0;
            egsum[0] = 1.0;
            for k in 1..n2 {
                let e: f64 = rng.sample(Exp1);
                gsum[k] = gsum[k - 1] + e;
                egsum[k] = gsum[k].exp();
            }
            for (i, &w) in nodes.iter().enumerate() {
                for tau in 0..n2 {
                    let r = w - gsum[tau];
                    if r >= cfg.x[tau] {
                        // Horner evaluation of the payoff polynomial at R_τ.
                        let c = &coef[tau];
                        let mut v = 0.0;
                        for &cd in c.iter().rev() {
                            v = v * r + cd;
                        }
                        acc[i] += egsum[tau] * v;
                        break;
                    }
                }
            }
        }
        let mut val = 0.0;
        for i in 0..nodes.len() {
            val += weights[i] * dens[i] * acc[i] / per_batch as f64;
        }
        batch_vals.push(jump + val);
    }
    let mean = batch_vals.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (BATCHES - 1) as f64;
    Ok((mean, (var / BATCHES as f64).sqrt()))
}

/// Max-abs discrepancy, over a z-grid, of the semigroup/antiderivative
/// commutation relation for squared-Bessel densities:
///
/// ```text
/// (∂^{-k} e^{tB^{(θ)}}(x, ·))(z)  =  ∫_x^∞ e^{tB^{(4-θ-2k)}}(z, y) (y-x)^{k-1}/(k-1)! dy.
/// ```
pub fn bessel_commutation_check(theta: f64, k: usize, t: f64, x: f64) -> Result<f64> {
    if theta < 2.0 {
        return Err(Error::InvalidModel(format!(
            "commutation check needs dimension θ ≥ 2, got {theta}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("antiderivative order k must be ≥ 1".into()));
    }
    if t.is_nan() || t <= 0.0 || x.is_nan() || x <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "commutation check needs t > 0 and x > 0, got t = {t}, x = {x}"
        )));
    }
    let dual = 4.0 - theta - 2.0 * k as f64;
    let spread = (4.0 * x * t + (theta + 4.0) * t * t).sqrt();
    let z_hi = x + theta * t + 6.0 * spread;
    let fac = inv_factorial(k - 1);
    let mut worst = 0.0f64;
    for j in 1..=12 {
        let z = z_hi * j as f64 / 12.0;
        // Left side: k-fold antiderivative from 0 of the dimension-θ density.
        let f = |w: f64| besq_density(theta, t, x, w);
        let lhs = {
            let g = |w: f64| Ok(f(w)? * (z - w).powi((k - 1) as i32) * fac);
            integrate_result(&g, 0.0, z, INT_TOL)?
        };
        // Right side: dual-dimension density from z against the k-fold
        // antiderivative of the point mass at x.
        let g = |y: f64| Ok(besq_density(dual, t, z, y)? * (y - x).powi((k - 1) as i32) * fac);
        let hi = truncated_endpoint(&g, z.max(x), 1.0, spread.max(2.0 * t))?;
        let rhs = integrate_result(&g, x, hi, INT_TOL)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pearson::{LevelSystem, PearsonSpec};

    fn besq_cfg(n: usize, theta: f64, x: Vec<f64>, t: f64) -> KernelConfig {
        let sys = LevelSystem::new(PearsonSpec::squared_bessel(theta), n).unwrap();
        KernelConfig::new(sys, x, Side::Down, Some(t)).unwrap()
    }

    #[test]
    fn walk_depth_one_is_an_indicator() {
        // n = 1: q_0 ≡ 1 and the sum is 1{y1 > x_1}.
        let x = [1.5];
        assert_eq!(rw_expectation(&x, 1, 2.0, 0.3).unwrap(), 1.0);
        assert_eq!(rw_expectation(&x, 1, 1.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn walk_started_above_the_first_barrier_is_deterministic() {
        // y1 ≥ x_1 stops at τ = 0 with payoff (y1-y2)^{n-1}/(n-1)!.
        let x = [2.0, 1.1, 0.4];
        let (y1, y2) = (2.6_f64, 0.9_f64);
        let want = (y1 - y2).powi(2) / 2.0;
        let closed = rw_expectation(&x, 3, y1, y2).unwrap();
        let (mc, se) = rw_expectation_mc(&x, 3, y1, y2, 500, 7).unwrap();
        assert!((closed - want).abs() < 1e-12, "closed {closed} vs {want}");
        assert!((mc - want).abs() < 1e-12 && se == 0.0, "mc {mc} ± {se}");
    }

    #[test]
    fn walk_closed_form_matches_monte_carlo() {
        let x = [2.0, 1.1, 0.4];
        for &(y1, y2) in &[(0.8, 0.3), (1.5, 0.9), (0.2, 1.0)] {
            let closed = rw_expectation(&x, 3, y1, y2).unwrap();
            let (mc, se) = rw_expectation_mc(&x, 3, y1, y2, 100_000, 42).unwrap();
            assert!(
                (closed - mc).abs() < 4.0 * se.max(1e-6),
                "y1={y1} y2={y2}: closed {closed} vs mc {mc} ± {se}"
            );
        }
    }

    #[test]
    fn commutation_identity_holds() {
        let d1 = bessel_commutation_check(2.0, 1, 0.4, 1.0).unwrap();
        assert!(d1 < 1e-6, "k=1 θ=2: {d1}");
        let d2 = bessel_commutation_check(4.0, 2, 0.3, 0.8).unwrap();
        assert!(d2 < 1e-6, "k=2 θ=4: {d2}");
    }

    #[test]
    fn kernel_rejects_low_dimension_and_wrong_family() {
        let sys = LevelSystem::new(PearsonSpec::squared_bessel(1.5), 2).unwrap();
        let cfg = KernelConfig::new(sys, vec![1.0, 0.5], Side::Down, Some(0.4)).unwrap();
        assert!(matches!(bessel_array_kernel(&cfg), Err(Error::InvalidModel(_))));
        let bsys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.0), 2).unwrap();
        let bcfg = KernelConfig::new(bsys, vec![1.0, 0.5], Side::Down, Some(0.4)).unwrap();
        assert!(matches!(bessel_array_kernel(&bcfg), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn path_integral_relation_between_levels() {
        // B[(n1,y); (n2,y2)] = -(∂^{-(n2-n1)})(y, y2) 1{n2>n1}
        //                     + (∂^{-(n2-n1)} B[(n2,·); (n2,y2)])(y):
        // integrating the diagonal block from the left boundary recovers the
        // off-diagonal block.
        let cfg = besq_cfg(2, 3.0, vec![1.4, 0.6], 0.35);
        let kern = bessel_array_kernel(&cfg).unwrap();
        for &(y1, y2) in &[(0.9, 0.5), (1.8, 1.1), (0.4, 1.6)] {
            let direct = kern
                .eval((KernelIndex::Level(1), y1), (KernelIndex::Level(2), y2))
                .unwrap();
            let g = |u: f64| {
                kern.eval((KernelIndex::Level(2), u), (KernelIndex::Level(2), y2))
            };
            let integral = integrate_result(&g, 0.0, y1, 1e-8).unwrap();
            let jump = if y2 < y1 { -1.0 } else { 0.0 };
            let want = jump + integral;
            assert!(
                (direct - want).abs() < 1e-5,
                "y1={y1} y2={y2}: {direct} vs {want}"
            );
        }
    }

    #[test]
    fn random_walk_kernel_matches_the_biorthogonal_kernel() {
        // Two constructions of the same kernel that share nothing: the Ψ/Φ
        // sum over per-level biorthogonal families, versus the stopped-walk
        // boundary sum sandwiched between dual-dimension semigroups.
        let cfg = besq_cfg(3, 3.0, vec![2.2, 1.0, 0.5], 0.3);
        let sum_kern = crate::kernels::array_kernel(&cfg, Side::Down).unwrap();
        let walk_kern = bessel_array_kernel(&cfg).unwrap();
        for n1 in 1..=3usize {
            for n2 in 1..=3usize {
                for &y1 in &[0.4, 1.3, 2.6] {
                    for &y2 in &[0.6, 1.8] {
                        let a = sum_kern
                            .eval((KernelIndex::Level(n1), y1), (KernelIndex::Level(n2), y2))
                            .unwrap();
                        let b = walk_kern
                            .eval((KernelIndex::Level(n1), y1), (KernelIndex::Level(n2), y2))
                            .unwrap();
                        assert!(
                            (a - b).abs() < 1e-5 * (1.0 + a.abs()),
                            "({n1},{n2}) y1={y1} y2={y2}: {a} vs {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn monte_carlo_kernel_matches_exact() {
        let cfg = besq_cfg(3, 3.0, vec![2.2, 1.0, 0.5], 0.3);
        let kern = bessel_array_kernel(&cfg).unwrap();
        for &(n1, n2, y1, y2) in &[(2usize, 3usize, 1.2, 0.7), (1, 2, 0.8, 1.4)] {
            let exact = kern
                .eval((KernelIndex::Level(n1), y1), (KernelIndex::Level(n2), y2))
                .unwrap();
            let (mc, se) =
                bessel_array_kernel_mc(&cfg, (n1, y1), (n2, y2), 100_000, 2024).unwrap();
            assert!(
                (exact - mc).abs() < 4.0 * se.max(2e-4),
                "({n1},{n2}) y1={y1} y2={y2}: exact {exact} vs mc {mc} ± {se}"
            );
        }
    }
}
