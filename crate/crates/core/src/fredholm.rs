//! Fredholm determinants `det(I − χKχ)` on `L²({n_1,…,n_M} × (l,r))` by
//! block Nyström discretization.
//!
//! The restriction operator χ keeps, per selected level, the region on one
//! side of a threshold (`Side::Up`: above it, `Side::Down`: below it). Each
//! active region is truncated where the transition-density mass beyond the
//! cut falls under a configured budget, then discretized with composite
//! Gauss–Legendre panels whose boundaries include the other levels'
//! thresholds.
//!
//! The level-extended kernels of this crate split as `K = S + J`: a part `S`
//! that is smooth in both arguments plus the polynomial jump
//! `J = −(y₁−y₂)^{n₂−n₁−1}/(n₂−n₁−1)!·1{y₂<y₁}` between increasing levels.
//! The jump is discontinuous across `y₂ = y₁`, which would degrade plain
//! Nyström quadrature to algebraic convergence, so its action is instead
//! assembled by product integration: exactly against the panel-local
//! polynomial interpolant of the target block. Functions in the resolvent
//! chain are smooth inside every panel (their only kinks sit at the
//! thresholds, which are panel boundaries), so the determinant keeps
//! spectral convergence under node doubling.
//!
//! The determinant itself uses the symmetric weighting
//! `det(I − W¹ᐟ² K W¹ᐟ²)` — equal to `det(I − KW)` in exact arithmetic but
//! better conditioned — and dense LU. Convergence control doubles nodes
//! (and tightens the truncation) until two successive values agree within
//! the requested tolerance.

use crate::error::{Error, Result};
use crate::kernels::{
    integrate_result, inv_factorial, jump_term, provider_window, truncated_endpoint,
    ExtendedKernel, IndexDomain, KernelConfig, KernelIndex,
};
use crate::pearson::Side;
use crate::quad::gauss_legendre_on;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default node-doubling start (per level).
pub const DEFAULT_START_NODES: usize = 32;
/// Default node-doubling cap (per level).
pub const DEFAULT_MAX_NODES: usize = 2048;
/// Default density-mass budget beyond each truncation cut.
pub const DEFAULT_TAIL_MASS: f64 = 1e-12;

/// One Gauss–Legendre panel of a level's composite grid.
#[derive(Debug, Clone)]
struct Panel {
    lo: f64,
    hi: f64,
    /// Index of the panel's first node within the level's node list.
    start: usize,
    len: usize,
}

/// Per-level composite Gauss–Legendre discretization of the active regions.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    levels: Vec<usize>,
    side: Side,
    nodes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    bounds: Vec<(f64, f64)>,
    panels: Vec<Vec<Panel>>,
    nodes_per_level: usize,
}

impl QuadratureGrid {
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Nodes of level `levels()[j]`, all strictly inside its active region.
    pub fn nodes(&self, j: usize) -> &[f64] {
        &self.nodes[j]
    }

    /// Positive Gauss–Legendre weights matching `nodes(j)`.
    pub fn weights(&self, j: usize) -> &[f64] {
        &self.weights[j]
    }

    /// Truncated active interval of level `levels()[j]`.
    pub fn bounds(&self, j: usize) -> (f64, f64) {
        self.bounds[j]
    }

    /// Requested nodes per level (actual counts may exceed this slightly to
    /// honour panel minimums).
    pub fn nodes_per_level(&self) -> usize {
        self.nodes_per_level
    }
}

/// Thresholds, stopping rule, and refinement limits for [`converge`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FredholmConfig {
    /// Level subset the restriction acts on (strictly increasing, each in
    /// `1..=N`).
    pub levels: Vec<usize>,
    /// One threshold per selected level, inside the state interval.
    pub thresholds: Vec<f64>,
    /// Which side of each threshold is active: `Up` keeps `y > z`,
    /// `Down` keeps `y < z`.
    pub side: Side,
    /// Stop once two successive determinants differ by less than this.
    pub tol: f64,
    #[serde(default = "default_start_nodes")]
    pub start_nodes: usize,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    #[serde(default = "default_tail_mass")]
    pub tail_mass: f64,
}

fn default_start_nodes() -> usize {
    DEFAULT_START_NODES
}

fn default_max_nodes() -> usize {
    DEFAULT_MAX_NODES
}

fn default_tail_mass() -> f64 {
    DEFAULT_TAIL_MASS
}

impl FredholmConfig {
    pub fn new(levels: Vec<usize>, thresholds: Vec<f64>, side: Side, tol: f64) -> Self {
        FredholmConfig {
            levels,
            thresholds,
            side,
            tol,
            start_nodes: DEFAULT_START_NODES,
            max_nodes: DEFAULT_MAX_NODES,
            tail_mass: DEFAULT_TAIL_MASS,
        }
    }
}

/// Converged determinant value with its refinement history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetReport {
    /// Final determinant value.
    pub value: f64,
    /// Nodes per level at the final refinement.
    pub nodes: usize,
    /// Final truncated active interval per selected level.
    pub truncation: Vec<(f64, f64)>,
    /// Determinant value at each refinement, coarsest first.
    pub trace: Vec<f64>,
}

/// Farthest truncation cut (and the largest window scale met on the way)
/// over every (level, start) transition density of the system, so the
/// slowest-decaying level density governs all blocks. `side` is the active
/// side of the thresholds: `Up` probes right tails, `Down` left tails. A
/// finite interval endpoint on the probed side needs no truncation at all.
fn truncation_cut(cfg: &KernelConfig, side: Side, tail_mass: f64) -> Result<(f64, f64)> {
    let t = cfg.fixed_time()?;
    let dir = match side {
        Side::Up => 1.0,
        Side::Down => -1.0,
    };
    let hard = match side {
        Side::Up => cfg.sys.spec.r,
        Side::Down => cfg.sys.spec.l,
    };
    let n = cfg.n();
    let share = tail_mass / (n * n) as f64;
    let mut cut = -dir * f64::INFINITY;
    let mut scale_max: f64 = 0.0;
    for g in 1..=n {
        let p = cfg.sys.provider(g)?;
        for &xi in &cfg.x {
            let w = provider_window(&p, t, xi)?;
            scale_max = scale_max.max(w.scale);
            if hard.is_finite() {
                // The state interval already ends on this side (e.g. squared
                // Bessel probed leftward): no density mass lies beyond it,
                // so no truncation is needed.
                continue;
            }
            let f = |y: f64| p.density(t, xi, y);
            let far = truncated_endpoint(&f, w.center, dir, w.scale)?;
            let mut cand = f64::NAN;
            for j in 0..60 {
                cand = w.center + dir * w.scale * (2.0f64).powi(j);
                if (far - cand) * dir <= 0.0 {
                    break; // beyond the probe endpoint: negligible by construction
                }
                let (a, b) = if dir > 0.0 { (cand, far) } else { (far, cand) };
                if integrate_result(&f, a, b, 0.1 * share)?.abs() < share {
                    break;
                }
                if j == 59 {
                    return Err(Error::TruncationFailure(format!(
                        "tail mass of the level-{g} density from {xi} never fell below {share:e}"
                    )));
                }
            }
            if (cand - cut) * dir > 0.0 {
                cut = cand;
            }
        }
    }
    if hard.is_finite() {
        cut = hard;
    }
    Ok((cut, scale_max))
}

/// Minimum Gauss–Legendre nodes per panel.
const MIN_PANEL_NODES: usize = 6;

/// Build per-level composite Gauss–Legendre grids on the truncated active
/// regions `[z_j, R]` (side `Up`) or `[L, z_j]` (side `Down`), with the cut
/// chosen so the transition-density mass beyond it stays under `tail_mass`.
/// Panel boundaries include every other level's threshold that falls inside
/// an active region, keeping all resolvent kinks on panel edges.
pub fn build_grid(
    cfg: &KernelConfig,
    levels: &[usize],
    thresholds: &[f64],
    side: Side,
    nodes_per_level: usize,
    tail_mass: f64,
) -> Result<QuadratureGrid> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one level".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) || levels[0] < 1 || *levels.last().unwrap() > cfg.n()
    {
        return Err(Error::InvalidArgument(format!(
            "levels must be strictly increasing within 1..={}, got {levels:?}",
            cfg.n()
        )));
    }
    if thresholds.len() != levels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} levels need {} thresholds, got {}",
            levels.len(),
            levels.len(),
            thresholds.len()
        )));
    }
    let (l, r) = (cfg.sys.spec.l, cfg.sys.spec.r);
    if thresholds.iter().any(|z| !z.is_finite() || *z <= l || *z >= r) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must lie inside ({l}, {r}), got {thresholds:?}"
        )));
    }
    if nodes_per_level < 2 * MIN_PANEL_NODES {
        return Err(Error::InvalidArgument(format!(
            "need at least {} nodes per level",
            2 * MIN_PANEL_NODES
        )));
    }
    if tail_mass.is_nan() || tail_mass <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tail mass budget must be > 0, got {tail_mass}"
        )));
    }
    let (cut, scale) = truncation_cut(cfg, side, tail_mass)?;
    let mut nodes = Vec::with_capacity(levels.len());
    let mut weights = Vec::with_capacity(levels.len());
    let mut bounds = Vec::with_capacity(levels.len());
    let mut panels = Vec::with_capacity(levels.len());
    for &z in thresholds {
        // Keep the interval nonempty even when the threshold sits beyond the
        // cut (the active region then carries no mass and the block ≈ 0).
        let (a, b) = match side {
            Side::Up => (z, cut.max(z + 0.05 * scale).min(r)),
            Side::Down => (cut.min(z - 0.05 * scale).max(l), z),
        };
        let mut edges = vec![a];
        let mut inner: Vec<f64> = thresholds
            .iter()
            .copied()
            .filter(|&w| w > a + 1e-12 * scale && w < b - 1e-12 * scale)
            .collect();
        inner.sort_by(|p, q| p.total_cmp(q));
        inner.dedup_by(|p, q| (*p - *q).abs() <= 1e-12 * scale);
        edges.extend(inner);
        edges.push(b);
        let total: f64 = b - a;
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        let mut ps = Vec::new();
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let share = ((nodes_per_level as f64) * (hi - lo) / total).ceil() as usize;
            let k = share.max(MIN_PANEL_NODES);
            let (py, pw) = gauss_legendre_on(k, lo, hi);
            ps.push(Panel { lo, hi, start: ys.len(), len: k });
            ys.extend(py);
            ws.extend(pw);
        }
        nodes.push(ys);
        weights.push(ws);
        bounds.push((a, b));
        panels.push(ps);
    }
    Ok(QuadratureGrid {
        levels: levels.to_vec(),
        side,
        nodes,
        weights,
        bounds,
        panels,
        nodes_per_level,
    })
}

/// Barycentric interpolation weights for the panel's nodes mapped to
/// [−1, 1], normalized to unit peak magnitude (the barycentric formula is
/// scale invariant). Computed in log space to stay finite at high orders.
fn barycentric_weights(xi: &[f64]) -> Vec<f64> {
    let k = xi.len();
    let mut logs = vec![0.0f64; k];
    let mut signs = vec![1.0f64; k];
    for q in 0..k {
        let mut lg = 0.0;
        let mut sg = 1.0;
        for r in 0..k {
            if r != q {
                let d = xi[q] - xi[r];
                lg -= d.abs().ln();
                if d < 0.0 {
                    sg = -sg;
                }
            }
        }
        logs[q] = lg;
        signs[q] = sg;
    }
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..k).map(|q| signs[q] * (logs[q] - peak).exp()).collect()
}

/// Values of every Lagrange basis polynomial of the panel (nodes `xi`,
/// barycentric weights `lam`, reference coordinates) at reference point `v`.
fn lagrange_row(xi: &[f64], lam: &[f64], v: f64, out: &mut [f64]) {
    if let Some(hit) = xi.iter().position(|&x| (v - x).abs() < 1e-14) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[hit] = 1.0;
        return;
    }
    let mut s = 0.0;
    for (o, (&x, &la)) in out.iter_mut().zip(xi.iter().zip(lam)) {
        *o = la / (v - x);
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Interpolation machinery of one target panel: its nodes in reference
/// coordinates, barycentric weights, and an auxiliary Gauss–Legendre rule
/// covering the whole panel with every Lagrange basis value pretabulated.
struct PanelRule {
    lo: f64,
    hi: f64,
    xi: Vec<f64>,
    lam: Vec<f64>,
    n_aux: usize,
    /// Full-panel auxiliary nodes.
    vs: Vec<f64>,
    /// Full-panel auxiliary weights times Lagrange basis values:
    /// `full[s][q] = ω_s · ℓ_q(v_s)`.
    full: Vec<Vec<f64>>,
}

impl PanelRule {
    fn build(panel: &Panel, level_nodes: &[f64], max_jump_order: usize) -> PanelRule {
        let k = panel.len;
        let half = 0.5 * (panel.hi - panel.lo);
        let mid = 0.5 * (panel.hi + panel.lo);
        let xi: Vec<f64> = level_nodes[panel.start..panel.start + k]
            .iter()
            .map(|&u| (u - mid) / half)
            .collect();
        let lam = barycentric_weights(&xi);
        let n_aux = (k + max_jump_order) / 2 + 1;
        let (vs, omegas) = gauss_legendre_on(n_aux, panel.lo, panel.hi);
        let mut full = Vec::with_capacity(n_aux);
        let mut ell = vec![0.0; k];
        for (&v, &omega) in vs.iter().zip(&omegas) {
            lagrange_row(&xi, &lam, (v - mid) / half, &mut ell);
            full.push(ell.iter().map(|&e| omega * e).collect());
        }
        PanelRule { lo: panel.lo, hi: panel.hi, xi, lam, n_aux, vs, full }
    }

    /// Product-integration weights of the jump against this panel:
    /// `out[q] = ∫ J(y1, u) ℓ_q(u) du` over `[lo, min(y1, hi)]` with
    /// `J(y1, u) = −(y1−u)^m/m!`. Exact for the polynomial integrand.
    fn jump_row(&self, y1: f64, m: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if y1 <= self.lo {
            return;
        }
        if y1 >= self.hi {
            for (s, row) in self.full.iter().enumerate() {
                let j = -(y1 - self.vs[s]).powi(m as i32) * inv_factorial(m);
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += j * w;
                }
            }
            return;
        }
        let (vs, omegas) = gauss_legendre_on(self.n_aux, self.lo, y1);
        let half = 0.5 * (self.hi - self.lo);
        let mid = 0.5 * (self.hi + self.lo);
        let mut ell = vec![0.0; self.xi.len()];
        for (&v, &omega) in vs.iter().zip(&omegas) {
            lagrange_row(&self.xi, &self.lam, (v - mid) / half, &mut ell);
            let j = -(y1 - v).powi(m as i32) * inv_factorial(m);
            for (o, &e) in out.iter_mut().zip(&ell) {
                *o += omega * j * e;
            }
        }
    }
}

/// `det(I − W¹ᐟ² K W¹ᐟ²)` over all (level, node) pairs of the grid, by
/// dense LU. The smooth part of the kernel is sampled pointwise; the
/// inter-level polynomial jump is assembled by product integration (see the
/// module docs). Entry assembly parallelizes; the factorization is
/// sequential.
pub fn fredholm_det(kernel: &ExtendedKernel, grid: &QuadratureGrid) -> Result<f64> {
    if matches!(kernel.domain(), IndexDomain::Times(_)) {
        return Err(Error::InvalidArgument(
            "the Fredholm determinant needs a level-indexed kernel".into(),
        ));
    }
    let mut flat = Vec::new();
    let mut level_offset = vec![0usize; grid.levels.len()];
    for (j, &lv) in grid.levels.iter().enumerate() {
        level_offset[j] = flat.len();
        for (&y, &w) in grid.nodes[j].iter().zip(&grid.weights[j]) {
            flat.push((lv, y, w.sqrt()));
        }
    }
    let m = flat.len();
    // Smooth part: kernel minus its jump, sampled at node pairs.
    let mut data = (0..m * m)
        .into_par_iter()
        .map(|k| {
            let (q, p) = (k / m, k % m);
            let (l1, y1, s1) = flat[p];
            let (l2, y2, s2) = flat[q];
            let v = kernel.eval((KernelIndex::Level(l1), y1), (KernelIndex::Level(l2), y2))?
                - jump_term(l1, y1, l2, y2);
            Ok(if p == q { 1.0 - s1 * s2 * v } else { -s1 * s2 * v })
        })
        .collect::<Result<Vec<f64>>>()?;
    // Jump part: exact action on the panel-local interpolants.
    let max_order = grid.levels.last().unwrap().saturating_sub(grid.levels[0] + 1);
    for (j2, &l2) in grid.levels.iter().enumerate() {
        if l2 <= grid.levels[0] {
            continue; // no lower level can jump into this one
        }
        for panel in &grid.panels[j2] {
            let rule = PanelRule::build(panel, &grid.nodes[j2], max_order);
            let mut row = vec![0.0; panel.len];
            for (p, &(l1, y1, s1)) in flat.iter().enumerate() {
                if l2 <= l1 {
                    continue;
                }
                rule.jump_row(y1, l2 - l1 - 1, &mut row);
                for (i, &c) in row.iter().enumerate() {
                    let q = level_offset[j2] + panel.start + i;
                    data[q * m + p] -= s1 * c / flat[q].2;
                }
            }
        }
    }
    Ok(DMatrix::from_vec(m, m, data).determinant())
}

/// Refine until two successive determinants differ by less than `fc.tol`:
/// each round doubles the nodes per level and quarters the tail-mass budget
/// (pushing the truncation cut outward). Errors with
/// [`Error::FredholmNoConvergence`] once the node cap is hit.
pub fn converge(
    cfg: &KernelConfig,
    kernel: &ExtendedKernel,
    fc: &FredholmConfig,
) -> Result<DetReport> {
    if fc.tol.is_nan() || fc.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {}", fc.tol)));
    }
    if fc.start_nodes < 2 * MIN_PANEL_NODES || fc.max_nodes < fc.start_nodes {
        return Err(Error::InvalidArgument(format!(
            "need {} ≤ start_nodes ≤ max_nodes, got {} and {}",
            2 * MIN_PANEL_NODES,
            fc.start_nodes,
            fc.max_nodes
        )));
    }
    for &lv in &fc.levels {
        if !kernel.domain().contains(KernelIndex::Level(lv)) {
            return Err(Error::InvalidArgument(format!(
                "kernel domain does not contain level {lv}"
            )));
        }
    }
    let mut nodes = fc.start_nodes;
    let mut mass = fc.tail_mass;
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    loop {
        let grid = build_grid(cfg, &fc.levels, &fc.thresholds, fc.side, nodes, mass)?;
        let value = fredholm_det(kernel, &grid)?;
        trace.push(value);
        if let Some(p) = prev {
            let delta = (value - p).abs();
            if delta < fc.tol {
                return Ok(DetReport {
                    value,
                    nodes,
                    truncation: (0..fc.levels.len()).map(|j| grid.bounds(j)).collect(),
                    trace,
                });
            }
            if nodes >= fc.max_nodes {
                return Err(Error::FredholmNoConvergence { delta, nodes });
            }
        } else if nodes >= fc.max_nodes {
            return Err(Error::FredholmNoConvergence { delta: f64::INFINITY, nodes });
        }
        prev = Some(value);
        nodes = (nodes * 2).min(fc.max_nodes);
        mass = (mass * 0.25).max(1e-300);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{array_kernel, collision_density};
    use crate::pearson::{LevelSystem, PearsonSpec};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn brownian_cfg(n: usize, x: Vec<f64>, t: f64) -> KernelConfig {
        let sys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.0), n).unwrap();
        KernelConfig::new(sys, x, Side::Up, Some(t)).unwrap()
    }

    fn besq_cfg(n: usize, theta: f64, x: Vec<f64>, t: f64) -> KernelConfig {
        let sys = LevelSystem::new(PearsonSpec::squared_bessel(theta), n).unwrap();
        KernelConfig::new(sys, x, Side::Down, Some(t)).unwrap()
    }

    #[test]
    fn rank_one_kernel_has_closed_form_determinant() {
        // K(y1, y2) = u(y1)·1 makes the Nyström matrix rank one, so
        // det(I − M) = 1 − Σ w_i u(y_i) exactly.
        let cfg = brownian_cfg(1, vec![0.0], 1.0);
        let kern = ExtendedKernel::new(
            Box::new(|(_, y1), (_, _)| Ok((-y1 * y1).exp())),
            IndexDomain::Levels(vec![1]),
            Side::Up,
        );
        let grid = build_grid(&cfg, &[1], &[0.0], Side::Up, 64, 1e-12).unwrap();
        let det = fredholm_det(&kern, &grid).unwrap();
        let s: f64 = grid
            .nodes(0)
            .iter()
            .zip(grid.weights(0))
            .map(|(&y, &w)| w * (-y * y).exp())
            .sum();
        assert!((det - (1.0 - s)).abs() < 1e-12, "{det} vs {}", 1.0 - s);
    }

    #[test]
    fn single_particle_determinant_is_the_gaussian_cdf() {
        // One Brownian particle: the kernel is rank one and the determinant
        // is P(X_t ≤ z) = Φ((z − x₁)/√t).
        let cfg = brownian_cfg(1, vec![0.3], 0.8);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let gauss = Normal::new(0.0, 1.0).unwrap();
        for z in [-0.5, 0.3, 1.5] {
            let fc = FredholmConfig::new(vec![1], vec![z], Side::Up, 1e-9);
            let rep = converge(&cfg, &kern, &fc).unwrap();
            let exact = gauss.cdf((z - 0.3) / 0.8f64.sqrt());
            assert!(
                (rep.value - exact).abs() < 1e-6,
                "z={z}: {} vs {exact}",
                rep.value
            );
        }
    }

    #[test]
    fn two_level_determinant_matches_collision_density_quadrature() {
        // Independent oracle for the inter-level jump handling: the joint
        // law P(x₁ ≤ z₁, x₂ ≤ z₂) of the two-particle pushed system equals
        // the 2-d integral of its transition density over the corner region.
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let (z1, z2) = (0.35, 0.9);
        let fc = FredholmConfig::new(vec![1, 2], vec![z1, z2], Side::Up, 1e-9);
        let det = converge(&cfg, &kern, &fc).unwrap().value;
        let lo = -0.3 - 8.0 * 0.5f64.sqrt();
        let inner = |y2: f64| {
            integrate_result(
                &|y1: f64| collision_density(&cfg, Side::Up, &[y1, y2]),
                lo,
                z1.min(y2),
                1e-9,
            )
        };
        let exact = integrate_result(&|y2: f64| inner(y2), lo, z2, 1e-8).unwrap();
        assert!((det - exact).abs() < 1e-5, "{det} vs {exact}");
    }

    #[test]
    fn doubling_past_convergence_barely_moves_the_value() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let fc = FredholmConfig::new(vec![1, 2], vec![0.2, 0.9], Side::Up, 1e-9);
        let rep = converge(&cfg, &kern, &fc).unwrap();
        let grid =
            build_grid(&cfg, &[1, 2], &[0.2, 0.9], Side::Up, 2 * rep.nodes, 1e-13).unwrap();
        let refined = fredholm_det(&kern, &grid).unwrap();
        assert!(
            (refined - rep.value).abs() < 1e-7,
            "{refined} vs {}",
            rep.value
        );
    }

    #[test]
    fn near_empty_active_region_gives_determinant_one() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let fc = FredholmConfig::new(vec![1, 2], vec![9.0, 9.5], Side::Up, 1e-9);
        let rep = converge(&cfg, &kern, &fc).unwrap();
        assert!((rep.value - 1.0).abs() < 1e-8, "{}", rep.value);
    }

    #[test]
    fn grid_respects_side_constraints_and_weight_positivity() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let grid = build_grid(&cfg, &[1, 2], &[0.1, 0.6], Side::Up, 48, 1e-12).unwrap();
        for j in 0..2 {
            let z = [0.1, 0.6][j];
            assert!(grid.nodes(j).iter().all(|&y| y > z));
            assert!(grid.weights(j).iter().all(|&w| w > 0.0));
            let (a, b) = grid.bounds(j);
            assert!(a == z && b > a);
        }
        let besq = besq_cfg(2, 3.0, vec![2.0, 0.8], 0.4);
        let grid = build_grid(&besq, &[1, 2], &[0.5, 0.7], Side::Down, 48, 1e-12).unwrap();
        for j in 0..2 {
            let z = [0.5, 0.7][j];
            assert!(grid.nodes(j).iter().all(|&y| y < z && y > 0.0));
            // Squared Bessel needs no left truncation beyond the origin.
            assert_eq!(grid.bounds(j).0, 0.0);
        }
    }

    #[test]
    fn determinant_is_monotone_in_each_threshold() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let det_at = |z1: f64, z2: f64| {
            let fc = FredholmConfig::new(vec![1, 2], vec![z1, z2], Side::Up, 1e-8);
            converge(&cfg, &kern, &fc).unwrap().value
        };
        let mut prev = det_at(0.3, -0.5);
        for z2 in [0.0, 0.5, 1.0, 1.8] {
            let d = det_at(0.3, z2);
            assert!(d >= prev - 1e-8, "z2={z2}: {d} < {prev}");
            prev = d;
        }
        let mut prev = det_at(-1.2, 0.8);
        for z1 in [-0.6, 0.0, 0.7] {
            let d = det_at(z1, 0.8);
            assert!(d >= prev - 1e-8, "z1={z1}: {d} < {prev}");
            prev = d;
        }
    }

    #[test]
    fn extreme_thresholds_reach_zero_and_one() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let low = FredholmConfig::new(vec![1, 2], vec![-6.0, -5.5], Side::Up, 1e-8);
        let high = FredholmConfig::new(vec![1, 2], vec![6.0, 6.5], Side::Up, 1e-8);
        let d_low = converge(&cfg, &kern, &low).unwrap().value;
        let d_high = converge(&cfg, &kern, &high).unwrap().value;
        assert!(d_low.abs() < 1e-3, "{d_low}");
        assert!((d_high - 1.0).abs() < 1e-8, "{d_high}");
    }

    #[test]
    fn single_level_restriction_matches_extreme_marginal() {
        // Dropping a level from the restriction equals sending its threshold
        // to the far end of the active side.
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let only = FredholmConfig::new(vec![2], vec![0.4], Side::Up, 1e-9);
        let padded = FredholmConfig::new(vec![1, 2], vec![8.0, 0.4], Side::Up, 1e-9);
        let a = converge(&cfg, &kern, &only).unwrap().value;
        let b = converge(&cfg, &kern, &padded).unwrap().value;
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn squared_bessel_down_determinants_are_probabilities() {
        // Active region below the threshold: the determinant is the
        // probability every particle sits above it, decreasing in z.
        let cfg = besq_cfg(2, 3.0, vec![2.0, 0.8], 0.4);
        let kern = array_kernel(&cfg, Side::Down).unwrap();
        let det_at = |z: f64| {
            let fc = FredholmConfig::new(vec![1, 2], vec![z, z], Side::Down, 1e-8);
            converge(&cfg, &kern, &fc).unwrap().value
        };
        let mut prev = f64::INFINITY;
        for z in [1e-4, 0.1, 0.3, 0.6, 1.0] {
            let d = det_at(z);
            assert!((-1e-8..=1.0 + 1e-8).contains(&d), "z={z}: {d}");
            assert!(d <= prev + 1e-8, "z={z}: {d} > {prev}");
            prev = d;
        }
        assert!((det_at(1e-4) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn node_cap_turns_into_a_convergence_error() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let mut fc = FredholmConfig::new(vec![1, 2], vec![0.2, 0.9], Side::Up, 1e-300);
        fc.start_nodes = 16;
        fc.max_nodes = 32;
        assert!(matches!(
            converge(&cfg, &kern, &fc),
            Err(Error::FredholmNoConvergence { nodes: 32, .. })
        ));
    }

    #[test]
    fn trace_length_grows_with_tighter_tolerance() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let run = |tol: f64| {
            let fc = FredholmConfig::new(vec![1, 2], vec![0.2, 0.9], Side::Up, tol);
            converge(&cfg, &kern, &fc).unwrap().trace.len()
        };
        let loose = run(0.5);
        let tight = run(1e-8);
        assert_eq!(loose, 2, "looser than the first delta stops after one refinement");
        assert!(tight >= loose);
    }

    #[test]
    fn identical_configurations_reproduce_identical_reports() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let fc = FredholmConfig::new(vec![1, 2], vec![0.2, 0.9], Side::Up, 1e-8);
        let a = converge(&cfg, &kern, &fc).unwrap();
        let b = converge(&cfg, &kern, &fc).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.trace.len(), b.trace.len());
    }

    #[test]
    fn bad_grid_requests_are_rejected() {
        let cfg = brownian_cfg(2, vec![-0.3, 0.4], 0.5);
        assert!(build_grid(&cfg, &[], &[], Side::Up, 32, 1e-12).is_err());
        assert!(build_grid(&cfg, &[2, 1], &[0.1, 0.2], Side::Up, 32, 1e-12).is_err());
        assert!(build_grid(&cfg, &[1, 3], &[0.1, 0.2], Side::Up, 32, 1e-12).is_err());
        assert!(build_grid(&cfg, &[1, 2], &[0.1], Side::Up, 32, 1e-12).is_err());
        assert!(build_grid(&cfg, &[1], &[f64::NAN], Side::Up, 32, 1e-12).is_err());
        assert!(build_grid(&cfg, &[1], &[0.1], Side::Up, 4, 1e-12).is_err());
        assert!(build_grid(&cfg, &[1], &[0.1], Side::Up, 32, 0.0).is_err());
        let besq = besq_cfg(2, 3.0, vec![2.0, 0.8], 0.4);
        assert!(build_grid(&besq, &[1], &[-0.5], Side::Down, 32, 1e-12).is_err());
        let kern = array_kernel(&cfg, Side::Up).unwrap();
        let fc = FredholmConfig::new(vec![3], vec![0.1], Side::Up, 1e-6);
        assert!(converge(&cfg, &kern, &fc).is_err());
    }
}
