//! Discretized dynamics: reflected chains, non-colliding diffusions,
//! interlacing arrays, and the uniform-array sampler feeding them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pearson::{LevelSystem, PearsonSpec, Side};

use super::{path_rng, sigma, truncate, ArraySamples, ArrayState, SamplePaths, SimConfig};

/// Halvings allowed per step of the non-colliding scheme before the path is
/// rejected (floor step `dt/2^10`).
const MAX_HALVINGS: i32 = 10;
/// Resamples allowed for one non-colliding path before giving up.
const MAX_RESAMPLES: u64 = 1_000;
/// Proposals allowed per level of the uniform-array rejection sampler.
const SAMPLER_BUDGET: usize = 100_000;
/// Tolerated fraction of rejected or discarded paths.
const REJECTION_BUDGET: f64 = 0.01;

fn check_initial(x0: &[f64], sys: &LevelSystem, what: &str) -> Result<()> {
    if x0.len() != sys.n {
        return Err(Error::InvalidArgument(format!(
            "{what} must have {} coordinates, got {}",
            sys.n,
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} must be finite")));
    }
    if x0.iter().any(|&v| v <= sys.spec.l || v >= sys.spec.r) {
        return Err(Error::InvalidArgument(format!(
            "{what} must lie inside the open state interval ({}, {})",
            sys.spec.l, sys.spec.r
        )));
    }
    Ok(())
}

fn check_chamber(x0: &[f64], side: Side) -> Result<()> {
    let ordered = match side {
        Side::Up => x0.windows(2).all(|w| w[0] <= w[1]),
        Side::Down => x0.windows(2).all(|w| w[0] >= w[1]),
    };
    if !ordered {
        return Err(Error::InvalidArgument(format!(
            "initial configuration must be ordered {} its chamber",
            match side {
                Side::Up => "nondecreasingly in",
                Side::Down => "nonincreasingly in",
            }
        )));
    }
    Ok(())
}

fn check_strictly_increasing(x0: &[f64], what: &str) -> Result<()> {
    if x0.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

/// Affine level drifts `(slope, intercept)` for levels `1..=N`.
fn drift_coeffs(sys: &LevelSystem) -> Result<Vec<(f64, f64)>> {
    (1..=sys.n).map(|k| sys.level_drift_coeffs(k)).collect()
}

/// Number of uniform Euler steps and their size for one recording segment.
fn segment_steps(dt: f64, from: f64, to: f64) -> (usize, f64) {
    let steps = ((to - from) / dt).ceil().max(1.0) as usize;
    (steps, (to - from) / steps as f64)
}

/// One Euler–Maruyama update with full-truncation coefficient evaluation.
fn euler_step(
    spec: &PearsonSpec,
    coeffs: (f64, f64),
    positivity: bool,
    x: f64,
    h: f64,
    sh: f64,
    z: f64,
) -> f64 {
    let xt = truncate(spec, positivity, x);
    let y = x + (coeffs.0 * xt + coeffs.1) * h + sigma(spec, xt) * sh * z;
    truncate(spec, positivity, y)
}

struct ReflectedPath {
    snaps: Vec<Vec<f64>>,
    pushed_steps: u64,
    total_steps: u64,
}

fn run_reflected_path(
    cfg: &SimConfig,
    side: Side,
    x0: &[f64],
    sys: &LevelSystem,
    coeffs: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> ReflectedPath {
    let mut x = x0.to_vec();
    let mut snaps = Vec::with_capacity(cfg.times.len());
    let (mut pushed_steps, mut total_steps) = (0u64, 0u64);
    let mut t_prev = 0.0;
    for &t in &cfg.times {
        let (steps, h) = segment_steps(cfg.dt, t_prev, t);
        let sh = h.sqrt();
        for _ in 0..steps {
            for (i, xi) in x.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *xi = euler_step(&sys.spec, coeffs[i], cfg.positivity, *xi, h, sh, z);
            }
            // Sequential one-sided projection: particle k only ever feels
            // particle k−1.
            let mut pushed = false;
            for k in 1..x.len() {
                let lo = x[k - 1];
                match side {
                    Side::Up if x[k] < lo => {
                        x[k] = lo;
                        pushed = true;
                    }
                    Side::Down if x[k] > lo => {
                        x[k] = lo;
                        pushed = true;
                    }
                    _ => {}
                }
            }
            total_steps += 1;
            pushed_steps += u64::from(pushed);
        }
        snaps.push(x.clone());
        t_prev = t;
    }
    ReflectedPath { snaps, pushed_steps, total_steps }
}

fn assemble_reflected(
    cfg: &SimConfig,
    n: usize,
    paths: Vec<ReflectedPath>,
) -> Result<SamplePaths> {
    let pushed: u64 = paths.iter().map(|p| p.pushed_steps).sum();
    let total: u64 = paths.iter().map(|p| p.total_steps).sum();
    if pushed as f64 > 0.5 * total as f64 {
        return Err(Error::StepTooLarge(format!(
            "ordering projection fired on {pushed} of {total} steps (> 50%); reduce dt"
        )));
    }
    let mut states = vec![Vec::with_capacity(paths.len()); cfg.times.len()];
    for path in paths {
        for (j, snap) in path.snaps.into_iter().enumerate() {
            states[j].push(snap);
        }
    }
    Ok(SamplePaths::new(cfg.clone(), n, states, 0))
}

/// Reflected chain in the chamber of `side`: particle `k` follows an Euler
/// scheme with drift `b^{(k)}` and noise `√(2a)`, then is projected onto
/// particle `k−1` (up: `x_k ← max(x_k, x_{k−1})`, down: the min). Errors
/// when the projection fires on more than half of all steps, the signature
/// of a step size too coarse for the crossing dynamics.
pub fn simulate_reflected(
    cfg: &SimConfig,
    side: Side,
    x0: &[f64],
    sys: &LevelSystem,
) -> Result<SamplePaths> {
    cfg.validate()?;
    cfg.require_times()?;
    check_initial(x0, sys, "initial configuration")?;
    check_chamber(x0, side)?;
    let coeffs = drift_coeffs(sys)?;
    let paths: Vec<ReflectedPath> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            run_reflected_path(cfg, side, x0, sys, &coeffs, &mut rng)
        })
        .collect();
    assemble_reflected(cfg, sys.n, paths)
}

/// Reflected chain whose initial condition is resampled per path: a
/// uniformly random interlacing array with top row `top` is projected onto
/// the edge matching `side`, and the reflected dynamics start there. This
/// is the initialization under which the edge laws match the non-colliding
/// top row started at `top`.
pub fn simulate_reflected_from_edge(
    cfg: &SimConfig,
    side: Side,
    top: &[f64],
    sys: &LevelSystem,
) -> Result<SamplePaths> {
    cfg.validate()?;
    cfg.require_times()?;
    check_initial(top, sys, "top row")?;
    check_strictly_increasing(top, "top row")?;
    let coeffs = drift_coeffs(sys)?;
    let paths: Vec<ReflectedPath> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<ReflectedPath> {
            let mut rng = path_rng(cfg.seed, p as u64);
            let arr = sample_uniform_array(top, &mut rng)?;
            let (up, down) = project_edges(&arr);
            let x0 = match side {
                Side::Up => up,
                Side::Down => down,
            };
            Ok(run_reflected_path(cfg, side, &x0, sys, &coeffs, &mut rng))
        })
        .collect::<Result<_>>()?;
    assemble_reflected(cfg, sys.n, paths)
}

/// Propose one non-colliding Euler step of size `h`; returns `false` (state
/// untouched) when the proposal violates strict ordering.
fn try_noncolliding_step(
    spec: &PearsonSpec,
    positivity: bool,
    z: &mut [f64],
    prop: &mut Vec<f64>,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> bool {
    let sh = h.sqrt();
    prop.clear();
    for (i, &zi) in z.iter().enumerate() {
        let zt = truncate(spec, positivity, zi);
        let mut repulsion = 0.0;
        for (j, &zj) in z.iter().enumerate() {
            if j != i {
                repulsion += 1.0 / (zi - zj);
            }
        }
        let drift = spec.b(zt) + 2.0 * spec.a(zt) * repulsion;
        let noise: f64 = rng.sample(StandardNormal);
        // The state is deliberately not clamped: strict order is the only
        // structural constraint and clamping could create ties.
        prop.push(zi + drift * h + sigma(spec, zt) * sh * noise);
    }
    if prop.windows(2).all(|w| w[0] < w[1]) {
        z.copy_from_slice(prop);
        true
    } else {
        false
    }
}

/// Non-colliding diffusions: strict ordering maintained by the singular
/// repulsion `2a(z_i) Σ_{j≠i} 1/(z_i−z_j)` on top of the base drift `b`.
/// Steps that cross the ordering are halved and retried down to `dt/2^10`;
/// below that the whole path restarts (the resample count is reported via
/// [`SamplePaths::rejected`]). Errors when more than 1% of attempted paths
/// are rejected.
pub fn simulate_noncolliding(
    cfg: &SimConfig,
    x0: &[f64],
    sys: &LevelSystem,
) -> Result<SamplePaths> {
    cfg.validate()?;
    cfg.require_times()?;
    check_initial(x0, sys, "initial configuration")?;
    check_strictly_increasing(x0, "initial configuration")?;
    let spec = &sys.spec;
    let paths: Vec<(Vec<Vec<f64>>, u64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<(Vec<Vec<f64>>, u64)> {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut rejections = 0u64;
            let mut prop = Vec::with_capacity(x0.len());
            'attempt: loop {
                let mut z = x0.to_vec();
                let mut snaps = Vec::with_capacity(cfg.times.len());
                let mut t_prev = 0.0;
                for &t in &cfg.times {
                    let (steps, h0) = segment_steps(cfg.dt, t_prev, t);
                    for _ in 0..steps {
                        // Dyadic tiling of the step: `done` accumulates
                        // exactly representable multiples of 2^-level.
                        let mut done = 0.0f64;
                        let mut level = 0i32;
                        while done < 1.0 {
                            let sub = h0 * 0.5f64.powi(level);
                            if try_noncolliding_step(spec, cfg.positivity, &mut z, &mut prop, sub, &mut rng)
                            {
                                done += 0.5f64.powi(level);
                            } else {
                                level += 1;
                                if level > MAX_HALVINGS {
                                    rejections += 1;
                                    if rejections > MAX_RESAMPLES {
                                        return Err(Error::RejectionBudget {
                                            rate: 1.0,
                                            budget: REJECTION_BUDGET,
                                            context: format!(
                                                "a path was resampled {MAX_RESAMPLES} times \
                                                 without completing; reduce dt"
                                            ),
                                        });
                                    }
                                    continue 'attempt;
                                }
                            }
                        }
                    }
                    snaps.push(z.clone());
                    t_prev = t;
                }
                return Ok((snaps, rejections));
            }
        })
        .collect::<Result<_>>()?;
    let rejections: u64 = paths.iter().map(|p| p.1).sum();
    let attempts = cfg.n_paths as u64 + rejections;
    let rate = rejections as f64 / attempts as f64;
    if rate > REJECTION_BUDGET {
        return Err(Error::RejectionBudget {
            rate,
            budget: REJECTION_BUDGET,
            context: "non-colliding path resampling".into(),
        });
    }
    let mut states = vec![Vec::with_capacity(cfg.n_paths); cfg.times.len()];
    for (snaps, _) in paths {
        for (j, snap) in snaps.into_iter().enumerate() {
            states[j].push(snap);
        }
    }
    Ok(SamplePaths::new(cfg.clone(), sys.n, states, rejections as usize))
}

/// Product of all pairwise gaps `∏_{i<j} (y_j − y_i)`.
fn vandermonde(y: &[f64]) -> f64 {
    let mut v = 1.0;
    for i in 0..y.len() {
        for j in (i + 1)..y.len() {
            v *= y[j] - y[i];
        }
    }
    v
}

/// Sample the row below `x` from the density proportional to the pairwise
/// gap product on the interlacing slots.
fn sample_level_below(x: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let m = x.len() - 1;
    // Factor-wise bound: y_j − y_i ≤ x_{j+1} − x_i on the slot box.
    let mut bound = 1.0;
    for i in 0..m {
        for j in (i + 1)..m {
            bound *= x[j + 1] - x[i];
        }
    }
    for _ in 0..SAMPLER_BUDGET {
        let y: Vec<f64> = (0..m).map(|i| rng.gen_range(x[i]..x[i + 1])).collect();
        if m < 2 || rng.gen::<f64>() < vandermonde(&y) / bound {
            return Ok(y);
        }
    }
    Err(Error::SamplerBudget(format!(
        "no proposal for a row of {m} coordinates accepted in {SAMPLER_BUDGET} tries; \
         the top row is too long or too degenerate for the factor-wise bound"
    )))
}

/// Uniformly random interlacing array with the given strictly increasing
/// top row. Each row conditioned on the one above has density proportional
/// to its pairwise gap product on the interlacing slots, sampled by
/// rejection with independent uniform slot proposals. The factor-wise
/// acceptance bound degrades combinatorially with the row length, so this
/// is intended for moderate array heights (budget errors otherwise).
pub fn sample_uniform_array(top: &[f64], rng: &mut ChaCha8Rng) -> Result<ArrayState> {
    if top.is_empty() {
        return Err(Error::InvalidArgument("top row must be nonempty".into()));
    }
    if top.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("top row must be finite".into()));
    }
    check_strictly_increasing(top, "top row")?;
    let n = top.len();
    let mut levels = vec![Vec::new(); n];
    levels[n - 1] = top.to_vec();
    for k in (1..n).rev() {
        levels[k - 1] = sample_level_below(&levels[k], rng)?;
    }
    ArrayState::new(levels)
}

/// Edge projections of an interlacing array: the nondecreasing right edge
/// `(x^{(1)}_1, x^{(2)}_2, …, x^{(N)}_N)` and the nonincreasing left edge
/// `(x^{(1)}_1, x^{(2)}_1, …, x^{(N)}_1)`.
pub fn project_edges(a: &ArrayState) -> (Vec<f64>, Vec<f64>) {
    let up = (1..=a.n()).map(|k| a.level(k).expect("valid level")[k - 1]).collect();
    let down = (1..=a.n()).map(|k| a.level(k).expect("valid level")[0]).collect();
    (up, down)
}

/// March one array path over all recording times; `None` when an interior
/// level collides (the discrete analogue of the collision stopping time).
#[allow(clippy::needless_range_loop)]
fn run_array_path(
    cfg: &SimConfig,
    top0: &[f64],
    sys: &LevelSystem,
    coeffs: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<ArrayState>>> {
    let n = sys.n;
    let mut lv = sample_uniform_array(top0, rng)?.into_levels();
    let mut snaps = Vec::with_capacity(cfg.times.len());
    let mut t_prev = 0.0;
    for &t in &cfg.times {
        let (steps, h) = segment_steps(cfg.dt, t_prev, t);
        let sh = h.sqrt();
        for _ in 0..steps {
            for k in 1..=n {
                // Split so the already-updated level k−1 stays readable
                // while level k is updated.
                let (below, cur) = lv.split_at_mut(k - 1);
                let prev = below.last().map(Vec::as_slice);
                let row = &mut cur[0];
                for i in 0..k {
                    let z: f64 = rng.sample(StandardNormal);
                    row[i] = euler_step(&sys.spec, coeffs[k - 1], cfg.positivity, row[i], h, sh, z);
                    if let Some(prev) = prev {
                        // Push up from the lower-left neighbour first, then
                        // down from the lower-right one.
                        if i >= 1 && row[i] < prev[i - 1] {
                            row[i] = prev[i - 1];
                        }
                        if i <= k - 2 && row[i] > prev[i] {
                            row[i] = prev[i];
                        }
                    }
                }
                // A tie on an interior level means a coordinate was pushed
                // from both sides at once: the path is stopped.
                if k >= 2 && k < n && row.windows(2).any(|w| w[0] >= w[1]) {
                    return Ok(None);
                }
            }
        }
        snaps.push(ArrayState::from_projected(lv.clone()));
        t_prev = t;
    }
    Ok(Some(snaps))
}

/// Interlacing-array dynamics: levels evolve bottom-up, each coordinate
/// taking an Euler step with its level drift `b^{(k)}` before being
/// projected between its two neighbours on level `k−1`. The initial array
/// is uniformly random given the top row. Paths whose interior levels
/// collide are discarded and counted; more than 1% discards is an error.
pub fn simulate_array(cfg: &SimConfig, top0: &[f64], sys: &LevelSystem) -> Result<ArraySamples> {
    cfg.validate()?;
    cfg.require_times()?;
    check_initial(top0, sys, "top row")?;
    check_strictly_increasing(top0, "top row")?;
    let coeffs = drift_coeffs(sys)?;
    let paths: Vec<Option<Vec<ArrayState>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            run_array_path(cfg, top0, sys, &coeffs, &mut rng)
        })
        .collect::<Result<_>>()?;
    let discarded = paths.iter().filter(|p| p.is_none()).count();
    let rate = discarded as f64 / cfg.n_paths as f64;
    if rate > REJECTION_BUDGET {
        return Err(Error::RejectionBudget {
            rate,
            budget: REJECTION_BUDGET,
            context: "interior-level collisions in the array dynamics".into(),
        });
    }
    let mut states = vec![Vec::with_capacity(cfg.n_paths - discarded); cfg.times.len()];
    for snaps in paths.into_iter().flatten() {
        for (j, snap) in snaps.into_iter().enumerate() {
            states[j].push(snap);
        }
    }
    Ok(ArraySamples::new(cfg.clone(), sys.n, states, discarded))
}
