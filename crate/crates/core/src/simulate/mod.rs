//! Monte Carlo schemes for the reflected, non-colliding, and
//! interlacing-array dynamics, plus the statistical estimators used to
//! cross-check them against the exact kernel and determinant formulas.
//!
//! Three particle systems share the state interval `(l, r)` and the level
//! drifts `b^{(k)}` of a [`LevelSystem`]:
//!
//! * **Reflected chains** ([`simulate_reflected`]): particle `k` is an
//!   independent Euler–Maruyama diffusion with drift `b^{(k)}` and noise
//!   `√(2a)`, kept ordered by a post-step projection onto its lower-indexed
//!   neighbour (Skorokhod-style one-sided reflection, error `O(√dt)`).
//! * **Non-colliding diffusions** ([`simulate_noncolliding`]): every particle
//!   carries the base drift `b` plus the repulsion `2a(z_i) Σ_{j≠i}
//!   1/(z_i−z_j)`; a step that would cross the strict ordering is halved and
//!   retried down to `dt/2^10`, below which the path restarts.
//! * **Interlacing arrays** ([`simulate_array`]): level `k` holds `k`
//!   coordinates with drift `b^{(k)}`, each projected between its two
//!   neighbours on level `k−1`; paths whose interior levels collide are
//!   discarded, mirroring the stopping time of the continuous dynamics.
//!
//! Randomness is reproducible and worker-count independent: path `p` draws
//! from the ChaCha8 stream `(master seed, p)`, and estimator reductions use
//! pairwise summation in path order. Families on a half line (squared
//! Bessel) use full-truncation Euler: coefficients are evaluated on the
//! state clamped to the closed interval and, except in the non-colliding
//! scheme where strict order must survive, the state itself is clamped
//! after every step.

pub mod estimators;
mod schemes;

pub use estimators::{
    empirical_cdf, empirical_cdf_joint, hist_density, ks_critical, ks_distance, martingale_check,
};
pub use schemes::{
    project_edges, sample_uniform_array, simulate_array, simulate_noncolliding, simulate_reflected,
    simulate_reflected_from_edge,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pearson::PearsonSpec;

fn default_true() -> bool {
    true
}

/// Scheme parameters shared by all simulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Base Euler time step; each segment between recording times is tiled
    /// by uniform steps of at most this size.
    pub dt: f64,
    /// Number of Monte Carlo paths.
    pub n_paths: usize,
    /// Master seed; path `p` draws from the ChaCha8 stream `(seed, p)`.
    pub seed: u64,
    /// Full-truncation positivity scheme: evaluate drift and diffusion
    /// coefficients on the state clamped to the closed interval `[l, r]`
    /// and clamp the state after each step (skipped inside the
    /// non-colliding scheme, which must preserve strict order). Families on
    /// the whole real line are unaffected.
    #[serde(default = "default_true")]
    pub positivity: bool,
    /// Strictly increasing positive times at which states are recorded.
    pub times: Vec<f64>,
}

impl SimConfig {
    /// Scheme parameters with the positivity scheme enabled.
    pub fn new(dt: f64, n_paths: usize, seed: u64, times: Vec<f64>) -> Result<Self> {
        let cfg = SimConfig { dt, n_paths, seed, positivity: true, times };
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dt.is_nan() || self.dt <= 0.0 || self.dt.is_infinite() {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive and finite, got {}",
                self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("need at least one path".into()));
        }
        if self.times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("recording times must be finite".into()));
        }
        if let Some(&t0) = self.times.first() {
            if t0 <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "recording times must be positive, got {t0}"
                )));
            }
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "recording times must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn require_times(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InvalidArgument("need at least one recording time".into()));
        }
        Ok(())
    }
}

/// Per-path RNG: ChaCha8 is a counter-mode stream cipher, so fixing the
/// master seed and selecting stream `p` yields independent randomness per
/// path regardless of how paths are distributed over workers.
pub(crate) fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Clamp onto the closed state interval (no-op when `positivity` is off or
/// the interval is the whole line).
pub(crate) fn truncate(spec: &PearsonSpec, positivity: bool, x: f64) -> f64 {
    if positivity {
        x.clamp(spec.l, spec.r)
    } else {
        x
    }
}

/// Diffusion coefficient `√(2a(x))` with the negative part of `2a` zeroed,
/// so a state that strays past a state-interval endpoint cannot produce NaN.
pub(crate) fn sigma(spec: &PearsonSpec, x: f64) -> f64 {
    (2.0 * spec.a(x)).max(0.0).sqrt()
}

/// Snapshots of independent particle-system paths at the recording times.
#[derive(Debug, Clone)]
pub struct SamplePaths {
    cfg: SimConfig,
    n: usize,
    /// `states[j][p][i]` = coordinate `i` of retained path `p` at `times[j]`.
    states: Vec<Vec<Vec<f64>>>,
    rejected: usize,
}

impl SamplePaths {
    pub(crate) fn new(cfg: SimConfig, n: usize, states: Vec<Vec<Vec<f64>>>, rejected: usize) -> Self {
        SamplePaths { cfg, n, states, rejected }
    }

    /// Recording times.
    pub fn times(&self) -> &[f64] {
        &self.cfg.times
    }

    /// Particles per path.
    pub fn n_particles(&self) -> usize {
        self.n
    }

    /// Retained paths.
    pub fn n_paths(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Paths rejected and resampled (non-colliding scheme); zero elsewhere.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// All retained states at recording time index `j`.
    pub fn at(&self, j: usize) -> Result<&[Vec<f64>]> {
        self.states
            .get(j)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("time index {j} out of range")))
    }

    /// Coordinate of particle `i` (1-based) across retained paths at time
    /// index `j`.
    pub fn marginal(&self, j: usize, i: usize) -> Result<Vec<f64>> {
        if i == 0 || i > self.n {
            return Err(Error::InvalidArgument(format!("particle index {i} outside 1..={}", self.n)));
        }
        Ok(self.at(j)?.iter().map(|x| x[i - 1]).collect())
    }

    /// CSV export with header `path,time,particle,value` (particle 1-based).
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "path,time,particle,value")?;
        for (j, &t) in self.cfg.times.iter().enumerate() {
            for (p, x) in self.states[j].iter().enumerate() {
                for (i, v) in x.iter().enumerate() {
                    writeln!(w, "{p},{t},{},{v}", i + 1)?;
                }
            }
        }
        Ok(())
    }

    /// Sidecar manifest recording the seed and scheme parameters.
    pub fn manifest(&self) -> serde_json::Value {
        manifest_json(&self.cfg, self.n_paths(), self.rejected)
    }
}

/// Interlacing array: level `k` (1-based) holds `k` ordered coordinates and
/// consecutive levels satisfy `x^{(k+1)}_i ≤ x^{(k)}_i ≤ x^{(k+1)}_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayState {
    levels: Vec<Vec<f64>>,
}

impl ArrayState {
    /// Validates the shape and the interlacing inequalities.
    pub fn new(levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("array needs at least one level".into()));
        }
        for (k, row) in levels.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(Error::InvalidArgument(format!(
                    "level {} must hold {} coordinates, got {}",
                    k + 1,
                    k + 1,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("array coordinates must be finite".into()));
            }
        }
        let state = ArrayState { levels };
        if !state.interlaces() {
            return Err(Error::InvalidArgument("levels violate the interlacing inequalities".into()));
        }
        Ok(state)
    }

    /// Number of levels (and coordinates on the top level).
    pub fn n(&self) -> usize {
        self.levels.len()
    }

    /// Level `k` (1-based), `k` ordered coordinates.
    pub fn level(&self, k: usize) -> Result<&[f64]> {
        if k == 0 || k > self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "level index {k} outside 1..={}",
                self.levels.len()
            )));
        }
        Ok(&self.levels[k - 1])
    }

    /// Top level.
    pub fn top(&self) -> &[f64] {
        self.levels.last().expect("nonempty by construction")
    }

    /// Whether every level is ordered and interlaces with the next one:
    /// `x^{(k+1)}_i ≤ x^{(k)}_i ≤ x^{(k+1)}_{i+1}` for all valid `(i, k)`.
    pub fn interlaces(&self) -> bool {
        for row in &self.levels {
            if row.windows(2).any(|w| w[0] > w[1]) {
                return false;
            }
        }
        for k in 0..self.levels.len() - 1 {
            let (upper, lower) = (&self.levels[k + 1], &self.levels[k]);
            for (i, &v) in lower.iter().enumerate() {
                if !(upper[i] <= v && v <= upper[i + 1]) {
                    return false;
                }
            }
        }
        true
    }

    pub(crate) fn into_levels(self) -> Vec<Vec<f64>> {
        self.levels
    }

    /// Construct from rows already guaranteed interlacing by the caller.
    pub(crate) fn from_projected(levels: Vec<Vec<f64>>) -> Self {
        debug_assert!(ArrayState::new(levels.clone()).is_ok());
        ArrayState { levels }
    }
}

/// Snapshots of interlacing-array paths at the recording times.
#[derive(Debug, Clone)]
pub struct ArraySamples {
    cfg: SimConfig,
    n: usize,
    /// `states[j][p]` = the array of retained path `p` at `times[j]`.
    states: Vec<Vec<ArrayState>>,
    discarded: usize,
}

impl ArraySamples {
    pub(crate) fn new(cfg: SimConfig, n: usize, states: Vec<Vec<ArrayState>>, discarded: usize) -> Self {
        ArraySamples { cfg, n, states, discarded }
    }

    pub fn times(&self) -> &[f64] {
        &self.cfg.times
    }

    /// Array height.
    pub fn n_levels(&self) -> usize {
        self.n
    }

    /// Retained paths.
    pub fn n_paths(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Paths discarded after an interior-level collision.
    pub fn discarded(&self) -> usize {
        self.discarded
    }

    /// All retained arrays at recording time index `j`.
    pub fn at(&self, j: usize) -> Result<&[ArrayState]> {
        self.states
            .get(j)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("time index {j} out of range")))
    }

    /// CSV export with header `path,time,level,index,value` (1-based level
    /// and within-level index).
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "path,time,level,index,value")?;
        for (j, &t) in self.cfg.times.iter().enumerate() {
            for (p, arr) in self.states[j].iter().enumerate() {
                for (k, row) in arr.levels.iter().enumerate() {
                    for (i, v) in row.iter().enumerate() {
                        writeln!(w, "{p},{t},{},{},{v}", k + 1, i + 1)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Sidecar manifest recording the seed and scheme parameters.
    pub fn manifest(&self) -> serde_json::Value {
        manifest_json(&self.cfg, self.n_paths(), self.discarded)
    }
}

fn manifest_json(cfg: &SimConfig, retained: usize, rejected: usize) -> serde_json::Value {
    serde_json::json!({
        "schema": "pdpp-sim-manifest/1",
        "rng": "chacha8, one stream per path keyed by (seed, path index)",
        "seed": cfg.seed,
        "dt": cfg.dt,
        "n_paths": cfg.n_paths,
        "positivity": cfg.positivity,
        "times": cfg.times,
        "retained_paths": retained,
        "rejected_paths": rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pearson::{LevelSystem, PearsonSpec, Side};

    #[test]
    fn config_validation_rejects_bad_requests() {
        assert!(SimConfig::new(0.0, 10, 1, vec![1.0]).is_err());
        assert!(SimConfig::new(f64::NAN, 10, 1, vec![1.0]).is_err());
        assert!(SimConfig::new(f64::INFINITY, 10, 1, vec![1.0]).is_err());
        assert!(SimConfig::new(1e-2, 0, 1, vec![1.0]).is_err());
        assert!(SimConfig::new(1e-2, 10, 1, vec![0.0, 1.0]).is_err());
        assert!(SimConfig::new(1e-2, 10, 1, vec![-1.0]).is_err());
        assert!(SimConfig::new(1e-2, 10, 1, vec![1.0, 1.0]).is_err());
        assert!(SimConfig::new(1e-2, 10, 1, vec![2.0, 1.0]).is_err());
        assert!(SimConfig::new(1e-2, 10, 1, vec![1.0, f64::NAN]).is_err());
        assert!(SimConfig::new(1e-2, 10, 1, vec![0.5, 1.0]).is_ok());
        assert!(SimConfig::new(1e-2, 10, 1, vec![]).is_ok());
    }

    #[test]
    fn config_serde_defaults_positivity_on() {
        let cfg = SimConfig::new(1e-3, 100, 42, vec![0.5]).unwrap();
        let js = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&js).unwrap();
        assert_eq!(back.seed, 42);
        assert!(back.positivity);
        let partial: SimConfig =
            serde_json::from_str(r#"{"dt":1e-3,"n_paths":7,"seed":9,"times":[0.25]}"#).unwrap();
        assert!(partial.positivity);
        assert_eq!(partial.n_paths, 7);
    }

    #[test]
    fn array_state_validates_shape_and_interlacing() {
        let good = ArrayState::new(vec![vec![0.5], vec![0.0, 1.0]]).unwrap();
        assert!(good.interlaces());
        assert_eq!(good.top(), &[0.0, 1.0]);
        assert_eq!(good.level(1).unwrap(), &[0.5]);
        assert!(good.level(0).is_err());
        assert!(good.level(3).is_err());
        // Wrong shape.
        assert!(ArrayState::new(vec![vec![0.5, 0.6]]).is_err());
        // Interlacing violated.
        assert!(ArrayState::new(vec![vec![2.0], vec![0.0, 1.0]]).is_err());
        // Within-level ordering violated on the top level.
        assert!(ArrayState::new(vec![vec![0.5], vec![1.0, 0.0]]).is_err());
        // Non-finite coordinate.
        assert!(ArrayState::new(vec![vec![f64::NAN]]).is_err());
        // Equalities are legal interlacings.
        assert!(ArrayState::new(vec![vec![1.0], vec![1.0, 1.0]]).is_ok());
    }

    #[test]
    fn csv_and_manifest_round_trip() {
        let sys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.0), 2).unwrap();
        let cfg = SimConfig::new(5e-2, 3, 11, vec![0.1, 0.2]).unwrap();
        let paths = simulate_reflected(&cfg, Side::Up, &[0.0, 0.5], &sys).unwrap();
        let mut buf = Vec::new();
        paths.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,time,particle,value");
        // 2 times × 3 paths × 2 particles.
        assert_eq!(lines.len(), 1 + 12);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], "0");
        assert_eq!(fields[1], "0.1");
        assert_eq!(fields[2], "1");
        assert!(fields[3].parse::<f64>().unwrap().is_finite());

        let m = paths.manifest();
        assert_eq!(m["seed"], 11);
        assert_eq!(m["retained_paths"], 3);
        assert_eq!(m["rejected_paths"], 0);
        assert_eq!(m["schema"], "pdpp-sim-manifest/1");
    }

    #[test]
    fn array_csv_counts_rows_per_level() {
        let sys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.0), 3).unwrap();
        let cfg = SimConfig::new(1e-2, 2, 5, vec![0.05]).unwrap();
        let arrs = simulate_array(&cfg, &[-1.0, 0.0, 1.0], &sys).unwrap();
        let mut buf = Vec::new();
        arrs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // Header + per path 1+2+3 = 6 coordinates at one time.
        assert_eq!(text.lines().count(), 1 + arrs.n_paths() * 6);
        assert_eq!(text.lines().next().unwrap(), "path,time,level,index,value");
        let m = arrs.manifest();
        assert_eq!(m["n_paths"], 2);
    }
}
