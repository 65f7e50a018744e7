//! The Pearson diffusion family: generator coefficients, level drifts, the
//! constants attached to consecutive levels, speed densities, and closed-form
//! transition densities with spatial derivatives.
//!
//! The generator is `L = a(x) d²/dx² + b(x) d/dx` with `a(x) = a2 x² + a1 x + a0`
//! and `b(x) = b1 x + b0` on an open interval `(l, r)`. A system of `N` levels
//! attaches to level `k` the drift `b^{(k)}(x) = b(x) + (N−k) a'(x)` and the
//! constant `c^{(k)} = 2(N−k−1) a2 + b1`.

mod density;
mod boundary;

pub use boundary::{boundary_report, BoundaryClass, BoundaryReport};
pub use density::{
    besq_density, besq_density_dx, besq_density_dy, bessel_i, bessel_i_scaled, DensityProvider,
};

use crate::error::{Error, Result};
use serde::Deserialize;

/// Chamber / reflection side: `Up` keeps coordinates nondecreasing (pushes up),
/// `Down` keeps them nonincreasing (pushes down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Up,
    Down,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Up => "up",
            Side::Down => "down",
        }
    }
}

/// Coefficients of a Pearson diffusion on `(l, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PearsonSpec {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
    pub b1: f64,
    pub b0: f64,
    pub l: f64,
    pub r: f64,
}

impl PearsonSpec {
    pub fn new(a2: f64, a1: f64, a0: f64, b1: f64, b0: f64, l: f64, r: f64) -> Result<Self> {
        if l.is_nan() || r.is_nan() || l >= r {
            return Err(Error::InvalidModel(format!("interval endpoints must satisfy l < r, got [{l}, {r}]")));
        }
        let spec = PearsonSpec { a2, a1, a0, b1, b0, l, r };
        spec.check_positive_diffusion()?;
        Ok(spec)
    }

    /// Sign analysis of the quadratic a on the open interval.
    fn check_positive_diffusion(&self) -> Result<()> {
        let ok = if self.a2 == 0.0 && self.a1 == 0.0 {
            self.a0 > 0.0
        } else {
            // a must be positive on the closure intersected with finite points;
            // check endpoints (limits) and the vertex if it lies inside.
            let at = |x: f64| self.a(x);
            let mut ok = true;
            for e in [self.l, self.r] {
                if e.is_finite() {
                    if at(e) < 0.0 {
                        ok = false;
                    }
                } else {
                    // leading behavior at ±∞
                    let lead = if self.a2 != 0.0 { self.a2 } else { self.a1 * e.signum() };
                    if lead < 0.0 {
                        ok = false;
                    }
                }
            }
            if self.a2 != 0.0 {
                let v = -self.a1 / (2.0 * self.a2);
                if v > self.l && v < self.r && at(v) <= 0.0 {
                    ok = false;
                }
            }
            ok
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(
                "diffusion coefficient a(x) is not positive on the interval".into(),
            ))
        }
    }

    pub fn brownian(a0: f64, b0: f64) -> Self {
        PearsonSpec { a2: 0.0, a1: 0.0, a0, b1: 0.0, b0, l: f64::NEG_INFINITY, r: f64::INFINITY }
    }

    /// Mean-reverting affine drift `b(x) = −γ x + b0` with constant diffusion a0.
    pub fn ou(gamma: f64, a0: f64, b0: f64) -> Self {
        PearsonSpec { a2: 0.0, a1: 0.0, a0, b1: -gamma, b0, l: f64::NEG_INFINITY, r: f64::INFINITY }
    }

    /// Squared Bessel of dimension θ: `a(x) = 2x`, `b(x) = θ` on (0, ∞).
    pub fn squared_bessel(theta: f64) -> Self {
        PearsonSpec { a2: 0.0, a1: 2.0, a0: 0.0, b1: 0.0, b0: theta, l: 0.0, r: f64::INFINITY }
    }

    #[inline]
    pub fn a(&self, x: f64) -> f64 {
        (self.a2 * x + self.a1) * x + self.a0
    }

    #[inline]
    pub fn a_prime(&self, x: f64) -> f64 {
        2.0 * self.a2 * x + self.a1
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        self.b1 * x + self.b0
    }

    /// Unnormalized speed density `m(y) = exp(∫_anchor^y b/a) / a(y)`, the
    /// reversibility weight of the generator. Closed form for constant-`a` and
    /// `a(x) = a1·x` families, adaptive quadrature otherwise.
    pub fn speed_density(&self, anchor: f64, y: f64) -> Result<f64> {
        if !(y > self.l && y < self.r) {
            return Err(Error::InvalidArgument(format!("speed_density: y = {y} outside ({}, {})", self.l, self.r)));
        }
        if !(anchor > self.l && anchor < self.r) {
            return Err(Error::InvalidArgument(format!("speed_density: anchor = {anchor} outside the interval")));
        }
        let f = self.drift_potential(self.b1, self.b0, anchor, y)?;
        Ok(f.exp() / self.a(y))
    }

    /// ∫_anchor^y (b1 z + b0)/a(z) dz for an arbitrary affine drift.
    pub(crate) fn drift_potential(&self, b1: f64, b0: f64, anchor: f64, y: f64) -> Result<f64> {
        if self.a2 == 0.0 && self.a1 == 0.0 {
            return Ok((0.5 * b1 * (y * y - anchor * anchor) + b0 * (y - anchor)) / self.a0);
        }
        if self.a2 == 0.0 && self.a0 == 0.0 {
            // a = a1 x: ∫ (b1 z + b0)/(a1 z) dz = (b1 (y−anchor) + b0 ln(y/anchor))/a1
            return Ok((b1 * (y - anchor) + b0 * (y / anchor).ln()) / self.a1);
        }
        let integrand = |z: f64| (b1 * z + b0) / self.a(z);
        crate::quad::adaptive(&integrand, anchor, y, 1e-11)
    }

    /// Default speed-density anchor: interval midpoint, or 1.0 off infinite ends.
    pub fn default_anchor(&self) -> f64 {
        if self.l.is_finite() && self.r.is_finite() {
            0.5 * (self.l + self.r)
        } else if self.l.is_finite() {
            self.l + 1.0
        } else if self.r.is_finite() {
            self.r - 1.0
        } else {
            0.0
        }
    }
}

/// Closed-form family tag. The tag selects the transition-density evaluation
/// path; `Custom` relies on a caller-supplied evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Brownian,
    Ou,
    SquaredBessel { theta: f64 },
    Custom,
}

impl Family {
    /// Infer the family from the coefficients.
    pub fn classify(spec: &PearsonSpec) -> Family {
        if spec.a2 == 0.0 && spec.a1 == 0.0 {
            if spec.b1 == 0.0 {
                Family::Brownian
            } else {
                Family::Ou
            }
        } else if spec.a2 == 0.0 && spec.a1 == 2.0 && spec.a0 == 0.0 && spec.b1 == 0.0 && spec.l == 0.0 {
            Family::SquaredBessel { theta: spec.b0 }
        } else {
            Family::Custom
        }
    }
}

/// A Pearson diffusion together with a particle/level count `N`.
#[derive(Debug, Clone)]
pub struct LevelSystem {
    pub spec: PearsonSpec,
    pub n: usize,
}

impl LevelSystem {
    pub fn new(spec: PearsonSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidModel("particle count N must be ≥ 1".into()));
        }
        Ok(LevelSystem { spec, n })
    }

    fn check_level(&self, k: usize) -> Result<()> {
        if k >= 1 && k <= self.n {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("level index {k} outside 1..={}", self.n)))
        }
    }

    /// Level drift `b^{(k)}(x) = b(x) + (N−k) a'(x)`.
    pub fn level_drift(&self, k: usize, x: f64) -> Result<f64> {
        self.check_level(k)?;
        Ok(self.spec.b(x) + (self.n - k) as f64 * self.spec.a_prime(x))
    }

    /// Affine coefficients (slope, intercept) of the level-k drift.
    pub fn level_drift_coeffs(&self, k: usize) -> Result<(f64, f64)> {
        self.check_level(k)?;
        let m = (self.n - k) as f64;
        Ok((self.spec.b1 + 2.0 * m * self.spec.a2, self.spec.b0 + m * self.spec.a1))
    }

    /// The constant `c^{(k)} = 2(N−k−1) a2 + b1` coupling levels k and k+1.
    pub fn constant_c(&self, k: usize) -> Result<f64> {
        self.check_level(k)?;
        Ok(2.0 * (self.n as f64 - k as f64 - 1.0) * self.spec.a2 + self.spec.b1)
    }

    /// Exponential rate of the non-colliding semigroup:
    /// `λ_N = (1/6) N (N−1) (2 a2 (N−2) + 3 b1)`.
    pub fn lambda_n(&self) -> f64 {
        let n = self.n as f64;
        n * (n - 1.0) * (2.0 * self.spec.a2 * (n - 2.0) + 3.0 * self.spec.b1) / 6.0
    }

    /// Sum `Σ_{j=k}^{N−1} c^{(j)}`, the exponent appearing throughout the
    /// biorthogonal family (empty when k = N).
    pub fn c_sum(&self, k: usize) -> Result<f64> {
        self.check_level(k)?;
        let mut s = 0.0;
        for j in k..self.n {
            s += self.constant_c(j)?;
        }
        Ok(s)
    }

    pub fn family(&self) -> Family {
        Family::classify(&self.spec)
    }

    /// Density provider for the level-k diffusion `L^{(k)}`.
    pub fn provider(&self, k: usize) -> Result<DensityProvider> {
        self.check_level(k)?;
        DensityProvider::for_level(self.clone(), k)
    }
}

// ---------------------------------------------------------------------------
// JSON model description: {"family": ..., "params": {...}, "interval": [..], "N": ..}
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum EndpointJson {
    Num(f64),
    Named(String),
}

impl EndpointJson {
    fn value(&self) -> Result<f64> {
        match self {
            EndpointJson::Num(v) => Ok(*v),
            EndpointJson::Named(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(Error::InvalidModel(format!("unknown interval endpoint {other:?} (use a number, \"inf\" or \"-inf\")"))),
            },
        }
    }
}

#[derive(Deserialize)]
struct ModelJson {
    family: String,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
    interval: Option<(EndpointJson, EndpointJson)>,
    #[serde(rename = "N")]
    n: usize,
}

fn param(map: &serde_json::Map<String, serde_json::Value>, key: &str) -> Option<Result<f64>> {
    map.get(key).map(|v| {
        v.as_f64()
            .ok_or_else(|| Error::InvalidModel(format!("parameter {key:?} must be a number")))
    })
}

/// Parse a model description from its JSON value.
pub fn level_system_from_value(v: &serde_json::Value) -> Result<LevelSystem> {
    let mj: ModelJson = serde_json::from_value(v.clone())
        .map_err(|e| Error::InvalidModel(format!("model JSON: {e}")))?;
    for key in mj.params.keys() {
        let known = matches!(key.as_str(), "a0" | "b0" | "gamma" | "theta");
        if !known {
            return Err(Error::InvalidModel(format!("unknown parameter {key:?} for family {:?}", mj.family)));
        }
    }
    let mut spec = match mj.family.as_str() {
        "brownian" => {
            let a0 = param(&mj.params, "a0").transpose()?.unwrap_or(0.5);
            let b0 = param(&mj.params, "b0").transpose()?.unwrap_or(0.0);
            PearsonSpec::brownian(a0, b0)
        }
        "ou" => {
            let gamma = param(&mj.params, "gamma")
                .transpose()?
                .ok_or_else(|| Error::InvalidModel("family \"ou\" requires params.gamma".into()))?;
            let a0 = param(&mj.params, "a0").transpose()?.unwrap_or(0.5);
            let b0 = param(&mj.params, "b0").transpose()?.unwrap_or(0.0);
            PearsonSpec::ou(gamma, a0, b0)
        }
        "besq" => {
            let theta = param(&mj.params, "theta")
                .transpose()?
                .ok_or_else(|| Error::InvalidModel("family \"besq\" requires params.theta".into()))?;
            PearsonSpec::squared_bessel(theta)
        }
        other => {
            return Err(Error::InvalidModel(format!(
                "unsupported family {other:?} (expected \"brownian\", \"ou\" or \"besq\")"
            )))
        }
    };
    if let Some((lo, hi)) = mj.interval {
        spec.l = lo.value()?;
        spec.r = hi.value()?;
    }
    let spec = PearsonSpec::new(spec.a2, spec.a1, spec.a0, spec.b1, spec.b0, spec.l, spec.r)?;
    LevelSystem::new(spec, mj.n)
}

pub fn level_system_from_json(s: &str) -> Result<LevelSystem> {
    let v: serde_json::Value =
        serde_json::from_str(s).map_err(|e| Error::InvalidModel(format!("model JSON: {e}")))?;
    level_system_from_value(&v)
}
