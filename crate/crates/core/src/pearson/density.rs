//! Closed-form transition densities `e^{tL^{(k)}}(x, y)` for the supported
//! families, together with spatial derivatives in both arguments.
//!
//! * Constant diffusion, affine drift (Brownian / mean-reverting): Gaussian
//!   kernels; derivatives come from the Hermite ladder.
//! * Squared Bessel of dimension δ: Bessel-kernel densities; for δ < 2 the
//!   absorbed (sub-Markov) density is defined through the dimension-duality
//!   `f^{(δ)}(t, x, y) = f^{(4−δ)}(t, y, x)`, and derivatives come from
//!   dimension-shift ladders `∂_x ↦ (δ ↑ δ+2)`, `∂_y ↦ (δ ↓ δ−2)`.
//! * Custom evaluators fall back to high-order finite differences.

use super::{Family, LevelSystem};
use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;
use std::sync::Arc;

const LN_2PI: f64 = 1.837877066409345483560659472811;

// ---------------------------------------------------------------------------
// Modified Bessel function of the first kind, real order ν ≥ −1/2.
// ---------------------------------------------------------------------------

fn bessel_crossover(nu: f64) -> f64 {
    60.0_f64.max(2.5 * nu * nu)
}

/// Power-series branch of `e^{−z} I_ν(z)`, valid for ν > −1.
fn bessel_i_scaled_series(nu: f64, z: f64) -> f64 {
    // e^{−z} Σ_k (z/2)^{ν+2k} / (k! Γ(ν+k+1))
    let ln_t0 = nu * (0.5 * z).ln() - ln_gamma(nu + 1.0) - z;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let q = 0.25 * z * z;
    for k in 0..10_000 {
        let kf = k as f64;
        term *= q / ((kf + 1.0) * (nu + kf + 1.0));
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    ln_t0.exp() * sum
}

/// Large-argument asymptotic branch of `e^{−z} I_ν(z)`; even in ν, so it also
/// serves negative orders (the `I_{−ν} − I_ν` defect is `O(e^{−2z})`, below the
/// target accuracy everywhere this branch is used).
fn bessel_i_scaled_asymptotic(nu: f64, z: f64) -> f64 {
    // (2πz)^{−1/2} Σ_k (−1)^k a_k(ν) / z^k, truncated at the smallest term.
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..=60 {
        let kf = k as f64;
        let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * z);
        if next.abs() >= term.abs() || next.abs() < 1e-17 * sum.abs() {
            if next.abs() < 1e-17 * sum.abs() {
                sum += next;
            }
            break;
        }
        term = next;
        sum += term;
    }
    sum / (2.0 * std::f64::consts::PI * z).sqrt()
}

/// `e^{−z} I_ν(z)` for `z ≥ 0`, `ν > −1`. Power series below a ν-dependent
/// crossover, large-argument asymptotic expansion above it; relative error
/// target 1e−13 across the switch.
pub fn bessel_i_scaled(nu: f64, z: f64) -> f64 {
    assert!(z >= 0.0 && nu > -1.0, "bessel_i_scaled: need z ≥ 0, ν > −1");
    if z == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if z < bessel_crossover(nu) {
        bessel_i_scaled_series(nu, z)
    } else {
        bessel_i_scaled_asymptotic(nu, z)
    }
}

/// `I_ν(z)`; overflows to `+∞` for very large `z` (use the scaled form there).
pub fn bessel_i(nu: f64, z: f64) -> f64 {
    bessel_i_scaled(nu, z) * z.exp()
}

// ---------------------------------------------------------------------------
// Squared-Bessel transition density at an arbitrary real dimension δ.
// ---------------------------------------------------------------------------

/// Analytic Bessel kernel `(1/2t) (y/x)^{ν/2} e^{−(x+y)/(2t)} I_ν(√(xy)/t)`
/// for arbitrary real order ν (the dimension-δ Markov density when
/// ν = δ/2−1 ≥ 0; for ν < 0 the analytic continuation appearing in
/// second-argument derivative ladders, which can be negative-valued).
fn besq_kernel_continued(nu: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    let s = 2.0 * t;
    if y == 0.0 {
        // (y/x)^{ν/2} I_ν(√(xy)/t) ~ y^ν / (stuff): finite only for ν ≥ 0.
        if nu > 0.0 {
            return Ok(0.0);
        }
        if nu == 0.0 {
            return Ok((-x / s).exp() / s);
        }
        return Err(Error::InvalidArgument(format!(
            "continued Bessel kernel of order {nu} diverges at y = 0"
        )));
    }
    if x == 0.0 {
        // Series collapses to its k = 0 term: y^ν e^{−y/(2t)} / ((2t)^{ν+1} Γ(ν+1));
        // 1/Γ vanishes at non-positive integers.
        let g = gamma_signed(nu + 1.0);
        if g.is_infinite() {
            return Ok(0.0);
        }
        return Ok((y / s).powf(nu) * (-y / s).exp() / (s * g));
    }
    let z = (x * y).sqrt() / t;
    let neg_int = nu < 0.0 && (nu - nu.round()).abs() < 1e-9;
    if z >= bessel_crossover(nu.abs()) {
        // (1/2t)(y/x)^{ν/2} e^{−(√x−√y)²/(2t)} Î_ν(z), assembled in logs; the
        // asymptotic branch is even in ν and strictly positive.
        let ln_f = 0.5 * nu * (y.ln() - x.ln()) - (x.sqrt() - y.sqrt()).powi(2) / s
            + bessel_i_scaled_asymptotic(nu, z).ln()
            - s.ln();
        return Ok(ln_f.exp());
    }
    if neg_int {
        // I_{−m} = I_m: positive Bessel factor, continued power factor.
        let ln_f = 0.5 * nu * (y.ln() - x.ln()) - (x.sqrt() - y.sqrt()).powi(2) / s
            + bessel_i_scaled_series(-nu, z).ln()
            - s.ln();
        return Ok(ln_f.exp());
    }
    if nu >= 0.0 {
        // Combined series Σ_k y^{ν+k} x^k / ((2t)^{ν+2k+1} k! Γ(ν+k+1)) with the
        // Gaussian weight folded in; no (y/x) power appears, so x → 0 is smooth.
        let ln_lead = nu * (y / s).ln() - ln_gamma(nu + 1.0) - (x + y) / s - s.ln();
        let q = x * y / (s * s);
        let mut term = 1.0_f64;
        let mut sum = 1.0_f64;
        for k in 0..10_000 {
            let kf = k as f64;
            term *= q / ((kf + 1.0) * (nu + kf + 1.0));
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        Ok((ln_lead + sum.ln()).exp())
    } else {
        // Negative non-integer order: same series with signed terms (Γ(ν+k+1)
        // alternates in sign while ν+k+1 < 0), in direct arithmetic.
        let mut term = (y / s).powf(nu) / gamma_signed(nu + 1.0);
        let mut sum = term;
        let mut peak = term.abs();
        let q = x * y / (s * s);
        for k in 0..10_000 {
            let kf = k as f64;
            term *= q / ((kf + 1.0) * (nu + kf + 1.0));
            sum += term;
            peak = peak.max(term.abs());
            if term.abs() < 1e-17 * peak {
                break;
            }
        }
        Ok(sum * (-(x + y) / s).exp() / s)
    }
}

/// Γ with sign for negative non-integer arguments; ±∞ at the poles.
fn gamma_signed(x: f64) -> f64 {
    if x > 0.0 {
        return statrs::function::gamma::gamma(x);
    }
    if (x - x.round()).abs() < 1e-12 {
        return f64::INFINITY;
    }
    // Reflection: Γ(x) = π / (sin(πx) Γ(1−x)).
    std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * statrs::function::gamma::gamma(1.0 - x))
}

/// Transition density of the squared Bessel flow of dimension `delta` from `x`
/// to `y` in time `t > 0`. For `delta ≥ 2` this is the Markov density; for
/// `delta < 2` it is the absorbed-at-0 (sub-Markov) density, defined by the
/// dimension duality `f^{(δ)}(t, x, y) = f^{(4−δ)}(t, y, x)`. `x = 0` and
/// `y = 0` are handled by their continuous limits.
pub fn besq_density(delta: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::InvalidArgument(format!("besq_density: need t > 0, got {t}")));
    }
    if x < 0.0 || y < 0.0 || !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidArgument(format!("besq_density: need x, y ≥ 0, got ({x}, {y})")));
    }
    if delta < 2.0 {
        return besq_density(4.0 - delta, t, y, x);
    }
    besq_kernel_continued(0.5 * delta - 1.0, t, x, y)
}

/// First-argument up-ladder, valid for `delta ≥ 2` (every term is a Markov
/// density of dimension ≥ 2).
fn besq_ladder_up(delta: f64, n: usize, t: f64, x: f64, y: f64) -> Result<f64> {
    let mut acc = 0.0;
    for j in 0..=n {
        let sign = if (n - j).is_multiple_of(2) { 1.0 } else { -1.0 };
        acc += sign * binomial(n, j) * besq_density(delta + 2.0 * j as f64, t, x, y)?;
    }
    Ok(acc / (2.0 * t).powi(n as i32))
}

/// Second-argument down-ladder, valid for `delta ≥ 2`: the shifted terms are
/// the analytically-continued kernels of order ν−j (NOT the absorbed
/// densities — the two differ by a Macdonald-function term once ν−j < 0).
fn besq_ladder_down(delta: f64, n: usize, t: f64, x: f64, y: f64) -> Result<f64> {
    let nu = 0.5 * delta - 1.0;
    let mut acc = 0.0;
    for j in 0..=n {
        let sign = if (n - j).is_multiple_of(2) { 1.0 } else { -1.0 };
        acc += sign * binomial(n, j) * besq_kernel_continued(nu - j as f64, t, x, y)?;
    }
    Ok(acc / (2.0 * t).powi(n as i32))
}

/// n-th derivative of `besq_density(delta, t, ·, y)` in its first argument.
/// For `delta ≥ 2` this is the dimension-up ladder
/// `(2t)^{−n} Σ_j C(n,j) (−1)^{n−j} f^{(δ+2j)}(t, x, y)`; for `delta < 2` the
/// duality routes it through the second-argument ladder of dimension 4−δ.
pub fn besq_density_dx(delta: f64, n: usize, t: f64, x: f64, y: f64) -> Result<f64> {
    if delta >= 2.0 {
        besq_ladder_up(delta, n, t, x, y)
    } else {
        besq_ladder_down(4.0 - delta, n, t, y, x)
    }
}

/// n-th derivative of `besq_density(delta, t, x, ·)` in its second argument.
/// For `delta ≥ 2` this is the dimension-down ladder with analytically
/// continued kernels; for `delta < 2` duality routes it through the
/// first-argument (up) ladder of dimension 4−δ.
pub fn besq_density_dy(delta: f64, n: usize, t: f64, x: f64, y: f64) -> Result<f64> {
    if delta >= 2.0 {
        besq_ladder_down(delta, n, t, x, y)
    } else {
        besq_ladder_up(4.0 - delta, n, t, y, x)
    }
}

fn binomial(n: usize, j: usize) -> f64 {
    let j = j.min(n - j);
    let mut c = 1.0;
    for i in 0..j {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Probabilists' Hermite polynomial `He_n(u)` by the three-term recurrence.
fn hermite_prob(n: usize, u: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, u);
    if n == 0 {
        return 1.0;
    }
    for k in 1..n {
        let next = u * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

// ---------------------------------------------------------------------------
// DensityProvider
// ---------------------------------------------------------------------------

/// Custom transition-density evaluator `(t, x, y) ↦ e^{tL}(x, y)`.
pub type CustomDensity = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

enum Engine {
    /// Constant diffusion a0, affine drift b1 x + b0 (level-adjusted).
    Affine { a0: f64, b1: f64, b0: f64 },
    /// Squared Bessel at effective dimension δ = θ + 2(N−k).
    Besq { delta: f64 },
    Custom(CustomDensity),
}

/// Evaluates the transition density of one level's diffusion and its spatial
/// derivatives up to a configured budget.
pub struct DensityProvider {
    pub sys: LevelSystem,
    pub level: usize,
    pub family: Family,
    max_deriv: usize,
    engine: Engine,
}

impl DensityProvider {
    /// Closed-form provider for level `k` of the system. Fails for coefficient
    /// patterns with no closed form (use [`DensityProvider::custom`] there).
    pub fn for_level(sys: LevelSystem, k: usize) -> Result<Self> {
        let family = sys.family();
        let (b1k, b0k) = sys.level_drift_coeffs(k)?;
        let engine = match family {
            Family::Brownian | Family::Ou => Engine::Affine { a0: sys.spec.a0, b1: b1k, b0: b0k },
            Family::SquaredBessel { theta } => {
                Engine::Besq { delta: theta + 2.0 * (sys.n - k) as f64 }
            }
            Family::Custom => {
                return Err(Error::InvalidModel(
                    "no closed-form transition density for this coefficient pattern; \
                     supply a custom evaluator"
                        .into(),
                ))
            }
        };
        let max_deriv = sys.n;
        Ok(DensityProvider { sys, level: k, family, max_deriv, engine })
    }

    /// Provider backed by a caller-supplied density evaluator; derivatives use
    /// high-order central finite differences with Richardson extrapolation.
    pub fn custom(sys: LevelSystem, k: usize, eval: CustomDensity) -> Result<Self> {
        if k < 1 || k > sys.n {
            return Err(Error::InvalidArgument(format!("level index {k} outside 1..={}", sys.n)));
        }
        let max_deriv = sys.n;
        Ok(DensityProvider { sys, level: k, family: Family::Custom, max_deriv, engine: Engine::Custom(eval) })
    }

    /// Raise the derivative budget (default: the particle count N).
    pub fn with_budget(mut self, budget: usize) -> Self {
        self.max_deriv = budget;
        self
    }

    /// Effective squared-Bessel dimension of this level, if applicable.
    pub fn besq_delta(&self) -> Option<f64> {
        match self.engine {
            Engine::Besq { delta } => Some(delta),
            _ => None,
        }
    }

    fn check_args(&self, t: f64, x: f64, y: f64) -> Result<()> {
        if t <= 0.0 || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("density: need finite t > 0, got {t}")));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidArgument("density: x, y must be finite".into()));
        }
        let (l, r) = (self.sys.spec.l, self.sys.spec.r);
        if x < l || x > r || y < l || y > r {
            return Err(Error::InvalidArgument(format!(
                "density: point ({x}, {y}) outside the closed interval [{l}, {r}]"
            )));
        }
        Ok(())
    }

    fn check_budget(&self, n: usize) -> Result<()> {
        if n > self.max_deriv {
            Err(Error::DerivativeBudget { requested: n, budget: self.max_deriv })
        } else {
            Ok(())
        }
    }

    fn affine_moments(a0: f64, b1: f64, b0: f64, t: f64, x: f64) -> (f64, f64, f64) {
        // Returns (mean, stddev, ∂mean/∂x).
        if b1 == 0.0 {
            (x + b0 * t, (2.0 * a0 * t).sqrt(), 1.0)
        } else {
            let e = (b1 * t).exp();
            let mean = x * e + b0 * (b1 * t).exp_m1() / b1;
            let var = a0 * (2.0 * b1 * t).exp_m1() / b1;
            (mean, var.sqrt(), e)
        }
    }

    /// Transition density `e^{tL^{(k)}}(x, y)`.
    pub fn density(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        self.check_args(t, x, y)?;
        match &self.engine {
            Engine::Affine { a0, b1, b0 } => {
                let (mean, sd, _) = Self::affine_moments(*a0, *b1, *b0, t, x);
                let u = (y - mean) / sd;
                Ok((-0.5 * u * u - sd.ln() - 0.5 * LN_2PI).exp())
            }
            Engine::Besq { delta } => besq_density(*delta, t, x, y),
            Engine::Custom(f) => Ok(f(t, x, y)),
        }
    }

    /// n-th derivative of the density in its first (backward) argument.
    pub fn density_dx(&self, n: usize, t: f64, x: f64, y: f64) -> Result<f64> {
        self.check_args(t, x, y)?;
        self.check_budget(n)?;
        if n == 0 {
            return self.density(t, x, y);
        }
        match &self.engine {
            Engine::Affine { a0, b1, b0 } => {
                let (mean, sd, phi) = Self::affine_moments(*a0, *b1, *b0, t, x);
                let u = (y - mean) / sd;
                let base = (-0.5 * u * u - sd.ln() - 0.5 * LN_2PI).exp();
                Ok((phi / sd).powi(n as i32) * hermite_prob(n, u) * base)
            }
            Engine::Besq { delta } => besq_density_dx(*delta, n, t, x, y),
            Engine::Custom(f) => {
                let g = |xx: f64| f(t, xx, y);
                Ok(fd_derivative(&g, x, n))
            }
        }
    }

    /// n-th derivative of the density in its second (forward) argument.
    pub fn density_dy(&self, n: usize, t: f64, x: f64, y: f64) -> Result<f64> {
        self.check_args(t, x, y)?;
        self.check_budget(n)?;
        if n == 0 {
            return self.density(t, x, y);
        }
        match &self.engine {
            Engine::Affine { a0, b1, b0 } => {
                let (mean, sd, _) = Self::affine_moments(*a0, *b1, *b0, t, x);
                let u = (y - mean) / sd;
                let base = (-0.5 * u * u - sd.ln() - 0.5 * LN_2PI).exp();
                Ok((-1.0 / sd).powi(n as i32) * hermite_prob(n, u) * base)
            }
            Engine::Besq { delta } => besq_density_dy(*delta, n, t, x, y),
            Engine::Custom(f) => {
                let g = |yy: f64| f(t, x, yy);
                Ok(fd_derivative(&g, y, n))
            }
        }
    }
}

/// n-th derivative by nested 5-point central stencils with one Richardson
/// extrapolation level. Accuracy degrades with n; intended for n ≤ 2.
fn fd_derivative<F: Fn(f64) -> f64>(f: &F, x: f64, n: usize) -> f64 {
    fn d1<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
        (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
    }
    if n == 0 {
        return f(x);
    }
    let h = 1e-5_f64.max(1e-5 * x.abs());
    if n == 1 {
        let a = d1(f, x, h);
        let b = d1(f, x, 0.5 * h);
        (16.0 * b - a) / 15.0
    } else {
        let g = |xx: f64| fd_derivative(f, xx, n - 1);
        let a = d1(&g, x, h);
        let b = d1(&g, x, 0.5 * h);
        (16.0 * b - a) / 15.0
    }
}

#[cfg(test)]
mod tests {
    use super::super::PearsonSpec;
    use super::*;
    use statrs::function::erf::erf;

    fn provider(spec: PearsonSpec, n: usize, k: usize) -> DensityProvider {
        LevelSystem::new(spec, n).unwrap().provider(k).unwrap()
    }

    #[test]
    fn bessel_known_values() {
        // Tabulated I_0(1), I_1(1).
        assert!((bessel_i(0.0, 1.0) - 1.2660658777520084).abs() < 1e-13);
        assert!((bessel_i(1.0, 1.0) - 0.5651591039924851).abs() < 1e-14);
    }

    /// e^{−z}(cosh z − sinh z / z), computed stably: for small z via the series
    /// Σ_{k≥1} z^{2k} (2k)/(2k+1)! (the direct difference cancels
    /// catastrophically below z ≈ 0.1).
    fn scaled_cosh_minus_sinch(z: f64) -> f64 {
        if z > 0.1 {
            let e = (-2.0 * z).exp();
            return 0.5 * (1.0 + e) - 0.5 * (1.0 - e) / z;
        }
        let mut sum = 0.0;
        let mut zpow = 1.0;
        let mut fact = 1.0; // (2k+1)! running
        for k in 1..30 {
            zpow *= z * z;
            fact *= (2 * k) as f64 * (2 * k + 1) as f64;
            let term = zpow * (2 * k) as f64 / fact;
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum * (-z).exp()
    }

    #[test]
    fn bessel_half_integer_closed_forms() {
        // Î_{1/2}(z) = √(2/(πz)) (1 − e^{−2z})/2,
        // Î_{−1/2}(z) = √(2/(πz)) (1 + e^{−2z})/2,
        // Î_{3/2}(z) = √(2/(πz)) e^{−z}(cosh z − sinh z / z).
        let pref = |z: f64| (2.0 / (std::f64::consts::PI * z)).sqrt();
        for &z in &[1e-3_f64, 0.1, 1.0, 10.0, 59.5, 60.5, 200.0, 1.0e4] {
            let e = (-2.0 * z).exp();
            let half = pref(z) * 0.5 * (1.0 - e);
            let mhalf = pref(z) * 0.5 * (1.0 + e);
            let th = pref(z) * scaled_cosh_minus_sinch(z);
            assert!((bessel_i_scaled(0.5, z) - half).abs() <= 1e-12 * half, "ν=1/2, z={z}");
            assert!((bessel_i_scaled(-0.5, z) - mhalf).abs() <= 1e-12 * mhalf, "ν=−1/2, z={z}");
            assert!((bessel_i_scaled(1.5, z) - th).abs() <= 1e-11 * th, "ν=3/2, z={z}");
        }
    }

    #[test]
    fn bessel_branches_agree_at_crossover() {
        // Series and asymptotic branches, evaluated at the same z, agree to
        // ~1e−13 relative at the switching point.
        for &nu in &[0.0, 0.7, 2.0, 5.0] {
            let zc = super::bessel_crossover(nu);
            let series = super::bessel_i_scaled_series(nu, zc);
            let asym = super::bessel_i_scaled_asymptotic(nu, zc);
            assert!((series - asym).abs() < 1e-12 * series.abs(), "ν={nu}: {series} vs {asym}");
        }
    }

    #[test]
    fn continued_kernel_negative_orders() {
        // Order −1/2: (1/2t)(y/x)^{−1/4} e^{−(x+y)/2t} √(2/(πz)) cosh z — the
        // reflected-type kernel, strictly positive.
        // Order −3/2: Bessel factor √(2/(πz)) (sinh z − cosh z / z), negative
        // for small z.
        for &(t, x, y) in &[(0.6_f64, 1.4_f64, 2.1_f64), (0.01, 0.3, 0.4), (2.5, 0.02, 5.0), (0.004, 2.0, 2.2)] {
            let s = 2.0 * t;
            let z = (x * y).sqrt() / t;
            let pref = (2.0 / (std::f64::consts::PI * z)).sqrt();
            let base = (y / x).powf(-0.25) * (-(x + y) / s).exp() / s;
            let cosh_exact = base * pref * z.cosh();
            let got = super::besq_kernel_continued(-0.5, t, x, y).unwrap();
            assert!((got - cosh_exact).abs() < 1e-11 * cosh_exact.abs(), "ν=−1/2 t={t} x={x} y={y}: {got} vs {cosh_exact}");

            let base3 = (y / x).powf(-0.75) * (-(x + y) / s).exp() / s;
            let exact3 = base3 * pref * (z.sinh() - z.cosh() / z);
            let got3 = super::besq_kernel_continued(-1.5, t, x, y).unwrap();
            assert!(
                (got3 - exact3).abs() < 1e-10 * exact3.abs().max(base3 * pref),
                "ν=−3/2 t={t} x={x} y={y}: {got3} vs {exact3}"
            );
        }
    }

    #[test]
    fn continued_kernel_matches_markov_at_positive_order() {
        for &(t, x, y) in &[(0.8_f64, 1.3_f64, 0.9_f64), (0.05, 4.0, 3.0)] {
            let via_continued = super::besq_kernel_continued(0.5, t, x, y).unwrap();
            let markov = besq_density(3.0, t, x, y).unwrap();
            assert!((via_continued - markov).abs() < 1e-13 * markov);
        }
    }

    #[test]
    fn brownian_density_baseline() {
        let p = provider(PearsonSpec::brownian(0.5, 0.0), 1, 1);
        let f = p.density(1.0, 0.0, 0.0).unwrap();
        assert!((f - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        // With drift: mean shifts by b0 t.
        let p = provider(PearsonSpec::brownian(0.5, 0.7), 1, 1);
        let f = p.density(2.0, 0.1, 0.1 + 1.4).unwrap();
        assert!((f - 1.0 / (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ou_moments_match_closed_form() {
        let (gamma, a0, b0) = (0.8, 0.5, 0.3);
        let p = provider(PearsonSpec::ou(gamma, a0, b0), 1, 1);
        let (t, x) = (0.6, 1.1);
        let mean = (x - b0 / gamma) * (-gamma * t).exp() + b0 / gamma;
        let var = a0 * (1.0 - (-2.0 * gamma * t).exp()) / gamma;
        // Compare at the mean point: density = 1/√(2π var).
        let f = p.density(t, x, mean).unwrap();
        assert!((f - 1.0 / (2.0 * std::f64::consts::PI * var).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn besq_normalization() {
        // Markov for δ ≥ 2: total mass 1.
        let p = provider(PearsonSpec::squared_bessel(3.0), 1, 1);
        let (t, x): (f64, f64) = (0.8, 1.3);
        let upper = x + 3.0 * t + 25.0 * (t * (2.0 * x + 3.0 * t)).sqrt() + 10.0;
        let mass = crate::quad::adaptive(&|y: f64| p.density(t, x, y).unwrap(), 0.0, upper, 1e-11).unwrap();
        assert!((mass - 1.0).abs() < 1e-8, "mass = {mass}");
    }

    #[test]
    fn besq_submarkov_mass_is_survival_probability() {
        // Dimension 1 is a squared standard Brownian motion absorbed at 0:
        // the surviving mass from x equals erf(√(x/(2t))).
        let (t, x): (f64, f64) = (0.9, 1.5);
        let upper = x + 25.0 * (t * (2.0 * x + t)).sqrt() + 10.0;
        let mass = crate::quad::adaptive(&|y: f64| besq_density(1.0, t, x, y).unwrap(), 0.0, upper, 1e-11)
            .unwrap();
        let survival = erf((x / (2.0 * t)).sqrt());
        assert!((mass - survival).abs() < 1e-8, "mass {mass} vs survival {survival}");
    }

    #[test]
    fn besq_zero_start_limit() {
        let (delta, t, y): (f64, f64, f64) = (3.0, 0.7, 1.9);
        let nu = 0.5 * delta - 1.0;
        let s = 2.0 * t;
        let exact = y.powf(nu) * (-y / s).exp() / (s.powf(nu + 1.0) * statrs::function::gamma::gamma(nu + 1.0));
        let at_zero = besq_density(delta, t, 0.0, y).unwrap();
        assert!((at_zero - exact).abs() < 1e-13 * exact);
        // Continuity as x → 0.
        let near = besq_density(delta, t, 1e-8, y).unwrap();
        assert!((near - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn besq_dimension_duality() {
        let (t, x, y) = (0.5, 1.2, 0.4);
        let lhs = besq_density(1.0, t, x, y).unwrap();
        let rhs = besq_density(3.0, t, y, x).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn chapman_kolmogorov_ou() {
        let p = provider(PearsonSpec::ou(0.8, 0.5, 0.3), 1, 1);
        let (s, t, x, y) = (0.3, 0.5, -0.4, 0.9);
        let conv = crate::quad::adaptive(
            &|z: f64| p.density(s, x, z).unwrap() * p.density(t, z, y).unwrap(),
            -20.0,
            20.0,
            1e-12,
        )
        .unwrap();
        let direct = p.density(s + t, x, y).unwrap();
        assert!((conv - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn chapman_kolmogorov_besq() {
        let p = provider(PearsonSpec::squared_bessel(3.0), 1, 1);
        let (s, t, x, y) = (0.4, 0.3, 1.2, 2.3);
        let conv = crate::quad::adaptive(
            &|z: f64| p.density(s, x, z).unwrap() * p.density(t, z, y).unwrap(),
            0.0,
            80.0,
            1e-12,
        )
        .unwrap();
        let direct = p.density(s + t, x, y).unwrap();
        assert!((conv - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases: Vec<(DensityProvider, f64, f64, f64)> = vec![
            (provider(PearsonSpec::ou(0.8, 0.5, 0.3), 3, 2), 0.6, 0.4, 1.1),
            (provider(PearsonSpec::squared_bessel(3.0), 3, 2), 0.6, 1.4, 2.1),
            (provider(PearsonSpec::brownian(0.5, 0.0), 3, 1), 0.9, -0.2, 0.7),
        ];
        for (p, t, x, y) in cases {
            let h = 1e-5;
            // ∂x via 5-point stencil on density.
            let fd_x = (p.density(t, x - 2.0 * h, y).unwrap() - 8.0 * p.density(t, x - h, y).unwrap()
                + 8.0 * p.density(t, x + h, y).unwrap()
                - p.density(t, x + 2.0 * h, y).unwrap())
                / (12.0 * h);
            let dx = p.density_dx(1, t, x, y).unwrap();
            assert!((dx - fd_x).abs() < 1e-7 * (1.0 + dx.abs()), "dx {dx} vs fd {fd_x}");
            // ∂y² via stencil on first derivative.
            let fd_yy = (p.density_dy(1, t, x, y - 2.0 * h).unwrap()
                - 8.0 * p.density_dy(1, t, x, y - h).unwrap()
                + 8.0 * p.density_dy(1, t, x, y + h).unwrap()
                - p.density_dy(1, t, x, y + 2.0 * h).unwrap())
                / (12.0 * h);
            let dyy = p.density_dy(2, t, x, y).unwrap();
            assert!((dyy - fd_yy).abs() < 1e-6 * (1.0 + dyy.abs()), "dyy {dyy} vs fd {fd_yy}");
        }
        // Down-ladder crossing below dimension 2: ∂_y of the dimension-3
        // density involves the continued order −1/2 kernel.
        let p = provider(PearsonSpec::squared_bessel(3.0), 1, 1);
        let (t, x, y) = (0.6, 1.4, 2.1);
        let h = 1e-5;
        let fd_y = (p.density(t, x, y - 2.0 * h).unwrap() - 8.0 * p.density(t, x, y - h).unwrap()
            + 8.0 * p.density(t, x, y + h).unwrap()
            - p.density(t, x, y + 2.0 * h).unwrap())
            / (12.0 * h);
        let dy = p.density_dy(1, t, x, y).unwrap();
        assert!((dy - fd_y).abs() < 1e-9 * (1.0 + dy.abs()), "dy {dy} vs fd {fd_y}");
    }

    #[test]
    fn derivative_budget_is_enforced() {
        let p = provider(PearsonSpec::brownian(0.5, 0.0), 2, 1);
        assert!(p.density_dx(2, 1.0, 0.0, 0.0).is_ok());
        assert!(matches!(
            p.density_dx(3, 1.0, 0.0, 0.0),
            Err(Error::DerivativeBudget { requested: 3, budget: 2 })
        ));
        let p = p.with_budget(5);
        assert!(p.density_dx(3, 1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn custom_provider_finite_differences() {
        // Feed the Brownian closed form through the custom path.
        let sys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.0), 2).unwrap();
        let eval: CustomDensity = Arc::new(|t: f64, x: f64, y: f64| {
            (-0.5 * (y - x) * (y - x) / t).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
        });
        let p = DensityProvider::custom(sys.clone(), 1, eval).unwrap();
        let exact = sys.provider(1).unwrap();
        let (t, x, y) = (0.7, 0.2, 0.9);
        let d1 = p.density_dx(1, t, x, y).unwrap();
        let e1 = exact.density_dx(1, t, x, y).unwrap();
        assert!((d1 - e1).abs() < 1e-8);
        let d2 = p.density_dy(2, t, x, y).unwrap();
        let e2 = exact.density_dy(2, t, x, y).unwrap();
        assert!((d2 - e2).abs() < 1e-5);
    }
}
