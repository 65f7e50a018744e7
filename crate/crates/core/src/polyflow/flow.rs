//! The generator on the monomial basis and its exponential flow.
//!
//! On `{1, z, …, z^M}` the generator acts as
//!
//! `L z^i = [a₂ i(i−1) + b₁^{(k)} i] z^i + [a₁ i(i−1) + b₀^{(k)} i] z^{i−1}
//!        + a₀ i(i−1) z^{i−2}`,
//!
//! an upper-triangular banded matrix, so `e^{tL}` preserves degree exactly and
//! multiplies the leading coefficient by `e^{tM(b₁^{(k)} + a₂(M−1))}`. The
//! exponential is computed by scaling-and-squaring with a Taylor core, which
//! keeps the triangular structure (no spurious degree growth).

use super::Poly;
use crate::error::{Error, Result};
use crate::pearson::{Family, LevelSystem, PearsonSpec};
use nalgebra::DMatrix;
use serde::Serialize;

/// The generator of one level drift restricted to polynomials of degree ≤ M,
/// on the monomial basis.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub spec: PearsonSpec,
    pub level: usize,
    /// `(M+1) × (M+1)`; column `i` holds the image of `z^i`.
    pub mat: DMatrix<f64>,
}

/// Build the generator matrix for level `k` on degrees `0..=m`.
pub fn generator_matrix(sys: &LevelSystem, k: usize, m: usize) -> Result<GeneratorMatrix> {
    let (b1k, b0k) = sys.level_drift_coeffs(k)?;
    let spec = &sys.spec;
    let mut mat = DMatrix::zeros(m + 1, m + 1);
    for i in 0..=m {
        let fi = i as f64;
        let ii = fi * (fi - 1.0);
        mat[(i, i)] = spec.a2 * ii + b1k * fi;
        if i >= 1 {
            mat[(i - 1, i)] = spec.a1 * ii + b0k * fi;
        }
        if i >= 2 {
            mat[(i - 2, i)] = spec.a0 * ii;
        }
    }
    Ok(GeneratorMatrix { spec: spec.clone(), level: k, mat })
}

/// Apply the level-`k` generator to `p`: returns `a p'' + b^{(k)} p'`.
pub fn apply_generator(sys: &LevelSystem, k: usize, p: &Poly) -> Result<Poly> {
    let (b1k, b0k) = sys.level_drift_coeffs(k)?;
    let spec = &sys.spec;
    let mut out = vec![0.0; p.degree() + 1];
    for (i, &c) in p.coeffs().iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let fi = i as f64;
        let ii = fi * (fi - 1.0);
        out[i] += (spec.a2 * ii + b1k * fi) * c;
        if i >= 1 {
            out[i - 1] += (spec.a1 * ii + b0k * fi) * c;
        }
        if i >= 2 {
            out[i - 2] += spec.a0 * ii * c;
        }
    }
    Ok(Poly::new(out))
}

/// `e^{tL^{(k)}} p` for any real `t`; degree is preserved exactly.
pub fn flow(sys: &LevelSystem, k: usize, t: f64, p: &Poly) -> Result<Poly> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("flow time must be finite, got {t}")));
    }
    let m = p.degree();
    let gen = generator_matrix(sys, k, m)?;
    let e = expm(&gen.mat.scale(t));
    let c = nalgebra::DVector::from_column_slice(p.coeffs());
    let out = e * c;
    Ok(Poly::new(out.iter().copied().collect()))
}

/// Matrix exponential by scaling-and-squaring with a Taylor core: scale so
/// the 1-norm is ≤ 1/2, sum the Taylor series to machine precision, square
/// back. Adequate for the small banded triangular matrices used here.
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a.scale(0.5f64.powi(s));
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=40 {
        term = (&term * &b).scale(1.0 / k as f64);
        sum += &term;
        if term.amax() <= 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Coefficientwise comparison of `flow(−t, z^n)` against the classical
/// closed form for the family (Laguerre for squared Bessel, the scaled
/// Hermite sum for constant diffusion).
#[derive(Debug, Clone, Serialize)]
pub struct FlowComparison {
    pub n: usize,
    pub level: usize,
    pub t: f64,
    /// max over coefficients of |flow − classical|
    pub deviation: f64,
    pub flow_coeffs: Vec<f64>,
    pub classical_coeffs: Vec<f64>,
}

/// Closed-form `e^{−tL} z^n` per family:
///
/// * squared Bessel with level dimension δ: `n!(−2t)^n L_n^{(δ/2−1)}(z/2t)`,
///   expanded so integer powers of `t` appear (valid for every real `t`);
/// * constant diffusion `a₀` with drift `b₀`: shift by `−b₀t`, then
///   `z^m ↦ s^{m/2} H_m(z/√s)` with `s = 2a₀t`, again expanded in integer
///   powers of `s`.
pub fn flow_vs_classical(sys: &LevelSystem, k: usize, t: f64, n: usize) -> Result<FlowComparison> {
    let classical = match sys.family() {
        Family::SquaredBessel { .. } => {
            let (_, delta) = sys.level_drift_coeffs(k)?; // level drift is the dimension
            let alpha = delta / 2.0 - 1.0;
            // coefficient of z^j: (−1)^{n−j} C(n+α, n−j) (2t)^{n−j} n!/j!
            let mut coeffs = vec![0.0; n + 1];
            for (j, cj) in coeffs.iter_mut().enumerate() {
                let m = n - j;
                let mut v = 1.0;
                for i in 1..=m {
                    v *= (j as f64 + alpha + i as f64) / i as f64; // C(n+α, m)
                }
                for i in (j + 1)..=n {
                    v *= i as f64; // n!/j!
                }
                v *= (2.0 * t).powi(m as i32);
                *cj = if m.is_multiple_of(2) { v } else { -v };
            }
            Poly::new(coeffs)
        }
        Family::Brownian => {
            let (_, b0k) = sys.level_drift_coeffs(k)?;
            let s = 2.0 * sys.spec.a0 * t;
            // (z − b0 t)^n expanded, then z^m ↦ m! Σ_i (−1)^i z^{m−2i} s^i /
            // (i!(m−2i)! 2^i) monomial by monomial.
            let shifted = Poly::monomial(1, 1.0).affine_compose(1.0, -b0k * t);
            let shifted_n = {
                let mut acc = Poly::one();
                for _ in 0..n {
                    acc = acc.mul(&shifted);
                }
                acc
            };
            let mut total = Poly::zero();
            for (m, &c) in shifted_n.coeffs().iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let mut coeffs = vec![0.0; m + 1];
                let mut i = 0;
                while 2 * i <= m {
                    let mut v = 1.0;
                    for l in (m - 2 * i + 1)..=m {
                        v *= l as f64; // m!/(m−2i)!
                    }
                    for l in 1..=i {
                        v /= l as f64; // /i!
                    }
                    v *= (s / 2.0).powi(i as i32);
                    coeffs[m - 2 * i] = if i % 2 == 0 { v } else { -v };
                    i += 1;
                }
                total = total.add(&Poly::new(coeffs).scale(c));
            }
            total
        }
        other => {
            return Err(Error::InvalidModel(format!(
                "classical flow comparison supports Brownian and squared Bessel families, got {other:?}"
            )))
        }
    };
    let flowed = flow(sys, k, -t, &Poly::monomial(n, 1.0))?;
    let deg = flowed.degree().max(classical.degree());
    let deviation = (0..=deg)
        .map(|i| (flowed.coeff(i) - classical.coeff(i)).abs())
        .fold(0.0, f64::max);
    Ok(FlowComparison {
        n,
        level: k,
        t,
        deviation,
        flow_coeffs: flowed.coeffs().to_vec(),
        classical_coeffs: classical.coeffs().to_vec(),
    })
}
