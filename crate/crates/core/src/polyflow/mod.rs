//! Polynomials and the diffusion flow `e^{tL}` acting on them.
//!
//! The generator `L = a(x) d²/dx² + b^{(k)}(x) d/dx` of a level drift maps
//! polynomials to polynomials of the same degree, so the flow `e^{tL}` is a
//! well-defined (any sign of `t`) degree-preserving linear map on coefficient
//! vectors. This module provides:
//!
//! * [`Poly`] — dense real polynomials with exact derivative evaluation,
//! * [`apply_generator`] / [`flow`] — the generator and its exponential on the
//!   monomial basis ([`flow::GeneratorMatrix`] is banded upper triangular),
//! * [`q_polys`] — the biorthogonal polynomial family tied to a coordinate
//!   vector through derivative conditions at staggered points,
//! * [`divided_difference`] — confluent Newton divided differences,
//! * [`elementary_symmetric`], [`hermite`], [`laguerre`] — classical algebra
//!   used both in kernel formulas and as closed-form flow oracles,
//! * [`root_flow`] — root trajectories of the flowed polynomial as an ODE.

use crate::error::{Error, Result};

pub mod flow;
pub mod qpoly;
pub mod roots;

pub use flow::{apply_generator, flow, flow_vs_classical, FlowComparison, GeneratorMatrix};
pub use qpoly::q_polys;
pub use roots::{poly_roots, root_flow, RootFlowConfig};

/// Dense real polynomial; `coeffs[i]` multiplies `z^i`.
///
/// Trailing zero coefficients are trimmed on construction, except that the
/// zero polynomial is stored as the single coefficient `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Poly::new(vec![c])
    }

    pub fn one() -> Self {
        Poly::constant(1.0)
    }

    /// `c · z^k`.
    pub fn monomial(k: usize, c: f64) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = c;
        Poly::new(coeffs)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `z^i` (zero beyond the stored degree).
    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    /// Highest nonzero index; the zero polynomial reports degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    /// Horner evaluation.
    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    /// Exact `n`-th derivative evaluated at `z`.
    pub fn eval_deriv(&self, n: usize, z: f64) -> f64 {
        if n > self.degree() {
            return 0.0;
        }
        let mut acc = 0.0;
        for j in (n..self.coeffs.len()).rev() {
            // falling factorial j!/(j−n)!
            let mut fall = 1.0;
            for m in 0..n {
                fall *= (j - m) as f64;
            }
            acc = acc * z + self.coeffs[j] * fall;
        }
        acc
    }

    pub fn derivative(&self) -> Poly {
        if self.degree() == 0 {
            return Poly::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| i as f64 * c)
            .collect();
        Poly::new(coeffs)
    }

    pub fn scale(&self, c: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|i| self.coeff(i) + other.coeff(i)).collect();
        Poly::new(coeffs)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut coeffs = vec![0.0; self.degree() + other.degree() + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly::new(coeffs)
    }

    /// Composition with an affine map: returns `p(α z + β)`.
    pub fn affine_compose(&self, alpha: f64, beta: f64) -> Poly {
        // Horner in the outer variable: p(u) = c_d u^d + … rewritten with
        // u = αz + β one multiply-accumulate at a time.
        let u = Poly::new(vec![beta, alpha]);
        let mut acc = Poly::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc.mul(&u).add(&Poly::constant(*c));
        }
        acc
    }
}

/// Confluent Newton divided difference of `f` over nondecreasing `points`.
///
/// `f(order, x)` must return the `order`-th derivative of the underlying
/// function at `x`; a point repeated `m + 1` times consumes derivatives up to
/// order `m` through the mean-value identity `f[x,…,x] = f^{(m)}(x)/m!`.
/// Repetition is detected by exact coordinate equality.
pub fn divided_difference<F>(f: &F, points: &[f64]) -> Result<f64>
where
    F: Fn(usize, f64) -> Result<f64>,
{
    if points.is_empty() {
        return Err(Error::InvalidArgument("divided difference needs at least one point".into()));
    }
    if points.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(format!(
            "divided-difference points must be nondecreasing, got {points:?}"
        )));
    }
    let n = points.len();
    // table[i] holds f[points_i, …, points_{i+j}] for the current column j.
    let mut table: Vec<f64> = Vec::with_capacity(n);
    for &x in points {
        table.push(f(0, x)?);
    }
    let mut fact = 1.0;
    for j in 1..n {
        fact *= j as f64;
        for i in 0..n - j {
            table[i] = if points[i + j] == points[i] {
                f(j, points[i])? / fact
            } else {
                (table[i + 1] - table[i]) / (points[i + j] - points[i])
            };
        }
    }
    Ok(table[0])
}

/// `k`-th elementary symmetric polynomial `e_k(x)` by the product recurrence
/// `∏_i (1 + x_i λ) = Σ_k e_k λ^k`.
pub fn elementary_symmetric(x: &[f64], k: usize) -> Result<f64> {
    if k > x.len() {
        return Err(Error::InvalidArgument(format!(
            "elementary symmetric index {k} exceeds {} variables",
            x.len()
        )));
    }
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &xi in x {
        for j in (1..=k).rev() {
            e[j] += xi * e[j - 1];
        }
    }
    Ok(e[k])
}

/// Hermite polynomial `H_n(z) = n! Σ_m (−1)^m z^{n−2m}/(m!(n−2m)! 2^m)`
/// (the normalization with `H_2(z) = z² − 1`), by three-term recurrence.
pub fn hermite(n: usize, z: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, z);
    if n == 0 {
        return prev;
    }
    for m in 1..n {
        let next = z * cur - m as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Laguerre polynomial `L_n^{(α)}(z) = Σ_k (−1)^k C(n+α, n−k) z^k / k!`,
/// by three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, z: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 1.0 + alpha - z);
    if n == 0 {
        return prev;
    }
    for m in 1..n {
        let mf = m as f64;
        let next = ((2.0 * mf + 1.0 + alpha - z) * cur - (mf + alpha) * prev) / (mf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Coefficients of `H_n` (same normalization as [`hermite`]).
pub fn hermite_poly(n: usize) -> Poly {
    let mut prev = Poly::one();
    let mut cur = Poly::monomial(1, 1.0);
    if n == 0 {
        return prev;
    }
    let z = Poly::monomial(1, 1.0);
    for m in 1..n {
        let next = z.mul(&cur).sub(&prev.scale(m as f64));
        prev = cur;
        cur = next;
    }
    cur
}

/// Coefficients of `L_n^{(α)}` (same normalization as [`laguerre`]).
pub fn laguerre_poly(n: usize, alpha: f64) -> Poly {
    let mut prev = Poly::one();
    let mut cur = Poly::new(vec![1.0 + alpha, -1.0]);
    if n == 0 {
        return prev;
    }
    for m in 1..n {
        let mf = m as f64;
        let a = Poly::new(vec![2.0 * mf + 1.0 + alpha, -1.0]);
        let next = a.mul(&cur).sub(&prev.scale(mf + alpha)).scale(1.0 / (mf + 1.0));
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_construction_normalizes_trailing_zeros() {
        let p = Poly::new(vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(p.coeffs(), &[1.0, 2.0]);
        assert_eq!(p.degree(), 1);
        let z = Poly::new(vec![0.0, 0.0]);
        assert_eq!(z.coeffs(), &[0.0]);
        assert!(z.is_zero());
        assert_eq!(z.degree(), 0);
    }

    #[test]
    fn poly_eval_and_derivatives() {
        // p(z) = 2 − 3z + z³
        let p = Poly::new(vec![2.0, -3.0, 0.0, 1.0]);
        assert_eq!(p.eval(2.0), 2.0 - 6.0 + 8.0);
        assert_eq!(p.eval_deriv(1, 2.0), -3.0 + 12.0);
        assert_eq!(p.eval_deriv(2, 2.0), 12.0);
        assert_eq!(p.eval_deriv(3, 2.0), 6.0);
        assert_eq!(p.eval_deriv(4, 2.0), 0.0);
        assert_eq!(p.derivative().coeffs(), &[-3.0, 0.0, 3.0]);
    }

    #[test]
    fn poly_arithmetic() {
        let p = Poly::new(vec![1.0, 1.0]); // 1 + z
        let q = Poly::new(vec![-1.0, 1.0]); // −1 + z
        assert_eq!(p.mul(&q).coeffs(), &[-1.0, 0.0, 1.0]);
        assert_eq!(p.add(&q).coeffs(), &[0.0, 2.0]);
        assert_eq!(p.sub(&q).coeffs(), &[2.0]);
        // (2z + 3)² + 1 via affine composition of z² + 1
        let s = Poly::new(vec![1.0, 0.0, 1.0]).affine_compose(2.0, 3.0);
        assert_eq!(s.coeffs(), &[10.0, 12.0, 4.0]);
    }

    #[test]
    fn divided_difference_examples() {
        let sq = |n: usize, x: f64| {
            Ok(match n {
                0 => x * x,
                1 => 2.0 * x,
                2 => 2.0,
                _ => 0.0,
            })
        };
        assert!((divided_difference(&sq, &[1.0, 2.0]).unwrap() - 3.0).abs() < 1e-14);
        assert!((divided_difference(&sq, &[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-14);
        let cube = Poly::monomial(3, 1.0);
        let f = |n: usize, x: f64| Ok(cube.eval_deriv(n, x));
        assert!((divided_difference(&f, &[0.0, 1.0, 2.0]).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn divided_difference_of_degree_d_poly_is_leading_coefficient() {
        // Over d+1 points (any multiplicity pattern) the top divided
        // difference of a degree-d polynomial equals its leading coefficient.
        let p = Poly::new(vec![0.3, -1.2, 0.0, 2.5, -0.7]);
        let f = |n: usize, x: f64| Ok(p.eval_deriv(n, x));
        for pts in [
            vec![-1.0, -0.3, 0.2, 0.9, 1.7],
            vec![-1.0, -0.3, -0.3, 0.9, 1.7],
            vec![0.4, 0.4, 0.4, 0.4, 0.4],
        ] {
            let d = divided_difference(&f, &pts).unwrap();
            assert!((d - (-0.7)).abs() < 1e-12, "points {pts:?}: {d}");
        }
    }

    #[test]
    fn divided_difference_confluent_matches_separated_limit() {
        let p = Poly::new(vec![1.0, 0.5, -2.0, 1.0, 0.25]);
        let f = |n: usize, x: f64| Ok(p.eval_deriv(n, x));
        let conf = divided_difference(&f, &[0.3, 0.3, 1.1]).unwrap();
        let eps = 1e-6;
        let sep = divided_difference(&f, &[0.3, 0.3 + eps, 1.1]).unwrap();
        assert!((conf - sep).abs() < 1e-5, "{conf} vs {sep}");
    }

    #[test]
    fn divided_difference_rejects_unsorted_points() {
        let f = |_: usize, x: f64| Ok(x);
        assert!(divided_difference(&f, &[1.0, 0.0]).is_err());
        assert!(divided_difference(&f, &[]).is_err());
    }

    #[test]
    fn elementary_symmetric_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(elementary_symmetric(&x, 0).unwrap(), 1.0);
        assert_eq!(elementary_symmetric(&x, 1).unwrap(), 6.0);
        assert_eq!(elementary_symmetric(&x, 2).unwrap(), 11.0);
        assert_eq!(elementary_symmetric(&x, 3).unwrap(), 6.0);
        assert!(elementary_symmetric(&x, 4).is_err());
        assert_eq!(elementary_symmetric(&[], 0).unwrap(), 1.0);
    }

    #[test]
    fn elementary_symmetric_matches_subset_enumeration() {
        let x = [0.7, -1.3, 2.1, 0.4, -0.9];
        for k in 0..=x.len() {
            // enumerate k-subsets by bitmask
            let mut total = 0.0;
            for mask in 0u32..(1 << x.len()) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let mut prod = 1.0;
                for (i, xi) in x.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        prod *= xi;
                    }
                }
                total += prod;
            }
            let e = elementary_symmetric(&x, k).unwrap();
            assert!((e - total).abs() < 1e-12 * total.abs().max(1.0), "k={k}: {e} vs {total}");
        }
    }

    /// Printed-sum oracles for the classical polynomials.
    fn hermite_sum(n: usize, z: f64) -> f64 {
        let mut total = 0.0;
        let mut m = 0;
        while 2 * m <= n {
            let mut term = fact(n) / (fact(m) * fact(n - 2 * m) * 2.0f64.powi(m as i32));
            term *= z.powi((n - 2 * m) as i32);
            total += if m % 2 == 0 { term } else { -term };
            m += 1;
        }
        total
    }

    fn laguerre_sum(n: usize, alpha: f64, z: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..=n {
            // C(n+α, n−k) with real top argument
            let mut binom = 1.0;
            for i in 1..=(n - k) {
                binom *= (k as f64 + alpha + i as f64) / i as f64;
            }
            let term = binom * z.powi(k as i32) / fact(k);
            total += if k % 2 == 0 { term } else { -term };
        }
        total
    }

    fn fact(n: usize) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    #[test]
    fn hermite_matches_printed_sum() {
        assert_eq!(hermite(0, 0.7), 1.0);
        let z = 0.83;
        assert!((hermite(2, z) - (z * z - 1.0)).abs() < 1e-15);
        for n in 0..=10 {
            for z in [-2.2, -0.4, 0.0, 1.3, 3.1] {
                let rec = hermite(n, z);
                let sum = hermite_sum(n, z);
                assert!(
                    (rec - sum).abs() < 1e-10 * sum.abs().max(1.0),
                    "H_{n}({z}): {rec} vs {sum}"
                );
                assert!(
                    (hermite_poly(n).eval(z) - rec).abs() < 1e-10 * rec.abs().max(1.0),
                    "H_{n} coefficients disagree at {z}"
                );
            }
        }
    }

    #[test]
    fn laguerre_matches_printed_sum() {
        let (alpha, z): (f64, f64) = (0.5, 1.7);
        assert_eq!(laguerre(0, alpha, z), 1.0);
        assert!((laguerre(1, alpha, z) - (-z + alpha + 1.0)).abs() < 1e-15);
        for n in 0..=10 {
            for alpha in [-0.5, 0.0, 0.5, 2.5] {
                for z in [0.0, 0.9, 4.2] {
                    let rec = laguerre(n, alpha, z);
                    let sum = laguerre_sum(n, alpha, z);
                    assert!(
                        (rec - sum).abs() < 1e-10 * sum.abs().max(1.0),
                        "L_{n}^{alpha}({z}): {rec} vs {sum}"
                    );
                    let pc = laguerre_poly(n, alpha).eval(z);
                    assert!(
                        (pc - rec).abs() < 1e-10 * rec.abs().max(1.0),
                        "L_{n}^{alpha} coefficients disagree at {z}"
                    );
                }
            }
        }
    }
}
