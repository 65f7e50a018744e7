//! The biorthogonal polynomial family attached to a coordinate vector.
//!
//! Given coordinates `x₁, …, xₙ`, the polynomial `q_k^{(n)}` (for
//! `k = 0, …, n−1`) has degree exactly `k` and is pinned down by the
//! staggered derivative conditions
//!
//! `∂_z^i q_k^{(n)}(z) |_{z = x_{n−i}} = (−1)^k · 1_{i=k}`,  `i = 0, …, k`.
//!
//! Reading the conditions from `i = k` downward gives a unit-triangular
//! system for the coefficients, solved here by back-substitution.

use super::Poly;
use crate::error::{Error, Result};

/// Compute `q_0^{(n)}, …, q_{n−1}^{(n)}` for the first `n` coordinates of `x`.
pub fn q_polys(x: &[f64], n: usize) -> Result<Vec<Poly>> {
    if n == 0 {
        return Err(Error::InvalidArgument("q-polynomial level must be at least 1".into()));
    }
    if x.len() < n {
        return Err(Error::InvalidArgument(format!(
            "q-polynomials at level {n} need {n} coordinates, got {}",
            x.len()
        )));
    }
    if x.iter().take(n).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("q-polynomial coordinates must be finite".into()));
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        // factorials up to k
        let mut fact = vec![1.0; k + 1];
        for i in 1..=k {
            fact[i] = fact[i - 1] * i as f64;
        }
        let mut c = vec![0.0; k + 1];
        c[k] = if k % 2 == 0 { 1.0 } else { -1.0 } / fact[k];
        // i-th condition: Σ_{j≥i} c_j · j!/(j−i)! · x_{n−i}^{j−i} = 0 for i < k
        for i in (0..k).rev() {
            let xi = x[n - 1 - i];
            let mut s = 0.0;
            for (j, cj) in c.iter().enumerate().take(k + 1).skip(i + 1) {
                s += cj * fact[j] / fact[j - i] * xi.powi((j - i) as i32);
            }
            c[i] = -s / fact[i];
        }
        out.push(Poly::new(c));
    }
    Ok(out)
}
