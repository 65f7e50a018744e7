//! Estimators over simulated samples: empirical distribution functions,
//! histogram densities, two-sample Kolmogorov–Smirnov comparison, and a
//! polynomial-martingale consistency check against the backward flow.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pearson::LevelSystem;
use crate::polyflow::{flow, Poly};
use crate::quad::{pairwise_sum, pairwise_sum_by};

use super::{path_rng, sigma, truncate, SimConfig};

fn check_samples(samples: &[f64], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} must be nonempty")));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("{what} must not contain NaN")));
    }
    Ok(())
}

/// Empirical distribution function `#{x_i ≤ z} / n`.
pub fn empirical_cdf(samples: &[f64], z: f64) -> Result<f64> {
    check_samples(samples, "samples")?;
    if z.is_nan() {
        return Err(Error::InvalidArgument("threshold must not be NaN".into()));
    }
    let hits = samples.iter().filter(|&&x| x <= z).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Joint empirical distribution function `#{x_i ≤ z componentwise} / n` for
/// vector samples.
pub fn empirical_cdf_joint(samples: &[Vec<f64>], z: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("samples must be nonempty".into()));
    }
    if z.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("threshold must not be NaN".into()));
    }
    let mut hits = 0usize;
    for x in samples {
        if x.len() != z.len() {
            return Err(Error::InvalidArgument(format!(
                "sample dimension {} does not match threshold dimension {}",
                x.len(),
                z.len()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("samples must not contain NaN".into()));
        }
        if x.iter().zip(z).all(|(xi, zi)| xi <= zi) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Histogram density estimate on the given strictly increasing bin edges:
/// bin mass divided by `n · width`. Samples outside the edges are ignored
/// (they still count toward `n`).
pub fn hist_density(samples: &[f64], edges: &[f64]) -> Result<Vec<f64>> {
    check_samples(samples, "samples")?;
    if edges.len() < 2 {
        return Err(Error::InvalidArgument("need at least two bin edges".into()));
    }
    if edges.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("bin edges must be finite".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("bin edges must be strictly increasing".into()));
    }
    let mut counts = vec![0usize; edges.len() - 1];
    for &x in samples {
        // partition_point gives the first edge > x, so bin b covers
        // [edges[b], edges[b+1]) with the last bin closed on the right.
        if x < edges[0] || x > edges[edges.len() - 1] {
            continue;
        }
        let b = edges.partition_point(|&e| e <= x).min(edges.len() - 1) - 1;
        counts[b] += 1;
    }
    let n = samples.len() as f64;
    Ok(counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (n * (w[1] - w[0])))
        .collect())
}

/// Two-sample Kolmogorov–Smirnov statistic
/// `sup_z |F_a(z) − F_b(z)|`, with ties handled by comparing the two
/// empirical distribution functions only after both have absorbed every
/// sample at each merge value.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, "first sample set")?;
    check_samples(b, "second sample set")?;
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let v = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= v {
            i += 1;
        }
        while j < sb.len() && sb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // One tail may remain: the other EDF is already 1 there.
    while i < sa.len() {
        i += 1;
        d = d.max((i as f64 / na - 1.0).abs());
    }
    while j < sb.len() {
        j += 1;
        d = d.max((1.0 - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic two-sample Kolmogorov–Smirnov critical value at level
/// `alpha`: `√(−ln(α/2)/2) · √((n₁+n₂)/(n₁n₂))`.
pub fn ks_critical(alpha: f64, n1: usize, n2: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidArgument("sample sizes must be positive".into()));
    }
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n1, n2) = (n1 as f64, n2 as f64);
    Ok(c * ((n1 + n2) / (n1 * n2)).sqrt())
}

/// Monte Carlo check of the polynomial martingale property at level `k`:
/// simulates `X_t` from `x0` with the level-`k` drift and evaluates the
/// backward-flowed polynomial, whose expectation must equal `p(x0)`.
/// Returns `(mean − p(x0), standard error)`.
pub fn martingale_check(
    sys: &LevelSystem,
    k: usize,
    p: &Poly,
    x0: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if cfg.n_paths < 2 {
        return Err(Error::InvalidArgument(
            "martingale check needs at least two paths for a standard error".into(),
        ));
    }
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    if !x0.is_finite() || x0 <= sys.spec.l || x0 >= sys.spec.r {
        return Err(Error::InvalidArgument(format!(
            "starting point must lie inside the open state interval ({}, {})",
            sys.spec.l, sys.spec.r
        )));
    }
    let q = flow(sys, k, -t, p)?;
    let coeffs = sys.level_drift_coeffs(k)?;
    let steps = (t / cfg.dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let sh = h.sqrt();
    let spec = &sys.spec;
    let values: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|pidx| {
            let mut rng = path_rng(cfg.seed, pidx as u64);
            let mut x = x0;
            for _ in 0..steps {
                let xt = truncate(spec, cfg.positivity, x);
                let z: f64 = rng.sample(StandardNormal);
                x += (coeffs.0 * xt + coeffs.1) * h + sigma(spec, xt) * sh * z;
                x = truncate(spec, cfg.positivity, x);
            }
            q.eval(x)
        })
        .collect();
    let n = values.len() as f64;
    let mean = pairwise_sum(&values) / n;
    let var = pairwise_sum_by(&values, |v| (v - mean) * (v - mean)) / (n - 1.0);
    Ok((mean - p.eval(x0), (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pearson::PearsonSpec;

    #[test]
    fn empirical_cdf_counts_exactly() {
        let xs = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(empirical_cdf(&xs, 0.5).unwrap(), 0.0);
        assert_eq!(empirical_cdf(&xs, 2.0).unwrap(), 0.75);
        assert_eq!(empirical_cdf(&xs, 10.0).unwrap(), 1.0);
        assert!(empirical_cdf(&[], 0.0).is_err());
        assert!(empirical_cdf(&[f64::NAN], 0.0).is_err());
        assert!(empirical_cdf(&xs, f64::NAN).is_err());
    }

    #[test]
    fn joint_cdf_counts_componentwise() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]];
        assert_eq!(empirical_cdf_joint(&xs, &[0.5, 1.5]).unwrap(), 1.0 / 3.0);
        assert_eq!(empirical_cdf_joint(&xs, &[2.0, 2.0]).unwrap(), 1.0);
        assert!(empirical_cdf_joint(&xs, &[0.5]).is_err());
        assert!(empirical_cdf_joint(&[], &[0.5]).is_err());
    }

    #[test]
    fn histogram_normalizes_by_width_and_count() {
        let xs = [0.1, 0.2, 0.6, 0.6, 1.4, -5.0];
        let d = hist_density(&xs, &[0.0, 0.5, 1.0, 2.0]).unwrap();
        // Counts 2, 2, 1 over widths 0.5, 0.5, 1.0 with n = 6; the point
        // at -5 is outside but still counts toward n.
        assert_eq!(d, vec![2.0 / 3.0, 2.0 / 3.0, 1.0 / 6.0]);
        // The right endpoint belongs to the last bin.
        let e = hist_density(&[2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(e, vec![0.0, 1.0]);
        assert!(hist_density(&xs, &[0.0]).is_err());
        assert!(hist_density(&xs, &[0.0, 0.0]).is_err());
        assert!(hist_density(&xs, &[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn ks_distance_handles_ties_and_tails() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        // Disjoint supports: distance 1.
        assert_eq!(ks_distance(&[0.0, 0.1], &[5.0, 6.0]).unwrap(), 1.0);
        // Hand-computed mixed case: sup is at the atom 1.5.
        let d = ks_distance(&[1.0, 2.0, 3.0], &[1.5]).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
        // Ties across the two samples are absorbed jointly.
        let d = ks_distance(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert!(ks_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_critical_matches_reference_value() {
        // sqrt(-ln(0.005)/2) * sqrt(2e-5) at the 1% level, 1e5 vs 1e5.
        let c = ks_critical(0.01, 100_000, 100_000).unwrap();
        assert!((c - 0.00728).abs() < 1e-5, "critical value {c}");
        assert!(ks_critical(0.0, 10, 10).is_err());
        assert!(ks_critical(1.0, 10, 10).is_err());
        assert!(ks_critical(0.01, 0, 10).is_err());
    }

    #[test]
    fn martingale_check_is_exact_for_constants() {
        let sys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.1), 2).unwrap();
        let cfg = SimConfig::new(1e-2, 50, 3, vec![]).unwrap();
        let (diff, se) = martingale_check(&sys, 1, &Poly::one(), 0.4, 0.3, &cfg).unwrap();
        assert_eq!(diff, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn martingale_check_brownian_quadratic() {
        // Euler is exact in law for constant coefficients, so the flowed
        // quadratic must average to p(x0) up to Monte Carlo noise.
        let sys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.0), 1).unwrap();
        let cfg = SimConfig::new(5e-2, 4_000, 17, vec![]).unwrap();
        let p = Poly::monomial(2, 1.0);
        let (diff, se) = martingale_check(&sys, 1, &p, 0.3, 1.0, &cfg).unwrap();
        assert!(se > 0.0);
        assert!(diff.abs() < 4.0 * se, "diff {diff} se {se}");
    }

    #[test]
    fn martingale_check_squared_bessel_quadratic() {
        let sys = LevelSystem::new(PearsonSpec::squared_bessel(3.0), 1).unwrap();
        let cfg = SimConfig::new(1e-3, 4_000, 23, vec![]).unwrap();
        let p = Poly::monomial(2, 1.0);
        let (diff, se) = martingale_check(&sys, 1, &p, 2.0, 0.5, &cfg).unwrap();
        // 4 standard errors plus a little room for the Euler bias.
        assert!(diff.abs() < 4.0 * se + 0.05, "diff {diff} se {se}");
    }

    #[test]
    fn martingale_check_rejects_bad_requests() {
        let sys = LevelSystem::new(PearsonSpec::brownian(0.5, 0.0), 1).unwrap();
        let cfg = SimConfig::new(1e-2, 50, 3, vec![]).unwrap();
        let p = Poly::one();
        assert!(martingale_check(&sys, 1, &p, 0.0, -1.0, &cfg).is_err());
        assert!(martingale_check(&sys, 1, &p, f64::NAN, 1.0, &cfg).is_err());
        let one_path = SimConfig::new(1e-2, 1, 3, vec![]).unwrap();
        assert!(martingale_check(&sys, 1, &p, 0.0, 1.0, &one_path).is_err());
        // Level index out of range surfaces from the drift lookup.
        assert!(martingale_check(&sys, 2, &p, 0.0, 1.0, &cfg).is_err());
    }
}
