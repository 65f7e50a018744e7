//! Feller boundary classification of the interval endpoints, per level.
//!
//! For each level drift `b^{(k)}` the endpoint is classified through the scale
//! density `s = e^{−F}` and speed density `m = e^{F}/a`, `F(ξ) = ∫ b^{(k)}/a`,
//! by testing divergence of the scale mass `S`, the speed mass `M`, and the
//! mixed integrals `N = ∫ S[ξ,anchor] m(ξ) dξ` (when `S = ∞`) or
//! `Σ = ∫ M[ξ,anchor] s(ξ) dξ` (when `M = ∞`):
//!
//! * `S, M < ∞`  → regular  → violates the standing assumption,
//! * `S, M = ∞`  → natural,
//! * `S = ∞, M < ∞` → entrance if `N < ∞`, natural otherwise,
//! * `S < ∞, M = ∞` → exit (violates) if `Σ < ∞`, natural otherwise.
//!
//! All integrals are evaluated over dyadic shells shrinking into the endpoint
//! (or doubling toward an infinite one), entirely in log space; divergence is
//! decided from the trailing shell-to-shell ratios. Quadrature within a shell
//! is a closed (endpoint-including) trapezoid rule — an open rule misses the
//! exponential boundary layers that dominate the divergent cumulatives.
//! Ambiguous ratio patterns are reported as `Indeterminate` rather than forced
//! into a class.

use super::{LevelSystem, PearsonSpec};
use crate::error::Result;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryClass {
    Natural,
    Entrance,
    ViolatesAssumption,
    Indeterminate,
}

impl std::fmt::Display for BoundaryClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoundaryClass::Natural => "natural",
            BoundaryClass::Entrance => "entrance",
            BoundaryClass::ViolatesAssumption => "violates-assumption",
            BoundaryClass::Indeterminate => "indeterminate",
        };
        f.write_str(s)
    }
}

/// Endpoint classes per level (index `k−1` holds level `k`); `ok` is true when
/// every level at both endpoints is natural or entrance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    pub left: Vec<BoundaryClass>,
    pub right: Vec<BoundaryClass>,
    pub ok: bool,
}

/// Classify both endpoints for every level drift of the system.
pub fn boundary_report(sys: &LevelSystem) -> Result<BoundaryReport> {
    let anchor = sys.spec.default_anchor();
    let mut left = Vec::with_capacity(sys.n);
    let mut right = Vec::with_capacity(sys.n);
    for k in 1..=sys.n {
        let (b1k, b0k) = sys.level_drift_coeffs(k)?;
        left.push(classify_endpoint(&sys.spec, b1k, b0k, sys.spec.l, anchor)?);
        right.push(classify_endpoint(&sys.spec, b1k, b0k, sys.spec.r, anchor)?);
    }
    let ok = left
        .iter()
        .chain(right.iter())
        .all(|c| matches!(c, BoundaryClass::Natural | BoundaryClass::Entrance));
    Ok(BoundaryReport { left, right, ok })
}

const SHELLS_FINITE: usize = 48;
const SHELLS_INFINITE: usize = 44;
/// Closed-rule nodes per shell (trapezoid panels + 1).
const NODES: usize = 192;
/// Trailing window of shell ratios inspected by the divergence test.
const RATIO_WINDOW: usize = 10;

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Shell boundaries running from the anchor toward the endpoint; shell j lies
/// between `points[j]` (anchor side) and `points[j+1]` (endpoint side).
fn shell_points(e: f64, c: f64) -> Vec<f64> {
    if e.is_finite() {
        (0..=SHELLS_FINITE).map(|j| e + (c - e) * 0.5f64.powi(j as i32)).collect()
    } else {
        let d0 = 1.0f64.max(c.abs());
        let sign = if e > 0.0 { 1.0 } else { -1.0 };
        let mut pts = vec![c];
        for j in 0..SHELLS_INFINITE {
            pts.push(c + sign * d0 * 2.0f64.powi(j as i32));
        }
        pts
    }
}

/// Log-integrand values at the shell's uniform closed grid (running from the
/// anchor-side edge to the endpoint-side edge) plus the log trapezoid prefix
/// integrals: `prefix[i] = ln ∫` from the anchor-side edge to node i.
struct ShellScan {
    vals: Vec<f64>,
    prefix: Vec<f64>,
    ln_h: f64,
}

fn scan_shell<G: Fn(f64) -> f64>(g: &G, anchor_edge: f64, outer_edge: f64) -> ShellScan {
    let h = (outer_edge - anchor_edge).abs() / NODES as f64;
    let ln_h = h.ln();
    let mut vals = Vec::with_capacity(NODES + 1);
    for i in 0..=NODES {
        let x = anchor_edge + (outer_edge - anchor_edge) * i as f64 / NODES as f64;
        let v = g(x);
        vals.push(if v.is_nan() { f64::NEG_INFINITY } else { v });
    }
    let mut prefix = Vec::with_capacity(NODES + 1);
    let mut acc = f64::NEG_INFINITY;
    prefix.push(acc);
    for i in 1..=NODES {
        let panel = lse2(vals[i - 1], vals[i]) - std::f64::consts::LN_2 + ln_h;
        acc = lse2(acc, panel);
        prefix.push(acc);
    }
    ShellScan { vals, prefix, ln_h }
}

/// Decide whether the shell series Σ e^{lnv_j} diverges. `None` = ambiguous.
fn diverges(lnv: &[f64]) -> Option<bool> {
    let clean: Vec<f64> = lnv.iter().map(|v| if v.is_nan() { f64::NEG_INFINITY } else { *v }).collect();
    let maxv = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if maxv == f64::NEG_INFINITY {
        return Some(false); // identically negligible
    }
    let last = *clean.last().unwrap();
    if last < maxv - 60.0 {
        return Some(false); // tail contributes an e^{−60} fraction at most
    }
    let start = clean.len().saturating_sub(RATIO_WINDOW + 1);
    let diffs: Vec<f64> = clean[start..].windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.iter().all(|d| *d <= -0.02) {
        return Some(false); // geometric decay
    }
    if diffs.iter().all(|d| *d >= -0.005) {
        return Some(true); // non-decaying shells (covers log-divergence)
    }
    None
}

fn classify_endpoint(spec: &PearsonSpec, b1k: f64, b0k: f64, e: f64, c: f64) -> Result<BoundaryClass> {
    let points = shell_points(e, c);
    let nshells = points.len() - 1;
    // F(ξ) = ∫_c^ξ b^{(k)}/a; closed form for the supported coefficient
    // patterns, so the per-node cost is trivial.
    let f_at = |xi: f64| spec.drift_potential(b1k, b0k, c, xi);
    let g_s = |xi: f64| -f_at(xi).unwrap_or(f64::NAN);
    let g_m = |xi: f64| f_at(xi).map(|f| f - spec.a(xi).ln()).unwrap_or(f64::NAN);

    let mut ln_is = Vec::with_capacity(nshells);
    let mut ln_im = Vec::with_capacity(nshells);
    for j in 0..nshells {
        ln_is.push(scan_shell(&g_s, points[j], points[j + 1]).prefix[NODES]);
        ln_im.push(scan_shell(&g_m, points[j], points[j + 1]).prefix[NODES]);
    }

    let class = match (diverges(&ln_is), diverges(&ln_im)) {
        (None, _) | (_, None) => BoundaryClass::Indeterminate,
        (Some(false), Some(false)) => BoundaryClass::ViolatesAssumption, // regular
        (Some(true), Some(true)) => BoundaryClass::Natural,
        (Some(true), Some(false)) => {
            // N = ∫ S[ξ, c] m(ξ) dξ with S the (divergent) scale cumulative.
            match diverges(&cross_shells(&points, &g_s, &g_m)) {
                Some(false) => BoundaryClass::Entrance,
                Some(true) => BoundaryClass::Natural,
                None => BoundaryClass::Indeterminate,
            }
        }
        (Some(false), Some(true)) => {
            // Σ = ∫ M[ξ, c] s(ξ) dξ with M the (divergent) speed cumulative.
            match diverges(&cross_shells(&points, &g_m, &g_s)) {
                Some(false) => BoundaryClass::ViolatesAssumption, // exit
                Some(true) => BoundaryClass::Natural,
                None => BoundaryClass::Indeterminate,
            }
        }
    };
    Ok(class)
}

/// Shell values of `∫ cum(ξ) e^{g_w(ξ)} dξ`, where `cum(ξ)` integrates
/// `e^{g_c}` from ξ back to the anchor; the running total over inner shells is
/// folded into the node-level cumulative in log space.
fn cross_shells<GC, GW>(points: &[f64], g_c: &GC, g_w: &GW) -> Vec<f64>
where
    GC: Fn(f64) -> f64,
    GW: Fn(f64) -> f64,
{
    let nshells = points.len() - 1;
    let mut out = Vec::with_capacity(nshells);
    let mut cum_prev = f64::NEG_INFINITY; // log of ∫ e^{g_c} over shells 0..j
    for j in 0..nshells {
        let sc = scan_shell(g_c, points[j], points[j + 1]);
        let sw = scan_shell(g_w, points[j], points[j + 1]);
        let mut shell = f64::NEG_INFINITY;
        for i in 0..=NODES {
            let ln_cum = lse2(sc.prefix[i], cum_prev);
            let w = if i == 0 || i == NODES { sw.ln_h - std::f64::consts::LN_2 } else { sw.ln_h };
            shell = lse2(shell, ln_cum + sw.vals[i] + w);
        }
        out.push(shell);
        cum_prev = lse2(cum_prev, sc.prefix[NODES]);
    }
    out
}
