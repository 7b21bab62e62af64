//! Bilinear estimates: quadrature of the J-integral functions whose
//! boundedness implies the estimates, sup sweeps over base points, and
//! grid-level norm quotients of the estimates themselves.

use crate::dispersion::{classify_region, Family, FrequencyPoint, Scheme};
use crate::error::{Error, Result};
use crate::jbracket as jb;
use crate::quadrature::{
    dyadic_breaks, integrate_real_line, integrate_real_with_breaks, LineIntegral, QuadOptions,
};
use crate::spectral::{bourgain_norm, psi, BourgainFamily, BourgainParams, SpaceTimeField};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub kappa: f64,
    pub s: f64,
}

impl EstimateParams {
    pub fn new(a: f64, b: f64, d: f64, kappa: f64, s: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::NonPositiveA(a));
        }
        if ![b, d, kappa, s].iter().all(|v| v.is_finite()) {
            return Err(Error::ParamDomainViolated("non-finite parameter".into()));
        }
        Ok(EstimateParams { a, b, d, kappa, s })
    }

    /// `b, d ∈ (3/8, 1/2)`.
    pub fn check_lemma_band(&self) -> Result<()> {
        let ok = |x: f64| x > 0.375 && x < 0.5;
        if ok(self.b) && ok(self.d) {
            Ok(())
        } else {
            Err(Error::ParamDomainViolated(format!(
                "need b, d in (3/8, 1/2), got b={}, d={}",
                self.b, self.d
            )))
        }
    }

    fn check_wide_band(&self) -> Result<()> {
        let ok = |x: f64| x > 0.25 && x < 0.5;
        if ok(self.b) && ok(self.d) {
            Ok(())
        } else {
            Err(Error::ParamDomainViolated(format!(
                "need b, d in (1/4, 1/2), got b={}, d={}",
                self.b, self.d
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JIndex {
    J1,
    J2,
    J3,
    J4,
    J5,
    J6,
    /// One-dimensional function for `|τ| > 10ξ²`.
    AJ,
    AJ1,
    AJ2,
    AJ3,
}

impl JIndex {
    pub const ALL: [JIndex; 10] = [
        JIndex::J1,
        JIndex::J2,
        JIndex::J3,
        JIndex::J4,
        JIndex::J5,
        JIndex::J6,
        JIndex::AJ,
        JIndex::AJ1,
        JIndex::AJ2,
        JIndex::AJ3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JIndex::J1 => "J1",
            JIndex::J2 => "J2",
            JIndex::J3 => "J3",
            JIndex::J4 => "J4",
            JIndex::J5 => "J5",
            JIndex::J6 => "J6",
            JIndex::AJ => "A-J",
            JIndex::AJ1 => "A-J1",
            JIndex::AJ2 => "A-J2",
            JIndex::AJ3 => "A-J3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        JIndex::ALL.iter().copied().find(|j| j.name().eq_ignore_ascii_case(s))
    }

    pub fn family(self) -> Family {
        match self {
            JIndex::J4 | JIndex::J5 | JIndex::J6 => Family::N2,
            _ => Family::N1,
        }
    }

    /// Region of the scheme whose indicator enters the integrand.
    pub fn region(self) -> u8 {
        match self {
            JIndex::J1 | JIndex::J4 | JIndex::AJ | JIndex::AJ1 => 1,
            JIndex::J2 | JIndex::J5 | JIndex::AJ2 => 2,
            JIndex::J3 | JIndex::J6 | JIndex::AJ3 => 3,
        }
    }

    fn base(self) -> Slot {
        match self {
            JIndex::J1 | JIndex::J4 | JIndex::AJ | JIndex::AJ1 => Slot::Out,
            JIndex::J2 | JIndex::J5 | JIndex::AJ2 => Slot::Second,
            JIndex::J3 | JIndex::J6 | JIndex::AJ3 => Slot::First,
        }
    }

    /// Names of the two base coordinates.
    pub fn base_names(self) -> (&'static str, &'static str) {
        match self.base() {
            Slot::Out => ("xi", "tau"),
            Slot::First => ("xi1", "tau1"),
            Slot::Second => ("xi2", "tau2"),
        }
    }
}

/// Which of the three frequency pairs, or their modulations, a quantity
/// refers to: the output `(ξ,τ)`, the first factor `(ξ₁,τ₁)` or the second
/// `(ξ₂,τ₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Out,
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indicator {
    /// Region indicator of the scheme selected by `a`.
    Region,
    /// Indicator replaced by 1 everywhere.
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JSpec {
    pub index: JIndex,
    /// The non-integrated pair, in the slot given by the index.
    pub base: (f64, f64),
    /// Restricts the spatial integration variable to `|y| ≤ L` (and the
    /// temporal one to `|t| ≤ L²`).
    pub truncation: Option<f64>,
    pub indicator: Indicator,
}

impl JSpec {
    pub fn new(index: JIndex, base: (f64, f64)) -> Self {
        JSpec {
            index,
            base,
            truncation: None,
            indicator: Indicator::Region,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JValue {
    pub value: f64,
    /// Extrapolated share beyond the last quadrature panel.
    pub tail: f64,
}

fn quad_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-8,
        max_intervals: 2000,
    }
}

/// Signed resonance `w − w₁ − w₂` of the family.
fn signed_resonance(fam: Family, a: f64, xi: f64, xi1: f64, xi2: f64) -> f64 {
    match fam {
        Family::N1 => xi * xi + xi1 * xi1 - a * xi2 * xi2,
        Family::N2 => a * xi * xi - xi1 * xi1 - xi2 * xi2,
    }
}

/// Modulation that must dominate in region `r` of `scheme`.
fn region_target(scheme: Scheme, r: u8) -> Option<Slot> {
    match (scheme, r) {
        (_, 1) => Some(Slot::Out),
        (Scheme::Resonant, _) => None,
        (Scheme::R, 2) => Some(Slot::First),
        (Scheme::R, _) => Some(Slot::Second),
        (_, 2) => Some(Slot::Second),
        (_, _) => Some(Slot::First),
    }
}

/// Whether the frequency part of `(ξ, ξ₁, ξ₂)` places the point in region 1
/// of `scheme` whatever the modulations.
fn region_one_by_frequency(scheme: Scheme, a: f64, xi: f64, xi2: f64) -> bool {
    let c = (2.0 * a - 1.0) / 4.0;
    match scheme {
        Scheme::Resonant => true,
        Scheme::R => xi2.abs() <= 1.0,
        Scheme::S => xi.abs() <= 1.0,
        Scheme::A => {
            let r = xi2.abs();
            r <= 1.0 || ((1.0 - a) * xi2 - xi).abs() > c * r || (xi - 0.5 * xi2).abs() <= c * r
        }
        Scheme::B => {
            let r = xi.abs();
            r <= 1.0 || (xi2 - 0.5 * xi).abs() > c * r || ((1.0 - a) * xi - xi2).abs() <= c * r
        }
    }
}

/// Indicator of region `r` projected along the integrated temporal
/// variable: 1 when some value of it puts the point in the region.
///
/// With `m` the base modulation and `H` the signed resonance, the other two
/// modulations are constrained by `w₁ + w₂ = w − H` (base `w`) or
/// `w − w_j = w_i + H` (base `w_i`), so the base can dominate iff
/// `|m ∓ H| ≤ 2|m|`; a different target can always be made dominant.
fn projected_indicator(
    scheme: Scheme,
    r: u8,
    a: f64,
    (xi, xi1, xi2): (f64, f64, f64),
    base: Slot,
    m: f64,
) -> bool {
    let target = match region_target(scheme, r) {
        Some(t) => t,
        None => return false,
    };
    if scheme == Scheme::Resonant {
        return true;
    }
    let free = region_one_by_frequency(scheme, a, xi, xi2);
    if r == 1 && free {
        return true;
    }
    if r != 1 && free {
        return false;
    }
    if target != base {
        return true;
    }
    let h = signed_resonance(scheme.family(), a, xi, xi1, xi2);
    match base {
        Slot::Out => (m - h).abs() <= 2.0 * m.abs(),
        _ => (m + h).abs() <= 2.0 * m.abs(),
    }
}

/// `(ξ, ξ₁, ξ₂)` from the base spatial frequency and the integration variable.
fn frequencies(base: Slot, u: f64, y: f64) -> (f64, f64, f64) {
    match base {
        Slot::Out => (u, u - y, y),
        Slot::Second => (y, y - u, u),
        Slot::First => (u + y, u, y),
    }
}

/// Coefficients `(A, B, C)` of the bracketed quadratic `A y² + B y + C`.
fn bracket_quadratic(index: JIndex, a: f64, u: f64, v: f64) -> (f64, f64, f64) {
    match index {
        JIndex::J1 | JIndex::AJ => (1.0 - a, -2.0 * u, v + u * u),
        JIndex::J2 => (2.0, -2.0 * u, v + u * u),
        JIndex::J3 => (1.0 - a, 2.0 * u, v + u * u),
        JIndex::J4 => (2.0, -2.0 * u, v + u * u),
        JIndex::J5 => (a - 1.0, 2.0 * u, v - u * u),
        JIndex::J6 => (a + 1.0, 2.0 * a * u, v + a * u * u),
        _ => unreachable!("two-dimensional index"),
    }
}

fn quadratic_breaks((qa, qb, qc): (f64, f64, f64)) -> Vec<f64> {
    if qa == 0.0 {
        return if qb != 0.0 { vec![-qc / qb] } else { vec![] };
    }
    let vertex = -qb / (2.0 * qa);
    let disc = qb * qb - 4.0 * qa * qc;
    let mut out = vec![vertex];
    if disc > 0.0 {
        let h = disc.sqrt() / (2.0 * qa.abs());
        out.push(vertex - h);
        out.push(vertex + h);
    }
    out
}

/// Edges of the frequency conditions in the integration variable.
fn frequency_breaks(scheme: Scheme, a: f64, base: Slot, u: f64) -> Vec<f64> {
    let mut out = vec![-1.0, 1.0, 0.0];
    let c = (2.0 * a - 1.0) / 4.0;
    // each cone |p·ξ₂ − q·ξ| = c·|ξ₂| (or with ξ) is a pair of lines in (ξ, ξ₂)
    let lines: Vec<(f64, f64)> = match scheme {
        Scheme::A => vec![(1.0 - a - c, 1.0), (1.0 - a + c, 1.0), (0.5 - c, 1.0), (0.5 + c, 1.0)],
        Scheme::B => vec![(1.0, 0.5 - c), (1.0, 0.5 + c), (1.0, 1.0 - a - c), (1.0, 1.0 - a + c)],
        _ => vec![],
    };
    for (p, q) in lines {
        // A: ξ = p·ξ₂ ; B: ξ₂ = q·ξ (p = 1)
        let (xi_per_xi2, xi2_per_xi) = match scheme {
            Scheme::A => (p, f64::NAN),
            _ => (f64::NAN, q),
        };
        match base {
            Slot::Out => {
                if xi_per_xi2.is_finite() && xi_per_xi2 != 0.0 {
                    out.push(u / xi_per_xi2);
                }
                if xi2_per_xi.is_finite() {
                    out.push(xi2_per_xi * u);
                }
            }
            Slot::Second => {
                if xi_per_xi2.is_finite() {
                    out.push(xi_per_xi2 * u);
                }
                if xi2_per_xi.is_finite() && xi2_per_xi != 0.0 {
                    out.push(u / xi2_per_xi);
                }
            }
            Slot::First => {
                // ξ = ξ₁ + ξ₂
                if xi_per_xi2.is_finite() && xi_per_xi2 != 1.0 {
                    out.push(u / (xi_per_xi2 - 1.0));
                }
                if xi2_per_xi.is_finite() && xi2_per_xi != 1.0 {
                    out.push(xi2_per_xi * u / (1.0 - xi2_per_xi));
                }
            }
        }
    }
    match base {
        Slot::Out => out.extend([u - 1.0, u + 1.0, u]),
        Slot::Second => out.extend([u - 1.0, u + 1.0, u]),
        Slot::First => out.extend([-u - 1.0, -u + 1.0, -u]),
    }
    out.retain(|x| x.is_finite());
    out
}

fn finish(r: LineIntegral, what: &str) -> Result<JValue> {
    if !r.converged {
        return Err(Error::QuadratureNonConvergent(format!(
            "{what}: tail {:.3e} of {:.3e}, fitted decay {:.3}",
            r.tail, r.value, r.decay
        )));
    }
    Ok(JValue {
        value: r.value,
        tail: r.tail,
    })
}

fn line_or_band<F: FnMut(f64) -> f64>(
    f: F,
    breaks: &[f64],
    band: Option<f64>,
    opts: QuadOptions,
    what: &str,
) -> Result<JValue> {
    match band {
        None => finish(integrate_real_line(f, breaks, opts), what),
        Some(l) => {
            let mut b = breaks.to_vec();
            b.extend(dyadic_breaks(0.0, 1.0, l));
            let r = integrate_real_with_breaks(f, -l, l, &b, opts);
            Ok(JValue {
                value: r.value,
                tail: 0.0,
            })
        }
    }
}

/// Evaluates the J-integral function `spec.index` at `spec.base`.
pub fn j_eval(spec: &JSpec, p: &EstimateParams) -> Result<JValue> {
    let (u, v) = spec.base;
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::ParamDomainViolated("non-finite base point".into()));
    }
    match spec.index {
        JIndex::AJ1 | JIndex::AJ2 | JIndex::AJ3 => {
            p.check_wide_band()?;
            return j_eval_2d(spec, p);
        }
        JIndex::AJ => {
            p.check_wide_band()?;
            if v.abs() <= 10.0 * u * u {
                let deferred = JSpec {
                    index: JIndex::J1,
                    ..*spec
                };
                return j_eval_1d(&deferred, p);
            }
        }
        _ => p.check_lemma_band()?,
    }
    j_eval_1d(spec, p)
}

fn j_eval_1d(spec: &JSpec, p: &EstimateParams) -> Result<JValue> {
    let index = spec.index;
    let (u, v) = spec.base;
    let EstimateParams { a, b, d, kappa, s } = *p;
    let fam = index.family();
    let scheme = Scheme::for_a(a, fam)?;
    let base = index.base();
    let region = index.region();
    let m = match (fam, base) {
        (Family::N1, Slot::Out) => v + u * u,
        (Family::N1, Slot::First) => v - u * u,
        (Family::N1, Slot::Second) => v + a * u * u,
        (Family::N2, Slot::Out) => v + a * u * u,
        (Family::N2, Slot::First) => v + u * u,
        (Family::N2, Slot::Second) => v + u * u,
    };
    let (prefactor, exponent) = match index {
        JIndex::J1 | JIndex::J4 => (jb(m).powf(-2.0 * d), 4.0 * b - 1.0),
        JIndex::AJ => (jb(m).powf(-(2.0 * d - kappa)), 4.0 * b - 1.0),
        _ => (jb(m).powf(-2.0 * b), 2.0 * b + 2.0 * d - 1.0),
    };
    if scheme == Scheme::Resonant && region != 1 && spec.indicator == Indicator::Region {
        return Ok(JValue { value: 0.0, tail: 0.0 });
    }
    let quad = bracket_quadratic(index, a, u, v);
    let mut breaks = quadratic_breaks(quad);
    breaks.extend(frequency_breaks(scheme, a, base, u));
    let use_region = spec.indicator == Indicator::Region && index != JIndex::AJ;
    let integrand = |y: f64| {
        let (xi, xi1, xi2) = frequencies(base, u, y);
        if use_region && !projected_indicator(scheme, region, a, (xi, xi1, xi2), base, m) {
            return 0.0;
        }
        let weight = match index {
            JIndex::J1 | JIndex::J2 | JIndex::J3 => jb(xi2).powf(-2.0 * s + 2.0 * kappa.abs()),
            JIndex::AJ => jb(xi1).powf(-2.0 * kappa) * jb(xi2).powf(-2.0 * s),
            _ => jb(xi).powf(2.0 * s) * jb(xi1).powf(-2.0 * kappa) * jb(xi2).powf(-2.0 * kappa),
        };
        let q = quad.0 * y * y + quad.1 * y + quad.2;
        weight * jb(q).powf(-exponent)
    };
    let r = line_or_band(integrand, &breaks, spec.truncation, quad_opts(), index.name())?;
    Ok(JValue {
        value: prefactor * r.value,
        tail: prefactor * r.tail,
    })
}

fn j_eval_2d(spec: &JSpec, p: &EstimateParams) -> Result<JValue> {
    let index = spec.index;
    let (u, v) = spec.base;
    let EstimateParams { a, b, d, kappa, s } = *p;
    let scheme = Scheme::for_a(a, Family::N1)?;
    let region = index.region();
    let use_region = spec.indicator == Indicator::Region;
    if scheme == Scheme::Resonant && region != 1 && use_region {
        return Ok(JValue { value: 0.0, tail: 0.0 });
    }
    let inner_opts = QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-6,
        max_intervals: 1000,
    };
    let band = spec.truncation;
    let (prefactor, base) = match index {
        JIndex::AJ1 => (jb(v).powf(kappa) * jb(v + u * u).powf(-2.0 * d), Slot::Out),
        JIndex::AJ2 => (jb(u).powf(2.0 * s) * jb(v + a * u * u).powf(-2.0 * b), Slot::Second),
        _ => (jb(u).powf(-2.0 * kappa) * jb(v - u * u).powf(-2.0 * b), Slot::First),
    };
    let mut failure: Option<Error> = None;
    let outer = |y: f64| -> f64 {
        let (xi, xi1, xi2) = frequencies(base, u, y);
        // point builder from the temporal integration variable t
        let point = |t: f64| -> FrequencyPoint {
            match base {
                Slot::Out => FrequencyPoint::new(xi, v, xi2, t),
                Slot::Second => FrequencyPoint::new(xi, t, xi2, v),
                Slot::First => FrequencyPoint::new(xi, v + t, xi2, t),
            }
        };
        let inner = |t: f64| -> f64 {
            let fp = point(t);
            if use_region && classify_region(&fp, a, scheme).map(|r| r != region).unwrap_or(true) {
                return 0.0;
            }
            let (tau, tau1, tau2) = (fp.tau, fp.tau1(), fp.tau2);
            let w = tau + xi * xi;
            let w1 = tau1 - xi1 * xi1;
            let w2 = tau2 + a * xi2 * xi2;
            match index {
                JIndex::AJ1 => {
                    jb(xi1).powf(-2.0 * kappa) * jb(xi2).powf(-2.0 * s)
                        / (jb(w1).powf(2.0 * b) * jb(w2).powf(2.0 * b))
                }
                JIndex::AJ2 => {
                    jb(xi1).powf(-2.0 * kappa) * jb(tau).powf(kappa)
                        / (jb(w1).powf(2.0 * b) * jb(w).powf(2.0 * d))
                }
                _ => {
                    jb(tau).powf(kappa) * jb(xi2).powf(-2.0 * s)
                        / (jb(xi).powf(4.0 * d) * jb(w2).powf(2.0 * b))
                }
            }
        };
        // temporal breaks at the zeros of the modulations and of τ
        let tb: Vec<f64> = match base {
            Slot::Out => vec![-a * xi2 * xi2, v - xi1 * xi1],
            Slot::Second => vec![-xi * xi, v + xi1 * xi1, 0.0],
            Slot::First => vec![-a * xi2 * xi2, -v],
        };
        match line_or_band(inner, &tb, band.map(|l| l * l), inner_opts, "inner") {
            Ok(r) => r.value,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let mut breaks = vec![-1.0, 1.0, 0.0, u, -u, u - 1.0, u + 1.0];
    breaks.extend(frequency_breaks(scheme, a, base, u));
    let outer_opts = QuadOptions {
        rel_tol: 1e-6,
        max_intervals: 400,
        ..quad_opts()
    };
    let r = line_or_band(outer, &breaks, band, outer_opts, index.name());
    if let Some(e) = failure {
        return Err(e);
    }
    let r = r?;
    Ok(JValue {
        value: prefactor * r.value,
        tail: prefactor * r.tail,
    })
}

/// Sup of a J function over the base grid of one radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JSweepRow {
    pub index: String,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub kappa: f64,
    pub s: f64,
    pub r: f64,
    pub sup: f64,
    pub argmax_xi: f64,
    pub argmax_tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Grid nodes per half axis at the first radius; later radii scale the
    /// count with `R` so that the grids are nested.
    pub nodes: usize,
    /// Restricts the integration variable to `|y| ≤ factor·R`.
    pub band_factor: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            nodes: 16,
            band_factor: None,
        }
    }
}

/// Base points `(R·i/N, ±R²(k/N)²)` for `|i|, |k| ≤ N`.
pub fn sweep_grid(r: f64, n: usize) -> Vec<(f64, f64)> {
    let n_i = n as i64;
    let mut out = Vec::with_capacity((2 * n + 1) * (2 * n + 1));
    for i in -n_i..=n_i {
        for k in -n_i..=n_i {
            let q = k as f64 / n as f64;
            out.push((r * i as f64 / n as f64, q.signum() * r * r * q * q));
        }
    }
    out
}

/// Per-radius sup of `index` over [`sweep_grid`].
pub fn j_sup_sweep(
    index: JIndex,
    p: &EstimateParams,
    radii: &[f64],
    opts: SweepOptions,
) -> Result<Vec<JSweepRow>> {
    if radii.windows(2).any(|w| !(w[0] < w[1])) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::ParamOrderViolated("radii must be positive and increasing".into()));
    }
    radii
        .iter()
        .map(|&r| {
            let n = (opts.nodes as f64 * r / radii[0]).round().max(1.0) as usize;
            let grid = sweep_grid(r, n);
            let vals: Vec<((f64, f64), f64)> = grid
                .par_iter()
                .map(|&base| {
                    let spec = JSpec {
                        truncation: opts.band_factor.map(|f| f * r),
                        ..JSpec::new(index, base)
                    };
                    j_eval(&spec, p).map(|j| (base, j.value))
                })
                .collect::<Result<_>>()?;
            let (arg, sup) = vals
                .into_iter()
                .fold(((0.0, 0.0), f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            Ok(JSweepRow {
                index: index.name().to_string(),
                a: p.a,
                b: p.b,
                d: p.d,
                kappa: p.kappa,
                s: p.s,
                r,
                sup,
                argmax_xi: arg.0,
                argmax_tau: arg.1,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[JSweepRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["index", "a", "b", "d", "kappa", "s", "R", "sup", "argmax_xi", "argmax_tau"])?;
    for r in rows {
        wtr.serialize((
            &r.index, r.a, r.b, r.d, r.kappa, r.s, r.r, r.sup, r.argmax_xi, r.argmax_tau,
        ))?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BilinearLemma {
    /// `‖ū v‖_{X^{κ,−d}}`.
    L51,
    /// `‖u ũ‖_{X_a^{s,−d}}`.
    L52,
    /// `‖ū v‖_{W^{κ,−d}}`.
    L53,
    /// `‖u ũ‖_{W_a^{κ,−d}}`.
    L54,
}

impl BilinearLemma {
    pub fn name(self) -> &'static str {
        match self {
            BilinearLemma::L51 => "L5.1",
            BilinearLemma::L52 => "L5.2",
            BilinearLemma::L53 => "L5.3",
            BilinearLemma::L54 => "L5.4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [BilinearLemma::L51, BilinearLemma::L52, BilinearLemma::L53, BilinearLemma::L54]
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s) || l.name().replace('.', "").eq_ignore_ascii_case(s))
    }
}

/// Which factor of the first estimate carries the `a`-dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    /// `‖u‖_{X^{κ,b}} ‖v‖_{X_a^{s,b}}`, matching the modulations `ω₁`, `ω₂`.
    Usage,
    /// `‖u‖_{X_a^{κ,b}} ‖v‖_{X^{s,b}}`.
    Stated,
}

/// The three norm parameter sets `(output, first factor, second factor)`.
pub fn lemma_norms(
    p: &EstimateParams,
    which: BilinearLemma,
    placement: Placement,
) -> Result<(BourgainParams, BourgainParams, BourgainParams)> {
    let EstimateParams { a, b, d, kappa, s } = *p;
    let x = BourgainParams::x;
    let w = |s, b, a| BourgainParams::new(s, b, a, 1.0, BourgainFamily::W);
    Ok(match (which, placement) {
        (BilinearLemma::L51, Placement::Usage) => (x(kappa, -d, 1.0)?, x(kappa, b, 1.0)?, x(s, b, a)?),
        (BilinearLemma::L51, Placement::Stated) => (x(kappa, -d, 1.0)?, x(kappa, b, a)?, x(s, b, 1.0)?),
        (BilinearLemma::L52, _) => (x(s, -d, a)?, x(kappa, b, 1.0)?, x(kappa, b, 1.0)?),
        (BilinearLemma::L53, _) => (w(kappa, -d, 1.0)?, x(kappa, b, 1.0)?, x(s, b, a)?),
        (BilinearLemma::L54, _) => (w(kappa, -d, a)?, x(kappa, b, 1.0)?, x(s, b, 1.0)?),
    })
}

/// Grid quotient `‖product‖ / (‖u‖·‖v‖)` with the norms of `which`.
pub fn bilinear_ratio(
    u: &SpaceTimeField,
    v: &SpaceTimeField,
    p: &EstimateParams,
    which: BilinearLemma,
    placement: Placement,
) -> Result<f64> {
    if (u.nx(), u.nt(), u.dx(), u.dt()) != (v.nx(), v.nt(), v.dx(), v.dt()) {
        return Err(Error::InvalidGrid("factors live on different grids".into()));
    }
    let (po, pu, pv) = lemma_norms(p, which, placement)?;
    let den = bourgain_norm(u, &pu) * bourgain_norm(v, &pv);
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let conj = matches!(which, BilinearLemma::L51 | BilinearLemma::L53);
    let prod = u.map(|_, _, z| z);
    let prod = {
        let mut out = prod;
        for (o, (zu, zv)) in out.samples_mut().iter_mut().zip(u.samples().iter().zip(v.samples())) {
            *o = if conj { zu.conj() * zv } else { zu * zv };
        }
        out
    };
    Ok(bourgain_norm(&prod, &po) / den)
}

/// Box and mode content of the random test fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBox {
    pub half_width: f64,
    pub duration: f64,
    pub modes: usize,
    pub max_xi: f64,
    pub max_tau: f64,
}

impl Default for PairBox {
    fn default() -> Self {
        PairBox {
            half_width: 16.0,
            duration: 4.0,
            modes: 4,
            max_xi: 1.5,
            max_tau: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Modes(Vec<(Complex64, f64, f64, f64)>);

impl Modes {
    fn draw(rng: &mut ChaCha8Rng, bx: &PairBox) -> Self {
        Modes(
            (0..bx.modes)
                .map(|_| {
                    (
                        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                        rng.random_range(-bx.max_xi..bx.max_xi),
                        rng.random_range(-bx.max_tau..bx.max_tau),
                        rng.random_range(-bx.half_width / 4.0..bx.half_width / 4.0),
                    )
                })
                .collect(),
        )
    }

    fn field(&self, bx: &PairBox, nx: usize, nt: usize) -> Result<SpaceTimeField> {
        let dx = 2.0 * bx.half_width / nx as f64;
        let dt = bx.duration / nt as f64;
        let mid = bx.duration / 2.0;
        let quarter = bx.duration / 4.0;
        SpaceTimeField::from_fn((-bx.half_width, dx, nx), (0.0, dt, nt), |x, t| {
            let env_t = psi((t - mid) / quarter);
            self.0
                .iter()
                .map(|&(c, k, w, x0)| {
                    let env = (-(x - x0) * (x - x0) / 8.0).exp();
                    c * env * Complex64::new(0.0, k * x + w * t).exp()
                })
                .sum::<Complex64>()
                * env_t
        })
    }
}

/// Pair of time-localized band-limited fields; the same seed gives the same
/// continuous fields at every resolution.
pub fn random_pair(seed: u64, nx: usize, nt: usize, bx: &PairBox) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = Modes::draw(&mut rng, bx);
    let mv = Modes::draw(&mut rng, bx);
    Ok((mu.field(bx, nx, nt)?, mv.field(bx, nx, nt)?))
}

/// Max ratio over `pairs` random pairs seeded `seed, seed+1, …`.
pub fn max_random_ratio(
    seed: u64,
    pairs: usize,
    (nx, nt): (usize, usize),
    bx: &PairBox,
    p: &EstimateParams,
    which: BilinearLemma,
    placement: Placement,
) -> Result<f64> {
    let vals: Vec<f64> = (0..pairs as u64)
        .into_par_iter()
        .map(|k| {
            let (u, v) = random_pair(seed.wrapping_add(k), nx, nt, bx)?;
            bilinear_ratio(&u, &v, p, which, placement)
        })
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}
