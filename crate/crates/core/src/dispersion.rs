//! Resonance functions, regime classification and frequency-region schemes
//! for the two quadratic interactions `ū v` (family N1) and `u²` (family N2).

use crate::error::{Error, Result};
use crate::jbracket;
use crate::quadrature::{integrate_real_line, integrate_real_with_breaks, QuadOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// A convolution quadruple with `ξ = ξ₁ + ξ₂`, `τ = τ₁ + τ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPoint {
    pub xi: f64,
    pub tau: f64,
    pub xi2: f64,
    pub tau2: f64,
}

impl FrequencyPoint {
    pub fn new(xi: f64, tau: f64, xi2: f64, tau2: f64) -> Self {
        FrequencyPoint { xi, tau, xi2, tau2 }
    }
    pub fn xi1(&self) -> f64 {
        self.xi - self.xi2
    }
    pub fn tau1(&self) -> f64 {
        self.tau - self.tau2
    }
    /// `1 + max(ξ², ξ₁², ξ₂²)`, the natural scale of the resonance.
    pub fn scale(&self) -> f64 {
        1.0 + (self.xi * self.xi).max(self.xi1() * self.xi1()).max(self.xi2 * self.xi2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// `ū v`: `ω = τ+ξ²`, `ω₁ = τ₁−ξ₁²`, `ω₂ = τ₂+aξ₂²`.
    N1,
    /// `u²`: `λ = τ+aξ²`, `λ₁ = τ₁+ξ₁²`, `λ₂ = τ₂+ξ₂²`.
    N2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulations {
    pub family: Family,
    pub w: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Modulations {
    pub fn of(fp: &FrequencyPoint, a: f64, family: Family) -> Self {
        let (xi, xi1, xi2) = (fp.xi, fp.xi1(), fp.xi2);
        let (w, w1, w2) = match family {
            Family::N1 => (fp.tau + xi * xi, fp.tau1() - xi1 * xi1, fp.tau2 + a * xi2 * xi2),
            Family::N2 => (fp.tau + a * xi * xi, fp.tau1() + xi1 * xi1, fp.tau2 + xi2 * xi2),
        };
        Modulations { family, w, w1, w2 }
    }

    /// `|w − w₁ − w₂|`, independent of the temporal frequencies.
    pub fn defect(&self) -> f64 {
        (self.w - self.w1 - self.w2).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    SecondNonResonant,
    Resonant,
    FirstNonResonant,
}

impl Regime {
    pub fn of(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::NonPositiveA(a));
        }
        Ok(if a < 0.5 {
            Regime::SecondNonResonant
        } else if a == 0.5 {
            Regime::Resonant
        } else {
            Regime::FirstNonResonant
        })
    }
}

/// Closed-form resonance: `|ξ²+ξ₁²−aξ₂²|` (N1) or `|aξ²−ξ₁²−ξ₂²|` (N2).
pub fn resonance(fp: &FrequencyPoint, a: f64, family: Family) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::NonPositiveA(a));
    }
    let (xi, xi1, xi2) = (fp.xi, fp.xi1(), fp.xi2);
    Ok(match family {
        Family::N1 => (xi * xi + xi1 * xi1 - a * xi2 * xi2).abs(),
        Family::N2 => (a * xi * xi - xi1 * xi1 - xi2 * xi2).abs(),
    })
}

/// `μ_a = (1 − √(2a−1))/2` for `a ≥ ½`.
pub fn mu(a: f64) -> Result<f64> {
    if !(a >= 0.5) {
        return Err(Error::BelowResonance(a));
    }
    Ok((1.0 - (2.0 * a - 1.0).sqrt()) / 2.0)
}

/// Lower bound for the N1 resonance away from `a = ½`.
pub fn resonance_bound(fp: &FrequencyPoint, a: f64) -> Result<f64> {
    let regime = Regime::of(a)?;
    let (xi, xi1, xi2) = (fp.xi, fp.xi1(), fp.xi2);
    match regime {
        Regime::Resonant => Err(Error::ResonantA),
        Regime::SecondNonResonant => Ok((1.0 - 2.0 * a) * (xi * xi + xi1 * xi1)),
        Regime::FirstNonResonant => {
            let m = mu(a)?;
            Ok(2.0 * (xi - m * xi2).abs() * (xi - (1.0 - m) * xi2).abs())
        }
    }
}

/// `resonance − bound`; non-negative up to rounding.
pub fn lower_bound_residual(fp: &FrequencyPoint, a: f64) -> Result<f64> {
    let bound = resonance_bound(fp, a)?;
    Ok(resonance(fp, a, Family::N1)? - bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// N1, `a < ½`.
    R,
    /// N1, `a > ½`.
    A,
    /// N2, `a < ½`.
    S,
    /// N2, `a > ½`.
    B,
    /// `a = ½`: a single region.
    Resonant,
}

impl Scheme {
    pub fn family(self) -> Family {
        match self {
            Scheme::R | Scheme::A | Scheme::Resonant => Family::N1,
            Scheme::S | Scheme::B => Family::N2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::R => "R",
            Scheme::A => "A",
            Scheme::S => "S",
            Scheme::B => "B",
            Scheme::Resonant => "Resonant",
        }
    }

    /// The scheme matching `a` for the given family.
    pub fn for_a(a: f64, family: Family) -> Result<Self> {
        Ok(match (Regime::of(a)?, family) {
            (Regime::Resonant, _) => Scheme::Resonant,
            (Regime::SecondNonResonant, Family::N1) => Scheme::R,
            (Regime::FirstNonResonant, Family::N1) => Scheme::A,
            (Regime::SecondNonResonant, Family::N2) => Scheme::S,
            (Regime::FirstNonResonant, Family::N2) => Scheme::B,
        })
    }

    fn check(self, a: f64) -> Result<()> {
        let regime = Regime::of(a)?;
        let ok = matches!(
            (self, regime),
            (Scheme::R | Scheme::S, Regime::SecondNonResonant)
                | (Scheme::A | Scheme::B, Regime::FirstNonResonant)
                | (Scheme::Resonant, Regime::Resonant)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::SchemeMismatch { scheme: self.name(), a })
        }
    }
}

/// Index (1, 2 or 3) of the largest of three moduli; ties go to the lowest.
fn argmax3(m1: f64, m2: f64, m3: f64) -> u8 {
    if m1 >= m2 && m1 >= m3 {
        1
    } else if m2 >= m3 {
        2
    } else {
        3
    }
}

/// Region id in `{1, 2, 3}` of `fp` under `scheme`.
///
/// In each scheme region 1 carries the output modulation, region 2 the
/// modulation integrated over first in the second estimate and region 3 the
/// remaining one. For the `A` and `B` schemes the measure-zero set left by the
/// two cones is assigned to region 1.
pub fn classify_region(fp: &FrequencyPoint, a: f64, scheme: Scheme) -> Result<u8> {
    scheme.check(a)?;
    let m = Modulations::of(fp, a, scheme.family());
    let (w, w1, w2) = (m.w.abs(), m.w1.abs(), m.w2.abs());
    Ok(match scheme {
        Scheme::Resonant => 1,
        Scheme::R => {
            if fp.xi2.abs() <= 1.0 {
                1
            } else {
                argmax3(w, w1, w2)
            }
        }
        Scheme::S => {
            if fp.xi.abs() <= 1.0 {
                1
            } else {
                argmax3(w, w2, w1)
            }
        }
        Scheme::A => {
            let c = (2.0 * a - 1.0) / 4.0;
            let r = fp.xi2.abs();
            if r <= 1.0 || ((1.0 - a) * fp.xi2 - fp.xi).abs() > c * r {
                1
            } else if (fp.xi - 0.5 * fp.xi2).abs() > c * r {
                argmax3(w, w2, w1)
            } else {
                1
            }
        }
        Scheme::B => {
            let c = (2.0 * a - 1.0) / 4.0;
            let r = fp.xi.abs();
            if r <= 1.0 || (fp.xi2 - 0.5 * fp.xi).abs() > c * r {
                1
            } else if ((1.0 - a) * fp.xi - fp.xi2).abs() > c * r {
                argmax3(w, w2, w1)
            } else {
                1
            }
        }
    })
}

/// Heavy-tailed sampler of frequency quadruples: Cauchy in each spatial
/// coordinate with scale `xi_scale` and in each temporal one with scale
/// `xi_scale²`.
pub struct FrequencySampler {
    rng: ChaCha8Rng,
    xi: Cauchy<f64>,
    tau: Cauchy<f64>,
}

impl FrequencySampler {
    pub fn new(seed: u64, xi_scale: f64) -> Self {
        FrequencySampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            xi: Cauchy::new(0.0, xi_scale).expect("positive scale"),
            tau: Cauchy::new(0.0, xi_scale * xi_scale).expect("positive scale"),
        }
    }

    pub fn sample(&mut self) -> FrequencyPoint {
        let r = &mut self.rng;
        // a quarter of the draws sit near the resonant set, where the bound is tight
        let xi2 = self.xi.sample(r);
        let xi = if r.random_bool(0.25) {
            xi2 * r.random_range(-1.5..1.5)
        } else {
            self.xi.sample(r)
        };
        FrequencyPoint::new(xi, self.tau.sample(r), xi2, self.tau.sample(r))
    }
}

/// One row of a dispersion sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionSweepRow {
    pub a: f64,
    pub scheme: String,
    pub samples: usize,
    /// Smallest `lower_bound_residual / (1 + max(ξ², ξ₁², ξ₂²))`.
    pub min_residual: f64,
    pub argmin: FrequencyPoint,
    /// Samples below `−LOWER_BOUND_TOL`.
    pub violations: usize,
    /// Counts of region ids 1, 2, 3 under the N1 scheme for `a`.
    pub region_counts: [usize; 3],
}

/// Admissible normalized undershoot of the resonance lower bound.
pub const LOWER_BOUND_TOL: f64 = 1e-9;

/// Samples `n` points and records the worst normalized residual of the
/// resonance bound together with the region histogram.
pub fn dispersion_sweep(a: f64, n: usize, seed: u64) -> Result<DispersionSweepRow> {
    let scheme = Scheme::for_a(a, Family::N1)?;
    let mut sampler = FrequencySampler::new(seed, 10.0);
    let points: Vec<FrequencyPoint> = (0..n).map(|_| sampler.sample()).collect();
    let checked: Vec<(f64, u8)> = points
        .par_iter()
        .map(|fp| -> Result<(f64, u8)> {
            let res = match scheme {
                Scheme::Resonant => 0.0,
                _ => lower_bound_residual(fp, a)? / fp.scale(),
            };
            Ok((res, classify_region(fp, a, scheme)?))
        })
        .collect::<Result<_>>()?;
    let mut row = DispersionSweepRow {
        a,
        scheme: scheme.name().to_string(),
        samples: n,
        min_residual: f64::INFINITY,
        argmin: FrequencyPoint::new(0.0, 0.0, 0.0, 0.0),
        violations: 0,
        region_counts: [0; 3],
    };
    for (fp, &(res, region)) in points.iter().zip(&checked) {
        if res < row.min_residual {
            row.min_residual = res;
            row.argmin = *fp;
        }
        if res < -LOWER_BOUND_TOL {
            row.violations += 1;
        }
        row.region_counts[(region - 1) as usize] += 1;
    }
    Ok(row)
}

pub fn write_sweep_csv<W: Write>(rows: &[DispersionSweepRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "a",
        "scheme",
        "samples",
        "min_residual",
        "argmin_xi",
        "argmin_tau",
        "argmin_xi2",
        "argmin_tau2",
        "violations",
        "region1",
        "region2",
        "region3",
    ])?;
    for r in rows {
        wtr.serialize((
            r.a,
            &r.scheme,
            r.samples,
            r.min_residual,
            r.argmin.xi,
            r.argmin.tau,
            r.argmin.xi2,
            r.argmin.tau2,
            r.violations,
            r.region_counts[0],
            r.region_counts[1],
            r.region_counts[2],
        ))?;
    }
    wtr.flush()?;
    Ok(())
}

/// The elementary one-dimensional integral bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntegralLemma {
    /// `∫ ⟨y−α⟩^{−2b₁}⟨y−β⟩^{−2b₂} dy ≲ ⟨α−β⟩^{1−2b₁−2b₂}`.
    Gtv { b1: f64, b2: f64, alpha: f64, beta: f64 },
    /// `∫ ⟨α₀+α₁x+x²⟩^{−b} dx ≲ 1`.
    Quadratic { b: f64, alpha0: f64, alpha1: f64 },
    /// `∫_{|x|<β} ⟨x⟩^{1−4b}|α−x|^{−1/2} dx ≲ (1+β)^{2−4b}⟨α⟩^{−1/2}`.
    HolmerWeighted { b: f64, alpha: f64, beta: f64 },
}

/// Numerically integrated left side and the bound shape (without constant).
pub fn integral_lemma_check(kind: IntegralLemma) -> Result<(f64, f64)> {
    let opts = QuadOptions {
        abs_tol: 1e-12,
        rel_tol: 1e-9,
        max_intervals: 4000,
    };
    let fail = |what: &str| Error::QuadratureNonConvergent(what.to_string());
    match kind {
        IntegralLemma::Gtv { b1, b2, alpha, beta } => {
            if !(b1 < 0.5 && b2 < 0.5 && b1 + b2 > 0.5) {
                return Err(Error::ParamDomainViolated(format!(
                    "need b1, b2 < 1/2 < b1 + b2, got {b1}, {b2}"
                )));
            }
            let r = integrate_real_line(
                |y| jbracket(y - alpha).powf(-2.0 * b1) * jbracket(y - beta).powf(-2.0 * b2),
                &[alpha, beta],
                opts,
            );
            if !r.converged {
                return Err(fail("GTV integral"));
            }
            Ok((r.value, jbracket(alpha - beta).powf(1.0 - 2.0 * b1 - 2.0 * b2)))
        }
        IntegralLemma::Quadratic { b, alpha0, alpha1 } => {
            if !(b > 0.5) {
                return Err(Error::ParamDomainViolated(format!("need b > 1/2, got {b}")));
            }
            let vertex = -alpha1 / 2.0;
            let disc = alpha1 * alpha1 - 4.0 * alpha0;
            let mut breaks = vec![vertex];
            if disc > 0.0 {
                breaks.push(vertex - disc.sqrt() / 2.0);
                breaks.push(vertex + disc.sqrt() / 2.0);
            }
            let r = integrate_real_line(
                |x| jbracket(alpha0 + alpha1 * x + x * x).powf(-b),
                &breaks,
                opts,
            );
            if !r.converged {
                return Err(fail("quadratic integral"));
            }
            Ok((r.value, 1.0))
        }
        IntegralLemma::HolmerWeighted { b, alpha, beta } => {
            if !(b < 0.5) || !(beta > 0.0) {
                return Err(Error::ParamDomainViolated(format!(
                    "need b < 1/2 and beta > 0, got {b}, {beta}"
                )));
            }
            let r = integrate_real_with_breaks(
                |x| {
                    let d = (alpha - x).abs();
                    if d == 0.0 {
                        0.0
                    } else {
                        jbracket(x).powf(1.0 - 4.0 * b) / d.sqrt()
                    }
                },
                -beta,
                beta,
                &[alpha, 0.0],
                QuadOptions {
                    max_intervals: 20000,
                    ..opts
                },
            );
            if !r.converged && r.error > 1e-6 * r.value.abs() {
                return Err(fail("weighted integral"));
            }
            Ok((r.value, (1.0 + beta).powf(2.0 - 4.0 * b) / jbracket(alpha).sqrt()))
        }
    }
}

/// Runs [`integral_lemma_check`] over `cases` and returns each `(lhs, shape)`
/// with the empirical constant `max lhs/shape`.
pub fn integral_lemma_sweep(cases: &[IntegralLemma]) -> Result<(Vec<(f64, f64)>, f64)> {
    let out: Vec<(f64, f64)> = cases
        .par_iter()
        .map(|&k| integral_lemma_check(k))
        .collect::<Result<_>>()?;
    let c = out.iter().map(|(l, r)| l / r).fold(0.0, f64::max);
    Ok((out, c))
}
