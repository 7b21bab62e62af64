//! Crank–Nicolson solver on the truncated half-line `[0, L]`, the mass
//! ledger, the fixed-point construction of the solution on the whole line,
//! compatibility conditions and the admissible `(κ, s)` region.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{Forcing, ForcingSpec};
use crate::fractional::TimeSeries;
use crate::spectral::{duhamel, psi, GridFunction, Propagator, SpaceTimeField};
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest time step accepted by [`simulate`].
pub const MAX_DT: f64 = 0.1;
/// Growth factor over the initial scale that counts as blow-up.
pub const BLOW_UP_FACTOR: f64 = 1e6;
/// Fraction of the mass allowed in the last tenth of `[0, L]` before the run
/// is flagged as contaminated by reflections.
pub const EDGE_MASS_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ForcingMode {
    #[default]
    None,
    /// Sources chosen so that `(e^{it} sech x, e^{2it} sech x)` is exact;
    /// the boundary data are taken from the exact solution.
    Manufactured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "Nx")]
    pub nx: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub a: f64,
    /// Cap on fixed-point sweeps per step.
    pub nonlinearity_iters: usize,
    /// Sweeps stop once the update falls below this, relative to the solution size.
    pub nonlinearity_tol: f64,
    pub forcing_mode: ForcingMode,
    /// Declared regularity class, used for the compatibility precondition.
    pub kappa: f64,
    pub s: f64,
    /// Keep every n-th state; the initial and final states are always kept.
    pub snapshot_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            length: 20.0,
            nx: 513,
            dt: 1e-3,
            t_end: 1.0,
            a: 1.0,
            nonlinearity_iters: 30,
            nonlinearity_tol: 1e-13,
            forcing_mode: ForcingMode::None,
            kappa: 0.0,
            s: 0.0,
            snapshot_every: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::InvalidGrid(format!("domain length {} must be positive", self.length)));
        }
        if self.nx < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 points, got {}", self.nx)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::NonPositiveStep(self.dt));
        }
        if self.dt > MAX_DT {
            return Err(Error::InvalidGrid(format!("dt = {} exceeds {MAX_DT}", self.dt)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidGrid(format!("horizon {} must be positive", self.t_end)));
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::NonPositiveA(self.a));
        }
        if self.nonlinearity_iters == 0 {
            return Err(Error::InvalidGrid("at least one nonlinear sweep is required".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nx - 1) as f64
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub u: GridFunction,
    pub v: GridFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MassLedger {
    pub a: f64,
    pub times: Vec<f64>,
    #[serde(rename = "M")]
    pub mass: Vec<f64>,
    /// `∫₀ᵗ 2 Im(ū ∂ₓu)(0, t′) dt′`.
    pub flux_u: Vec<f64>,
    /// `∫₀ᵗ 2 Im(v̄ ∂ₓv)(0, t′) dt′`, without the factor `a`.
    pub flux_v: Vec<f64>,
    pub residual: Vec<f64>,
}

impl MassLedger {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn defect(&self, j: usize) -> f64 {
        (self.mass[j] - self.mass[0] - self.flux_u[j] - self.a * self.flux_v[j]).abs()
    }

    /// `𝓜(0)`, or `sup 𝓜` when the initial mass vanishes.
    fn normaliser(&self) -> f64 {
        let m0 = self.mass[0];
        if m0 > 0.0 {
            m0
        } else {
            self.mass.iter().cloned().fold(0.0, f64::max)
        }
    }

    fn fill_residual(&mut self) {
        let norm = self.normaliser();
        self.residual = (0..self.len())
            .map(|j| if norm > 0.0 { self.defect(j) / norm } else { 0.0 })
            .collect();
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "M", "flux_u", "flux_v", "residual"])?;
        for j in 0..self.len() {
            wtr.write_record([
                format!("{:.12e}", self.times[j]),
                format!("{:.15e}", self.mass[j]),
                format!("{:.15e}", self.flux_u[j]),
                format!("{:.15e}", self.flux_v[j]),
                format!("{:.6e}", self.residual[j]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub states: Vec<State>,
    pub ledger: MassLedger,
    /// Mass reached the last tenth of the domain at some step.
    pub reflection_risk: bool,
}

impl Simulation {
    pub fn last(&self) -> &State {
        self.states.last().expect("simulation keeps the initial state")
    }

    /// Snapshots as long-format CSV `t,x,re_u,im_u,re_v,im_v`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "x", "re_u", "im_u", "re_v", "im_v"])?;
        for st in &self.states {
            for (i, (u, v)) in st.u.samples().iter().zip(st.v.samples()).enumerate() {
                wtr.write_record([
                    format!("{:.9e}", st.t),
                    format!("{:.9e}", st.u.x(i)),
                    format!("{:.12e}", u.re),
                    format!("{:.12e}", u.im),
                    format!("{:.12e}", v.re),
                    format!("{:.12e}", v.im),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exact solution of the manufactured problem.
pub fn manufactured_exact(x: f64, t: f64) -> (Complex64, Complex64) {
    let sech = 1.0 / x.cosh();
    (Complex64::from_polar(sech, t), Complex64::from_polar(sech, 2.0 * t))
}

/// Right-hand sides `(F₁, F₂)` of `i∂ₜu + ∂ₓ²u + ūv = F₁`,
/// `i∂ₜv + a∂ₓ²v + u² = F₂` for the manufactured solution.
pub fn manufactured_source(x: f64, t: f64, a: f64) -> (Complex64, Complex64) {
    let s = 1.0 / x.cosh();
    let s2 = s * s;
    let s3 = s2 * s;
    let f1 = s2 - 2.0 * s3;
    let f2 = -2.0 * s + a * (s - 2.0 * s3) + s2;
    (Complex64::from_polar(f1, t), Complex64::from_polar(f2, 2.0 * t))
}

/// LU factors of the constant tridiagonal matrix with diagonal `d` and both
/// off-diagonals `o`.
struct Tridiag {
    o: Complex64,
    /// Modified upper coefficients of the Thomas sweep.
    c: Vec<Complex64>,
    /// Reciprocal pivots.
    inv: Vec<Complex64>,
}

impl Tridiag {
    fn new(n: usize, d: Complex64, o: Complex64) -> Self {
        let mut c = vec![ZERO; n];
        let mut inv = vec![ZERO; n];
        let mut prev = ZERO;
        for j in 0..n {
            let piv = d - o * prev;
            inv[j] = 1.0 / piv;
            prev = o * inv[j];
            c[j] = prev;
        }
        Tridiag { o, c, inv }
    }

    fn solve(&self, rhs: &mut [Complex64]) {
        let n = rhs.len();
        let mut prev = ZERO;
        for (r, inv) in rhs.iter_mut().zip(&self.inv) {
            *r = (*r - self.o * prev) * inv;
            prev = *r;
        }
        for j in (0..n - 1).rev() {
            let next = rhs[j + 1];
            rhs[j] -= self.c[j] * next;
        }
    }
}

/// Half-step operator `(i/dt)w − ½c·D²w` on the interior, boundary values
/// included.
fn explicit_part(w: &[Complex64], c: f64, dt: f64, dx: f64, out: &mut [Complex64]) {
    let n = w.len();
    let k = 0.5 * c / (dx * dx);
    for i in 1..n - 1 {
        out[i - 1] = I / dt * w[i] - k * (w[i + 1] - 2.0 * w[i] + w[i - 1]);
    }
}

fn trapezoid_mass(u: &[Complex64], v: &[Complex64], dx: f64) -> f64 {
    let n = u.len();
    let sq = |z: &[Complex64], i: usize| z[i].norm_sqr();
    let mut s = 0.0;
    for i in 0..n {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        s += w * (sq(u, i) + sq(v, i));
    }
    s * dx
}

/// `2 Im(w̄ ∂ₓw)(0)` with the one-sided second-order stencil.
fn boundary_flux(w: &[Complex64], dx: f64) -> f64 {
    let wx = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * dx);
    2.0 * (w[0].conj() * wx).im
}

fn l2(w: &[Complex64], dx: f64) -> f64 {
    (w.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx).sqrt()
}

fn boundary_value(series: &TimeSeries, t: f64) -> Result<Complex64> {
    if t > series.t_end() + 1e-9 * series.dt() {
        return Err(Error::InvalidGrid(format!(
            "boundary data end at t = {}, needed t = {t}",
            series.t_end()
        )));
    }
    Ok(series.interpolate(t))
}

fn check_grid(cfg: &SolverConfig, w: &GridFunction, name: &str) -> Result<()> {
    let dx = cfg.dx();
    if w.len() != cfg.nx || w.x0().abs() > 1e-12 * cfg.length || (w.dx() - dx).abs() > 1e-12 * dx {
        return Err(Error::InvalidGrid(format!(
            "{name} must live on {} points of [0, {}]",
            cfg.nx, cfg.length
        )));
    }
    Ok(())
}

/// Crank–Nicolson integration of the coupled system on `[0, L]` with
/// Dirichlet data `f, g` at `x = 0` and zero at `x = L`.
pub fn simulate(
    cfg: &SolverConfig,
    u0: &GridFunction,
    v0: &GridFunction,
    f: &TimeSeries,
    g: &TimeSeries,
) -> Result<Simulation> {
    cfg.validate()?;
    check_grid(cfg, u0, "u0")?;
    check_grid(cfg, v0, "v0")?;
    let manufactured = cfg.forcing_mode == ForcingMode::Manufactured;
    if !manufactured && !compatibility_check(u0, f, cfg.kappa, v0, g, cfg.s) {
        return Err(Error::CompatibilityViolation(format!(
            "endpoint values do not match the boundary data for (κ, s) = ({}, {})",
            cfg.kappa, cfg.s
        )));
    }

    let n = cfg.nx;
    let dx = cfg.dx();
    let dt = cfg.dt;
    let a = cfg.a;
    let steps = cfg.steps();
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
    let bc = |t: f64| -> Result<(Complex64, Complex64)> {
        if manufactured {
            Ok(manufactured_exact(0.0, t))
        } else {
            Ok((boundary_value(f, t)?, boundary_value(g, t)?))
        }
    };

    let mut u = u0.samples().to_vec();
    let mut v = v0.samples().to_vec();
    let (f0, g0) = bc(0.0)?;
    u[0] = f0;
    v[0] = g0;
    u[n - 1] = ZERO;
    v[n - 1] = ZERO;

    let m = n - 2;
    let solver_u = Tridiag::new(m, I / dt - 1.0 / (dx * dx), Complex64::from(0.5 / (dx * dx)));
    let solver_v = Tridiag::new(m, I / dt - a / (dx * dx), Complex64::from(0.5 * a / (dx * dx)));
    let ou = 0.5 / (dx * dx);
    let ov = 0.5 * a / (dx * dx);

    let sup_bc = if manufactured {
        2.0
    } else {
        f.sup_norm() + g.sup_norm()
    };
    let scale0 = l2(&u, dx) + l2(&v, dx) + sup_bc;
    let edge = ((0.9 * (n - 1) as f64).floor() as usize).min(n - 1);

    let mut ledger = MassLedger {
        a,
        ..Default::default()
    };
    let mut q_prev = (boundary_flux(&u, dx), boundary_flux(&v, dx));
    ledger.times.push(0.0);
    ledger.mass.push(trapezoid_mass(&u, &v, dx));
    ledger.flux_u.push(0.0);
    ledger.flux_v.push(0.0);

    let mut states = vec![State {
        t: 0.0,
        u: GridFunction::new(0.0, dx, u.clone())?,
        v: GridFunction::new(0.0, dx, v.clone())?,
    }];
    let mut reflection_risk = false;

    let mut eu = vec![ZERO; m];
    let mut ev = vec![ZERO; m];
    let mut src = vec![(ZERO, ZERO); m];
    let mut un = u.clone();
    let mut vn = v.clone();
    let mut ru = vec![ZERO; m];
    let mut rv = vec![ZERO; m];

    for step in 1..=steps {
        let t_new = step as f64 * dt;
        let t_mid = t_new - 0.5 * dt;
        let (fb, gb) = bc(t_new)?;
        explicit_part(&u, 1.0, dt, dx, &mut eu);
        explicit_part(&v, a, dt, dx, &mut ev);
        if manufactured {
            for (k, s) in src.iter_mut().enumerate() {
                *s = manufactured_source(xs[k + 1], t_mid, a);
            }
        }
        un.copy_from_slice(&u);
        vn.copy_from_slice(&v);
        un[0] = fb;
        vn[0] = gb;
        let size = 1.0 + u.iter().chain(&v).map(|z| z.norm()).fold(0.0, f64::max);
        let mut defect = f64::INFINITY;
        for _ in 0..cfg.nonlinearity_iters {
            for k in 0..m {
                let i = k + 1;
                let um = 0.5 * (u[i] + un[i]);
                let vm = 0.5 * (v[i] + vn[i]);
                ru[k] = eu[k] - um.conj() * vm + src[k].0;
                rv[k] = ev[k] - um * um + src[k].1;
            }
            ru[0] -= ou * fb;
            rv[0] -= ov * gb;
            solver_u.solve(&mut ru);
            solver_v.solve(&mut rv);
            defect = 0.0;
            for k in 0..m {
                defect = defect.max((ru[k] - un[k + 1]).norm()).max((rv[k] - vn[k + 1]).norm());
                un[k + 1] = ru[k];
                vn[k + 1] = rv[k];
            }
            if !defect.is_finite() || defect <= cfg.nonlinearity_tol * size {
                break;
            }
        }
        if !defect.is_finite() || defect > 1e-6 * size {
            return Err(Error::NonConvergentNonlinearIteration { t: t_new, defect });
        }
        std::mem::swap(&mut u, &mut un);
        std::mem::swap(&mut v, &mut vn);

        let norm = l2(&u, dx) + l2(&v, dx);
        if !norm.is_finite() || (scale0 > 0.0 && norm > BLOW_UP_FACTOR * scale0) {
            return Err(Error::BlowUpDetected { t: t_new, norm });
        }
        let mass = trapezoid_mass(&u, &v, dx);
        if mass > 0.0 {
            let tail = trapezoid_mass(&u[edge..], &v[edge..], dx);
            reflection_risk |= tail > EDGE_MASS_FRACTION * mass;
        }
        let q = (boundary_flux(&u, dx), boundary_flux(&v, dx));
        let j = ledger.len() - 1;
        ledger.times.push(t_new);
        ledger.mass.push(mass);
        ledger.flux_u.push(ledger.flux_u[j] + 0.5 * dt * (q_prev.0 + q.0));
        ledger.flux_v.push(ledger.flux_v[j] + 0.5 * dt * (q_prev.1 + q.1));
        q_prev = q;

        let keep = step == steps || (cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0);
        if keep {
            states.push(State {
                t: t_new,
                u: GridFunction::new(0.0, dx, u.clone())?,
                v: GridFunction::new(0.0, dx, v.clone())?,
            });
        }
    }
    ledger.fill_residual();
    Ok(Simulation {
        states,
        ledger,
        reflection_risk,
    })
}

/// `sup_t |𝓜(t) − 𝓜(0) − flux_u(t) − a·flux_v(t)|`, relative to `𝓜(0)`
/// (to `sup 𝓜` when the initial mass vanishes).
pub fn mass_identity_residual(ledger: &MassLedger) -> Result<f64> {
    if ledger.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let n = ledger.len();
    if ledger.mass.len() != n || ledger.flux_u.len() != n || ledger.flux_v.len() != n {
        return Err(Error::InvalidGrid("ledger columns have different lengths".into()));
    }
    let norm = ledger.normaliser();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok((0..n).map(|j| ledger.defect(j)).fold(0.0, f64::max) / norm)
}

/// `u(0) = f(0)` when `κ > 1/2` and `v(0) = g(0)` when `s > 1/2`, each to
/// `10⁻⁶` of the larger endpoint value (at least 1).
pub fn compatibility_check(
    u0: &GridFunction,
    f: &TimeSeries,
    kappa: f64,
    v0: &GridFunction,
    g: &TimeSeries,
    s: f64,
) -> bool {
    fn matches(w: &GridFunction, h: &TimeSeries) -> bool {
        let (Some(&x), Some(&y)) = (w.samples().first(), h.samples().first()) else {
            return true;
        };
        let scale = x.norm().max(y.norm()).max(1.0);
        (x - y).norm() <= 1e-6 * scale
    }
    (kappa <= 0.5 || matches(u0, f)) && (s <= 0.5 || matches(v0, g))
}

/// Discretisation of the fixed-point map on the whole line: a periodic box
/// `[−L, L)` with the solver's spacing and a time grid covering `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionGrid {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub dt: f64,
    pub nt: usize,
}

impl ContractionGrid {
    /// Box `[−L, L)` with `2(Nx−1)` points rounded up to a power of two and
    /// `⌈T/dt⌉ + 1` times rounded up likewise.
    pub fn from_config(cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let nx = (2 * (cfg.nx - 1)).next_power_of_two();
        let nt = ((cfg.t_end / cfg.dt).ceil() as usize + 1).next_power_of_two();
        Ok(ContractionGrid {
            x0: -cfg.length,
            dx: 2.0 * cfg.length / nx as f64,
            nx,
            dt: cfg.t_end / (nt - 1) as f64,
            nt,
        })
    }

    fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    /// First node with `x ≥ 0`.
    pub fn origin(&self) -> usize {
        (-self.x0 / self.dx - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionResult {
    pub grid: ContractionGrid,
    /// `d_k`, `k = 1, 2, …`: distance of iterate k from iterate k−1 on `x ≥ 0`.
    pub distances: Vec<f64>,
    pub u: SpaceTimeField,
    pub v: SpaceTimeField,
}

impl ContractionResult {
    pub fn ratios(&self) -> Vec<f64> {
        self.distances
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }

    /// Final-time iterate restricted to `x ≥ 0`.
    pub fn half_line_final(&self) -> (Vec<f64>, Vec<Complex64>, Vec<Complex64>) {
        let j = self.grid.nt - 1;
        let o = self.grid.origin();
        let xs = (o..self.grid.nx).map(|i| self.grid.x(i)).collect();
        (xs, self.u.slice(j)[o..].to_vec(), self.v.slice(j)[o..].to_vec())
    }
}

/// Samples of a half-line function on the box, extended by zero to `x < 0`.
fn extend_by_zero(w: &GridFunction, grid: &ContractionGrid) -> Vec<Complex64> {
    let len = w.len();
    (0..grid.nx)
        .map(|i| {
            let x = grid.x(i);
            if x < -1e-12 * grid.dx {
                return ZERO;
            }
            let p = (x - w.x0()) / w.dx();
            let k = p.floor() as usize;
            if k + 1 >= len {
                return if k + 1 == len { w.samples()[len - 1] } else { ZERO };
            }
            let r = p - k as f64;
            w.samples()[k] * (1.0 - r) + w.samples()[k + 1] * r
        })
        .collect()
}

/// Boundary data sampled on the iteration time grid, cut off by `ψ`.
fn resample(h: &TimeSeries, grid: &ContractionGrid) -> Result<Vec<Complex64>> {
    (0..grid.nt)
        .map(|j| {
            let t = j as f64 * grid.dt;
            Ok(psi(t) * boundary_value(h, t)?)
        })
        .collect()
}

struct Component {
    a: f64,
    lambda: f64,
    free: SpaceTimeField,
    data: Vec<Complex64>,
}

impl Component {
    /// `ψ U_a(t)ũ₀ + ψ S_a(i ψ_T N) + 𝓛_a^λ(m·h)` with the trace defect
    /// `h = ψ data − ψ U_a(t)ũ₀|₀ − ψ S_a(i ψ_T N)|₀` and the multiplier `m`
    /// that turns the trace of `𝓛_a^λ` into the identity.
    fn apply(&self, nonlinear: &SpaceTimeField, grid: &ContractionGrid, t_cut: f64) -> Result<SpaceTimeField> {
        let forced = nonlinear.map(|_, t, z| I * psi(t / t_cut) * z);
        let duh = duhamel(&forced, self.a)?;
        let o = grid.origin();
        let m = Complex64::from_polar(self.a.powf(-0.5 * self.lambda), -self.lambda * std::f64::consts::PI / 4.0);
        let h: Vec<Complex64> = (0..grid.nt)
            .map(|j| {
                let t = j as f64 * grid.dt;
                m * (self.data[j] - psi(t) * (self.free.at(o, j) + duh.at(o, j)))
            })
            .collect();
        let mut out = SpaceTimeField::zeros((grid.x0, grid.dx, grid.nx), (0.0, grid.dt, grid.nt))?;
        let hs = TimeSeries::new(0.0, grid.dt, h)?;
        if hs.sup_norm() > 0.0 {
            let forcing = Forcing::new(ForcingSpec::new(self.a, self.lambda, hs)?)?;
            let xs: Vec<f64> = (0..grid.nx).map(|i| grid.x(i)).collect();
            let field = forcing.field(&xs)?;
            for (i, col) in field.iter().enumerate() {
                for (j, z) in col.iter().enumerate() {
                    out.samples_mut()[j * grid.nx + i] = *z;
                }
            }
        }
        let samples = out.samples_mut();
        for j in 0..grid.nt {
            let w = psi(j as f64 * grid.dt);
            for i in 0..grid.nx {
                let p = j * grid.nx + i;
                samples[p] += w * (self.free.samples()[p] + duh.samples()[p]);
            }
        }
        Ok(out)
    }
}

fn free_field(w0: &[Complex64], a: f64, grid: &ContractionGrid) -> Result<SpaceTimeField> {
    let prop = Propagator::new(grid.nx, grid.dx);
    let slices: Vec<Vec<Complex64>> = (0..grid.nt)
        .into_par_iter()
        .map(|j| {
            let mut buf = w0.to_vec();
            prop.evolve(&mut buf, a, j as f64 * grid.dt);
            buf
        })
        .collect();
    SpaceTimeField::new((grid.x0, grid.dx, grid.nx), (0.0, grid.dt, grid.nt), slices.concat())
}

fn half_line_distance(p: &SpaceTimeField, q: &SpaceTimeField, grid: &ContractionGrid) -> f64 {
    let o = grid.origin();
    let mut s = 0.0;
    for j in 0..grid.nt {
        let (a, b) = (p.slice(j), q.slice(j));
        for i in o..grid.nx {
            s += (a[i] - b[i]).norm_sqr();
        }
    }
    s * grid.dx * grid.dt
}

/// Picard iteration of the fixed-point map `Λ = (Λ₁, Λ₂)` from `(0, 0)`.
///
/// Returns the distances between consecutive iterates; the composite norm is
/// the space-time `L²` norm of both components on `x ≥ 0`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_iterate(
    cfg: &SolverConfig,
    u0: &GridFunction,
    v0: &GridFunction,
    f: &TimeSeries,
    g: &TimeSeries,
    lambda1: f64,
    lambda2: f64,
    k_iters: usize,
) -> Result<ContractionResult> {
    let grid = ContractionGrid::from_config(cfg)?;
    let make = |w0: &GridFunction, data: &TimeSeries, a: f64, lambda: f64| -> Result<Component> {
        Ok(Component {
            a,
            lambda,
            free: free_field(&extend_by_zero(w0, &grid), a, &grid)?,
            data: resample(data, &grid)?,
        })
    };
    let c1 = make(u0, f, 1.0, lambda1)?;
    let c2 = make(v0, g, cfg.a, lambda2)?;
    let t_cut = cfg.t_end;

    let mut u = SpaceTimeField::zeros((grid.x0, grid.dx, grid.nx), (0.0, grid.dt, grid.nt))?;
    let mut v = u.clone();
    let mut distances = Vec::with_capacity(k_iters);
    let mut rising = 0;
    for _ in 0..k_iters {
        let nu = product(&u, &v, |p, q| p.conj() * q)?;
        let nv = product(&u, &u, |p, q| p * q)?;
        let un = c1.apply(&nu, &grid, t_cut)?;
        let vn = c2.apply(&nv, &grid, t_cut)?;
        let d = (half_line_distance(&un, &u, &grid) + half_line_distance(&vn, &v, &grid)).sqrt();
        if let Some(&last) = distances.last() {
            rising = if d > last { rising + 1 } else { 0 };
        }
        distances.push(d);
        u = un;
        v = vn;
        if rising >= 3 {
            return Err(Error::DivergentIteration);
        }
    }
    Ok(ContractionResult { grid, distances, u, v })
}

fn product<F: Fn(Complex64, Complex64) -> Complex64 + Sync>(
    p: &SpaceTimeField,
    q: &SpaceTimeField,
    op: F,
) -> Result<SpaceTimeField> {
    let samples = p.samples().iter().zip(q.samples()).map(|(&x, &y)| op(x, y)).collect();
    SpaceTimeField::new((p.x0(), p.dx(), p.nx()), (p.t0(), p.dt(), p.nt()), samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityQuery {
    pub kappa: f64,
    pub s: f64,
    pub a: f64,
}

/// One inequality of the admissibility conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    pub holds: bool,
    /// Holds with equality (for `≤`), or fails only at the excluded endpoint
    /// (for `<` and `≠`).
    pub binding: bool,
}

/// Lattice coordinates in units of 1/40 are snapped to integers, so that the
/// boundary comparisons on the `k/20` lattice are exact.
fn snap(x: f64) -> f64 {
    let y = 40.0 * x;
    if (y - y.round()).abs() < 1e-9 {
        y.round()
    } else {
        y
    }
}

/// Membership in the admissible `(κ, s)` region for the given `a`, with every
/// inequality that is violated or binding.
pub fn regularity_region(q: RegularityQuery) -> (bool, Vec<Constraint>) {
    // all constants are multiples of 1/2, i.e. of 20 in scaled units
    let k = snap(q.kappa);
    let s = snap(q.s);
    let h = 20.0;
    let mut cs: Vec<Constraint> = Vec::new();
    let mut le = |label: &str, lhs: f64, rhs: f64| {
        cs.push(Constraint {
            label: label.into(),
            holds: lhs <= rhs,
            binding: lhs == rhs,
        })
    };
    let half = 0.5;
    if !(q.a > 0.0) {
        return (
            false,
            vec![Constraint {
                label: "a > 0".into(),
                holds: false,
                binding: false,
            }],
        );
    }
    let mut strict: Vec<(String, f64, f64)> = Vec::new();
    if q.a > half {
        le("|κ| − 1/2 ≤ s", k.abs() - h, s);
        strict.push(("s < κ + 1/2".into(), s, k + h));
        strict.push(("s < 2κ + 1/2".into(), s, 2.0 * k + h));
        strict.push(("s < 1".into(), s, 2.0 * h));
        strict.push(("κ < 1".into(), k, 2.0 * h));
    } else if q.a == half {
        le("0 ≤ κ", 0.0, k);
        cs.push(Constraint {
            label: "κ = s".into(),
            holds: k == s,
            binding: k == s,
        });
        strict.push(("κ < 1".into(), k, 2.0 * h));
    } else {
        le("−1/2 ≤ s", -h, s);
        le("|κ| − 1 ≤ s", k.abs() - 2.0 * h, s);
        strict.push(("s < κ + 1".into(), s, k + 2.0 * h));
        strict.push(("s < 2κ + 1".into(), s, 2.0 * k + 2.0 * h));
        strict.push(("s < 1".into(), s, 2.0 * h));
        strict.push(("κ < 1".into(), k, 2.0 * h));
    }
    for (label, lhs, rhs) in strict {
        cs.push(Constraint {
            label,
            holds: lhs < rhs,
            binding: lhs == rhs,
        });
    }
    for (label, x) in [("s ≠ 1/2", s), ("κ ≠ 1/2", k)] {
        cs.push(Constraint {
            label: label.into(),
            holds: x != h,
            binding: x == h,
        });
    }
    let admissible = cs.iter().all(|c| c.holds);
    let active = cs.into_iter().filter(|c| !c.holds || c.binding).collect();
    (admissible, active)
}

/// Admissibility mask over `κ, s ∈ {lo + k·step}` as CSV `kappa,s,admissible`.
pub fn write_region_map<W: Write>(w: W, a: f64, lo: f64, hi: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::InvalidGrid(format!("lattice [{lo}, {hi}] with step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["kappa", "s", "admissible"])?;
    let mut count = 0;
    for i in 0..n {
        let kappa = lo + i as f64 * step;
        for j in 0..n {
            let s = lo + j as f64 * step;
            let (ok, _) = regularity_region(RegularityQuery { kappa, s, a });
            count += ok as usize;
            wtr.write_record([format!("{kappa:.6}"), format!("{s:.6}"), (ok as u8).to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(count)
}
