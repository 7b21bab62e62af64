//! Free Schrödinger group, Duhamel integral and discrete Bourgain norms.
//!
//! All full-line objects live on a periodic box. The Fourier convention is
//! `f̂(ξ,τ) = ∬ e^{−i(xξ+tτ)} f(x,t) dx dt`, so the group `e^{iat∂ₓ²}` acts by
//! the multiplier `e^{−iatξ²}` and free waves sit on the parabola `τ = −aξ²`.

use crate::error::{Error, Result};
use crate::jbracket;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Fraction of the band above which spectral content counts as near-Nyquist.
pub const ALIAS_BAND: f64 = 2.0 / 3.0;
/// Largest admissible energy fraction inside the near-Nyquist band.
pub const ALIAS_TOL: f64 = 0.01;

/// Signed angular wavenumbers of an `n`-point periodic grid of spacing `d`,
/// in FFT order.
pub fn wavenumbers(n: usize, d: f64) -> Vec<f64> {
    let base = 2.0 * PI / (n as f64 * d);
    (0..n)
        .map(|k| {
            let k = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
            base * k
        })
        .collect()
}

/// Complex field on a uniform spatial grid, periodically extended for
/// Fourier work with period `n·dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    x0: f64,
    dx: f64,
    samples: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(x0: f64, dx: f64, samples: Vec<Complex64>) -> Result<Self> {
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::NonPositiveStep(dx));
        }
        if samples.is_empty() {
            return Err(Error::InvalidGrid("empty grid function".into()));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidGrid("non-finite sample".into()));
        }
        Ok(GridFunction { x0, dx, samples })
    }

    pub fn from_fn<F: Fn(f64) -> Complex64>(x0: f64, dx: f64, n: usize, f: F) -> Result<Self> {
        Self::new(x0, dx, (0..n).map(|i| f(x0 + i as f64 * dx)).collect())
    }

    /// `n` points on the periodic box `[−half, half)`.
    pub fn centered<F: Fn(f64) -> Complex64>(half: f64, n: usize, f: F) -> Result<Self> {
        Self::from_fn(-half, 2.0 * half / n as f64, n, f)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }
    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }
    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn l2_norm(&self) -> f64 {
        (self.dx * self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Discrete `H^s` norm through the Fourier weight `⟨ξ⟩^{2s}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let n = self.len();
        let mut buf = self.samples.clone();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let xi = wavenumbers(n, self.dx);
        let sum: f64 = buf
            .iter()
            .zip(&xi)
            .map(|(z, &k)| jbracket(k).powf(2.0 * s) * z.norm_sqr())
            .sum();
        (self.dx / n as f64 * sum).sqrt()
    }
}

/// Energy fraction of `samples` in the band `|ξ| > ALIAS_BAND·ξ_Nyquist`.
pub fn alias_fraction(samples: &[Complex64]) -> f64 {
    let n = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let cut = ALIAS_BAND * (n as f64 / 2.0);
    let (mut hi, mut total) = (0.0, 0.0);
    for (k, z) in buf.iter().enumerate() {
        let kk = if k < n.div_ceil(2) { k as f64 } else { n as f64 - k as f64 };
        let e = z.norm_sqr();
        total += e;
        if kk > cut {
            hi += e;
        }
    }
    if total > 0.0 {
        hi / total
    } else {
        0.0
    }
}

/// Cached transforms for repeated free evolution on one spatial grid.
#[derive(Clone)]
pub struct Propagator {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    xi2: Vec<f64>,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator").field("n", &self.n).finish()
    }
}

impl Propagator {
    pub fn new(n: usize, dx: f64) -> Self {
        let mut planner = FftPlanner::new();
        Propagator {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            xi2: wavenumbers(n, dx).iter().map(|k| k * k).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place `buf ← e^{iat∂ₓ²} buf`.
    pub fn evolve(&self, buf: &mut [Complex64], a: f64, t: f64) {
        debug_assert_eq!(buf.len(), self.n);
        self.fwd.process(buf);
        let scale = 1.0 / self.n as f64;
        for (z, &k2) in buf.iter_mut().zip(&self.xi2) {
            *z *= Complex64::from_polar(scale, -a * t * k2);
        }
        self.inv.process(buf);
    }

    /// In-place application of the Fourier multiplier `m(ξ)`.
    pub fn multiply<M: Fn(f64) -> Complex64>(&self, buf: &mut [Complex64], m: M) {
        self.fwd.process(buf);
        let scale = 1.0 / self.n as f64;
        for (z, &k2) in buf.iter_mut().zip(&self.xi2) {
            *z *= m(k2) * scale;
        }
        self.inv.process(buf);
    }
}

/// `e^{iat∂ₓ²} φ` on the periodic box.
pub fn linear_group(phi: &GridFunction, a: f64, t: f64) -> Result<GridFunction> {
    if !(a > 0.0) {
        return Err(Error::NonPositiveA(a));
    }
    let fraction = alias_fraction(phi.samples());
    if fraction > ALIAS_TOL {
        return Err(Error::AliasRisk { fraction });
    }
    let mut buf = phi.samples.clone();
    Propagator::new(phi.len(), phi.dx).evolve(&mut buf, a, t);
    Ok(GridFunction {
        x0: phi.x0,
        dx: phi.dx,
        samples: buf,
    })
}

/// Complex field on a uniform `(x, t)` grid; `samples[j·nx + i]` holds the
/// value at `(x0 + i·dx, t0 + j·dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    x0: f64,
    dx: f64,
    nx: usize,
    t0: f64,
    dt: f64,
    nt: usize,
    samples: Vec<Complex64>,
}

impl SpaceTimeField {
    pub fn new(
        (x0, dx, nx): (f64, f64, usize),
        (t0, dt, nt): (f64, f64, usize),
        samples: Vec<Complex64>,
    ) -> Result<Self> {
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::NonPositiveStep(dx));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::NonPositiveStep(dt));
        }
        if !nx.is_power_of_two() || !nt.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "grid sizes must be powers of two, got {nx}x{nt}"
            )));
        }
        if samples.len() != nx * nt {
            return Err(Error::InvalidGrid("sample count does not match the grid".into()));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidGrid("non-finite sample".into()));
        }
        Ok(SpaceTimeField {
            x0,
            dx,
            nx,
            t0,
            dt,
            nt,
            samples,
        })
    }

    pub fn from_fn<F: Fn(f64, f64) -> Complex64 + Sync>(
        (x0, dx, nx): (f64, f64, usize),
        (t0, dt, nt): (f64, f64, usize),
        f: F,
    ) -> Result<Self> {
        let samples = (0..nx * nt)
            .into_par_iter()
            .map(|p| f(x0 + (p % nx) as f64 * dx, t0 + (p / nx) as f64 * dt))
            .collect();
        Self::new((x0, dx, nx), (t0, dt, nt), samples)
    }

    pub fn zeros((x0, dx, nx): (f64, f64, usize), (t0, dt, nt): (f64, f64, usize)) -> Result<Self> {
        Self::new((x0, dx, nx), (t0, dt, nt), vec![ZERO; nx * nt])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }
    pub fn t(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }
    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }
    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.samples[j * self.nx + i]
    }
    pub fn slice(&self, j: usize) -> &[Complex64] {
        &self.samples[j * self.nx..(j + 1) * self.nx]
    }
    pub fn slice_mut(&mut self, j: usize) -> &mut [Complex64] {
        &mut self.samples[j * self.nx..(j + 1) * self.nx]
    }

    /// Same grid, samples transformed pointwise.
    pub fn map<F: Fn(f64, f64, Complex64) -> Complex64 + Sync>(&self, f: F) -> Self {
        let nx = self.nx;
        let samples = self
            .samples
            .par_iter()
            .enumerate()
            .map(|(p, &z)| f(self.x(p % nx), self.t(p / nx), z))
            .collect();
        SpaceTimeField {
            samples,
            ..self.clone()
        }
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        self.map(|_, _, z| z * c)
    }

    /// Grid `L²_{x,t}` norm.
    pub fn l2_norm(&self) -> f64 {
        (self.dx * self.dt * self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Unnormalized two-dimensional DFT, same layout as the samples.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let (nx, nt) = (self.nx, self.nt);
        let mut planner = FftPlanner::new();
        let fx = planner.plan_fft_forward(nx);
        let ft = planner.plan_fft_forward(nt);
        let mut buf = self.samples.clone();
        buf.par_chunks_mut(nx).for_each(|row| fx.process(row));
        let mut cols = vec![ZERO; nx * nt];
        for j in 0..nt {
            for i in 0..nx {
                cols[i * nt + j] = buf[j * nx + i];
            }
        }
        cols.par_chunks_mut(nt).for_each(|col| ft.process(col));
        for i in 0..nx {
            for j in 0..nt {
                buf[j * nx + i] = cols[i * nt + j];
            }
        }
        buf
    }

    pub fn xi(&self) -> Vec<f64> {
        wavenumbers(self.nx, self.dx)
    }
    pub fn tau(&self) -> Vec<f64> {
        wavenumbers(self.nt, self.dt)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "t", "re", "im"])?;
        for j in 0..self.nt {
            for i in 0..self.nx {
                let z = self.at(i, j);
                wtr.serialize((self.x(i), self.t(j), z.re, z.im))?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `S_a F(t) = ∫₀ᵗ e^{ia(t−t′)∂ₓ²} F(t′) dt′`, trapezoidal in `t′`.
///
/// Satisfies `(i∂ₜ + a∂ₓ²) S_a F = iF` and `S_a F(·,0) = 0`.
pub fn duhamel(f: &SpaceTimeField, a: f64) -> Result<SpaceTimeField> {
    if !(a > 0.0) {
        return Err(Error::NonPositiveA(a));
    }
    if f.t0 != 0.0 {
        return Err(Error::InvalidGrid("Duhamel integral needs t0 = 0".into()));
    }
    let prop = Propagator::new(f.nx, f.dx);
    let mut out = SpaceTimeField::zeros((f.x0, f.dx, f.nx), (f.t0, f.dt, f.nt))?;
    let nx = f.nx;
    let half = 0.5 * f.dt;
    let mut state = vec![ZERO; nx];
    for j in 0..f.nt - 1 {
        // state ← U(dt)(state + dt/2·F_j) + dt/2·F_{j+1}
        for (s, &z) in state.iter_mut().zip(f.slice(j)) {
            *s += z * half;
        }
        prop.evolve(&mut state, a, f.dt);
        for (s, &z) in state.iter_mut().zip(f.slice(j + 1)) {
            *s += z * half;
        }
        out.slice_mut(j + 1).copy_from_slice(&state);
    }
    Ok(out)
}

/// Smooth cutoff equal to 1 on `[−1, 1]` and vanishing outside `(−2, 2)`.
pub fn psi(t: f64) -> f64 {
    fn h(s: f64) -> f64 {
        if s > 0.0 {
            (-1.0 / s).exp()
        } else {
            0.0
        }
    }
    let r = t.abs();
    if r <= 1.0 {
        return 1.0;
    }
    if r >= 2.0 {
        return 0.0;
    }
    let (p, q) = (h(2.0 - r), h(r - 1.0));
    p / (p + q)
}

/// `ψ_T(t) = ψ(t/T)`.
pub fn psi_scaled(t: f64, scale: f64) -> f64 {
    psi(t / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BourgainFamily {
    /// `⟨ξ⟩^s ⟨τ ± aξ²⟩^b`.
    X,
    /// `(⟨τ⟩^{s/2} ⟨τ − aξ²⟩^{2b})^{1/2}`.
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BourgainParams {
    pub s: f64,
    pub b: f64,
    pub a: f64,
    pub sign: f64,
    pub family: BourgainFamily,
}

impl BourgainParams {
    pub fn new(s: f64, b: f64, a: f64, sign: f64, family: BourgainFamily) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::NonPositiveA(a));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::ParamDomainViolated(format!("sign must be ±1, got {sign}")));
        }
        Ok(BourgainParams { s, b, a, sign, family })
    }

    /// `X_a^{s,b}` with the free-wave modulation `⟨τ + aξ²⟩`.
    pub fn x(s: f64, b: f64, a: f64) -> Result<Self> {
        Self::new(s, b, a, 1.0, BourgainFamily::X)
    }

    /// Weight multiplying `|û|`.
    pub fn weight(&self, xi: f64, tau: f64) -> f64 {
        match self.family {
            BourgainFamily::X => {
                jbracket(xi).powf(self.s) * jbracket(tau + self.sign * self.a * xi * xi).powf(self.b)
            }
            BourgainFamily::W => (jbracket(tau).powf(self.s / 2.0)
                * jbracket(tau - self.a * xi * xi).powf(2.0 * self.b))
            .sqrt(),
        }
    }
}

/// Discrete Bourgain norm, normalized so that unit weights reproduce the grid
/// `L²_{x,t}` norm.
pub fn bourgain_norm(u: &SpaceTimeField, p: &BourgainParams) -> f64 {
    let spec = u.spectrum();
    weighted_norm(u, &spec, |xi, tau| p.weight(xi, tau))
}

/// `( dx·dt/(nx·nt) Σ w(ξ,τ)² |DFT|² )^{1/2}` for a precomputed spectrum.
pub fn weighted_norm<W: Fn(f64, f64) -> f64 + Sync>(
    u: &SpaceTimeField,
    spec: &[Complex64],
    w: W,
) -> f64 {
    let xi = u.xi();
    let tau = u.tau();
    let nx = u.nx;
    let sum: f64 = spec
        .par_chunks(nx)
        .zip(tau.par_iter())
        .map(|(row, &t)| {
            row.iter()
                .zip(&xi)
                .map(|(z, &k)| {
                    let wk = w(k, t);
                    wk * wk * z.norm_sqr()
                })
                .sum::<f64>()
        })
        .sum();
    (u.dx * u.dt / (u.nx * u.nt) as f64 * sum).sqrt()
}

/// Time samples used by [`smoothing_ratio`] on the support of `ψ`.
pub const SMOOTHING_NT: usize = 512;

/// `sup_x ‖ψ(t)·(e^{iat∂ₓ²}φ)(x)‖_{H_t^{(2s+1)/4}} / ‖φ‖_{H^s}`.
pub fn smoothing_ratio(phi: &GridFunction, s: f64, a: f64) -> Result<f64> {
    smoothing_ratio_with(phi, s, a, SMOOTHING_NT)
}

pub fn smoothing_ratio_with(phi: &GridFunction, s: f64, a: f64, nt: usize) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::NonPositiveA(a));
    }
    let denom = phi.sobolev_norm(s);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let nx = phi.len();
    let dt = 4.0 / nt as f64;
    let prop = Propagator::new(nx, phi.dx);
    let rows: Vec<Vec<Complex64>> = (0..nt)
        .into_par_iter()
        .map(|j| {
            let t = -2.0 + j as f64 * dt;
            let mut buf = phi.samples.clone();
            prop.evolve(&mut buf, a, t);
            let w = psi(t);
            buf.iter_mut().for_each(|z| *z *= w);
            buf
        })
        .collect();
    let r = (2.0 * s + 1.0) / 4.0;
    let tau = wavenumbers(nt, dt);
    let ft = FftPlanner::new().plan_fft_forward(nt);
    let sup = (0..nx)
        .into_par_iter()
        .map(|i| {
            let mut col: Vec<Complex64> = rows.iter().map(|row| row[i]).collect();
            ft.process(&mut col);
            let sum: f64 = col
                .iter()
                .zip(&tau)
                .map(|(z, &t)| jbracket(t).powf(2.0 * r) * z.norm_sqr())
                .sum();
            (dt / nt as f64 * sum).sqrt()
        })
        .reduce(|| 0.0, f64::max);
    Ok(sup / denom)
}

/// `‖ψ_T·S_a F‖_{X^{s,b}} / (T^{1+b′−b} ‖F‖_{X^{s,b′}})`.
pub fn inhomog_estimate_ratio(
    f: &SpaceTimeField,
    s: f64,
    b: f64,
    bp: f64,
    a: f64,
    t_scale: f64,
) -> Result<f64> {
    if !(-0.5 < bp && bp <= 0.0 && 0.0 <= b && b <= bp + 1.0) {
        return Err(Error::ParamOrderViolated(format!(
            "need -1/2 < b' <= 0 <= b <= b'+1, got b={b}, b'={bp}"
        )));
    }
    if !(t_scale > 0.0 && t_scale <= 1.0) {
        return Err(Error::ParamDomainViolated(format!("need 0 < T <= 1, got {t_scale}")));
    }
    let denom = bourgain_norm(f, &BourgainParams::x(s, bp, a)?);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let local = duhamel(f, a)?.map(|_, t, z| z * psi_scaled(t, t_scale));
    let num = bourgain_norm(&local, &BourgainParams::x(s, b, a)?);
    Ok(num / (t_scale.powf(1.0 + bp - b) * denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian(half: f64, n: usize) -> GridFunction {
        GridFunction::centered(half, n, |x| Complex64::new((-x * x).exp(), 0.0)).unwrap()
    }

    #[test]
    fn group_at_zero_time_is_identity() {
        let phi = gaussian(20.0, 128);
        let out = linear_group(&phi, 1.0, 0.0).unwrap();
        for (a, b) in out.samples().iter().zip(phi.samples()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn plane_wave_picks_up_the_multiplier_phase() {
        let n = 64;
        let half = PI;
        let k = 3.0;
        let phi = GridFunction::centered(half, n, |x| Complex64::new(0.0, k * x).exp()).unwrap();
        let out = linear_group(&phi, 1.0, 0.3).unwrap();
        for i in 0..n {
            let x = phi.x(i);
            let exact = Complex64::new(0.0, k * x - k * k * 0.3).exp();
            assert!((out.samples()[i] - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn group_rejects_bad_input() {
        let phi = gaussian(20.0, 128);
        assert!(matches!(linear_group(&phi, 0.0, 1.0), Err(Error::NonPositiveA(_))));
        let noisy = GridFunction::centered(1.0, 16, |x| {
            Complex64::new(if (x * 8.0).round() as i64 % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
        })
        .unwrap();
        assert!(matches!(linear_group(&noisy, 1.0, 0.1), Err(Error::AliasRisk { .. })));
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(psi(0.5), 1.0);
        assert_eq!(psi(-1.0), 1.0);
        assert_eq!(psi(3.0), 0.0);
        assert_eq!(psi(-2.0), 0.0);
        let mut prev = 1.0;
        for k in 0..=100 {
            let v = psi(1.0 + k as f64 / 100.0);
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
        assert!((psi(1.5) - 0.5).abs() < 1e-15);
        assert_eq!(psi_scaled(0.7, 0.5), psi(1.4));
    }

    fn band_limited_field(nx: usize, nt: usize, seed: u64) -> SpaceTimeField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-4.0..4.0),
                )
            })
            .collect();
        let half = 16.0;
        SpaceTimeField::from_fn(
            (-half, 2.0 * half / nx as f64, nx),
            (0.0, 2.0 / nt as f64, nt),
            |x, t| {
                let env = (-x * x / 8.0).exp() * psi_scaled(t - 0.5, 0.25);
                modes
                    .iter()
                    .map(|&(k, re, im, w)| Complex64::new(re, im) * Complex64::new(0.0, k * x + w * t).exp())
                    .sum::<Complex64>()
                    * env
            },
        )
        .unwrap()
    }

    #[test]
    fn plancherel_for_unit_weights() {
        let u = band_limited_field(64, 32, 1);
        let p = BourgainParams::x(0.0, 0.0, 1.0).unwrap();
        let n = bourgain_norm(&u, &p);
        assert!((n - u.l2_norm()).abs() < 1e-10 * n);
    }

    #[test]
    fn single_mode_has_closed_form_norm() {
        let (nx, nt) = (32, 16);
        let (dx, dt) = (0.25, 0.125);
        let xi = wavenumbers(nx, dx)[3];
        let tau = wavenumbers(nt, dt)[nt - 2];
        let area = nx as f64 * dx * nt as f64 * dt;
        let u = SpaceTimeField::from_fn((0.0, dx, nx), (0.0, dt, nt), |x, t| {
            Complex64::new(0.0, xi * x + tau * t).exp() / area.sqrt()
        })
        .unwrap();
        let p = BourgainParams::x(0.7, 0.4, 0.5).unwrap();
        let exact = jbracket(xi).powf(0.7) * jbracket(tau + 0.5 * xi * xi).powf(0.4);
        assert!((bourgain_norm(&u, &p) - exact).abs() < 1e-12 * exact);
        let w = BourgainParams::new(0.7, 0.4, 0.5, 1.0, BourgainFamily::W).unwrap();
        let exact_w = (jbracket(tau).powf(0.35) * jbracket(tau - 0.5 * xi * xi).powf(0.8)).sqrt();
        assert!((bourgain_norm(&u, &w) - exact_w).abs() < 1e-12 * exact_w);
    }

    #[test]
    fn duhamel_of_zero_and_initial_slice() {
        let f = SpaceTimeField::zeros((-4.0, 0.125, 64), (0.0, 0.01, 16)).unwrap();
        let s = duhamel(&f, 0.5).unwrap();
        assert!(s.samples().iter().all(|z| *z == ZERO));
        let g = band_limited_field(64, 16, 2);
        let s = duhamel(&g, 0.5).unwrap();
        assert!(s.slice(0).iter().all(|z| *z == ZERO));
    }

    #[test]
    fn duhamel_of_free_wave_is_t_times_free_wave() {
        let (nx, nt) = (128, 32);
        let phi = gaussian(20.0, nx);
        let a = 0.75;
        let dt = 0.05;
        let mut f = SpaceTimeField::zeros((phi.x0(), phi.dx(), nx), (0.0, dt, nt)).unwrap();
        for j in 0..nt {
            let row = linear_group(&phi, a, j as f64 * dt).unwrap();
            f.slice_mut(j).copy_from_slice(row.samples());
        }
        let s = duhamel(&f, a).unwrap();
        for j in 0..nt {
            let t = j as f64 * dt;
            for i in 0..nx {
                assert!((s.at(i, j) - f.at(i, j) * t).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn duhamel_solves_the_forced_equation() {
        // finite-difference residual of (i∂ₜ + a∂ₓ²)S − iF at interior nodes
        let a = 0.5;
        let residual = |nx: usize, nt: usize| {
            let half = 12.0;
            let f = SpaceTimeField::from_fn(
                (-half, 2.0 * half / nx as f64, nx),
                (0.0, 1.0 / nt as f64, nt),
                |x, t| Complex64::new((-x * x).exp() * (1.0 + t * t), 0.0),
            )
            .unwrap();
            let s = duhamel(&f, a).unwrap();
            let (dx, dt) = (f.dx(), f.dt());
            let mut worst: f64 = 0.0;
            for j in 1..nt - 1 {
                for i in 1..nx - 1 {
                    let st = (s.at(i, j + 1) - s.at(i, j - 1)) / (2.0 * dt);
                    let sxx = (s.at(i + 1, j) - s.at(i, j) * 2.0 + s.at(i - 1, j)) / (dx * dx);
                    let r = st * Complex64::i() + sxx * a - f.at(i, j) * Complex64::i();
                    worst = worst.max(r.norm());
                }
            }
            worst
        };
        let coarse = residual(256, 64);
        let fine = residual(512, 128);
        assert!(coarse < 0.1, "{coarse}");
        assert!(coarse / fine > 3.0, "{coarse} -> {fine}");
    }

    #[test]
    fn smoothing_ratio_is_homogeneous_and_resolution_stable() {
        let coarse = gaussian(40.0, 256);
        let r1 = smoothing_ratio(&coarse, 0.0, 1.0).unwrap();
        assert!(r1.is_finite() && r1 > 0.0);
        let twice = GridFunction::new(coarse.x0(), coarse.dx(), coarse.samples().iter().map(|z| z * 2.0).collect())
            .unwrap();
        let r2 = smoothing_ratio(&twice, 0.0, 1.0).unwrap();
        assert!((r1 - r2).abs() < 1e-12 * r1);
        let fine = gaussian(40.0, 512);
        let rf = smoothing_ratio(&fine, 0.0, 1.0).unwrap();
        assert!((rf / r1 - 1.0).abs() < 0.2, "{r1} vs {rf}");
        let zero = GridFunction::centered(40.0, 64, |_| ZERO).unwrap();
        assert_eq!(smoothing_ratio(&zero, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn inhomogeneous_ratio_properties() {
        let f = band_limited_field(64, 64, 3);
        let r = inhomog_estimate_ratio(&f, 0.0, 0.4, -0.4, 1.0, 0.5).unwrap();
        let r5 = inhomog_estimate_ratio(&f.scaled(Complex64::new(5.0, 0.0)), 0.0, 0.4, -0.4, 1.0, 0.5)
            .unwrap();
        assert!(r.is_finite() && r > 0.0);
        assert!((r - r5).abs() < 1e-10 * r);
        let r_half = inhomog_estimate_ratio(&f, 0.0, 0.4, -0.4, 1.0, 0.25).unwrap();
        assert!(r_half <= 1.25 * r, "{r} -> {r_half}");
        assert!(matches!(
            inhomog_estimate_ratio(&f, 0.0, 0.8, -0.4, 1.0, 0.5),
            Err(Error::ParamOrderViolated(_))
        ));
        let zero = SpaceTimeField::zeros((0.0, 0.1, 16), (0.0, 0.1, 16)).unwrap();
        assert_eq!(inhomog_estimate_ratio(&zero, 0.0, 0.4, -0.4, 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn space_time_csv_layout() {
        let u = SpaceTimeField::from_fn((0.0, 0.5, 2), (0.0, 1.0, 2), Complex64::new).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,t,re,im");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "0.5,0.0,0.5,0.0");
    }

    proptest! {
        #[test]
        fn group_is_unitary_and_composes(
            a in 0.1f64..3.0,
            t1 in -1.0f64..1.0,
            t2 in -1.0f64..1.0,
            c in -2.0f64..2.0,
            w in 0.5f64..2.0,
        ) {
            let phi = GridFunction::centered(30.0, 256, |x| {
                Complex64::new((-(x - c) * (x - c) / (w * w)).exp(), 0.3 * (-x * x).exp())
            }).unwrap();
            let once = linear_group(&phi, a, t1).unwrap();
            prop_assert!((once.l2_norm() - phi.l2_norm()).abs() < 1e-12 * phi.l2_norm());
            let twice = linear_group(&once, a, t2).unwrap();
            let direct = linear_group(&phi, a, t1 + t2).unwrap();
            let scale = phi.samples().iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (p, q) in twice.samples().iter().zip(direct.samples()) {
                prop_assert!((p - q).norm() < 1e-10 * scale);
            }
        }
    }
}
