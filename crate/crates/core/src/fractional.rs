//! Riemann–Liouville fractional integrals and derivatives of sampled signals.
//!
//! For `α > 0` the operator `𝓘_α f(t) = Γ(α)⁻¹ ∫₀ᵗ (t−s)^{α−1} f(s) ds` is
//! evaluated by product integration: the kernel is integrated exactly against
//! the piecewise-linear interpolant of the samples. Non-positive orders are
//! reached through `𝓘_α = ∂ₜᵏ 𝓘_{α+k}`, which requires the signal to vanish at
//! the left endpoint.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Uniformly sampled complex signal on `[t0, t0 + (n−1)dt]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    t0: f64,
    dt: f64,
    samples: Vec<Complex64>,
}

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, samples: Vec<Complex64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::NonPositiveStep(dt));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "time series needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidGrid("non-finite sample".into()));
        }
        Ok(TimeSeries { t0, dt, samples })
    }

    /// Samples `f` at `t0 + j·dt` for `j = 0..n`.
    pub fn from_fn<F: Fn(f64) -> Complex64>(t0: f64, dt: f64, n: usize, f: F) -> Result<Self> {
        let samples = (0..n).map(|j| f(t0 + j as f64 * dt)).collect();
        Self::new(t0, dt, samples)
    }

    /// `n` samples spanning `[0, t_end]` inclusive.
    pub fn on_interval<F: Fn(f64) -> Complex64>(t_end: f64, n: usize, f: F) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid("need at least 2 samples".into()));
        }
        Self::from_fn(0.0, t_end / (n - 1) as f64, n, f)
    }

    pub fn zeros_like(&self) -> Self {
        TimeSeries {
            t0: self.t0,
            dt: self.dt,
            samples: vec![Complex64::new(0.0, 0.0); self.samples.len()],
        }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }
    pub fn t_end(&self) -> f64 {
        self.time(self.samples.len() - 1)
    }
    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |j| self.time(j))
    }

    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Same grid, new samples.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::InvalidGrid("sample count mismatch".into()));
        }
        Self::new(self.t0, self.dt, samples)
    }

    pub fn map<F: Fn(f64, Complex64) -> Complex64>(&self, f: F) -> Self {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(j, &z)| f(self.time(j), z))
            .collect();
        TimeSeries {
            t0: self.t0,
            dt: self.dt,
            samples,
        }
    }

    /// Linear interpolation; zero outside the sampled interval.
    pub fn interpolate(&self, t: f64) -> Complex64 {
        let s = (t - self.t0) / self.dt;
        let last = (self.samples.len() - 1) as f64;
        if !(0.0..=last).contains(&s) {
            return Complex64::new(0.0, 0.0);
        }
        let j = (s.floor() as usize).min(self.samples.len() - 2);
        let w = s - j as f64;
        self.samples[j] * (1.0 - w) + self.samples[j + 1] * w
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "re", "im"])?;
        for (j, z) in self.samples.iter().enumerate() {
            wtr.serialize((self.time(j), z.re, z.im))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the `t,re,im` layout written by [`TimeSeries::write_csv`]; the
    /// time column must be uniformly spaced.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut ts = Vec::new();
        let mut samples = Vec::new();
        for rec in rdr.deserialize() {
            let (t, re, im): (f64, f64, f64) = rec?;
            ts.push(t);
            samples.push(Complex64::new(re, im));
        }
        if ts.len() < 2 {
            return Err(Error::InvalidGrid("need at least 2 rows".into()));
        }
        let dt = (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64;
        for (j, &t) in ts.iter().enumerate() {
            if (t - (ts[0] + j as f64 * dt)).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::InvalidGrid("time column is not uniform".into()));
            }
        }
        Self::new(ts[0], dt, samples)
    }
}

/// Real fractional order restricted to `α > −2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > -2.0) || !alpha.is_finite() {
            return Err(Error::OrderOutOfRange(alpha));
        }
        Ok(FracOrder(alpha))
    }
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Tolerance on `|f(t0)| / ‖f‖_sup` for the differentiation branch.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Applies `𝓘_α` to `f`; the result lives on the same grid.
pub fn rl_apply(f: &TimeSeries, alpha: FracOrder) -> Result<TimeSeries> {
    let alpha = alpha.value();
    if alpha == 0.0 {
        return Ok(f.clone());
    }
    if alpha > 0.0 {
        return Ok(f.with_samples_unchecked(product_trapezoid(f.samples(), f.dt(), alpha)));
    }
    let sup = f.sup_norm();
    let head = f.samples()[0].norm();
    if head > SUPPORT_TOL * sup {
        return Err(Error::UnsupportedSupport { value: head, sup });
    }
    // smallest k with alpha + k in (0, 1]
    let k = (-alpha).floor() as usize + 1;
    let mut out = product_trapezoid(f.samples(), f.dt(), alpha + k as f64);
    for _ in 0..k {
        out = derivative(&out, f.dt());
    }
    Ok(f.with_samples_unchecked(out))
}

impl TimeSeries {
    fn with_samples_unchecked(&self, samples: Vec<Complex64>) -> Self {
        TimeSeries {
            t0: self.t0,
            dt: self.dt,
            samples,
        }
    }
}

/// Relative sup-norm defect of the composition law `𝓘_α 𝓘_β = 𝓘_{α+β}`.
pub fn semigroup_residual(f: &TimeSeries, alpha: FracOrder, beta: FracOrder) -> Result<f64> {
    let sum = FracOrder::new(alpha.value() + beta.value())?;
    let composed = rl_apply(&rl_apply(f, beta)?, alpha)?;
    let direct = rl_apply(f, sum)?;
    let diff = composed
        .samples()
        .iter()
        .zip(direct.samples())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let scale = direct.sup_norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Product-integration weights of the piecewise-linear rule for `𝓘_α`,
/// `α > 0`, applied to uniformly spaced samples.
fn product_trapezoid(f: &[Complex64], dt: f64, alpha: f64) -> Vec<Complex64> {
    let n = f.len();
    let p = alpha + 1.0;
    let pw: Vec<f64> = (0..=n + 1).map(|m| (m as f64).powf(p)).collect();
    // interior weights depend only on the lag m = j - k >= 1
    let inner: Vec<f64> = (0..n)
        .map(|m| if m == 0 { 0.0 } else { pw[m + 1] - 2.0 * pw[m] + pw[m - 1] })
        .collect();
    let scale = dt.powf(alpha) / libm::tgamma(alpha + 2.0);
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for j in 1..n {
        let jf = j as f64;
        let first = pw[j - 1] - (jf - 1.0 - alpha) * (jf).powf(alpha);
        let mut acc = f[0] * first + f[j];
        for k in 1..j {
            acc += f[k] * inner[j - k];
        }
        out[j] = acc * scale;
    }
    out
}

/// Centered differences inside, second-order one-sided stencils at the ends.
pub fn derivative(f: &[Complex64], dt: f64) -> Vec<Complex64> {
    let n = f.len();
    let mut d = vec![Complex64::new(0.0, 0.0); n];
    if n == 2 {
        let s = (f[1] - f[0]) / dt;
        return vec![s, s];
    }
    for j in 1..n - 1 {
        d[j] = (f[j + 1] - f[j - 1]) / (2.0 * dt);
    }
    d[0] = (f[0] * -3.0 + f[1] * 4.0 - f[2]) / (2.0 * dt);
    d[n - 1] = (f[n - 1] * 3.0 - f[n - 2] * 4.0 + f[n - 3]) / (2.0 * dt);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn bump(n: usize) -> TimeSeries {
        TimeSeries::on_interval(1.0, n, |t| {
            Complex64::new(1.0, 0.5) * (-(t - 0.5) * (t - 0.5) / 0.01).exp()
        })
        .unwrap()
    }

    /// Composite trapezoid evaluation of the running integral, written
    /// independently of the product-integration weights.
    fn running_trapezoid(f: &TimeSeries) -> Vec<Complex64> {
        let mut out = vec![c(0.0)];
        let mut acc = c(0.0);
        for w in f.samples().windows(2) {
            acc += (w[0] + w[1]) * (0.5 * f.dt());
            out.push(acc);
        }
        out
    }

    #[test]
    fn order_one_of_constant_is_t() {
        let f = TimeSeries::on_interval(1.0, 101, |_| c(1.0)).unwrap();
        let g = rl_apply(&f, FracOrder::new(1.0).unwrap()).unwrap();
        for (t, z) in f.times().zip(g.samples()) {
            assert!((z.re - t).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn order_one_of_t_is_half_t_squared() {
        let f = TimeSeries::on_interval(1.0, 201, c).unwrap();
        let g = rl_apply(&f, FracOrder::new(1.0).unwrap()).unwrap();
        for (t, z) in f.times().zip(g.samples()) {
            assert!((z.re - 0.5 * t * t).abs() < 1e-4);
        }
    }

    #[test]
    fn order_zero_is_identity_even_without_support() {
        let f = TimeSeries::on_interval(1.0, 11, |t| c(1.0 + t)).unwrap();
        assert_eq!(rl_apply(&f, FracOrder::new(0.0).unwrap()).unwrap(), f);
    }

    #[test]
    fn product_rule_is_exact_for_linear_data() {
        // 𝓘_α t = t^{α+1} / Γ(α+2)
        let alpha = 0.3;
        let f = TimeSeries::on_interval(1.0, 65, c).unwrap();
        let g = rl_apply(&f, FracOrder::new(alpha).unwrap()).unwrap();
        for (t, z) in f.times().zip(g.samples()) {
            let exact = t.powf(alpha + 1.0) / libm::tgamma(alpha + 2.0);
            assert!((z.re - exact).abs() < 1e-12, "t={t}: {} vs {exact}", z.re);
        }
    }

    #[test]
    fn two_half_integrals_match_trapezoid_running_integral() {
        let f = bump(2049);
        let half = FracOrder::new(0.5).unwrap();
        let twice = rl_apply(&rl_apply(&f, half).unwrap(), half).unwrap();
        let oracle = running_trapezoid(&f);
        let scale = oracle.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = twice
            .samples()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err / scale < 1e-4, "relative error {}", err / scale);
    }

    #[test]
    fn semigroup_examples() {
        let f = bump(4096);
        let zero = FracOrder::new(0.0).unwrap();
        assert_eq!(semigroup_residual(&f, zero, zero).unwrap(), 0.0);
        let r = semigroup_residual(&f, FracOrder::new(0.5).unwrap(), FracOrder::new(0.5).unwrap())
            .unwrap();
        assert!(r < 1e-3, "{r}");
        let r = semigroup_residual(&f, FracOrder::new(1.0).unwrap(), FracOrder::new(-1.0).unwrap())
            .unwrap();
        assert!(r < 1e-3, "{r}");
    }

    #[test]
    fn refinement_reduces_semigroup_residual() {
        let a = FracOrder::new(0.25).unwrap();
        let b = FracOrder::new(0.75).unwrap();
        let coarse = semigroup_residual(&bump(257), a, b).unwrap();
        let fine = semigroup_residual(&bump(513), a, b).unwrap();
        assert!(coarse / fine > 2.0, "{coarse} -> {fine}");
    }

    #[test]
    fn minus_half_is_derivative_of_plus_half() {
        let f = bump(2049);
        let m = rl_apply(&f, FracOrder::new(-0.5).unwrap()).unwrap();
        let p = rl_apply(&f, FracOrder::new(0.5).unwrap()).unwrap();
        let n = p.len();
        let scale = m.sup_norm();
        for j in 1..n - 1 {
            let fd = (p.samples()[j + 1] - p.samples()[j - 1]) / (2.0 * f.dt());
            assert!((fd - m.samples()[j]).norm() < 1e-2 * scale);
        }
    }

    #[test]
    fn differentiation_branch_rejects_nonvanishing_start() {
        let f = TimeSeries::on_interval(1.0, 11, |_| c(1.0)).unwrap();
        let e = rl_apply(&f, FracOrder::new(-0.5).unwrap()).unwrap_err();
        assert!(matches!(e, Error::UnsupportedSupport { .. }));
    }

    #[test]
    fn constructor_and_order_errors() {
        assert!(matches!(
            TimeSeries::new(0.0, 0.0, vec![c(0.0); 4]),
            Err(Error::NonPositiveStep(_))
        ));
        assert!(matches!(FracOrder::new(-2.0), Err(Error::OrderOutOfRange(_))));
        assert!(FracOrder::new(-1.99).is_ok());
    }

    #[test]
    fn csv_layout() {
        let f = TimeSeries::on_interval(1.0, 3, |t| Complex64::new(t, -t)).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,re,im\n0.0,0.0,"));
        let back = TimeSeries::read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert!((back.samples()[2] - f.samples()[2]).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn rl_apply_is_linear(
            alpha in -1.5f64..2.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            w1 in 1.0f64..8.0,
            w2 in 1.0f64..8.0,
        ) {
            let f = TimeSeries::on_interval(1.0, 129, |t| c((w1 * t).sin() * t * t)).unwrap();
            let g = TimeSeries::on_interval(1.0, 129, |t| Complex64::new(0.0, (w2 * t).cos() * t * t)).unwrap();
            let order = FracOrder::new(alpha).unwrap();
            let combo = f.with_samples(
                f.samples().iter().zip(g.samples()).map(|(x, y)| x * a + y * b).collect(),
            ).unwrap();
            let lhs = rl_apply(&combo, order).unwrap();
            let rf = rl_apply(&f, order).unwrap();
            let rg = rl_apply(&g, order).unwrap();
            let scale = 1.0 + lhs.sup_norm();
            for j in 0..lhs.len() {
                let rhs = rf.samples()[j] * a + rg.samples()[j] * b;
                prop_assert!((lhs.samples()[j] - rhs).norm() < 1e-10 * scale);
            }
        }
    }
}
