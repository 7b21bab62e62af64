//! Numerical laboratory for the coupled quadratic Schrödinger system
//!
//! ```text
//! i∂ₜu + ∂ₓ²u + ū v = 0,    i∂ₜv + a∂ₓ²v + u² = 0,    x > 0,
//! u(0,t) = f(t),  v(0,t) = g(t),
//! ```
//!
//! posed on the half-line. The crate provides the pieces needed to study the
//! problem numerically: Riemann–Liouville fractional calculus on sampled
//! signals ([`fractional`]), the free Schrödinger group and discrete Bourgain
//! norms ([`spectral`]), the resonance and region machinery of the bilinear
//! estimates ([`dispersion`], [`bilinear`]), the Duhamel boundary forcing
//! operator class ([`boundary`]) and a Crank–Nicolson solver with a mass
//! ledger and a fixed-point construction of the solution ([`ibvp`]).

// negated comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bilinear;
pub mod boundary;
pub mod dispersion;
pub mod error;
pub mod fractional;
pub mod ibvp;
pub mod quadrature;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Japanese bracket `⟨x⟩ = (1 + x²)^{1/2}`.
#[inline]
pub fn jbracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}
