//! Closed-form Green's function ingredients.
//!
//! For a time translation invariant kernel the propagator is
//! sqrt(m / (2 pi i hbar t u(t))) exp[-A (x0^2 + x^2) + B x0 x + C x0 + D x + E],
//! built from the solution f of the homogeneous boundary problem and the
//! noise-driven solution h. The white kernel and the exponential kernel
//! admit explicit formulas, implemented in the submodules; arbitrary
//! kernels go through the discretized boundary-value solver instead.

pub mod exponential;
pub mod expsum;
pub mod white;

use num_complex::Complex64;

/// The five exponent coefficients of the Gaussian propagator at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenCoefs {
    /// Quadratic coefficient A_t (deterministic).
    pub a: Complex64,
    /// Cross coefficient B_t (deterministic).
    pub b: Complex64,
    /// Linear coefficient C_t on x0 (noise driven).
    pub c: Complex64,
    /// Linear coefficient D_t on x (noise driven).
    pub d: Complex64,
    /// Additive coefficient E_t (noise driven).
    pub e: Complex64,
}

/// Trapezoid rule for a complex integrand sampled on a uniform grid.
pub(crate) fn trapezoid_complex(values: &[Complex64], eps: f64) -> Complex64 {
    if values.len() < 2 {
        return Complex64::new(0.0, 0.0);
    }
    let inner: Complex64 = values[1..values.len() - 1].iter().sum();
    (inner + 0.5 * (values[0] + values[values.len() - 1])) * eps
}
