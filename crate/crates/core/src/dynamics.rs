//! Gaussian state propagation and the equivalent stochastic equation.
//!
//! A Gaussian exp(-alpha x^2 + beta x + gamma) stays Gaussian under the
//! propagator exp[-A(x0^2 + x^2) + B x0 x + C x0 + D x + E]; integrating
//! out x0 gives
//!   alpha_t = A - B^2 / 4(alpha_0 + A),
//!   beta_t  = D + B (C + beta_0) / 2(alpha_0 + A),
//!   gamma_t = gamma_0 + E + (C + beta_0)^2 / 4(alpha_0 + A),
//! plus prefactor terms in gamma when the norm is tracked. Observables,
//! the mass rescaling symmetry, the unitary (imaginary coupling) twin
//! dynamics, and the sampled coefficients of the equivalent stochastic
//! Schroedinger equation all live here.

use num_complex::Complex64;

use crate::bvp::SampledSolution;
use crate::closedform::exponential::ExponentialGreen;
use crate::closedform::white::WhiteGreen;
use crate::closedform::{trapezoid_complex, GreenCoefs};
use crate::error::{CoreError, Result};
use crate::noise::NoisePath;
use crate::params::PhysicalParams;

/// Below omega t = 1e-8 the hyperbolic forms of A_t, B_t lose digits to
/// cancellation; the free-kinematics limits are exact there.
const SMALL_TIME_FLOOR: f64 = 1e-8;

/// Propagator exponent coefficients, with the stable quadratic invariant
/// A^2 - B^2/4 carried separately: the direct difference cancels
/// catastrophically at small t while alpha_t needs it intact.
#[derive(Debug, Clone, Copy)]
pub struct GreenCoefficients {
    pub a: Complex64,
    /// Coefficient of x^2; equals `a` for time-translation-invariant kernels.
    pub a_tilde: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
    pub e: Complex64,
    /// A^2 - B^2/4 from a cancellation-free source, when available.
    pub quad_invariant: Option<Complex64>,
}

impl GreenCoefficients {
    /// Time-translation-invariant coefficients from a closed-form set.
    pub fn from_green_coefs(g: GreenCoefs) -> Self {
        Self {
            a: g.a,
            a_tilde: g.a,
            b: g.b,
            c: g.c,
            d: g.d,
            e: g.e,
            quad_invariant: None,
        }
    }

    /// Assemble from solved profiles f, g, h on a common grid:
    ///   A = k f'(0),  A~ = -k g'(t),  B = k (f'(t) - g'(0)),
    ///   C = -k h'(0) + (sqrt(lambda)/2) int w f,
    ///   D =  k h'(t) + (sqrt(lambda)/2) int w g,
    ///   E = (sqrt(lambda)/2) int w h.
    pub fn from_profiles(
        f: &SampledSolution,
        g: &SampledSolution,
        h: &SampledSolution,
        noise: &NoisePath,
        p: &PhysicalParams,
    ) -> Result<Self> {
        let n = noise.grid.n_nodes();
        if f.values.len() != n || g.values.len() != n || h.values.len() != n {
            return Err(CoreError::Shape(format!(
                "profiles ({}, {}, {}) do not match the noise grid ({n})",
                f.values.len(),
                g.values.len(),
                h.values.len()
            )));
        }
        let eps = noise.grid.eps();
        let kappa = Complex64::new(0.0, p.m / (2.0 * p.hbar));
        let sqrt_l = p.lambda.sqrt();
        let weighted = |prof: &SampledSolution| -> Complex64 {
            let vals: Vec<Complex64> = prof
                .values
                .iter()
                .zip(&noise.values)
                .map(|(&v, &w)| v * w)
                .collect();
            trapezoid_complex(&vals, eps)
        };
        Ok(Self {
            a: kappa * f.prime_0,
            a_tilde: -kappa * g.prime_t,
            b: kappa * (f.prime_t - g.prime_0),
            c: -kappa * h.prime_0 + 0.5 * sqrt_l * weighted(f),
            d: kappa * h.prime_t + 0.5 * sqrt_l * weighted(g),
            e: 0.5 * sqrt_l * weighted(h),
            quad_invariant: None,
        })
    }
}

/// Deterministic coefficients (A, B, A^2 - B^2/4) of a closed-form kernel.
pub enum KernelGreen<'a> {
    White(&'a WhiteGreen),
    Exponential(&'a ExponentialGreen),
}

impl KernelGreen<'_> {
    fn omega(&self) -> f64 {
        match self {
            KernelGreen::White(g) => 2.0 * (g.hbar * g.lambda / g.m).sqrt(),
            KernelGreen::Exponential(g) => g.omega,
        }
    }

    fn m_over_hbar(&self) -> f64 {
        match self {
            KernelGreen::White(g) => g.m / g.hbar,
            KernelGreen::Exponential(g) => g.m / g.hbar,
        }
    }

    /// (A_t, B_t, A_t^2 - B_t^2/4). Below the small-time floor A and B
    /// take their free-particle limits m/(2 i hbar t) and m/(i hbar t)
    /// while the invariant keeps its exact finite value.
    pub fn deterministic_coefs(&self, t: f64) -> Result<(Complex64, Complex64, Complex64)> {
        if !(t > 0.0) {
            return Err(CoreError::Domain(format!(
                "propagation time must be positive (got {t})"
            )));
        }
        let quad = match self {
            KernelGreen::White(g) => g.a_sq_minus_quarter_b_sq(),
            KernelGreen::Exponential(g) => g.a_sq_minus_quarter_b_sq(t)?,
        };
        if self.omega() * t < SMALL_TIME_FLOOR {
            let free = self.m_over_hbar() / (2.0 * t) * Complex64::new(0.0, -1.0);
            return Ok((free, 2.0 * free, quad));
        }
        let (a, b) = match self {
            KernelGreen::White(g) => (g.coef_a(t), g.coef_b(t)),
            KernelGreen::Exponential(g) => (g.coef_a(t)?, g.coef_b(t)?),
        };
        Ok((a, b, quad))
    }

    pub fn alpha_infinity(&self) -> Complex64 {
        match self {
            KernelGreen::White(g) => g.alpha_infinity(),
            KernelGreen::Exponential(g) => g.alpha_infinity(),
        }
    }

    /// Deterministic spread sigma(t) for a given initial alpha.
    pub fn sigma_at(&self, alpha0: Complex64, t: f64) -> Result<f64> {
        let (a, b, quad) = self.deterministic_coefs(t)?;
        let coeffs = GreenCoefficients {
            a,
            a_tilde: a,
            b,
            c: Complex64::new(0.0, 0.0),
            d: Complex64::new(0.0, 0.0),
            e: Complex64::new(0.0, 0.0),
            quad_invariant: Some(quad),
        };
        let state0 = GaussianState::new(alpha0, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))?;
        Ok(propagate(&state0, &coeffs)?.sigma())
    }
}

/// Gaussian exponent parameters: exp(-alpha x^2 + beta x + gamma).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub gamma_norm: Complex64,
}

impl GaussianState {
    pub fn new(alpha: Complex64, beta: Complex64, gamma_norm: Complex64) -> Result<Self> {
        if !(alpha.re > 0.0) {
            return Err(CoreError::NonNormalizable(alpha.re));
        }
        Ok(Self {
            alpha,
            beta,
            gamma_norm,
        })
    }

    /// Centered state with spread sigma: alpha = 1/(4 sigma^2).
    pub fn from_spread(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(CoreError::Domain(format!(
                "spread must be positive (got {sigma})"
            )));
        }
        Self::new(
            Complex64::new(0.25 / (sigma * sigma), 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
    }

    pub fn sigma(&self) -> f64 {
        1.0 / (2.0 * self.alpha.re.sqrt())
    }

    /// Same state with gamma shifted so that ||phi|| = 1.
    pub fn normalized(&self) -> GaussianState {
        let mut out = *self;
        out.gamma_norm -= 0.5 * self.log_norm_sq();
        out
    }

    /// ln ||phi||^2 = 2 gamma_R + ln sqrt(pi / 2 alpha_R) + beta_R^2 / 2 alpha_R.
    pub fn log_norm_sq(&self) -> f64 {
        2.0 * self.gamma_norm.re
            + 0.5 * (std::f64::consts::PI / (2.0 * self.alpha.re)).ln()
            + self.beta.re * self.beta.re / (2.0 * self.alpha.re)
    }
}

/// One application of the propagator map. gamma_norm carries E and the
/// x0 completion term but no prefactor; use `propagate_normed` when the
/// absolute norm matters.
pub fn propagate(state0: &GaussianState, g: &GreenCoefficients) -> Result<GaussianState> {
    let den = state0.alpha + g.a;
    if den.norm() == 0.0 {
        return Err(CoreError::SingularMap);
    }
    // alpha_t = (alpha_0 A + (A^2 - B^2/4)) / (alpha_0 + A): the stable
    // invariant keeps small-t propagation exact where A and B diverge
    let quad = g
        .quad_invariant
        .unwrap_or_else(|| g.a * g.a_tilde - 0.25 * g.b * g.b);
    let alpha = (state0.alpha * g.a_tilde + quad) / den;
    if !(alpha.re > 0.0) {
        return Err(CoreError::NonNormalizable(alpha.re));
    }
    let lin = g.c + state0.beta;
    let beta = g.d + 0.5 * g.b * lin / den;
    let gamma = state0.gamma_norm + g.e + 0.25 * lin * lin / den;
    GaussianState::new(alpha, beta, gamma)
}

/// As `propagate`, additionally folding the Gaussian-integral prefactor
/// sqrt(pi / (alpha_0 + A)) and the propagator prefactor
/// sqrt(m / (2 i pi hbar t u(t))) into gamma_norm, so that
/// exp(gamma_norm) carries the true norm of the evolved state.
pub fn propagate_normed(
    state0: &GaussianState,
    g: &GreenCoefficients,
    t: f64,
    u: Complex64,
    p: &PhysicalParams,
) -> Result<GaussianState> {
    let mut state = propagate(state0, g)?;
    let den = state0.alpha + g.a;
    let pi = std::f64::consts::PI;
    state.gamma_norm += 0.5 * (pi / den).ln()
        + 0.5 * (p.m / (Complex64::new(0.0, 2.0 * pi * p.hbar * t) * u)).ln();
    Ok(state)
}

/// Physical observables of a Gaussian state.
#[derive(Debug, Clone, Copy)]
pub struct Observables {
    pub sigma: f64,
    pub mean_q: f64,
    pub mean_p: f64,
    /// Second moment of momentum, <p^2> = hbar^2 |alpha|^2 / alpha_R + <p>^2.
    pub mean_p_sq: f64,
    /// Kinetic energy <p^2> / 2m.
    pub energy: f64,
}

pub fn observables(state: &GaussianState, p: &PhysicalParams) -> Result<Observables> {
    let ar = state.alpha.re;
    if !(ar > 0.0) {
        return Err(CoreError::NonNormalizable(ar));
    }
    let ai = state.alpha.im;
    let (br, bi) = (state.beta.re, state.beta.im);
    let mean_q = br / (2.0 * ar);
    let mean_p = p.hbar * (bi - (ai / ar) * br);
    let mean_p_sq = p.hbar * p.hbar * state.alpha.norm_sqr() / ar + mean_p * mean_p;
    Ok(Observables {
        sigma: 1.0 / (2.0 * ar.sqrt()),
        mean_q,
        mean_p,
        mean_p_sq,
        energy: mean_p_sq / (2.0 * p.m),
    })
}

/// Map a state of the reference mass to mass ratio m/m0 under
/// y = sqrt(m/m0) x: alpha scales by the ratio, beta by its square root.
pub fn mass_rescale_state(state_m0: &GaussianState, ratio: f64) -> Result<GaussianState> {
    if !(ratio > 0.0) {
        return Err(CoreError::Domain(format!(
            "mass ratio must be positive (got {ratio})"
        )));
    }
    GaussianState::new(
        state_m0.alpha * ratio,
        state_m0.beta * ratio.sqrt(),
        state_m0.gamma_norm,
    )
}

/// Deviation report of the pathwise mass-scaling symmetry.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MassScalingReport {
    pub ratio: f64,
    /// max over t of |sigma_m(t) sqrt(m/m0) - sigma_m0(t)| / sigma_m0(t).
    pub max_sigma_deviation: f64,
}

/// Compare a trajectory at mass m against the reference-mass trajectory:
/// with matched noise and rescaled initial data the two are related by
/// sigma_m(t) = sqrt(m0/m) sigma_m0(t) exactly.
pub fn mass_rescale_check(
    traj_m: &[GaussianState],
    traj_m0: &[GaussianState],
    ratio: f64,
) -> Result<MassScalingReport> {
    if traj_m.len() != traj_m0.len() || traj_m.is_empty() {
        return Err(CoreError::InvalidComparison(format!(
            "trajectory lengths {} and {} do not match",
            traj_m.len(),
            traj_m0.len()
        )));
    }
    let scale = ratio.sqrt();
    let mut max_dev = 0.0f64;
    for (sm, s0) in traj_m.iter().zip(traj_m0) {
        let dev = (sm.sigma() * scale - s0.sigma()).abs() / s0.sigma();
        max_dev = max_dev.max(dev);
    }
    Ok(MassScalingReport {
        ratio,
        max_sigma_deviation: max_dev,
    })
}

/// Exact solution of the unitary twin dynamics (coupling phase i):
///   d phi/dt = [ (i hbar / 2m) d^2/dx^2 + i sqrt(lambda) x w(t) ] phi.
/// For Gaussians:
///   alpha_t = alpha_0 / (1 + c t),                    c = 2 i hbar alpha_0 / m,
///   beta_t  = [beta_0 + i sqrt(lambda) int_0^t (1 + c s) w(s) ds] / (1 + c t),
///   gamma_t by trapezoid of (i hbar / 2m)(beta^2 - 2 alpha).
/// Valid for any kernel: the noise enters only through its sampled path.
/// Physical averages E[<O>] agree with the collapse dynamics.
pub fn unitary_trajectory(
    state0: &GaussianState,
    path: &NoisePath,
    p: &PhysicalParams,
) -> Vec<GaussianState> {
    let grid = path.grid;
    let eps = grid.eps();
    let n = grid.n_nodes();
    let c = Complex64::new(0.0, 2.0 * p.hbar / p.m) * state0.alpha;
    let i_sqrt_l = Complex64::new(0.0, p.lambda.sqrt());
    let kin = Complex64::new(0.0, 0.5 * p.hbar / p.m);

    let mut out = Vec::with_capacity(n);
    out.push(*state0);
    let mut drive = Complex64::new(0.0, 0.0);
    let mut gamma = state0.gamma_norm;
    let mut rate_prev = kin * (state0.beta * state0.beta - 2.0 * state0.alpha);
    for k in 1..n {
        let (s0, s1) = (grid.node(k - 1), grid.node(k));
        drive += 0.5
            * eps
            * ((1.0 + c * s0) * path.values[k - 1] + (1.0 + c * s1) * path.values[k]);
        let den = 1.0 + c * s1;
        let alpha = state0.alpha / den;
        let beta = (state0.beta + i_sqrt_l * drive) / den;
        let rate = kin * (beta * beta - 2.0 * alpha);
        gamma += 0.5 * eps * (rate_prev + rate);
        rate_prev = rate;
        out.push(GaussianState {
            alpha,
            beta,
            gamma_norm: gamma,
        });
    }
    out
}

/// Sampled coefficient functions of the equivalent stochastic equation
///   d phi/dt = [ -(i/hbar) p^2/2m + sqrt(lambda) q w(t)
///                - 2 lambda q int_0^t D(t,s) (q a_t(s) + p b_t(s) + c_t(s)) ds ] phi.
#[derive(Debug, Clone)]
pub struct SseCoefficients {
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
}

/// General form from solved profiles:
///   a_t(s) = g(s) + 2 g'(t) f(s) / (g'(0) - f'(t)),
///   b_t(s) = -(2/m) f(s) / (g'(0) - f'(t)),
///   c_t(s) = h(s) + f(s) (h'(t) - (i sqrt(lambda) hbar / m) int w g) / (g'(0) - f'(t)).
///
/// The sign of the integral term in c_t follows from eliminating x0
/// through the propagator gradient: -(2 i hbar / m) D_t must cancel
/// h'(t) up to -(i sqrt(lambda) hbar / m) int w g. The white-noise
/// limit of the resulting equation is the standard Markovian one.
pub fn sse_coefficients(
    f: &SampledSolution,
    g: &SampledSolution,
    h: &SampledSolution,
    noise: &NoisePath,
    p: &PhysicalParams,
) -> Result<SseCoefficients> {
    let n = noise.grid.n_nodes();
    if f.values.len() != n || g.values.len() != n || h.values.len() != n {
        return Err(CoreError::Shape(format!(
            "profiles ({}, {}, {}) do not match the noise grid ({n})",
            f.values.len(),
            g.values.len(),
            h.values.len()
        )));
    }
    let den = g.prime_0 - f.prime_t;
    if den.norm() < 1e-300 {
        return Err(CoreError::Degenerate(
            "g'(0) - f'(t) vanishes; the x0 elimination is singular".into(),
        ));
    }
    let eps = noise.grid.eps();
    let wg: Vec<Complex64> = g
        .values
        .iter()
        .zip(&noise.values)
        .map(|(&v, &w)| v * w)
        .collect();
    let drive = h.prime_t
        - Complex64::new(0.0, p.lambda.sqrt() * p.hbar / p.m) * trapezoid_complex(&wg, eps);
    let a = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(&fv, &gv)| gv + 2.0 * g.prime_t * fv / den)
        .collect();
    let b = f
        .values
        .iter()
        .map(|&fv| -2.0 / p.m * fv / den)
        .collect();
    let c = f
        .values
        .iter()
        .zip(&h.values)
        .map(|(&fv, &hv)| hv + fv * drive / den)
        .collect();
    Ok(SseCoefficients { a, b, c })
}

/// Exact Gaussian evolution rates implied by the stochastic equation,
/// given the kernel-weighted moments I_a = int D(t,s) a_t(s) ds (same
/// for b, c) and the instantaneous noise value:
///   d alpha/dt = -(2 i hbar / m) alpha^2 + 2 lambda I_a + 4 i hbar lambda alpha I_b,
///   d beta/dt  = -(2 i hbar / m) alpha beta + sqrt(lambda) w
///                + 2 i hbar lambda beta I_b - 2 lambda I_c,
///   d gamma/dt = (i hbar / 2m) (beta^2 - 2 alpha).
pub fn sse_gaussian_rates(
    state: &GaussianState,
    i_a: Complex64,
    i_b: Complex64,
    i_c: Complex64,
    w_t: f64,
    p: &PhysicalParams,
) -> (Complex64, Complex64, Complex64) {
    let ih_m = Complex64::new(0.0, p.hbar / p.m);
    let (alpha, beta) = (state.alpha, state.beta);
    let alpha_dot =
        -2.0 * ih_m * alpha * alpha + 2.0 * p.lambda * i_a + 4.0 * ih_m * p.lambda * alpha * i_b;
    let beta_dot = -2.0 * ih_m * alpha * beta
        + p.lambda.sqrt() * w_t
        + 2.0 * ih_m * p.lambda * beta * i_b
        - 2.0 * p.lambda * i_c;
    let gamma_dot = 0.5 * ih_m * (beta * beta - 2.0 * alpha);
    (alpha_dot, beta_dot, gamma_dot)
}
