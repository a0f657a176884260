//! Physical parameters, derived coupling constants, unit conversion and
//! correlation kernels.
//!
//! All SI quantities are converted to dimensionless internal units
//! (hbar = m = 1, time in 1/omega, length in the collapse length scale)
//! at the API boundary: SI magnitudes such as lambda ~ 1e24 m^-2 s^-1
//! against hbar ~ 1e-34 J s destroy floating-point conditioning if mixed
//! in one linear system.

use ndarray::Array2;
use ndarray_linalg::{Eigh, Norm, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Reduced Planck constant (J·s), CODATA.
pub const HBAR_SI: f64 = 1.0546e-34;

/// Reference mass: one nucleon (kg).
pub const M0_SI: f64 = 1.67e-27;

/// GRW value of the fundamental coupling (m^-2 s^-1).
pub const LAMBDA0_GRW: f64 = 5.00e-3;

/// Adler's (middle) value of the fundamental coupling (m^-2 s^-1).
pub const LAMBDA0_ADLER: f64 = 1.12e6;

/// Collapse rate lambda = (m/m0) * lambda0.
pub fn derive_coupling(m: f64, m0: f64, lambda0: f64) -> Result<f64> {
    if m <= 0.0 || m0 <= 0.0 {
        return Err(CoreError::Domain(format!(
            "masses must be positive (m = {m}, m0 = {m0})"
        )));
    }
    if lambda0 < 0.0 {
        return Err(CoreError::Domain(format!(
            "lambda0 must be non-negative (got {lambda0})"
        )));
    }
    Ok(m / m0 * lambda0)
}

/// Convert the legacy GRW / CSL coupling constants to lambda0.
///
/// lambda0 = alpha * lambda_GRW / 2 = alpha^{5/2} * gamma_CSL / (16 pi^{3/2}),
/// with alpha = 1/r_C^2. Units: lambda_grw in 1/s, gamma_csl in m^3/s,
/// r_c in m. When both legacy constants are supplied they must agree to
/// 1e-6 relative.
pub fn convert_legacy_couplings(
    lambda_grw: Option<f64>,
    gamma_csl: Option<f64>,
    r_c: f64,
) -> Result<f64> {
    if r_c <= 0.0 {
        return Err(CoreError::Domain(format!("r_C must be positive (got {r_c})")));
    }
    let alpha = 1.0 / (r_c * r_c);
    let via_grw = lambda_grw.map(|l| {
        debug_assert!(l > 0.0);
        alpha * l / 2.0
    });
    let via_csl = gamma_csl.map(|g| alpha.powf(2.5) * g / (16.0 * std::f64::consts::PI.powf(1.5)));
    match (via_grw, via_csl) {
        (Some(a), Some(b)) => {
            let rel = (a - b).abs() / a.abs().max(b.abs());
            if rel > 1e-6 {
                Err(CoreError::InconsistentCouplings {
                    grw_route: a,
                    csl_route: b,
                    rel,
                })
            } else {
                Ok(a)
            }
        }
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(CoreError::Domain(
            "at least one of lambda_GRW, gamma_CSL is required".into(),
        )),
    }
}

/// The model's constants for one particle (or a center of mass).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Particle (or total) mass, kg.
    pub m: f64,
    /// Reference mass, kg.
    pub m0: f64,
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Fundamental coupling, m^-2 s^-1.
    pub lambda0: f64,
    /// Derived coupling lambda = (m/m0) lambda0, m^-2 s^-1.
    pub lambda: f64,
}

impl PhysicalParams {
    pub fn new(m: f64, m0: f64, hbar: f64, lambda0: f64) -> Result<Self> {
        if hbar <= 0.0 {
            return Err(CoreError::Domain(format!("hbar must be positive (got {hbar})")));
        }
        let lambda = derive_coupling(m, m0, lambda0)?;
        Ok(Self {
            m,
            m0,
            hbar,
            lambda0,
            lambda,
        })
    }

    /// SI parameters with the GRW coupling.
    pub fn grw(m: f64) -> Result<Self> {
        Self::new(m, M0_SI, HBAR_SI, LAMBDA0_GRW)
    }

    /// SI parameters with Adler's coupling.
    pub fn adler(m: f64) -> Result<Self> {
        Self::new(m, M0_SI, HBAR_SI, LAMBDA0_ADLER)
    }

    /// Dimensionless parameters: hbar = m = m0 = 1 with the given coupling.
    pub fn dimensionless(lambda: f64) -> Result<Self> {
        Self::new(1.0, 1.0, 1.0, lambda)
    }

    /// Collapse frequency omega = 2 sqrt(hbar lambda / m), s^-1.
    pub fn omega(&self) -> f64 {
        2.0 * (self.hbar * self.lambda / self.m).sqrt()
    }
}

/// Derived unit scales of the collapse dynamics.
///
/// In internal units (time in 1/omega, length in ell) the coupling becomes
/// lambda ell^2 / omega = 1/4 and the internal frequency is 1, so the only
/// free dimensionless parameters are gamma/omega and the initial-state scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScales {
    /// omega = 2 sqrt(hbar lambda / m), s^-1.
    pub omega: f64,
    /// ell = sqrt(hbar / (m omega)), m.
    pub length: f64,
    /// 1/omega, s.
    pub time: f64,
}

impl UnitScales {
    /// Fails with a free-particle marker when lambda = 0 (no collapse scale).
    pub fn from_params(p: &PhysicalParams) -> Result<Self> {
        if p.lambda == 0.0 {
            return Err(CoreError::FreeParticleUnits);
        }
        let omega = p.omega();
        Ok(Self {
            omega,
            length: (p.hbar / (p.m * omega)).sqrt(),
            time: 1.0 / omega,
        })
    }

    pub fn time_to_natural(&self, t_si: f64) -> f64 {
        t_si / self.time
    }
    pub fn time_from_natural(&self, t_nat: f64) -> f64 {
        t_nat * self.time
    }
    pub fn length_to_natural(&self, x_si: f64) -> f64 {
        x_si / self.length
    }
    pub fn length_from_natural(&self, x_nat: f64) -> f64 {
        x_nat * self.length
    }
    /// Rate (s^-1) such as gamma, to natural units.
    pub fn rate_to_natural(&self, r_si: f64) -> f64 {
        r_si * self.time
    }
    pub fn rate_from_natural(&self, r_nat: f64) -> f64 {
        r_nat / self.time
    }
    /// Gaussian width parameter alpha (m^-2) to natural units.
    pub fn alpha_to_natural(&self, a_si: f64) -> f64 {
        a_si * self.length * self.length
    }
    pub fn alpha_from_natural(&self, a_nat: f64) -> f64 {
        a_nat / (self.length * self.length)
    }
    /// Coupling lambda (m^-2 s^-1) in natural units; 1/4 by construction.
    pub fn lambda_natural(&self, p: &PhysicalParams) -> f64 {
        p.lambda * self.length * self.length * self.time
    }
}

/// Dimensionless parameter set equivalent to a set of SI inputs.
///
/// hbar = m = 1, lambda = 1/4, omega = 1; only gamma and the time horizon
/// carry physics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    pub params: PhysicalParams,
    pub scales: UnitScales,
}

impl NaturalParams {
    pub fn from_si(p: &PhysicalParams) -> Result<Self> {
        let scales = UnitScales::from_params(p)?;
        let params = PhysicalParams::new(1.0, 1.0, 1.0, scales.lambda_natural(p))?;
        Ok(Self { params, scales })
    }
}

/// Uniform time grid on [0, t_final] with N subintervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0) {
            return Err(CoreError::Domain(format!(
                "t_final must be positive (got {t_final})"
            )));
        }
        if n_steps < 2 {
            return Err(CoreError::Domain(format!(
                "n_steps must be >= 2 (got {n_steps})"
            )));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn eps(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.eps()
    }

    /// All N+1 nodes t_k = k eps.
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }
}

/// Noise correlation function D(t, s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CorrelationKernel {
    /// D(t, s) = delta(t - s); on a grid, D_{kj} = delta_{kj} / eps.
    White,
    /// D(t, s) = (gamma/2) exp(-gamma |t - s|).
    Exponential { gamma: f64 },
    /// Symmetric positive-semidefinite table of D(t_i, t_j) on a grid.
    Tabulated { grid: TimeGrid, values: Vec<f64> },
}

/// Relative tolerance on the smallest eigenvalue of a tabulated kernel.
pub const PSD_REL_TOL: f64 = 1e-10;

impl CorrelationKernel {
    pub fn exponential(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(CoreError::Domain(format!(
                "exponential kernel needs gamma > 0 (got {gamma})"
            )));
        }
        Ok(Self::Exponential { gamma })
    }

    /// Validates symmetry and positive semi-definiteness before accepting.
    pub fn tabulated(grid: TimeGrid, matrix: &Array2<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        if matrix.shape() != [n, n] {
            return Err(CoreError::Shape(format!(
                "tabulated kernel must be {n}x{n}, got {:?}",
                matrix.shape()
            )));
        }
        let scale = matrix.norm_l2().max(f64::MIN_POSITIVE);
        let mut max_asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                max_asym = max_asym.max((matrix[[i, j]] - matrix[[j, i]]).abs());
            }
        }
        if max_asym > PSD_REL_TOL * scale {
            return Err(CoreError::AsymmetricKernel(max_asym / scale));
        }
        let (eigs, _) = matrix.eigh(UPLO::Lower)?;
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = -PSD_REL_TOL * scale;
        if min_eig < tol {
            return Err(CoreError::NotPositiveSemiDefinite { min_eig, tol });
        }
        Ok(Self::Tabulated {
            grid,
            values: matrix.iter().cloned().collect(),
        })
    }

    /// Tabulate the exponential kernel on a grid (exercises the general
    /// dense-kernel code paths with a known target). The analytic kernel
    /// is symmetric positive definite, so the table skips the O(n^3)
    /// eigenvalue screening that [`tabulated`](Self::tabulated) applies
    /// to untrusted input.
    pub fn tabulated_exponential(grid: TimeGrid, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(CoreError::Domain(format!(
                "exponential kernel needs gamma > 0 (got {gamma})"
            )));
        }
        let nodes = grid.nodes();
        let n = nodes.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = gamma / 2.0 * (-gamma * (nodes[i] - nodes[j]).abs()).exp();
            }
        }
        Ok(Self::Tabulated { grid, values })
    }

    /// Pointwise D(t, s). The white kernel has no pointwise value (it is a
    /// delta distribution); use [`covariance_matrix`](Self::covariance_matrix)
    /// for its grid representation.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        match self {
            Self::White => Err(CoreError::Domain(
                "white kernel is a delta distribution; no pointwise value".into(),
            )),
            Self::Exponential { gamma } => Ok(gamma / 2.0 * (-gamma * (t - s).abs()).exp()),
            Self::Tabulated { grid, values } => {
                let span = grid.t_final;
                if !(0.0..=span * (1.0 + 1e-12)).contains(&t) {
                    return Err(CoreError::KernelRange(t));
                }
                if !(0.0..=span * (1.0 + 1e-12)).contains(&s) {
                    return Err(CoreError::KernelRange(s));
                }
                let n = grid.n_nodes();
                let at = |i: usize, j: usize| values[i * n + j];
                let eps = grid.eps();
                let (i, fi) = split_index(t, eps, grid.n_steps);
                let (j, fj) = split_index(s, eps, grid.n_steps);
                // bilinear interpolation
                let v00 = at(i, j);
                let v10 = at(i + 1, j);
                let v01 = at(i, j + 1);
                let v11 = at(i + 1, j + 1);
                Ok(v00 * (1.0 - fi) * (1.0 - fj)
                    + v10 * fi * (1.0 - fj)
                    + v01 * (1.0 - fi) * fj
                    + v11 * fi * fj)
            }
        }
    }

    /// Node covariance matrix D(t_i, t_j), (N+1)x(N+1); the white kernel
    /// discretizes to delta_{ij}/eps (the unique grid representation
    /// consistent with the delta-kernel limit).
    pub fn covariance_matrix(&self, grid: &TimeGrid) -> Result<Array2<f64>> {
        let n = grid.n_nodes();
        let nodes = grid.nodes();
        let mut m = Array2::zeros((n, n));
        match self {
            Self::White => {
                let inv_eps = 1.0 / grid.eps();
                for i in 0..n {
                    m[[i, i]] = inv_eps;
                }
            }
            Self::Exponential { gamma } => {
                for i in 0..n {
                    for j in 0..n {
                        m[[i, j]] = gamma / 2.0 * (-gamma * (nodes[i] - nodes[j]).abs()).exp();
                    }
                }
            }
            Self::Tabulated { .. } => {
                for i in 0..n {
                    for j in 0..n {
                        m[[i, j]] = self.eval(nodes[i], nodes[j])?;
                    }
                }
            }
        }
        Ok(m)
    }

    /// Short tag for reports and file metadata.
    pub fn tag(&self) -> String {
        match self {
            Self::White => "white".into(),
            Self::Exponential { gamma } => format!("exponential(gamma={gamma})"),
            Self::Tabulated { .. } => "tabulated".into(),
        }
    }

    pub fn is_time_translation_invariant(&self) -> bool {
        !matches!(self, Self::Tabulated { .. })
    }
}

fn split_index(t: f64, eps: f64, n_steps: usize) -> (usize, f64) {
    let raw = t / eps;
    let i = (raw.floor() as usize).min(n_steps - 1);
    (i, raw - i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn coupling_ratio_one() {
        assert_eq!(derive_coupling(M0_SI, M0_SI, 0.1).unwrap(), 0.1);
    }

    #[test]
    fn coupling_one_kg_grw() {
        // lambda = (1 kg / m0) * lambda0_GRW ~ 2.994e24
        let lambda = derive_coupling(1.0, M0_SI, LAMBDA0_GRW).unwrap();
        assert_relative_eq!(lambda, 1.0 / 1.67e-27 * 5.00e-3, max_relative = 1e-12);
        assert!((lambda / 2.994e24 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn coupling_amplification_is_linear_in_particle_count() {
        let single = derive_coupling(M0_SI, M0_SI, LAMBDA0_GRW).unwrap();
        let n = 42.0;
        let total = derive_coupling(n * M0_SI, M0_SI, LAMBDA0_GRW).unwrap();
        assert_relative_eq!(total, n * single, max_relative = 1e-12);
    }

    #[test]
    fn coupling_rejects_nonpositive() {
        assert!(derive_coupling(-1.0, M0_SI, 1.0).is_err());
        assert!(derive_coupling(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn grw_legacy_route_matches_preset() {
        // lambda_GRW = 1e-16 / s, r_C = 1e-7 m reproduce the GRW preset.
        let l0 = convert_legacy_couplings(Some(1e-16), None, 1e-7).unwrap();
        assert!((l0 / LAMBDA0_GRW - 1.0).abs() < 0.01, "l0 = {l0}");
    }

    #[test]
    fn adler_csl_route_order_of_magnitude() {
        // gamma_CSL = 2e-21 cm^3/s = 2e-27 m^3/s
        let l0 = convert_legacy_couplings(None, Some(2e-27), 1e-7).unwrap();
        assert!(l0 / LAMBDA0_ADLER > 0.1 && l0 / LAMBDA0_ADLER < 10.0, "l0 = {l0}");
    }

    #[test]
    fn doubling_rc_halves_lambda0_via_grw_route() {
        let a = convert_legacy_couplings(Some(1e-16), None, 1e-7).unwrap();
        let b = convert_legacy_couplings(Some(1e-16), None, 2e-7).unwrap();
        assert_relative_eq!(a / b, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn inconsistent_legacy_inputs_rejected() {
        let err = convert_legacy_couplings(Some(1e-16), Some(1e-20), 1e-7);
        assert!(matches!(err, Err(CoreError::InconsistentCouplings { .. })));
    }

    #[test]
    fn natural_units_hbar_m_lambda_one() {
        let p = PhysicalParams::dimensionless(1.0).unwrap();
        let u = UnitScales::from_params(&p).unwrap();
        assert_relative_eq!(u.omega, 2.0, max_relative = 1e-15);
        assert_relative_eq!(u.length, 1.0 / 2f64.sqrt(), max_relative = 1e-15);
        // dimensionless coupling lambda ell^2 / omega = 1/4, always
        assert_relative_eq!(u.lambda_natural(&p), 0.25, max_relative = 1e-15);
    }

    #[test]
    fn si_one_kg_grw_omega() {
        let p = PhysicalParams::grw(1.0).unwrap();
        let u = UnitScales::from_params(&p).unwrap();
        let expect = 2.0 * (1.0546e-34 * p.lambda).sqrt();
        assert_relative_eq!(u.omega, expect, max_relative = 1e-12);
    }

    #[test]
    fn zero_lambda_gives_free_particle_marker() {
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            UnitScales::from_params(&p),
            Err(CoreError::FreeParticleUnits)
        ));
    }

    #[test]
    fn natural_params_are_scale_free() {
        let p = PhysicalParams::grw(1.0).unwrap();
        let n = NaturalParams::from_si(&p).unwrap();
        assert_relative_eq!(n.params.lambda, 0.25, max_relative = 1e-12);
        assert_relative_eq!(n.params.omega(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn exponential_kernel_at_equal_times() {
        let k = CorrelationKernel::exponential(3.0).unwrap();
        assert_relative_eq!(k.eval(0.7, 0.7).unwrap(), 1.5, max_relative = 1e-15);
    }

    #[test]
    fn exponential_kernel_integral_is_one_half() {
        // int_0^inf (gamma/2) e^{-gamma tau} dtau = 1/2, by trapezoid quadrature
        let gamma = 2.5;
        let k = CorrelationKernel::exponential(gamma).unwrap();
        let t_max = 40.0 / gamma;
        let n = 200_000;
        let h = t_max / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let a = k.eval(i as f64 * h, 0.0).unwrap();
            let b = k.eval((i + 1) as f64 * h, 0.0).unwrap();
            integral += 0.5 * (a + b) * h;
        }
        assert_abs_diff_eq!(integral, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn tabulated_rejects_asymmetric() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let n = grid.n_nodes();
        let mut m = Array2::eye(n);
        m[[0, 1]] = 0.5;
        assert!(matches!(
            CorrelationKernel::tabulated(grid, &m),
            Err(CoreError::AsymmetricKernel(_))
        ));
    }

    #[test]
    fn tabulated_rejects_indefinite() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let n = grid.n_nodes();
        let mut m = Array2::eye(n);
        m[[0, 0]] = -1.0;
        assert!(matches!(
            CorrelationKernel::tabulated(grid, &m),
            Err(CoreError::NotPositiveSemiDefinite { .. })
        ));
    }

    #[test]
    fn tabulated_lookup_out_of_range() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let k = CorrelationKernel::tabulated_exponential(grid, 1.0).unwrap();
        assert!(matches!(k.eval(1.5, 0.0), Err(CoreError::KernelRange(_))));
    }

    #[test]
    fn tabulated_matches_analytic_exponential() {
        let grid = TimeGrid::new(2.0, 64).unwrap();
        let k = CorrelationKernel::tabulated_exponential(grid, 1.3).unwrap();
        let exact = CorrelationKernel::exponential(1.3).unwrap();
        // on-node lookups are exact, off-node within interpolation error
        assert_relative_eq!(
            k.eval(grid.node(5), grid.node(9)).unwrap(),
            exact.eval(grid.node(5), grid.node(9)).unwrap(),
            max_relative = 1e-12
        );
        assert_abs_diff_eq!(
            k.eval(0.33, 1.71).unwrap(),
            exact.eval(0.33, 1.71).unwrap(),
            epsilon = 1e-3
        );
    }

    proptest! {
        #[test]
        fn kernel_symmetry(t in 0.0..5.0f64, s in 0.0..5.0f64, gamma in 0.1..10.0f64) {
            let k = CorrelationKernel::exponential(gamma).unwrap();
            prop_assert_eq!(k.eval(t, s).unwrap(), k.eval(s, t).unwrap());
        }

        #[test]
        fn unit_round_trip(m_exp in -27.0..1.0f64, l0_exp in -3.0..6.0f64, v in 0.001..1000.0f64) {
            let p = PhysicalParams::new(10f64.powf(m_exp), M0_SI, HBAR_SI, 10f64.powf(l0_exp)).unwrap();
            let u = UnitScales::from_params(&p).unwrap();
            let back = u.time_from_natural(u.time_to_natural(v));
            prop_assert!((back - v).abs() <= 1e-12 * v);
            let back = u.length_from_natural(u.length_to_natural(v));
            prop_assert!((back - v).abs() <= 1e-12 * v);
            let back = u.alpha_from_natural(u.alpha_to_natural(v));
            prop_assert!((back - v).abs() <= 1e-12 * v);
        }
    }
}
