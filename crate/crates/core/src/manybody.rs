//! Separation of center-of-mass and relative degrees of freedom.
//!
//! For N particles with couplings lambda_n = (m_n/m0) lambda0 and iid
//! noises, the center of mass couples to a single noise with strength
//! lambda = sum lambda_n = (M/m0) lambda0: collapse amplifies with total
//! mass. The leftover relative noises w~_n = w_n - sqrt(lambda_n/lambda_N) w_N
//! are correlated through C_nm = delta_nm + sqrt(lambda_n lambda_m)/lambda_N;
//! diagonalizing C restores iid noises for the relative motion.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{CoreError, Result};

/// Masses and couplings of a composite system.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    /// Constituent masses, kg.
    pub masses: Vec<f64>,
    /// Per-particle couplings lambda_n = (m_n/m0) lambda0.
    pub lambdas: Vec<f64>,
    /// Total mass M, kg.
    pub total_mass: f64,
    /// Center-of-mass coupling lambda = sum lambda_n = (M/m0) lambda0.
    pub lambda_cm: f64,
}

impl ParticleSystem {
    pub fn new(masses: &[f64], m0: f64, lambda0: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(CoreError::Domain("at least one particle required".into()));
        }
        if m0 <= 0.0 || lambda0 <= 0.0 {
            return Err(CoreError::Domain(format!(
                "reference mass and coupling must be positive (m0 = {m0}, lambda0 = {lambda0})"
            )));
        }
        if let Some(&bad) = masses.iter().find(|&&m| !(m > 0.0)) {
            return Err(CoreError::Domain(format!(
                "masses must be positive (got {bad})"
            )));
        }
        let total_mass: f64 = masses.iter().sum();
        let lambdas: Vec<f64> = masses.iter().map(|&m| m / m0 * lambda0).collect();
        Ok(Self {
            masses: masses.to_vec(),
            lambdas,
            total_mass,
            lambda_cm: total_mass / m0 * lambda0,
        })
    }

    /// Center-of-mass noise w(t) = (1/sqrt(lambda)) sum sqrt(lambda_n) w_n(t)
    /// evaluated at one time point.
    pub fn cm_noise_value(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.lambdas.len() {
            return Err(CoreError::Shape(format!(
                "expected {} noise values, got {}",
                self.lambdas.len(),
                w.len()
            )));
        }
        let s: f64 = self
            .lambdas
            .iter()
            .zip(w)
            .map(|(&l, &wn)| l.sqrt() * wn)
            .sum();
        Ok(s / self.lambda_cm.sqrt())
    }

    /// Relative noises w~_n = w_n - sqrt(lambda_n / lambda_N) w_N for
    /// n < N, evaluated at one time point. The square root is required
    /// for E[w~_n w~_m] = C_nm D(t,s): the substitution
    /// q~_N = -(1/m_N) sum m_n q~_n pairs sqrt(lambda_N) (m_n/m_N) w_N
    /// with sqrt(lambda_n) q~_n, and m_n/m_N = lambda_n/lambda_N.
    pub fn relative_noise_values(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = self.lambdas.len();
        if w.len() != n {
            return Err(CoreError::Shape(format!(
                "expected {n} noise values, got {}",
                w.len()
            )));
        }
        let l_last = self.lambdas[n - 1];
        Ok((0..n - 1)
            .map(|k| w[k] - (self.lambdas[k] / l_last).sqrt() * w[n - 1])
            .collect())
    }
}

/// Covariance matrix of the relative noises and its rank-one certificate.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    /// C_nm = delta_nm + sqrt(lambda_n lambda_m)/lambda_N, (N-1)x(N-1).
    pub matrix: Array2<f64>,
    /// X^T Y = 1 - lambda/lambda_N; C = I - X Y^T is positive definite
    /// iff this is below one.
    pub certificate: f64,
}

pub fn coupling_matrix(lambdas: &[f64]) -> Result<CouplingMatrix> {
    let n = lambdas.len();
    if n < 2 {
        return Err(CoreError::Domain(format!(
            "relative motion needs at least two particles (got {n})"
        )));
    }
    if let Some(&bad) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(CoreError::Domain(format!(
            "couplings must be positive (got {bad})"
        )));
    }
    let l_last = lambdas[n - 1];
    let mut matrix = Array2::zeros((n - 1, n - 1));
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            matrix[[i, j]] = (lambdas[i] * lambdas[j]).sqrt() / l_last
                + if i == j { 1.0 } else { 0.0 };
        }
    }
    let lambda: f64 = lambdas.iter().sum();
    Ok(CouplingMatrix {
        matrix,
        certificate: 1.0 - lambda / l_last,
    })
}

/// Diagonalized relative-noise structure.
#[derive(Debug, Clone)]
pub struct RelativeNoiseModel {
    pub coupling: CouplingMatrix,
    /// Orthogonal O with O^T C O = diag(d).
    pub o: Array2<f64>,
    /// Eigenvalues of C, all positive.
    pub d: Vec<f64>,
    /// Effective relative couplings lambda_bar_n = lambda_n d_n^2.
    pub lambda_bar: Vec<f64>,
    lambdas: Vec<f64>,
}

pub fn diagonalize_relative(lambdas: &[f64]) -> Result<RelativeNoiseModel> {
    let coupling = coupling_matrix(lambdas)?;
    let (eigs, o) = coupling.matrix.eigh(UPLO::Lower)?;
    let d: Vec<f64> = eigs.to_vec();
    if let Some(&bad) = d.iter().find(|&&e| !(e > 0.0)) {
        return Err(CoreError::NotPositiveSemiDefinite {
            min_eig: bad,
            tol: 0.0,
        });
    }
    let lambda_bar = lambdas[..lambdas.len() - 1]
        .iter()
        .zip(&d)
        .map(|(&l, &dn)| l * dn * dn)
        .collect();
    Ok(RelativeNoiseModel {
        coupling,
        o,
        d,
        lambda_bar,
        lambdas: lambdas.to_vec(),
    })
}

impl RelativeNoiseModel {
    /// Decorrelated noises wbar_n = (1/sqrt(d_n)) (O^T wtilde)_n at one
    /// time point; iid with correlation D(t,s).
    pub fn bar_noise_values(&self, w_tilde: &[f64]) -> Result<Vec<f64>> {
        let n = self.d.len();
        if w_tilde.len() != n {
            return Err(CoreError::Shape(format!(
                "expected {n} relative noises, got {}",
                w_tilde.len()
            )));
        }
        let wt = Array1::from(w_tilde.to_vec());
        let rotated = self.o.t().dot(&wt);
        Ok(rotated
            .iter()
            .zip(&self.d)
            .map(|(&v, &dn)| v / dn.sqrt())
            .collect())
    }

    /// Transformed coordinates
    /// qbar_n = (1/sqrt(lambda_n d_n)) sum_m O^T_nm sqrt(lambda_m) qtilde_m.
    /// The 1/sqrt(d_n) normalization makes the bilinear identity
    /// sum sqrt(lambda_n) qtilde_n wtilde_n = sum sqrt(lambda_bar_n) qbar_n wbar_n
    /// hold with lambda_bar_n = lambda_n d_n^2.
    pub fn bar_coordinates(&self, q_tilde: &[f64]) -> Result<Vec<f64>> {
        let n = self.d.len();
        if q_tilde.len() != n {
            return Err(CoreError::Shape(format!(
                "expected {n} relative coordinates, got {}",
                q_tilde.len()
            )));
        }
        let weighted = Array1::from_iter(
            q_tilde
                .iter()
                .zip(&self.lambdas)
                .map(|(&q, &l)| l.sqrt() * q),
        );
        let rotated = self.o.t().dot(&weighted);
        Ok(rotated
            .iter()
            .zip(self.lambdas.iter().zip(&self.d))
            .map(|(&v, (&l, &dn))| v / (l * dn).sqrt())
            .collect())
    }
}

/// Residual of the decoupling condition
/// sum_m [sqrt(lambda_m) D_mn - sqrt(lambda_n lambda_m / lambda_N) D_mN] = 0
/// for one sampled (t, s): `d_values[[m, n]]` holds D_mn(t, s).
#[derive(Debug, Clone, Copy)]
pub struct DecouplingReport {
    pub satisfied: bool,
    pub max_residual: f64,
    pub scale: f64,
}

pub fn decoupling_condition(d_values: &Array2<f64>, lambdas: &[f64]) -> Result<DecouplingReport> {
    let n = lambdas.len();
    if d_values.dim() != (n, n) {
        return Err(CoreError::Shape(format!(
            "kernel matrix must be {n}x{n}, got {:?}",
            d_values.dim()
        )));
    }
    if n < 2 {
        // a single particle has no relative motion: nothing to decouple
        return Ok(DecouplingReport {
            satisfied: true,
            max_residual: 0.0,
            scale: 0.0,
        });
    }
    let l_last = lambdas[n - 1];
    let mut max_residual = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..n - 1 {
        let mut res = 0.0;
        for m in 0..n {
            let a = lambdas[m].sqrt() * d_values[[m, k]];
            let b = (lambdas[k] * lambdas[m] / l_last).sqrt() * d_values[[m, n - 1]];
            res += a - b;
            scale = scale.max(a.abs()).max(b.abs());
        }
        max_residual = max_residual.max(res.abs());
    }
    Ok(DecouplingReport {
        satisfied: max_residual < 1e-10 * scale.max(f64::MIN_POSITIVE),
        max_residual,
        scale,
    })
}
