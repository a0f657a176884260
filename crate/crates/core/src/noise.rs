//! Gaussian noise sampling on the time grid.
//!
//! Three families: discretized white noise, the exponentially correlated
//! (Ornstein-Uhlenbeck) process sampled exactly through its AR(1)
//! recursion, and arbitrary tabulated kernels through a dense matrix
//! square root. A separate set of smooth deterministic "noises" with
//! exact second derivatives backs the closed-form solvers that need
//! w''(t) pointwise.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, Eigh, SolveTriangular, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::params::{CorrelationKernel, TimeGrid};

/// One noise realization: values w(t_k) on the nodes of `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl NoisePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(CoreError::Shape(format!(
                "noise path needs {} values, got {}",
                grid.n_nodes(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Trapezoid quadrature of f(t_k) w(t_k) over [0, t_final].
    pub fn trapezoid<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let eps = self.grid.eps();
        let n = self.grid.n_steps;
        let mut acc = 0.5 * (f(0.0) * self.values[0] + f(self.grid.t_final) * self.values[n]);
        for k in 1..n {
            acc += f(self.grid.node(k)) * self.values[k];
        }
        acc * eps
    }
}

/// Derives one independent RNG per path from a master seed.
///
/// The master seed keys a ChaCha12 generator; path `i` uses stream `i` of
/// that keyed cipher, so any path can be regenerated in isolation and
/// thread order never affects the sample.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// Sampler for one kernel on one grid. Tabulated kernels pay a one-time
/// dense factorization; white and exponential sampling is O(N) per path.
pub struct NoiseGenerator {
    grid: TimeGrid,
    kind: SamplerKind,
}

enum SamplerKind {
    /// Node values iid N(0, 1/eps).
    White,
    /// Exact AR(1) recursion of the stationary OU process.
    Exponential { gamma: f64 },
    /// Factor L with L L^T = covariance matrix. `causal` records whether
    /// L is lower triangular (Cholesky succeeded).
    Factor { l: Array2<f64>, causal: bool },
}

impl NoiseGenerator {
    pub fn new(kernel: &CorrelationKernel, grid: TimeGrid) -> Result<Self> {
        let kind = match kernel {
            CorrelationKernel::White => SamplerKind::White,
            CorrelationKernel::Exponential { gamma } => {
                SamplerKind::Exponential { gamma: *gamma }
            }
            CorrelationKernel::Tabulated { .. } => {
                let cov = kernel.covariance_matrix(&grid)?;
                let l = matrix_sqrt_lower(&cov)?;
                let scale = l.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                let n = l.nrows();
                let causal = (0..n)
                    .all(|i| ((i + 1)..n).all(|j| l[[i, j]].abs() <= 1e-12 * scale));
                SamplerKind::Factor { l, causal }
            }
        };
        Ok(Self { grid, kind })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> NoisePath {
        let n = self.grid.n_nodes();
        let values = match &self.kind {
            SamplerKind::White => {
                let sigma = (1.0 / self.grid.eps()).sqrt();
                (0..n)
                    .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            SamplerKind::Exponential { gamma } => {
                let rho = (-gamma * self.grid.eps()).exp();
                let stat_sd = (gamma / 2.0).sqrt();
                let innov_sd = stat_sd * (1.0 - rho * rho).sqrt();
                let mut values = Vec::with_capacity(n);
                let mut w = stat_sd * rng.sample::<f64, _>(StandardNormal);
                values.push(w);
                for _ in 1..n {
                    w = rho * w + innov_sd * rng.sample::<f64, _>(StandardNormal);
                    values.push(w);
                }
                values
            }
            SamplerKind::Factor { l, .. } => {
                let xi = Array1::from_iter(
                    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)),
                );
                l.dot(&xi).to_vec()
            }
        };
        NoisePath {
            grid: self.grid,
            values,
        }
    }

    /// Path for stream `path_index` of `master_seed`.
    pub fn sample_indexed(&self, master_seed: u64, path_index: u64) -> NoisePath {
        self.sample(&mut path_rng(master_seed, path_index))
    }

    /// Noise values on the first `xi.len()` nodes from standard-normal
    /// innovations. The map is causal: the first k values depend only on
    /// the first k innovations, so a path realization can be extended in
    /// place by appending fresh innovations. Requires xi.len() <= n_nodes.
    pub fn values_from_innovations(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let k = xi.len();
        if k > self.grid.n_nodes() {
            return Err(CoreError::Shape(format!(
                "{k} innovations exceed the {} grid nodes",
                self.grid.n_nodes()
            )));
        }
        match &self.kind {
            SamplerKind::White => {
                let sigma = (1.0 / self.grid.eps()).sqrt();
                Ok(xi.iter().map(|&z| sigma * z).collect())
            }
            SamplerKind::Exponential { gamma } => {
                let rho = (-gamma * self.grid.eps()).exp();
                let stat_sd = (gamma / 2.0).sqrt();
                let innov_sd = stat_sd * (1.0 - rho * rho).sqrt();
                let mut values = Vec::with_capacity(k);
                let mut w = 0.0;
                for (i, &z) in xi.iter().enumerate() {
                    w = if i == 0 { stat_sd * z } else { rho * w + innov_sd * z };
                    values.push(w);
                }
                Ok(values)
            }
            SamplerKind::Factor { l, causal } => {
                // a Cholesky factor is lower triangular, so the prefix of
                // L xi is determined by the prefix of xi
                if !causal {
                    return Err(CoreError::Degenerate(
                        "kernel factor is not causal; the covariance fell back to \
                         an eigenvalue square root"
                            .into(),
                    ));
                }
                Ok((0..k)
                    .map(|i| (0..=i).map(|j| l[[i, j]] * xi[j]).sum())
                    .collect())
            }
        }
    }

    /// Adjoint of `values_from_innovations`: maps a gradient with respect
    /// to the noise values to the gradient with respect to the
    /// innovations, v -> L^T v for the same causal factor L.
    pub fn innovations_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        let k = v.len();
        if k > self.grid.n_nodes() {
            return Err(CoreError::Shape(format!(
                "{k} components exceed the {} grid nodes",
                self.grid.n_nodes()
            )));
        }
        match &self.kind {
            SamplerKind::White => {
                let sigma = (1.0 / self.grid.eps()).sqrt();
                Ok(v.iter().map(|&x| sigma * x).collect())
            }
            SamplerKind::Exponential { gamma } => {
                let rho = (-gamma * self.grid.eps()).exp();
                let stat_sd = (gamma / 2.0).sqrt();
                let innov_sd = stat_sd * (1.0 - rho * rho).sqrt();
                // s_j = sum_{i >= j} rho^(i-j) v_i by backward recursion
                let mut out = vec![0.0; k];
                let mut s = 0.0;
                for j in (0..k).rev() {
                    s = v[j] + rho * s;
                    out[j] = if j == 0 { stat_sd * s } else { innov_sd * s };
                }
                Ok(out)
            }
            SamplerKind::Factor { l, causal } => {
                if !causal {
                    return Err(CoreError::Degenerate(
                        "kernel factor is not causal; the covariance fell back to \
                         an eigenvalue square root"
                            .into(),
                    ));
                }
                Ok((0..k)
                    .map(|j| (j..k).map(|i| l[[i, j]] * v[i]).sum())
                    .collect())
            }
        }
    }
}

/// Lower-triangular square root of a symmetric PSD matrix. Cholesky when
/// the matrix is numerically positive definite, eigenvalue square root
/// (with small negative eigenvalues clamped to zero) otherwise.
fn matrix_sqrt_lower(cov: &Array2<f64>) -> Result<Array2<f64>> {
    if let Ok(l) = cov.cholesky(UPLO::Lower) {
        return Ok(l);
    }
    let (eigs, vecs) = cov.eigh(UPLO::Lower)?;
    let scale = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let mut root = vecs.clone();
    for (mut col, &e) in root.columns_mut().into_iter().zip(eigs.iter()) {
        if e < -1e-10 * scale {
            return Err(CoreError::NotPositiveSemiDefinite {
                min_eig: e,
                tol: -1e-10 * scale,
            });
        }
        let s = e.max(0.0).sqrt();
        col.mapv_inplace(|v| v * s);
    }
    Ok(root)
}

/// Solve L^T y = x for the whitening transform of a factored sampler.
#[allow(dead_code)]
fn solve_upper(l: &Array2<f64>, x: &Array1<f64>) -> Result<Array1<f64>> {
    use ndarray_linalg::Diag;
    Ok(l.t()
        .to_owned()
        .solve_triangular(UPLO::Upper, Diag::NonUnit, x)?)
}

/// Deterministic infinitely differentiable test signals. These stand in
/// for the noise in analytic cross-checks where the solver needs exact
/// first and second derivatives; sampled paths never provide those.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothNoise {
    Constant(f64),
    /// c_0 + c_1 t + c_2 t^2 + ...
    Polynomial(Vec<f64>),
    /// amp * sin(freq * t + phase)
    Sinusoid { amp: f64, freq: f64, phase: f64 },
}

impl SmoothNoise {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck),
            Self::Sinusoid { amp, freq, phase } => amp * (freq * t + phase).sin(),
        }
    }

    pub fn first_derivative(&self, t: f64) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::Polynomial(c) => {
                let mut acc = 0.0;
                for (k, &ck) in c.iter().enumerate().rev() {
                    if k >= 1 {
                        acc = acc * t + ck * k as f64;
                    }
                }
                acc
            }
            Self::Sinusoid { amp, freq, phase } => amp * freq * (freq * t + phase).cos(),
        }
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::Polynomial(c) => {
                let mut acc = 0.0;
                for (k, &ck) in c.iter().enumerate().rev() {
                    if k >= 2 {
                        acc = acc * t + ck * (k * (k - 1)) as f64;
                    }
                }
                acc
            }
            Self::Sinusoid { amp, freq, phase } => {
                -amp * freq * freq * (freq * t + phase).sin()
            }
        }
    }

    /// Evaluate on the nodes of a grid.
    pub fn on_grid(&self, grid: TimeGrid) -> NoisePath {
        NoisePath {
            grid,
            values: grid.nodes().iter().map(|&t| self.value(t)).collect(),
        }
    }
}
