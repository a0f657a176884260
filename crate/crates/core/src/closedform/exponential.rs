//! Green's function of the exponential kernel D(t, s) = (gamma/2) e^{-gamma |t-s|}.
//!
//! The homogeneous profile f solves
//!   (i m / 2 hbar) f''(s) + lambda int_0^t D(s, r) f(r) dr = 0,
//! equivalently the quartic ODE
//!   f''''(s) - gamma^2 f''(s) + (i gamma^2 omega^2 / 2) f(s) = 0,
//! with f(0) = 1, f(t) = 0, f'''(0) = gamma f''(0), f'''(t) = -gamma f''(t).
//! The quartic constant is i gamma^2 omega^2 / 2: differentiating the
//! integral equation twice produces gamma^2 f'' - 2 gamma (i gamma omega^2/4) f,
//! and only this constant reproduces the white-noise profile (upsilon_2 ->
//! (1+i) omega / 2) and alpha_infinity -> sqrt(lambda m / 2 i hbar) as
//! gamma -> infinity.
//!
//! Everything is expressed through the two characteristic roots
//! upsilon_{1,2} = sqrt((gamma^2 +- zeta)/2), zeta = sqrt(gamma^4 - 2 i gamma^2 omega^2)
//! (principal branches, so Re upsilon_k > 0) and the coefficient table
//!   a_k = gamma u_k^3 (u_k^2 +- zeta),  b_k = u_k^2 (u_k^4 +- gamma^2 zeta),
//!   c = u_1^3 u_2^3,                    d_k = -gamma u_k^3 u_kbar^2,
//! with the upper sign for k = 1.

use num_complex::Complex64;

use super::expsum::{cosh_sum, ratio, sinh_sum, ExpSum};
use super::{trapezoid_complex, GreenCoefs};
use crate::error::{CoreError, Result};
use crate::noise::SmoothNoise;
use crate::params::{PhysicalParams, TimeGrid};

/// Argument budget for direct hyperbolic evaluation; beyond it the
/// exponential-sum representation with common-factor extraction is used.
/// Complex division overflows its norm once components pass ~1.3e154
/// (exponent ~355), so the budget stays well below that.
const PLAIN_ARG_LIMIT: f64 = 300.0;

/// The noise-driven profile h on a grid together with its endpoint slopes.
#[derive(Debug, Clone)]
pub struct HSolution {
    pub values: Vec<Complex64>,
    pub prime_0: Complex64,
    pub prime_t: Complex64,
}

/// Closed forms for one particle under the exponential kernel.
#[derive(Debug, Clone)]
pub struct ExponentialGreen {
    pub lambda: f64,
    pub m: f64,
    pub hbar: f64,
    pub gamma: f64,
    pub omega: f64,
    pub zeta: Complex64,
    /// Characteristic roots [upsilon_1, upsilon_2], Re > 0.
    pub ups: [Complex64; 2],
    /// k = i m / (2 hbar).
    pub kappa: Complex64,
    ca: [Complex64; 2],
    cb: [Complex64; 2],
    cc: Complex64,
    cd: [Complex64; 2],
    /// es_k = a_kbar + d_kbar = (-1)^k 2 gamma zeta upsilon_kbar^3.
    ces: [Complex64; 2],
}

/// cosh(x) - 1 without cancellation at small |x|.
fn coshm1(x: Complex64) -> Complex64 {
    let s = (0.5 * x).sinh();
    2.0 * s * s
}

impl ExponentialGreen {
    pub fn new(p: &PhysicalParams, gamma: f64) -> Result<Self> {
        if p.lambda <= 0.0 {
            return Err(CoreError::Domain(format!(
                "exponential closed forms need lambda > 0 (got {})",
                p.lambda
            )));
        }
        if !(gamma > 0.0) {
            return Err(CoreError::Domain(format!(
                "exponential closed forms need gamma > 0 (got {gamma})"
            )));
        }
        let omega = p.omega();
        let g2 = gamma * gamma;
        let zeta0 = (Complex64::new(g2 * g2, 0.0)
            - Complex64::new(0.0, 2.0 * g2 * omega * omega))
        .sqrt();
        // u2^2 through the product of the root pair; the difference
        // (g2 - zeta0)/2 cancels catastrophically for gamma >> omega
        let u1sq = (g2 + zeta0) / 2.0;
        let u2sq = Complex64::new(0.0, 0.5 * g2 * omega * omega) / u1sq;
        let zeta = u1sq - u2sq;
        let u1 = u1sq.sqrt();
        let u2 = u2sq.sqrt();
        if u1.norm() == 0.0 || u2.norm() == 0.0 {
            return Err(CoreError::Degenerate(format!(
                "coincident characteristic roots at gamma = {gamma}, omega = {omega}"
            )));
        }
        let ca = [
            gamma * u1.powu(3) * (u1 * u1 + zeta),
            gamma * u2.powu(3) * (u2 * u2 - zeta),
        ];
        let cb = [
            u1 * u1 * (u1.powu(4) + g2 * zeta),
            u2 * u2 * (u2.powu(4) - g2 * zeta),
        ];
        let cc = u1.powu(3) * u2.powu(3);
        let cd = [-gamma * u1.powu(3) * u2 * u2, -gamma * u2.powu(3) * u1 * u1];
        let ces = [ca[1] + cd[1], ca[0] + cd[0]];
        Ok(Self {
            lambda: p.lambda,
            m: p.m,
            hbar: p.hbar,
            gamma,
            omega,
            zeta,
            ups: [u1, u2],
            kappa: Complex64::new(0.0, p.m / (2.0 * p.hbar)),
            ca,
            cb,
            cc,
            cd,
            ces,
        })
    }

    fn use_plain(&self, t: f64) -> bool {
        (self.ups[0].re + self.ups[1].re) * t < PLAIN_ARG_LIMIT
    }

    /// r_t^k and u_t^k for both k (direct hyperbolics).
    fn r_u(&self, t: f64) -> ([Complex64; 2], [Complex64; 2]) {
        let mut r = [Complex64::default(); 2];
        let mut u = [Complex64::default(); 2];
        for k in 0..2 {
            let kb = 1 - k;
            let x = self.ups[kb] * t;
            r[k] = self.ca[kb] * x.cosh() + self.cb[kb] * x.sinh();
            u[k] = self.cd[k] * x.sinh() - self.cc * x.cosh();
        }
        (r, u)
    }

    /// Denominator 2c + sum_k [r_t^k sinh(u_k t) + u_t^k cosh(u_k t)],
    /// written in subtracted form so the O(t) small-time value is not lost
    /// to cancellation against the 2c constant.
    fn den_plain(&self, t: f64) -> Complex64 {
        let (r, u) = self.r_u(t);
        let mut den = Complex64::default();
        for k in 0..2 {
            let xk = self.ups[k] * t;
            let xb = self.ups[1 - k] * t;
            den += r[k] * xk.sinh() + u[k] * coshm1(xk) + self.cd[k] * xb.sinh()
                - self.cc * coshm1(xb);
        }
        den
    }

    fn check_den(&self, t: f64, den: Complex64, scale: f64) -> Result<Complex64> {
        if den.norm() <= 1e-250 * scale.max(1e-250) {
            return Err(CoreError::Degenerate(format!(
                "vanishing profile denominator at gamma = {}, omega = {}, t = {t}",
                self.gamma, self.omega
            )));
        }
        Ok(den)
    }

    /// Exponential-sum forms of r_t^k, u_t^k and the denominator.
    fn den_sum(&self, t: f64) -> (Vec<ExpSum>, Vec<ExpSum>, ExpSum) {
        let mut rs = Vec::with_capacity(2);
        let mut us = Vec::with_capacity(2);
        for k in 0..2 {
            let kb = 1 - k;
            let x = self.ups[kb] * t;
            let mut r = cosh_sum(x).scaled(self.ca[kb]);
            r.add(&sinh_sum(x).scaled(self.cb[kb]));
            let mut u = sinh_sum(x).scaled(self.cd[k]);
            u.add(&cosh_sum(x).scaled(-self.cc));
            rs.push(r);
            us.push(u);
        }
        let mut den = ExpSum::constant(2.0 * self.cc);
        for k in 0..2 {
            den.add(&rs[k].mul(&sinh_sum(self.ups[k] * t)));
            den.add(&us[k].mul(&cosh_sum(self.ups[k] * t)));
        }
        (rs, us, den)
    }

    /// f_t(s) = sum_k [r_t^k sinh u_k(t-s) + u_t^k cosh u_k(t-s) - u_s^k] / den.
    pub fn f(&self, t: f64, s: f64) -> Result<Complex64> {
        if self.use_plain(t) {
            let (r, u) = self.r_u(t);
            let mut num = Complex64::default();
            for k in 0..2 {
                let kb = 1 - k;
                let x = self.ups[k] * (t - s);
                // u_t^k cosh u_k(t-s) - u_s^k, with the constant parts of
                // u_t^k and u_s^k cancelled pairwise for small arguments
                let half_sum = 0.5 * self.ups[kb] * (t + s);
                let half_diff = 0.5 * self.ups[kb] * (t - s);
                num += r[k] * x.sinh()
                    + u[k] * coshm1(x)
                    + 2.0 * half_diff.sinh()
                        * (self.cd[k] * half_sum.cosh() - self.cc * half_sum.sinh());
            }
            let den = self.check_den(t, self.den_plain(t), num.norm())?;
            Ok(num / den)
        } else {
            let (rs, us, den) = self.den_sum(t);
            let mut num = ExpSum::new();
            for k in 0..2 {
                let kb = 1 - k;
                num.add(&rs[k].mul(&sinh_sum(self.ups[k] * (t - s))));
                num.add(&us[k].mul(&cosh_sum(self.ups[k] * (t - s))));
                num.add(&sinh_sum(self.ups[kb] * s).scaled(-self.cd[k]));
                num.add(&cosh_sum(self.ups[kb] * s).scaled(self.cc));
            }
            Ok(ratio(&num, &den))
        }
    }

    /// f_t'(0) = -sum_k u_k (r_t^k cosh u_k t + u_t^k sinh u_k t + d_kbar) / den.
    pub fn f_prime_0(&self, t: f64) -> Result<Complex64> {
        if self.use_plain(t) {
            let (r, u) = self.r_u(t);
            let mut num = Complex64::default();
            for k in 0..2 {
                let kb = 1 - k;
                let xk = self.ups[k] * t;
                let xb = self.ups[kb] * t;
                num -= self.ups[k]
                    * (self.ces[k]
                        + self.ca[kb] * coshm1(xb)
                        + self.cb[kb] * xb.sinh()
                        + r[k] * coshm1(xk)
                        + u[k] * xk.sinh());
            }
            let den = self.check_den(t, self.den_plain(t), num.norm())?;
            Ok(num / den)
        } else {
            let (rs, us, den) = self.den_sum(t);
            let mut num = ExpSum::new();
            for k in 0..2 {
                let kb = 1 - k;
                num.add(
                    &rs[k]
                        .mul(&cosh_sum(self.ups[k] * t))
                        .scaled(-self.ups[k]),
                );
                num.add(
                    &us[k]
                        .mul(&sinh_sum(self.ups[k] * t))
                        .scaled(-self.ups[k]),
                );
                num.add(&ExpSum::constant(-self.ups[k] * self.cd[kb]));
            }
            Ok(ratio(&num, &den))
        }
    }

    /// f_t'(t) = -sum_k u_k (r_t^k + d_kbar cosh u_k t - c sinh u_k t) / den.
    pub fn f_prime_t(&self, t: f64) -> Result<Complex64> {
        if self.use_plain(t) {
            let mut num = Complex64::default();
            for k in 0..2 {
                let kb = 1 - k;
                let xk = self.ups[k] * t;
                let xb = self.ups[kb] * t;
                num -= self.ups[k]
                    * (self.ces[k]
                        + self.ca[kb] * coshm1(xb)
                        + self.cb[kb] * xb.sinh()
                        + self.cd[kb] * coshm1(xk)
                        - self.cc * xk.sinh());
            }
            let den = self.check_den(t, self.den_plain(t), num.norm())?;
            Ok(num / den)
        } else {
            let (rs, _, den) = self.den_sum(t);
            let mut num = ExpSum::new();
            for k in 0..2 {
                let kb = 1 - k;
                num.add(&rs[k].scaled(-self.ups[k]));
                num.add(&cosh_sum(self.ups[k] * t).scaled(-self.ups[k] * self.cd[kb]));
                num.add(&sinh_sum(self.ups[k] * t).scaled(self.ups[k] * self.cc));
            }
            Ok(ratio(&num, &den))
        }
    }

    /// f_t'(0) - f_t'(t) with the leading 1/t poles cancelled analytically;
    /// accurate down to arbitrarily small t where the direct difference
    /// loses all significant digits.
    pub fn f_prime_diff(&self, t: f64) -> Result<Complex64> {
        if self.use_plain(t) {
            let (r, u) = self.r_u(t);
            let mut num = Complex64::default();
            for k in 0..2 {
                let kb = 1 - k;
                let xk = self.ups[k] * t;
                num -= self.ups[k]
                    * ((r[k] - self.cd[kb]) * coshm1(xk) + (u[k] + self.cc) * xk.sinh());
            }
            let den = self.check_den(t, self.den_plain(t), num.norm())?;
            Ok(num / den)
        } else {
            Ok(self.f_prime_0(t)? - self.f_prime_t(t)?)
        }
    }

    /// A_t = k f_t'(0).
    pub fn coef_a(&self, t: f64) -> Result<Complex64> {
        Ok(self.kappa * self.f_prime_0(t)?)
    }

    /// B_t = 2 k f_t'(t).
    pub fn coef_b(&self, t: f64) -> Result<Complex64> {
        Ok(2.0 * self.kappa * self.f_prime_t(t)?)
    }

    /// A_t^2 - B_t^2/4 = k^2 (f'(0) - f'(t)) (f'(0) + f'(t)), formed from
    /// the cancellation-free difference.
    pub fn a_sq_minus_quarter_b_sq(&self, t: f64) -> Result<Complex64> {
        let diff = self.f_prime_diff(t)?;
        let sum = self.f_prime_0(t)? + self.f_prime_t(t)?;
        Ok(self.kappa * self.kappa * diff * sum)
    }

    /// alpha_infinity = -(i m / 2 hbar) (upsilon_1 + upsilon_2 - gamma).
    pub fn alpha_infinity(&self) -> Complex64 {
        -Complex64::new(0.0, self.m / (2.0 * self.hbar))
            * (self.ups[0] + self.ups[1] - self.gamma)
    }

    /// fbar(u) = -(1/zeta) sum_k (-1)^k sinh(u_k u) / u_k, the kernel of the
    /// particular solution (argument u = s - l >= 0). Direct hyperbolics;
    /// intended for the moderate horizons of the smooth-noise cross-checks.
    pub fn fbar(&self, u: f64) -> Complex64 {
        ((self.ups[0] * u).sinh() / self.ups[0] - (self.ups[1] * u).sinh() / self.ups[1])
            / self.zeta
    }

    /// w''(l) - gamma^2 w(l) on the grid nodes.
    fn source(&self, grid: TimeGrid, noise: &SmoothNoise) -> Vec<f64> {
        let g2 = self.gamma * self.gamma;
        grid.nodes()
            .iter()
            .map(|&l| noise.second_derivative(l) - g2 * noise.value(l))
            .collect()
    }

    /// h_P(s) = -(i sqrt(lambda) hbar / m) int_0^s fbar(s - l) (w'' - gamma^2 w)(l) dl
    /// at every grid node. Requires a smooth noise: sampled paths have no
    /// second derivative and must go through the discretized solver.
    pub fn h_particular_smooth(&self, grid: TimeGrid, noise: &SmoothNoise) -> Vec<Complex64> {
        let n = grid.n_nodes();
        let eps = grid.eps();
        let src = self.source(grid, noise);
        let fbar_tab: Vec<Complex64> = (0..n).map(|j| self.fbar(j as f64 * eps)).collect();
        let pref = -Complex64::new(0.0, self.lambda.sqrt() * self.hbar / self.m);
        (0..n)
            .map(|j| {
                let vals: Vec<Complex64> = (0..=j)
                    .map(|l| fbar_tab[j - l] * src[l])
                    .collect();
                pref * trapezoid_complex(&vals, eps)
            })
            .collect()
    }

    /// h_P'(t) = (i sqrt(lambda) hbar / (m zeta))
    ///           int_0^t sum_k (-1)^k cosh(u_k (t - l)) (w'' - gamma^2 w)(l) dl.
    pub fn h_particular_prime_t(&self, grid: TimeGrid, noise: &SmoothNoise) -> Complex64 {
        let eps = grid.eps();
        let t = grid.t_final;
        let src = self.source(grid, noise);
        let vals: Vec<Complex64> = grid
            .nodes()
            .iter()
            .zip(&src)
            .map(|(&l, &g)| {
                ((self.ups[1] * (t - l)).cosh() - (self.ups[0] * (t - l)).cosh()) * g
            })
            .collect();
        Complex64::new(0.0, self.lambda.sqrt() * self.hbar / self.m) / self.zeta
            * trapezoid_complex(&vals, eps)
    }

    /// Weighted convolution of a tabulated kernel with the source
    /// w'' - gamma^2 w, evaluated at the final node.
    fn convolve_at_t(&self, grid: TimeGrid, src: &[f64], kernel: &[Complex64]) -> Complex64 {
        let n = grid.n_steps;
        let vals: Vec<Complex64> = (0..=n).map(|l| kernel[n - l] * src[l]).collect();
        trapezoid_complex(&vals, grid.eps())
    }

    /// The full noise-driven profile: h = h_P + homogeneous part. The
    /// quartic ODE admits a four-dimensional solution space; the integral
    /// equation picks out the member with
    ///   h(0) = h(t) = 0,
    ///   h'''(0) - gamma h''(0) = -c_w (w'(0) - gamma w(0)),
    ///   h'''(t) + gamma h''(t) = -c_w (w'(t) + gamma w(t)),
    /// c_w = i sqrt(lambda) hbar / m. The last two conditions restore the
    /// endpoint identities of int_0^t e^{-gamma |s-r|} h(r) dr that are
    /// lost when the integral equation is differentiated twice.
    pub fn h_solution(&self, grid: TimeGrid, noise: &SmoothNoise) -> Result<HSolution> {
        use ndarray::prelude::*;
        use ndarray_linalg::Solve;

        let t = grid.t_final;
        let n = grid.n_steps;
        let eps = grid.eps();
        let src = self.source(grid, noise);
        let c_w = Complex64::new(0.0, self.lambda.sqrt() * self.hbar / self.m);
        let [u1, u2] = self.ups;
        let zeta = self.zeta;

        // fbar and its derivatives tabulated on the grid offsets
        let tab = |k1: fn(Complex64) -> Complex64, pow: u32| -> Vec<Complex64> {
            (0..=n)
                .map(|j| {
                    let u = j as f64 * eps;
                    (u1.powu(pow) * k1(u1 * u) - u2.powu(pow) * k1(u2 * u)) / zeta
                })
                .collect()
        };
        let fbar_tab = {
            let mut v: Vec<Complex64> = (0..=n)
                .map(|j| {
                    let u = j as f64 * eps;
                    ((u1 * u).sinh() / u1 - (u2 * u).sinh() / u2) / zeta
                })
                .collect();
            v[0] = Complex64::new(0.0, 0.0);
            v
        };
        let fbar2_tab = tab(|x| x.sinh(), 1);
        let fbar3_tab = tab(|x| x.cosh(), 2);

        let pref = -c_w;
        let hp: Vec<Complex64> = (0..=n)
            .map(|j| {
                let vals: Vec<Complex64> =
                    (0..=j).map(|l| fbar_tab[j - l] * src[l]).collect();
                pref * trapezoid_complex(&vals, eps)
            })
            .collect();
        let hp_t = hp[n];
        let hp2_t = pref * self.convolve_at_t(grid, &src, &fbar2_tab);
        let hp3_t = pref * self.convolve_at_t(grid, &src, &fbar3_tab);

        // homogeneous basis sinh u1 s, cosh u1 s, sinh u2 s, cosh u2 s
        let (s1t, c1t) = ((u1 * t).sinh(), (u1 * t).cosh());
        let (s2t, c2t) = ((u2 * t).sinh(), (u2 * t).cosh());
        let g = Complex64::new(self.gamma, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let a = array![
            [zero, one, zero, one],
            [s1t, c1t, s2t, c2t],
            [u1.powu(3), -g * u1 * u1, u2.powu(3), -g * u2 * u2],
            [
                u1 * u1 * (u1 * c1t + g * s1t),
                u1 * u1 * (u1 * s1t + g * c1t),
                u2 * u2 * (u2 * c2t + g * s2t),
                u2 * u2 * (u2 * s2t + g * c2t)
            ],
        ];
        let w0 = noise.value(0.0);
        let wt = noise.value(t);
        let wp0 = noise.first_derivative(0.0);
        let wpt = noise.first_derivative(t);
        let rhs = array![
            zero,
            -hp_t,
            -c_w * (wp0 - self.gamma * w0),
            -(hp3_t + g * hp2_t) - c_w * (wpt + self.gamma * wt),
        ];
        let coef = a
            .solve(&rhs)
            .map_err(|e| CoreError::Linalg(format!("noise profile endpoint solve: {e}")))?;

        let values: Vec<Complex64> = (0..=n)
            .map(|j| {
                let s = j as f64 * eps;
                hp[j]
                    + coef[0] * (u1 * s).sinh()
                    + coef[1] * (u1 * s).cosh()
                    + coef[2] * (u2 * s).sinh()
                    + coef[3] * (u2 * s).cosh()
            })
            .collect();
        // h_P'(0) = 0, so only the homogeneous part contributes at s = 0
        let prime_0 = coef[0] * u1 + coef[2] * u2;
        let hp1_t = self.h_particular_prime_t(grid, noise);
        let prime_t = hp1_t
            + coef[0] * u1 * c1t
            + coef[1] * u1 * s1t
            + coef[2] * u2 * c2t
            + coef[3] * u2 * s2t;
        Ok(HSolution {
            values,
            prime_0,
            prime_t,
        })
    }

    /// Grid values of the noise-driven profile h.
    pub fn h_smooth(&self, grid: TimeGrid, noise: &SmoothNoise) -> Result<Vec<Complex64>> {
        Ok(self.h_solution(grid, noise)?.values)
    }

    /// All five propagator coefficients at t = grid.t_final for a smooth
    /// noise:
    ///   C = -k h'(0) + (sqrt(lambda)/2) int w f,
    ///   D =  k h'(t) + (sqrt(lambda)/2) int w(l) f(t - l) dl,
    ///   E = (sqrt(lambda)/2) int w h.
    pub fn coefs_smooth(&self, grid: TimeGrid, noise: &SmoothNoise) -> Result<GreenCoefs> {
        let t = grid.t_final;
        let eps = grid.eps();
        let nodes = grid.nodes();
        let w: Vec<f64> = nodes.iter().map(|&l| noise.value(l)).collect();
        let sqrt_l = self.lambda.sqrt();

        let h = self.h_solution(grid, noise)?;
        let f_vals: Vec<Complex64> = nodes.iter().map(|&l| self.f(t, l)).collect::<Result<_>>()?;
        let wf: Vec<Complex64> = f_vals.iter().zip(&w).map(|(&f, &wl)| f * wl).collect();
        // f(t - l) runs through the same table in reverse
        let wf_rev: Vec<Complex64> = f_vals
            .iter()
            .rev()
            .zip(&w)
            .map(|(&f, &wl)| f * wl)
            .collect();
        let wh: Vec<Complex64> = h.values.iter().zip(&w).map(|(&hv, &wl)| hv * wl).collect();

        Ok(GreenCoefs {
            a: self.kappa * self.f_prime_0(t)?,
            b: 2.0 * self.kappa * self.f_prime_t(t)?,
            c: -self.kappa * h.prime_0 + 0.5 * sqrt_l * trapezoid_complex(&wf, eps),
            d: self.kappa * h.prime_t + 0.5 * sqrt_l * trapezoid_complex(&wf_rev, eps),
            e: 0.5 * sqrt_l * trapezoid_complex(&wh, eps),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::white::WhiteGreen;

    fn natural(gamma: f64) -> ExponentialGreen {
        ExponentialGreen::new(&PhysicalParams::dimensionless(0.25).unwrap(), gamma).unwrap()
    }

    fn assert_close(a: Complex64, b: Complex64, tol: f64) {
        let scale = b.norm().max(1e-300);
        assert!(
            (a - b).norm() <= tol * scale,
            "{a} != {b} (rel {})",
            (a - b).norm() / scale
        );
    }

    #[test]
    fn vieta_identities() {
        for &gamma in &[0.07, 1.0, 35.0] {
            let g = natural(gamma);
            let [u1, u2] = g.ups;
            let sum = u1 * u1 + u2 * u2;
            let prod = u1 * u1 * u2 * u2;
            let w2 = g.omega * g.omega;
            assert_close(sum, Complex64::new(gamma * gamma, 0.0), 1e-12);
            assert_close(prod, Complex64::new(0.0, 0.5 * gamma * gamma * w2), 1e-12);
            assert!(u1.re > 0.0 && u2.re > 0.0);
            // quartic characteristic residual, relative to its largest term
            for u in [u1, u2] {
                let res = u.powu(4) - gamma * gamma * u * u
                    + Complex64::new(0.0, 0.5 * gamma * gamma * w2);
                let scale =
                    u.powu(4).norm() + gamma * gamma * (u * u).norm() + 0.5 * gamma * gamma * w2;
                assert!(res.norm() < 1e-12 * scale, "res {}", res.norm() / scale);
            }
        }
    }

    #[test]
    fn roots_tend_to_white_value() {
        // gamma / omega = 1e6: upsilon_2 -> (1 + i) omega / 2
        let g = natural(1e6);
        let target = Complex64::new(0.5, 0.5) * g.omega;
        assert_close(g.ups[1], target, 1e-6);
    }

    #[test]
    fn f_boundary_values() {
        for &gamma in &[0.1, 1.0, 10.0] {
            let g = natural(gamma);
            let t = 2.0;
            assert_close(g.f(t, 0.0).unwrap(), Complex64::new(1.0, 0.0), 1e-10);
            assert!(g.f(t, t).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn f_derivatives_match_finite_differences() {
        let g = natural(2.0);
        let t = 1.5;
        let dh = 1e-6;
        let fd0 = (g.f(t, dh).unwrap() - g.f(t, 0.0).unwrap()) / dh;
        assert_close(g.f_prime_0(t).unwrap(), fd0, 1e-5);
        let fdt = (g.f(t, t).unwrap() - g.f(t, t - dh).unwrap()) / dh;
        assert_close(g.f_prime_t(t).unwrap(), fdt, 1e-5);
        let diff = g.f_prime_0(t).unwrap() - g.f_prime_t(t).unwrap();
        assert_close(g.f_prime_diff(t).unwrap(), diff, 1e-10);
    }

    #[test]
    fn f_solves_integral_equation() {
        // (im/2hbar) f'' + lambda int_0^t D(s,r) f(r) dr = 0 at interior points
        let g = natural(1.3);
        let t = 2.0;
        let n = 4000;
        let eps = t / n as f64;
        let f: Vec<Complex64> = (0..=n).map(|j| g.f(t, j as f64 * eps).unwrap()).collect();
        let kappa = g.kappa;
        for &j in &[n / 4, n / 2, 3 * n / 4] {
            let fpp = (f[j - 1] - 2.0 * f[j] + f[j + 1]) / (eps * eps);
            let s = j as f64 * eps;
            let vals: Vec<Complex64> = (0..=n)
                .map(|l| {
                    let r = l as f64 * eps;
                    0.5 * g.gamma * (-g.gamma * (s - r).abs()).exp() * f[l]
                })
                .collect();
            let integral = trapezoid_complex(&vals, eps);
            let residual = kappa * fpp + g.lambda * integral;
            let scale = (g.lambda * integral).norm().max((kappa * fpp).norm());
            assert!(
                residual.norm() < 1e-5 * scale,
                "residual {} at s = {s}",
                residual.norm() / scale
            );
        }
    }

    #[test]
    fn f_satisfies_quartic_ode_and_boundary_derivatives() {
        let g = natural(0.8);
        let t = 2.0;
        // the grid balances stencil truncation against eps^-4 roundoff
        let n = 500usize;
        let eps = t / n as f64;
        let f: Vec<Complex64> = (0..=n).map(|j| g.f(t, j as f64 * eps).unwrap()).collect();
        let g2 = g.gamma * g.gamma;
        let cq = Complex64::new(0.0, 0.5 * g2 * g.omega * g.omega);
        for &j in &[n / 3, n / 2, 2 * n / 3] {
            let d2 = (f[j - 1] - 2.0 * f[j] + f[j + 1]) / (eps * eps);
            let d4 = (f[j - 2] - 4.0 * f[j - 1] + 6.0 * f[j] - 4.0 * f[j + 1] + f[j + 2])
                / eps.powi(4);
            let res = d4 - g2 * d2 + cq * f[j];
            let scale = d4.norm() + g2 * d2.norm() + cq.norm() * f[j].norm();
            assert!(res.norm() < 1e-3 * scale.max(1.0), "res {}", res.norm());
        }
        // one-sided stencils for f''' and f'' at the endpoints
        let d2_0 = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (eps * eps);
        let d3_0 =
            (-2.5 * f[0] + 9.0 * f[1] - 12.0 * f[2] + 7.0 * f[3] - 1.5 * f[4]) / eps.powi(3);
        assert_close(d3_0, g.gamma * d2_0, 2e-2);
        let d2_t = (2.0 * f[n] - 5.0 * f[n - 1] + 4.0 * f[n - 2] - f[n - 3]) / (eps * eps);
        let d3_t = (2.5 * f[n] - 9.0 * f[n - 1] + 12.0 * f[n - 2] - 7.0 * f[n - 3]
            + 1.5 * f[n - 4])
            / eps.powi(3);
        assert_close(d3_t, -g.gamma * d2_t, 2e-2);
    }

    #[test]
    fn time_reversed_profile_solves_g_problem() {
        // g(s) = f(t - s) has g(0) = 0, g(t) = 1 and solves the same equation
        let g = natural(1.0);
        let t = 1.7;
        assert!(g.f(t, t - 0.0).unwrap().norm() < 1e-10);
        assert_close(g.f(t, t - t).unwrap(), Complex64::new(1.0, 0.0), 1e-10);
    }

    #[test]
    fn white_limit_of_profile_and_coefficients() {
        let p = PhysicalParams::dimensionless(0.25).unwrap();
        let white = WhiteGreen::new(&p).unwrap();
        let t = 2.0;
        let g = natural(1000.0);
        let tol = 1e-2;
        assert_close(g.f(t, 0.7).unwrap(), white.f(t, 0.7), tol);
        assert_close(g.coef_a(t).unwrap(), white.coef_a(t), tol);
        assert_close(g.coef_b(t).unwrap(), white.coef_b(t), tol);
        // monotone approach of f'(0)
        let errs: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&r| {
                (natural(r).f_prime_0(t).unwrap() - white.f_prime_0(t)).norm()
                    / white.f_prime_0(t).norm()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errs = {errs:?}");
    }

    #[test]
    fn alpha_infinity_white_limit() {
        let g = natural(1e6);
        let white = WhiteGreen::new(&PhysicalParams::dimensionless(0.25).unwrap()).unwrap();
        assert_close(g.alpha_infinity(), white.alpha_infinity(), 1e-6);
        assert!(g.alpha_infinity().re > 0.0);
    }

    #[test]
    fn coef_a_converges_to_alpha_infinity() {
        for &gamma in &[0.1, 1.0, 50.0] {
            let g = natural(gamma);
            let a = g.coef_a(50.0).unwrap();
            assert_close(a, g.alpha_infinity(), 1e-2);
        }
        // deep overflow regime exercises the exponential-sum branch
        let g = natural(1000.0);
        assert_close(g.coef_a(5000.0).unwrap(), g.alpha_infinity(), 1e-6);
    }

    #[test]
    fn small_time_difference_is_stable() {
        let g = natural(1.0);
        // the direct difference loses all digits near t ~ 1e-8
        let d = g.f_prime_diff(1e-8).unwrap();
        assert!(d.norm().is_finite());
        // Richardson-style consistency: values at t and t/2 stay O(t) apart
        let d2 = g.f_prime_diff(5e-9).unwrap();
        assert!((d - d2).norm() < 0.6 * d.norm().max(d2.norm()) + 1e-12);
    }

    #[test]
    fn fbar_boundary_derivatives() {
        let g = natural(1.7);
        assert!(g.fbar(0.0).norm() < 1e-14);
        let dh = 1e-4;
        // third derivative at zero offset equals 1
        let d3 = (-2.5 * g.fbar(0.0) + 9.0 * g.fbar(dh) - 12.0 * g.fbar(2.0 * dh)
            + 7.0 * g.fbar(3.0 * dh)
            - 1.5 * g.fbar(4.0 * dh))
            / dh.powi(3);
        assert_close(d3, Complex64::new(1.0, 0.0), 1e-5);
    }

    #[test]
    fn h_particular_of_zero_noise_vanishes() {
        let g = natural(1.0);
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let hp = g.h_particular_smooth(grid, &SmoothNoise::Constant(0.0));
        assert!(hp.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn h_boundary_values_and_integral_equation() {
        let g = natural(1.2);
        let grid = TimeGrid::new(2.0, 3000).unwrap();
        let noise = SmoothNoise::Sinusoid {
            amp: 0.9,
            freq: 3.0,
            phase: 0.3,
        };
        let sol = g.h_solution(grid, &noise).unwrap();
        let h = sol.values.clone();
        assert!(h[0].norm() < 1e-10);
        assert!(h[grid.n_steps].norm() < 1e-8);

        // endpoint slopes against one-sided stencils
        let de = grid.eps();
        let fd0 = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * de);
        assert_close(sol.prime_0, fd0, 1e-4);
        let nn = grid.n_steps;
        let fdt = (3.0 * h[nn] - 4.0 * h[nn - 1] + h[nn - 2]) / (2.0 * de);
        assert_close(sol.prime_t, fdt, 1e-4);

        // (im/2hbar) h'' + lambda int D h = (sqrt(lambda)/2) w at interior points
        let eps = grid.eps();
        let n = grid.n_steps;
        for &j in &[n / 4, n / 2, 3 * n / 4] {
            let hpp = (h[j - 1] - 2.0 * h[j] + h[j + 1]) / (eps * eps);
            let s = grid.node(j);
            let vals: Vec<Complex64> = (0..=n)
                .map(|l| {
                    let r = grid.node(l);
                    0.5 * g.gamma * (-g.gamma * (s - r).abs()).exp() * h[l]
                })
                .collect();
            let lhs = g.kappa * hpp + g.lambda * trapezoid_complex(&vals, eps);
            let rhs = Complex64::new(0.5 * g.lambda.sqrt() * noise.value(s), 0.0);
            assert_close(lhs, rhs, 1e-4);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        let p = PhysicalParams::dimensionless(0.25).unwrap();
        assert!(ExponentialGreen::new(&p, 0.0).is_err());
        let free = PhysicalParams::new(1.0, 1.0, 1.0, 0.0).unwrap();
        assert!(ExponentialGreen::new(&free, 1.0).is_err());
    }
}
