//! Green's function of the white (delta correlated) kernel.
//!
//! With v = (1 + i) omega / 2 and omega = 2 sqrt(hbar lambda / m):
//!   f_t(s) = sinh v(t - s) / sinh v t,
//!   A_t = (lambda / v) coth v t,        B_t = (2 lambda / v) / sinh v t,
//!   C_t = sqrt(lambda) int w(l) sinh v(t - l) dl / sinh v t,
//!   D_t = sqrt(lambda) int w(l) sinh v l dl / sinh v t,
//!   E_t = (v^2 / 4 lambda) int_0^t D_l^2 dl,
//!   u(t) = sinh v t / (v t).
//! Every routine is written against e^{-v s} factors only (Re v > 0), so
//! nothing overflows no matter how large v t gets.

use num_complex::Complex64;

use super::GreenCoefs;
use crate::error::{CoreError, Result};
use crate::noise::NoisePath;
use crate::params::PhysicalParams;

/// Closed forms for one particle under the white kernel.
#[derive(Debug, Clone, Copy)]
pub struct WhiteGreen {
    pub lambda: f64,
    pub m: f64,
    pub hbar: f64,
    /// v = (1 + i) omega / 2; v^2 = 2 i hbar lambda / m.
    pub upsilon: Complex64,
    /// k = i m / (2 hbar).
    pub kappa: Complex64,
}

impl WhiteGreen {
    pub fn new(p: &PhysicalParams) -> Result<Self> {
        if p.lambda <= 0.0 {
            return Err(CoreError::Domain(format!(
                "white closed forms need lambda > 0 (got {})",
                p.lambda
            )));
        }
        let omega = p.omega();
        Ok(Self {
            lambda: p.lambda,
            m: p.m,
            hbar: p.hbar,
            upsilon: Complex64::new(0.5, 0.5) * omega,
            kappa: Complex64::new(0.0, p.m / (2.0 * p.hbar)),
        })
    }

    /// coth(v t), computed from decaying exponentials only.
    fn coth(&self, t: f64) -> Complex64 {
        let e = (-2.0 * self.upsilon * t).exp();
        (1.0 + e) / (1.0 - e)
    }

    /// 1 / sinh(v t), decaying-exponential form.
    fn inv_sinh(&self, t: f64) -> Complex64 {
        let e1 = (-self.upsilon * t).exp();
        2.0 * e1 / (1.0 - e1 * e1)
    }

    /// f_t(s) = sinh v(t - s) / sinh v t, for 0 <= s <= t.
    pub fn f(&self, t: f64, s: f64) -> Complex64 {
        let v = self.upsilon;
        ((-v * s).exp() - (-v * (2.0 * t - s)).exp()) / (1.0 - (-2.0 * v * t).exp())
    }

    /// f_t'(0) = -v coth v t.
    pub fn f_prime_0(&self, t: f64) -> Complex64 {
        -self.upsilon * self.coth(t)
    }

    /// f_t'(t) = -v / sinh v t.
    pub fn f_prime_t(&self, t: f64) -> Complex64 {
        -self.upsilon * self.inv_sinh(t)
    }

    /// A_t = k f_t'(0) = (lambda / v) coth v t.
    pub fn coef_a(&self, t: f64) -> Complex64 {
        self.lambda / self.upsilon * self.coth(t)
    }

    /// B_t = 2 k f_t'(t) = (2 lambda / v) / sinh v t.
    pub fn coef_b(&self, t: f64) -> Complex64 {
        2.0 * self.lambda / self.upsilon * self.inv_sinh(t)
    }

    /// A_t^2 - B_t^2/4 = lambda^2 / v^2 = lambda m / (2 i hbar), exactly
    /// and for all t. The two terms cancel to this constant; forming the
    /// difference analytically avoids the loss of precision at small v t.
    pub fn a_sq_minus_quarter_b_sq(&self) -> Complex64 {
        let l = Complex64::new(self.lambda, 0.0);
        l * l / (self.upsilon * self.upsilon)
    }

    /// alpha_infinity = lambda / v = sqrt(lambda m / (2 i hbar)).
    pub fn alpha_infinity(&self) -> Complex64 {
        self.lambda / self.upsilon
    }

    /// ln u(t) = ln [ sinh v t / (v t) ].
    pub fn ln_u(&self, t: f64) -> Complex64 {
        let v = self.upsilon;
        let x = v * t;
        x + ((1.0 - (-2.0 * x).exp()) / 2.0).ln() - x.ln()
    }

    /// u(t) itself; overflows when Re(v t) exceeds ~709, prefer ln_u then.
    pub fn u(&self, t: f64) -> Complex64 {
        self.ln_u(t).exp()
    }

    /// All coefficients at every node of the path's grid, in O(N).
    ///
    /// Two running integrals drive the recursion,
    ///   S_k = int_0^{t_k} w(r) e^{-v r} dr,
    ///   R_k = int_0^{t_k} w(r) e^{-v (t_k - r)} dr,
    /// both bounded since Re v > 0; then
    ///   C_k = sqrt(lambda) (S_k - e^{-v t_k} R_k) / (1 - e^{-2 v t_k}),
    ///   D_k = sqrt(lambda) (R_k - e^{-v t_k} S_k) / (1 - e^{-2 v t_k}).
    pub fn trajectory(&self, path: &NoisePath) -> Vec<GreenCoefs> {
        let v = self.upsilon;
        let sqrt_l = self.lambda.sqrt();
        let grid = path.grid;
        let eps = grid.eps();
        let decay = (-v * eps).exp();
        let n = grid.n_nodes();
        let zero = Complex64::new(0.0, 0.0);
        let mut out = Vec::with_capacity(n);
        // node 0 has an empty time interval: A and B are singular there,
        // the noise coefficients vanish
        out.push(GreenCoefs {
            a: Complex64::new(f64::INFINITY, 0.0),
            b: Complex64::new(f64::INFINITY, 0.0),
            c: zero,
            d: zero,
            e: zero,
        });
        let mut s_int = zero;
        let mut r_int = zero;
        let mut e_acc = zero;
        let mut d_prev = zero;
        let e_rate = v * v / (4.0 * self.lambda);
        let mut exp_mt = Complex64::new(1.0, 0.0);
        for k in 1..n {
            let w0 = path.values[k - 1];
            let w1 = path.values[k];
            exp_mt *= decay;
            let t_k = grid.node(k);
            s_int += 0.5 * eps * (w0 * (-v * grid.node(k - 1)).exp() + w1 * (-v * t_k).exp());
            r_int = decay * r_int + 0.5 * eps * (w0 * decay + w1);
            let denom = 1.0 - exp_mt * exp_mt;
            let c_k = sqrt_l * (s_int - exp_mt * r_int) / denom;
            let d_k = sqrt_l * (r_int - exp_mt * s_int) / denom;
            e_acc += 0.5 * eps * e_rate * (d_prev * d_prev + d_k * d_k);
            d_prev = d_k;
            out.push(GreenCoefs {
                a: self.coef_a(t_k),
                b: self.coef_b(t_k),
                c: c_k,
                d: d_k,
                e: e_acc,
            });
        }
        out
    }

    /// Coefficients at the final node only.
    pub fn coefs(&self, path: &NoisePath) -> GreenCoefs {
        *self.trajectory(path).last().unwrap()
    }

    /// Gradients of the final-node coefficients (C, D, E) with respect to
    /// the sampled noise values, in O(N).
    ///
    /// C and D are linear in the noise, so their gradients are fixed
    /// quadrature vectors. E depends on the path through the running
    /// coefficient D_k; its gradient collapses into two backward
    /// cumulative sums because dD_k/dw_j is a product of exponentials in
    /// t_j and t_k. Every exponent has a nonpositive real part.
    pub fn coef_gradients(
        &self,
        path: &NoisePath,
    ) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        let v = self.upsilon;
        let grid = path.grid;
        let eps = grid.eps();
        let n = grid.n_nodes();
        let t = grid.t_final;
        let sqrt_l = self.lambda.sqrt();
        let e_rate = v * v / (4.0 * self.lambda);
        let den_t = 1.0 - (-2.0 * v * t).exp();
        let coefs = self.trajectory(path);

        let mut dc = Vec::with_capacity(n);
        let mut dd = Vec::with_capacity(n);
        for j in 0..n {
            let tau = if j == 0 || j == n - 1 { 0.5 * eps } else { eps };
            let s = grid.node(j);
            dc.push(sqrt_l * tau * ((-v * s).exp() - (-v * (2.0 * t - s)).exp()) / den_t);
            dd.push(sqrt_l * tau * ((-v * (t - s)).exp() - (-v * (t + s)).exp()) / den_t);
        }

        // c_k = 2 eps e_rate wt_k D_k sqrt(lambda) / den_k with the
        // trapezoid weight wt_k of the E quadrature (1/2 at the last node)
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        for k in 1..n {
            let wt = if k == n - 1 { 0.5 } else { 1.0 };
            let den_k = 1.0 - (-2.0 * v * grid.node(k)).exp();
            c[k] = 2.0 * eps * e_rate * wt * coefs[k].d * sqrt_l / den_k;
        }
        // T_j = sum_{k >= j} c_k e^{-v (t_k - t_j)} by backward recursion;
        // V_j = sum_{k >= j} c_k e^{-v t_k}
        let decay = (-v * eps).exp();
        let mut de = vec![Complex64::new(0.0, 0.0); n];
        let mut t_run = Complex64::new(0.0, 0.0);
        let mut v_run = Complex64::new(0.0, 0.0);
        for j in (1..n).rev() {
            t_run = decay * t_run + c[j];
            let s = grid.node(j);
            v_run += c[j] * (-v * s).exp();
            let e2 = (-2.0 * v * s).exp();
            // half of the k = j term carries the endpoint trapezoid weight
            de[j] = eps * (t_run - (-v * s).exp() * v_run - 0.5 * c[j] * (1.0 - e2));
        }
        (dc, dd, de)
    }

    /// h_t(s) on every node of the grid, t fixed to the grid end.
    ///
    /// From h(s) = h_P(s) - h_P(t) f(t - s) one obtains the bounded form
    ///   h(s) = (c0/2) [ R(s) + Back(s)
    ///                   - e^{-v (t - s)} D_t / sqrt(lambda)
    ///                   - e^{-v s} C_t / sqrt(lambda) ],
    /// with c0 = i hbar sqrt(lambda) / (m v) and
    /// Back(s) = int_s^t w(r) e^{-v (r - s)} dr.
    pub fn h_values(&self, path: &NoisePath) -> Vec<Complex64> {
        let v = self.upsilon;
        let grid = path.grid;
        let eps = grid.eps();
        let n = grid.n_nodes();
        let decay = (-v * eps).exp();
        let coefs = self.trajectory(path);
        let end = coefs[n - 1];
        let sqrt_l = self.lambda.sqrt();
        let c0 = Complex64::new(0.0, self.hbar * sqrt_l / self.m) / v;

        // forward integral R(s_k)
        let mut r_fwd = vec![Complex64::new(0.0, 0.0); n];
        for k in 1..n {
            r_fwd[k] = decay * r_fwd[k - 1]
                + 0.5 * eps * (path.values[k - 1] * decay + path.values[k]);
        }
        // backward integral Back(s_k)
        let mut back = vec![Complex64::new(0.0, 0.0); n];
        for k in (0..n - 1).rev() {
            back[k] = decay * back[k + 1]
                + 0.5 * eps * (path.values[k] + path.values[k + 1] * decay);
        }

        let t = grid.t_final;
        (0..n)
            .map(|k| {
                let s = grid.node(k);
                0.5 * c0
                    * (r_fwd[k] + back[k]
                        - (-v * (t - s)).exp() * end.d / sqrt_l
                        - (-v * s).exp() * end.c / sqrt_l)
            })
            .collect()
    }
}
