//! Sums of complex exponentials with overflow-safe evaluation.
//!
//! The hyperbolic expressions in the Green's function coefficients
//! contain factors like sinh(v t) with Re(v t) far beyond 709, where
//! f64 exp overflows. Every such expression here is a ratio of two
//! exponential sums; factoring e^{a_max} out of both sides keeps all
//! intermediate values finite whenever the true ratio is finite.

use num_complex::Complex64;

/// Sum of terms c_i * exp(a_i).
#[derive(Clone, Debug, Default)]
pub struct ExpSum {
    terms: Vec<(Complex64, Complex64)>,
}

impl ExpSum {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn term(coef: Complex64, arg: Complex64) -> Self {
        Self {
            terms: vec![(coef, arg)],
        }
    }

    /// The constant c (argument zero).
    pub fn constant(coef: Complex64) -> Self {
        Self::term(coef, Complex64::new(0.0, 0.0))
    }

    pub fn push(&mut self, coef: Complex64, arg: Complex64) {
        self.terms.push((coef, arg));
    }

    pub fn add(&mut self, other: &ExpSum) {
        self.terms.extend_from_slice(&other.terms);
    }

    pub fn scaled(&self, c: Complex64) -> ExpSum {
        ExpSum {
            terms: self.terms.iter().map(|&(k, a)| (c * k, a)).collect(),
        }
    }

    /// Product: arguments add, coefficients multiply.
    pub fn mul(&self, other: &ExpSum) -> ExpSum {
        let mut out = ExpSum::new();
        for &(c1, a1) in &self.terms {
            for &(c2, a2) in &other.terms {
                out.push(c1 * c2, a1 + a2);
            }
        }
        out
    }

    pub fn max_re_arg(&self) -> f64 {
        self.terms
            .iter()
            .map(|&(_, a)| a.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sum of c_i * exp(a_i - shift) for a real shift.
    pub fn eval_shifted(&self, shift: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|&(c, a)| c * (a - shift).exp())
            .sum()
    }

    pub fn eval(&self) -> Complex64 {
        self.eval_shifted(0.0)
    }
}

/// num/den with the dominant exponential of the denominator factored out
/// of both. Finite whenever the true ratio is finite and the numerator's
/// arguments do not exceed the denominator's dominant one by ~709.
pub fn ratio(num: &ExpSum, den: &ExpSum) -> Complex64 {
    let shift = den.max_re_arg();
    num.eval_shifted(shift) / den.eval_shifted(shift)
}

/// cosh(x) as (e^x + e^{-x})/2.
pub fn cosh_sum(x: Complex64) -> ExpSum {
    let half = Complex64::new(0.5, 0.0);
    let mut s = ExpSum::term(half, x);
    s.push(half, -x);
    s
}

/// sinh(x) as (e^x - e^{-x})/2.
pub fn sinh_sum(x: Complex64) -> ExpSum {
    let half = Complex64::new(0.5, 0.0);
    let mut s = ExpSum::term(half, x);
    s.push(-half, -x);
    s
}
