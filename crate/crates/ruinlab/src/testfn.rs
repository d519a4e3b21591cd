//! Closed-form test functions: products of polynomials and decaying
//! exponentials, zero on the non-positive axis.
//!
//! The family is closed under differentiation with exactly representable
//! derivatives, which makes it the reference input for the jump-operator
//! identities and for the IDE/ODE equivalence checks.

/// `f(y) = poly(y) e^{-rate y}` for `y > 0`, zero for `y <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyExp {
    /// Polynomial coefficients, lowest degree first.
    coeffs: Vec<f64>,
    rate: f64,
}

impl PolyExp {
    pub fn new(coeffs: Vec<f64>, rate: f64) -> Self {
        assert!(!coeffs.is_empty(), "polynomial needs at least one coefficient");
        assert!(rate >= 0.0, "the exponential factor must decay");
        PolyExp { coeffs, rate }
    }

    /// The decaying exponential `e^{-rate y}`.
    pub fn exp(rate: f64) -> Self {
        PolyExp::new(vec![1.0], rate)
    }

    /// Derivative within the family: `(poly' - rate poly) e^{-rate y}`.
    pub fn derivative(&self) -> Self {
        let n = self.coeffs.len();
        let mut coeffs = vec![0.0; n.max(2) - 1];
        if n == 1 {
            coeffs = vec![0.0];
        }
        for (k, c) in self.coeffs.iter().enumerate().skip(1) {
            coeffs[k - 1] += k as f64 * c;
        }
        let mut out = vec![0.0; n];
        for (k, c) in coeffs.iter().enumerate() {
            out[k] += c;
        }
        for (k, c) in self.coeffs.iter().enumerate() {
            out[k] -= self.rate * c;
        }
        while out.len() > 1 && *out.last().unwrap() == 0.0 {
            out.pop();
        }
        PolyExp::new(out, self.rate)
    }

    fn poly_at(&self, y: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * y + c;
        }
        acc
    }

    /// Value with the zero extension on `y <= 0`.
    pub fn value(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else {
            self.poly_at(y) * (-self.rate * y).exp()
        }
    }

    pub fn d1(&self, y: f64) -> f64 {
        self.derivative().value(y)
    }

    pub fn d2(&self, y: f64) -> f64 {
        self.derivative().derivative().value(y)
    }

    pub fn d3(&self, y: f64) -> f64 {
        self.derivative().derivative().derivative().value(y)
    }
}
