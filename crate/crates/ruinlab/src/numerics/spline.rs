//! Natural cubic spline interpolation with first and second derivatives.

/// Natural cubic spline through `(xs[j], ys[j])` with zero second
/// derivative at both ends. Evaluation outside the knot range extrapolates
/// linearly with the boundary slope.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len(), "need matching xs/ys, len >= 2");
        assert!(
            xs.windows(2).all(|w| w[1] > w[0]),
            "spline knots must be strictly increasing"
        );
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the tridiagonal system for interior M_j.
            let mut diag = vec![0.0; n - 2];
            let mut rhs = vec![0.0; n - 2];
            let mut upper = vec![0.0; n - 2];
            for j in 1..n - 1 {
                let h0 = xs[j] - xs[j - 1];
                let h1 = xs[j + 1] - xs[j];
                diag[j - 1] = (h0 + h1) / 3.0;
                upper[j - 1] = h1 / 6.0;
                rhs[j - 1] = (ys[j + 1] - ys[j]) / h1 - (ys[j] - ys[j - 1]) / h0;
            }
            for j in 1..n - 2 {
                let lower = (xs[j + 1] - xs[j]) / 6.0;
                let w = lower / diag[j - 1];
                diag[j] -= w * upper[j - 1];
                rhs[j] -= w * rhs[j - 1];
            }
            m[n - 2] = rhs[n - 3] / diag[n - 3];
            for j in (1..n - 2).rev() {
                m[j] = (rhs[j - 1] - upper[j - 1] * m[j]) / diag[j - 1];
            }
        }
        CubicSpline { xs, ys, m }
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(self.xs.len() - 2),
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            return self.ys[0] + self.d1(self.xs[0]) * (x - self.xs[0]);
        }
        if x > self.xs[n - 1] {
            return self.ys[n - 1] + self.d1(self.xs[n - 1]) * (x - self.xs[n - 1]);
        }
        let j = self.segment(x);
        let h = self.xs[j + 1] - self.xs[j];
        let a = (self.xs[j + 1] - x) / h;
        let b = (x - self.xs[j]) / h;
        a * self.ys[j]
            + b * self.ys[j + 1]
            + ((a * a * a - a) * self.m[j] + (b * b * b - b) * self.m[j + 1]) * h * h / 6.0
    }

    pub fn d1(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let j = self.segment(x);
        let h = self.xs[j + 1] - self.xs[j];
        let a = (self.xs[j + 1] - x) / h;
        let b = (x - self.xs[j]) / h;
        (self.ys[j + 1] - self.ys[j]) / h
            + ((3.0 * b * b - 1.0) * self.m[j + 1] - (3.0 * a * a - 1.0) * self.m[j]) * h / 6.0
    }

    pub fn d2(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let j = self.segment(x);
        let h = self.xs[j + 1] - self.xs[j];
        let a = (self.xs[j + 1] - x) / h;
        let b = (x - self.xs[j]) / h;
        a * self.m[j] + b * self.m[j + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots_exactly() {
        let xs = vec![0.0, 0.5, 1.3, 2.0, 3.1];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| (x * 1.3).sin()).collect();
        let s = CubicSpline::new(xs.clone(), ys.clone());
        for (x, y) in xs.iter().zip(ys.iter()) {
            assert!((s.value(*x) - y).abs() < 1e-14);
        }
    }

    #[test]
    fn reproduces_linear_functions_exactly() {
        let xs: Vec<f64> = (0..11).map(|j| j as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let s = CubicSpline::new(xs, ys);
        for x in [0.11, 0.77, 1.5, 2.9, 3.0] {
            assert!((s.value(x) - (2.0 * x - 1.0)).abs() < 1e-13);
            assert!((s.d1(x) - 2.0).abs() < 1e-12);
            assert!(s.d2(x).abs() < 1e-12);
        }
    }

    #[test]
    fn converges_on_smooth_functions() {
        // Interpolation error of a natural spline is O(h^2) globally
        // (boundary layers) and much better in the interior.
        let f = |x: f64| (-x).exp() * (1.0 + x);
        let build = |n: usize| {
            let xs: Vec<f64> = (0..n).map(|j| j as f64 * 3.0 / (n - 1) as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
            CubicSpline::new(xs, ys)
        };
        let err = |s: &CubicSpline| {
            (0..200)
                .map(|j| {
                    let x = 0.5 + 2.0 * j as f64 / 199.0;
                    (s.value(x) - f(x)).abs()
                })
                .fold(0.0, f64::max)
        };
        // Natural end conditions leave an O(h^2) boundary layer, so the
        // interior window improves by less than the clean h^4 factor.
        let coarse = err(&build(21));
        let fine = err(&build(41));
        assert!(fine < coarse / 3.0, "halving h should clearly shrink the error: {coarse} -> {fine}");
        assert!(fine < 1e-4);
    }
}
