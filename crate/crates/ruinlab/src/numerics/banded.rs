//! Banded LU factorization with partial pivoting (LAPACK band layout).

/// Band matrix with `kl` subdiagonals and `ku` superdiagonals.
///
/// Storage follows the LAPACK `dgbtrf` convention: entry `(i, j)` lives at
/// `ab[row_index(i, j)][j]` with `row_index = kl + ku + i - j`, and the top
/// `kl` storage rows hold pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// (2*kl + ku + 1) x n, row-major.
    ab: Vec<f64>,
    factored: bool,
    ipiv: Vec<usize>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BandedError {
    #[error("singular banded matrix at column {0}")]
    Singular(usize),
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let rows = 2 * kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            ab: vec![0.0; rows * n],
            factored: false,
            ipiv: vec![0; n],
        }
    }

    #[inline]
    fn idx(&self, storage_row: usize, j: usize) -> usize {
        storage_row * self.n + j
    }

    /// Add `v` to entry `(i, j)`; the entry must be inside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(!self.factored, "matrix already factored");
        assert!(
            i < self.n && j < self.n,
            "index ({i},{j}) out of range for n = {}",
            self.n
        );
        let d = j as isize - i as isize;
        assert!(
            -(self.kl as isize) <= d && d <= self.ku as isize,
            "entry ({i},{j}) outside band kl = {}, ku = {}",
            self.kl,
            self.ku
        );
        let r = (self.kl as isize + self.ku as isize + i as isize - j as isize) as usize;
        let at = self.idx(r, j);
        self.ab[at] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let d = j as isize - i as isize;
        if d < -(self.kl as isize) || d > (self.kl + self.ku) as isize {
            return 0.0;
        }
        let r = (self.kl as isize + self.ku as isize + i as isize - j as isize) as usize;
        self.ab[self.idx(r, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let r = (self.kl as isize + self.ku as isize + i as isize - j as isize) as usize;
        let at = self.idx(r, j);
        self.ab[at] = v;
    }

    /// LU factorization in place with partial pivoting.
    pub fn factor(&mut self) -> Result<(), BandedError> {
        assert!(!self.factored);
        let n = self.n;
        let kl = self.kl;
        let ku_eff = self.kl + self.ku; // upper bandwidth after fill-in
        for j in 0..n {
            // Pivot among rows j..=j+kl.
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.get(j, j).abs();
            for r in 1..=km {
                let v = self.get(j + r, j).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(BandedError::Singular(j));
            }
            self.ipiv[j] = j + p;
            if p != 0 {
                let qmax = (j + ku_eff).min(n - 1);
                for q in j..=qmax {
                    let a = self.get(j, q);
                    let b = self.get(j + p, q);
                    self.set(j, q, b);
                    self.set(j + p, q, a);
                }
            }
            let pivot = self.get(j, j);
            for r in 1..=km {
                let m = self.get(j + r, j) / pivot;
                self.set(j + r, j, m);
                if m != 0.0 {
                    let qmax = (j + ku_eff).min(n - 1);
                    for q in (j + 1)..=qmax {
                        let v = self.get(j + r, q) - m * self.get(j, q);
                        self.set(j + r, q, v);
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `A x = b` using the stored factorization; `b` is overwritten
    /// with the solution.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "factor() must run before solve");
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        let ku_eff = self.kl + self.ku;
        // Forward: apply pivots and L.
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            for r in 1..=km {
                b[j + r] -= self.get(j + r, j) * b[j];
            }
        }
        // Backward: U x = y.
        for j in (0..n).rev() {
            let qmax = (j + ku_eff).min(n - 1);
            let mut acc = b[j];
            for q in (j + 1)..=qmax {
                acc -= self.get(j, q) * b[q];
            }
            b[j] = acc / self.get(j, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    /// Naive dense Gaussian elimination, the independent check.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let mut p = k;
            for r in k + 1..n {
                if a[r][k].abs() > a[p][k].abs() {
                    p = r;
                }
            }
            a.swap(k, p);
            b.swap(k, p);
            for r in k + 1..n {
                let m = a[r][k] / a[k][k];
                for q in k..n {
                    a[r][q] -= m * a[k][q];
                }
                b[r] -= m * b[k];
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for q in k + 1..n {
                acc -= a[k][q] * b[q];
            }
            b[k] = acc / a[k][k];
        }
        b
    }

    #[test]
    fn matches_dense_solver_on_random_band_systems() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for case in 0..20 {
            let n = 12 + (case % 5) * 7;
            let kl = 1 + case % 4;
            let ku = 1 + (case / 3) % 4;
            let mut band = BandedMatrix::zeros(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let d = j as isize - i as isize;
                    if -(kl as isize) <= d && d <= ku as isize {
                        let v: f64 = rng.random::<f64>() - 0.5;
                        let v = if i == j { v + 3.0 } else { v };
                        band.add(i, j, v);
                        dense[i][j] = v;
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let want = dense_solve(dense, b.clone());
            let mut got = b;
            band.factor().unwrap();
            band.solve_in_place(&mut got);
            for (g, w) in got.iter().zip(want.iter()) {
                assert!(
                    (g - w).abs() < 1e-9 * (1.0 + w.abs()),
                    "case {case}: banded {g} vs dense {w}"
                );
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        // [[0, 1], [1, 0]] needs the row swap.
        let mut band = BandedMatrix::zeros(2, 1, 1);
        band.add(0, 1, 1.0);
        band.add(1, 0, 1.0);
        band.factor().unwrap();
        let mut b = vec![2.0, 3.0];
        band.solve_in_place(&mut b);
        assert!((b[0] - 3.0).abs() < 1e-14);
        assert!((b[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut band = BandedMatrix::zeros(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, 1.0);
        // row 2 all zeros
        assert_eq!(band.factor(), Err(BandedError::Singular(2)));
    }

    #[test]
    fn multiple_solves_reuse_one_factorization() {
        let mut band = BandedMatrix::zeros(4, 1, 1);
        for i in 0..4 {
            band.add(i, i, 2.0);
            if i > 0 {
                band.add(i, i - 1, -1.0);
                band.add(i - 1, i, -1.0);
            }
        }
        band.factor().unwrap();
        for rhs in [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 2.0, 3.0]] {
            let mut x = rhs.to_vec();
            band.solve_in_place(&mut x);
            // Verify A x = rhs against the explicit tridiagonal action.
            for i in 0..4 {
                let mut acc = 2.0 * x[i];
                if i > 0 {
                    acc -= x[i - 1];
                }
                if i < 3 {
                    acc -= x[i + 1];
                }
                assert!((acc - rhs[i]).abs() < 1e-12);
            }
        }
    }
}
