//! Dense linear algebra for the small systems that appear in per-item fits
//! (at most a few dozen unknowns).

use alloc::vec;
use alloc::vec::Vec;

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    /// Adds `weight * x x^T`.
    pub fn add_outer(&mut self, x: &[f64], weight: f64) {
        let n = self.n;
        for i in 0..n {
            let wi = weight * x[i];
            for j in 0..n {
                self.data[i * n + j] += wi * x[j];
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * x[j]).sum())
            .collect()
    }

    /// Cholesky factor `L` with `A = L L^T`, or `None` if not positive definite.
    pub fn cholesky(&self) -> Option<SquareMatrix> {
        let n = self.n;
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = crate::math::sqrt(d);
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    /// Solves `A x = b` for symmetric positive definite `A`.
    pub fn solve_spd(&self, b: &[f64]) -> Option<Vec<f64>> {
        let l = self.cholesky()?;
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        Some(x)
    }

    /// Solves `(A + ridge I) x = b`, growing the ridge until the factorization
    /// succeeds.
    pub fn solve_spd_ridged(&self, b: &[f64]) -> Vec<f64> {
        if let Some(x) = self.solve_spd(b) {
            return x;
        }
        let scale = (0..self.n)
            .map(|i| self[(i, i)].abs())
            .fold(0.0, f64::max)
            .max(1e-8);
        let mut ridge = 1e-10 * scale;
        loop {
            let mut m = self.clone();
            for i in 0..self.n {
                m[(i, i)] += ridge;
            }
            if let Some(x) = m.solve_spd(b) {
                return x;
            }
            ridge *= 10.0;
            if ridge > 1e12 * scale {
                // Fall back to a scaled gradient step.
                return b.iter().map(|v| v / scale).collect();
            }
        }
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<SquareMatrix> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = SquareMatrix::identity(n);
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| {
                a[(i, col)]
                    .abs()
                    .partial_cmp(&a[(j, col)].abs())
                    .unwrap_or(core::cmp::Ordering::Equal)
            })?;
            let pv = a[(pivot, col)];
            if pv.abs() < 1e-300 || !pv.is_finite() {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.data.swap(pivot * n + k, col * n + k);
                    inv.data.swap(pivot * n + k, col * n + k);
                }
            }
            for k in 0..n {
                a[(col, k)] /= pv;
                inv[(col, k)] /= pv;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[(i, col)];
                if f == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[(i, k)] -= f * a[(col, k)];
                    inv[(i, k)] -= f * inv[(col, k)];
                }
            }
        }
        Some(inv)
    }
}

impl core::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}
