//! Dense Cholesky factorization and triangular solves.
//!
//! Matrices are stored row-major in a flat `Vec` of length `n * n`.

use crate::scalar::{dot, Scalar};

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factor a symmetric positive-definite matrix. Only the lower triangle of
    /// `a` is read. Returns `None` if a pivot is not strictly positive.
    pub fn factor(a: &[T], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n, "matrix storage does not match order");
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, lower: l })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Entry `L[i][j]`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.lower[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.lower[i * self.n..i * self.n + i + 1]
    }

    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        (0..self.n).fold(T::zero(), |acc, i| acc + self.at(i, i).ln()) * two
    }

    /// Solve `L x = b` in place.
    pub fn forward_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let s = b[i] - dot(&self.lower[i * self.n..i * self.n + i], &b[..i]);
            b[i] = s / self.at(i, i);
        }
    }

    /// Solve `Lᵀ x = b` in place.
    pub fn backward_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n);
        for i in (0..self.n).rev() {
            b[i] = b[i] / self.at(i, i);
            let bi = b[i];
            let row = &self.lower[i * self.n..i * self.n + i];
            for (bk, &lik) in b[..i].iter_mut().zip(row) {
                *bk = *bk - lik * bi;
            }
        }
    }

    /// `L⁻¹ b`.
    pub fn forward(&self, b: &[T]) -> Vec<T> {
        let mut out = b.to_vec();
        self.forward_in_place(&mut out);
        out
    }

    /// `A⁻¹ b` via two triangular solves.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut out = b.to_vec();
        self.forward_in_place(&mut out);
        self.backward_in_place(&mut out);
        out
    }

    /// `A⁻¹ B` for a row-major `n × m` right-hand side.
    pub fn solve_matrix(&self, b: &[T], cols: usize) -> Vec<T> {
        assert_eq!(b.len(), self.n * cols);
        let mut out = vec![T::zero(); b.len()];
        let mut col = vec![T::zero(); self.n];
        for c in 0..cols {
            for r in 0..self.n {
                col[r] = b[r * cols + c];
            }
            self.forward_in_place(&mut col);
            self.backward_in_place(&mut col);
            for r in 0..self.n {
                out[r * cols + c] = col[r];
            }
        }
        out
    }

    /// Dense `A⁻¹`, row-major. Only used where every entry is needed
    /// (likelihood gradients).
    pub fn inverse(&self) -> Vec<T> {
        let n = self.n;
        // rows of L⁻¹, built from the rows above
        let mut m = vec![T::zero(); n * n];
        for i in 0..n {
            let (done, rest) = m.split_at_mut(i * n);
            let row = &mut rest[..n];
            row[i] = T::one();
            for k in 0..i {
                let lik = self.at(i, k);
                for (r, &v) in row[..=k].iter_mut().zip(&done[k * n..k * n + k + 1]) {
                    *r = *r - lik * v;
                }
            }
            let d = self.at(i, i);
            row[..=i].iter_mut().for_each(|v| *v = *v / d);
        }
        // A⁻¹ = L⁻ᵀ L⁻¹ accumulated one row of L⁻¹ at a time
        let mut inv = vec![T::zero(); n * n];
        for k in 0..n {
            let mk = &m[k * n..k * n + k + 1];
            for i in 0..=k {
                let a = mk[i];
                for (t, &b) in inv[i * n..i * n + i + 1].iter_mut().zip(&mk[..=i]) {
                    *t = *t + a * b;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                inv[j * n + i] = inv[i * n + j];
            }
        }
        inv
    }

    /// Factor of the bordered matrix `[[A, c], [cᵀ, d]]`, reusing `L`.
    pub fn bordered(&self, column: &[T], diag: T) -> Option<Self> {
        assert_eq!(column.len(), self.n);
        let v = self.forward(column);
        let pivot = diag - dot(&v, &v);
        if !(pivot > T::zero()) || !pivot.is_finite() {
            return None;
        }
        let m = self.n + 1;
        let mut lower = vec![T::zero(); m * m];
        for i in 0..self.n {
            lower[i * m..i * m + i + 1].copy_from_slice(self.row(i));
        }
        lower[self.n * m..self.n * m + self.n].copy_from_slice(&v);
        lower[self.n * m + self.n] = pivot.sqrt();
        Some(Self { n: m, lower })
    }

    /// Reconstruct `L Lᵀ`.
    pub fn reconstruct(&self) -> Vec<T> {
        let n = self.n;
        let mut a = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = dot(&self.lower[i * n..i * n + j + 1], &self.lower[j * n..j * n + j + 1]);
                a[i * n + j] = s;
                a[j * n + i] = s;
            }
        }
        a
    }
}
