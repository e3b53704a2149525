//! Small dense square matrices: LU with partial pivoting for log-determinants
//! and inverses of the invertible 1x1 convolution weights.

use crate::error::{NcsrError, Result};

/// Pivots smaller than this (relative to the largest entry) count as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(NcsrError::shape("SquareMatrix::new", &[dim, dim], &[entries.len()]));
        }
        Ok(SquareMatrix { dim, entries })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        SquareMatrix { dim, entries }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::identity(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.entries[i * values.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.entries[r * self.dim + c] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut t = self.clone();
        for r in 0..n {
            for c in 0..n {
                t.entries[c * n + r] = self.entries[r * n + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &SquareMatrix) -> Result<SquareMatrix> {
        if self.dim != other.dim {
            return Err(NcsrError::shape("matmul", &[self.dim], &[other.dim]));
        }
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.entries[r * n + k];
                for c in 0..n {
                    out[r * n + c] += a * other.entries[k * n + c];
                }
            }
        }
        Ok(SquareMatrix { dim: n, entries: out })
    }

    /// `log|det m|` and `m^-1` from one pivoted LU factorization.
    pub fn logdet_and_inverse(&self) -> Result<(f64, SquareMatrix)> {
        let n = self.dim;
        let mut lu = self.entries.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut logdet = 0.0;

        for k in 0..n {
            let (p, pmag) = (k..n)
                .map(|r| (r, lu[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmag <= SINGULAR_TOL * scale {
                return Err(NcsrError::Singular {
                    pivot: k,
                    magnitude: pmag,
                });
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            logdet += pivot.abs().ln();
            for r in k + 1..n {
                let f = lu[r * n + k] / pivot;
                lu[r * n + k] = f;
                for c in k + 1..n {
                    lu[r * n + c] -= f * lu[k * n + c];
                }
            }
        }

        // Solve LU x = P e_j for each unit vector.
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = if perm[r] == j { 1.0 } else { 0.0 };
            }
            for r in 0..n {
                let mut acc = col[r];
                for k in 0..r {
                    acc -= lu[r * n + k] * col[k];
                }
                col[r] = acc;
            }
            for r in (0..n).rev() {
                let mut acc = col[r];
                for k in r + 1..n {
                    acc -= lu[r * n + k] * col[k];
                }
                col[r] = acc / lu[r * n + r];
            }
            for r in 0..n {
                inv[r * n + j] = col[r];
            }
        }
        Ok((logdet, SquareMatrix { dim: n, entries: inv }))
    }

    pub fn logabsdet(&self) -> Result<f64> {
        Ok(self.logdet_and_inverse()?.0)
    }
}

/// Signed determinant by Laplace cofactor expansion. Exponential cost; only
/// meant as an independent check for tiny matrices.
pub fn cofactor_det(m: &[f64], n: usize) -> f64 {
    if n == 1 {
        return m[0];
    }
    let mut det = 0.0;
    let mut minor = vec![0.0; (n - 1) * (n - 1)];
    for c0 in 0..n {
        let mut idx = 0;
        for r in 1..n {
            for c in 0..n {
                if c != c0 {
                    minor[idx] = m[r * n + c];
                    idx += 1;
                }
            }
        }
        let sign = if c0 % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[c0] * cofactor_det(&minor, n - 1);
    }
    det
}
