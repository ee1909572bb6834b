//! Small dense linear algebra kernels shared by the rest of the crate.
//!
//! Everything here is deterministic and sized for the matrices this crate
//! actually sees: leaf counts up to ~25, so compound matrices up to ~300.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at column {col})")]
    NotPositiveDefinite { col: usize, pivot: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eig:.3e})")]
    NotPositiveSemidefinite { eig: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Exact 2x2 determinant, the primitive behind every minor in the crate.
#[inline]
pub fn determinant2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    a * d - b * c
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Mat) -> Result<Mat, NumericsError> {
    assert!(a.is_square());
    let n = a.rows;
    let scale = a.max_abs().max(1.0);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 1e-14 * scale {
            return Err(NumericsError::NotPositiveDefinite { col: j, pivot: d });
        }
        l[(j, j)] = d.sqrt();
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
        }
    }
    Ok(l)
}

/// Cholesky variant that tolerates semidefinite input: pivots within the
/// tolerance band around zero produce a zero column instead of an error.
pub fn cholesky_psd(a: &Mat) -> Result<Mat, NumericsError> {
    assert!(a.is_square());
    let n = a.rows;
    let scale = a.max_abs().max(1.0);
    let tol = 1e-10 * scale;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(NumericsError::NotPositiveSemidefinite { eig: d });
        }
        if d <= tol {
            l[(j, j)] = 0.0;
            continue;
        }
        l[(j, j)] = d.sqrt();
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
        }
    }
    Ok(l)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order with a matching orthonormal
/// eigenvector in each column. The sign of each eigenvector is fixed so that
/// its first component of nontrivial magnitude is positive.
pub fn eigh(a: &Mat) -> (Vec<f64>, Mat) {
    assert!(a.is_square());
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let scale = m.max_abs().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        // Sign convention: first component of magnitude above threshold positive.
        let mut sign = 1.0;
        for k in 0..n {
            if v[(k, src)].abs() > 1e-12 {
                if v[(k, src)] < 0.0 {
                    sign = -1.0;
                }
                break;
            }
        }
        for k in 0..n {
            vectors[(k, col)] = sign * v[(k, src)];
        }
    }
    (eigenvalues, vectors)
}

/// Solve `A x = b` for symmetric positive definite `A` via Cholesky.
pub fn solve_spd(a: &Mat, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let l = cholesky(a)?;
    let n = a.rows;
    if b.len() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "solve_spd: matrix {n}x{n} vs vector {}",
            b.len()
        )));
    }
    // Forward substitution L y = b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    // Back substitution L^t x = y.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Condition number lambda_max / lambda_min of a symmetric PSD matrix.
/// Returns infinity when the smallest eigenvalue is not positive.
pub fn condition_number_spd(a: &Mat) -> f64 {
    let (eigs, _) = eigh(a);
    let lo = eigs[0];
    let hi = eigs[eigs.len() - 1];
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
