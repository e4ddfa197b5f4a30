//! Dense linear-algebra kernels on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SigleError};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigen-decomposition `A = V diag(values) V^T` of a symmetric matrix, with
/// eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vector,
    pub eigenvectors: Mat,
}

impl SpectralDecomposition {
    pub fn new(a: &Mat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(SigleError::DimensionMismatch {
                context: "spectral decomposition of non-square matrix",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        // symmetrize to absorb round-off in callers that build A as a product
        let sym = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let n = a.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigenvectors = Mat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn reconstruct(&self) -> Mat {
        let v = &self.eigenvectors;
        v * Mat::from_diagonal(&self.eigenvalues) * v.transpose()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Result of [`inv_sqrt_psd`]: the matrix and how many eigenvalues hit the floor.
#[derive(Debug, Clone)]
pub struct InvSqrt {
    pub matrix: Mat,
    pub floored: usize,
}

/// `V diag(max(l_i, floor)^{-1/2}) V^T`.
///
/// `floor` is absolute; callers wanting a relative floor scale it by the
/// largest eigenvalue themselves.
pub fn inv_sqrt_psd(a: &Mat, floor: f64) -> Result<InvSqrt> {
    let spec = SpectralDecomposition::new(a)?;
    let mut floored = 0;
    let scaled = spec.eigenvalues.map(|l| {
        if l < floor {
            floored += 1;
            floor.max(f64::MIN_POSITIVE).powf(-0.5)
        } else {
            l.powf(-0.5)
        }
    });
    let v = &spec.eigenvectors;
    let m = v * Mat::from_diagonal(&scaled) * v.transpose();
    Ok(InvSqrt {
        matrix: (&m + m.transpose()) * 0.5,
        floored,
    })
}

/// Orthogonal projector onto the column span of a full-column-rank matrix,
/// built from a thin QR factorization.
#[derive(Debug, Clone)]
pub struct ColumnProjector {
    q: Mat,
}

impl ColumnProjector {
    pub fn new(x: &Mat) -> Self {
        if x.ncols() == 0 {
            return Self {
                q: Mat::zeros(x.nrows(), 0),
            };
        }
        let qr = x.clone().qr();
        Self { q: qr.q() }
    }

    pub fn project(&self, v: &Vector) -> Vector {
        if self.q.ncols() == 0 {
            return Vector::zeros(v.len());
        }
        &self.q * (self.q.transpose() * v)
    }

    pub fn project_perp(&self, v: &Vector) -> Vector {
        v - self.project(v)
    }
}

/// Columns of `x` selected by `cols`, in order.
pub fn select_columns(x: &Mat, cols: &[usize]) -> Mat {
    Mat::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

pub fn complement(d: usize, cols: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; d];
    for &c in cols {
        mask[c] = true;
    }
    (0..d).filter(|&k| !mask[k]).collect()
}

/// Squared spectral norm `||X||_2^2`, the largest eigenvalue of `X^T X`.
pub fn spectral_norm_sq(x: &Mat) -> f64 {
    if x.ncols() == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let gram = if x.ncols() <= x.nrows() {
        x.transpose() * x
    } else {
        x * x.transpose()
    };
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Smallest singular value of `x` (zero for an empty matrix).
pub fn min_singular_value(x: &Mat) -> f64 {
    if x.ncols() == 0 {
        return f64::INFINITY;
    }
    if x.nrows() < x.ncols() {
        return 0.0;
    }
    let gram = x.transpose() * x;
    let lmin = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    lmin.max(0.0).sqrt()
}

/// Solve a symmetric positive definite system, falling back to LU when the
/// Cholesky factorization fails.
pub fn solve_spd(a: &Mat, b: &Vector) -> Option<Vector> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

pub fn inverse_spd(a: &Mat) -> Option<Mat> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.inverse());
    }
    a.clone().try_inverse()
}

/// Least-squares solution of `min ||A x - b||_2` via SVD.
pub fn least_squares(a: &Mat, b: &Vector) -> Option<Vector> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12).ok()
}

/// `log(sum_i exp(v_i))` without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
