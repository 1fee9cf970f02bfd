//! Dense linear algebra on small-to-moderate dimensions.
//!
//! Vectors are plain `[f64]` slices. Matrices are row-major [`DenseMatrix`].
//! Large symmetric matrices (Fisher, covariance) never exist densely; they
//! are exposed through [`LinearOperator`].

mod cg;
mod decomp;
mod matrix;
mod rng;

pub use cg::conjugate_gradient;
pub use decomp::{
    least_squares, orthonormalize, svd_jacobi, symmetric_eig, thin_qr, Orthonormalized,
    SymmetricEigen, ThinSvd, DEFAULT_RANK_TOL,
};
pub use matrix::{gaussian_matrix, DenseMatrix};
pub use rng::{SeededRng, Stream};

/// A symmetric linear map `v -> Av` on `R^dim`.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// `v' A v`.
    fn quadratic_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.apply(v))
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (**self).apply(v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}
