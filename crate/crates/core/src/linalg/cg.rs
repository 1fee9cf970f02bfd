use super::{axpy, dot, LinearOperator};

/// Conjugate gradient on `(A + damping·I) x = b`, starting from `x = 0`.
///
/// Runs at most `iters` iterations and stops early once the recursive
/// residual falls below `1e-14·||b||` or the curvature `p'(A+λI)p` stops
/// being positive.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    iters: usize,
    damping: f64,
) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return x;
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        let mut ap = op.apply(&p);
        axpy(damping, &p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            break;
        }
        let alpha = rr / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= 1e-14 * b_norm {
            break;
        }
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, norm, DenseMatrix, SeededRng};

    #[test]
    fn identity_system_one_iteration() {
        let x = conjugate_gradient(&DenseMatrix::identity(2), &[4.0, 3.0], 1, 0.0);
        assert_eq!(x, vec![4.0, 3.0]);
    }

    #[test]
    fn diagonal_system() {
        let x = conjugate_gradient(&DenseMatrix::diag(&[2.0, 4.0]), &[2.0, 4.0], 2, 0.0);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let x = conjugate_gradient(&DenseMatrix::identity(3), &[0.0; 3], 5, 0.1);
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn damping_shifts_the_system() {
        // (I + 1·I) x = b  =>  x = b / 2
        let x = conjugate_gradient(&DenseMatrix::identity(3), &[2.0, 4.0, 6.0], 3, 1.0);
        for (xi, e) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((xi - e).abs() < 1e-14);
        }
    }

    #[test]
    fn energy_error_shrinks_with_more_iterations() {
        // CG minimizes ||x - x*||_A over growing Krylov spaces, so the
        // energy-norm error is monotone even when the residual is not.
        let mut rng = SeededRng::new(77, 0);
        let b_mat = gaussian_matrix(&mut rng, 20, 20).unwrap();
        let a = b_mat.matmul(&b_mat.transpose()).add(&DenseMatrix::identity(20));
        let b = gaussian_matrix(&mut rng, 20, 1).unwrap().col(0);
        let exact = conjugate_gradient(&a, &b, 200, 0.1);
        let energy = |x: &[f64]| {
            let mut e = x.to_vec();
            axpy(-1.0, &exact, &mut e);
            let mut ae = a.matvec(&e);
            axpy(0.1, &e, &mut ae);
            dot(&e, &ae).sqrt()
        };
        let mut prev = energy(&vec![0.0; 20]);
        for iters in 1..=20 {
            let err = energy(&conjugate_gradient(&a, &b, iters, 0.1));
            assert!(err <= prev * (1.0 + 1e-9), "iteration {iters}: {err} > {prev}");
            prev = err;
        }
        let mut r = a.matvec(&exact);
        axpy(0.1, &exact, &mut r);
        axpy(-1.0, &b, &mut r);
        assert!(norm(&r) <= 1e-8 * norm(&b));
    }
}
