//! Householder QR, one-sided Jacobi SVD, cyclic Jacobi symmetric
//! eigendecomposition and the routines built on them.

use super::{dot, DenseMatrix};
use crate::{Error, Result};

/// Relative singular-value cutoff used by [`orthonormalize`] unless the
/// caller passes its own.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const SVD_TOL: f64 = 1e-15;
const SVD_MAX_SWEEPS: usize = 80;
const EIG_MAX_SWEEPS: usize = 100;

/// Thin QR factorization `A = Q R` with `Q` of shape `rows x k` and `R` of
/// shape `k x cols`, `k = min(rows, cols)`.
pub fn thin_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (d, m) = a.shape();
    let k = d.min(m);
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        let mut v: Vec<f64> = (j..d).map(|i| work[(i, j)]).collect();
        let x_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if x_norm == 0.0 {
            reflectors.push(vec![0.0; d - j]);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -x_norm } else { x_norm };
        v[0] -= alpha;
        let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= v_norm);
        for c in j..m {
            let proj: f64 = (j..d).map(|i| v[i - j] * work[(i, c)]).sum();
            for i in j..d {
                work[(i, c)] -= 2.0 * v[i - j] * proj;
            }
        }
        reflectors.push(v);
    }

    let r = DenseMatrix::from_fn(k, m, |i, c| if c >= i { work[(i, c)] } else { 0.0 });
    let mut q = DenseMatrix::from_fn(d, k, |i, c| if i == c { 1.0 } else { 0.0 });
    for j in (0..k).rev() {
        let v = &reflectors[j];
        for c in 0..k {
            let proj: f64 = (j..d).map(|i| v[i - j] * q[(i, c)]).sum();
            if proj != 0.0 {
                for i in j..d {
                    q[(i, c)] -= 2.0 * v[i - j] * proj;
                }
            }
        }
    }
    (q, r)
}

/// Thin SVD `A = U diag(sigma) V'` from one-sided (Hestenes) Jacobi.
///
/// `U` is `rows x cols`; columns belonging to zero singular values are zero.
/// Singular values are sorted in descending order.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

pub fn svd_jacobi(a: &DenseMatrix) -> ThinSvd {
    let (p, n) = a.shape();
    let mut cols = a.columns();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                if alpha < f64::MIN_POSITIVE || beta < f64::MIN_POSITIVE {
                    continue;
                }
                let gamma = dot(&cols[i], &cols[j]);
                if gamma.abs() <= SVD_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, i, j, c, s);
                rotate_pair(&mut vcols, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut u = DenseMatrix::zeros(p, n);
    let mut v = DenseMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        if s > 0.0 {
            let unit: Vec<f64> = cols[src].iter().map(|x| x / s).collect();
            u.set_col(dst, &unit);
        }
        v.set_col(dst, &vcols[src]);
    }
    ThinSvd { u, sigma, v }
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(j);
    let (ci, cj) = (&mut head[i], &mut tail[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Orthonormal basis for the dominant column space of a sketch.
#[derive(Clone, Debug)]
pub struct Orthonormalized {
    /// `d x ell`, orthonormal columns ordered by decreasing singular value.
    pub q: DenseMatrix,
    /// All singular values of the input, descending.
    pub singular_values: Vec<f64>,
}

impl Orthonormalized {
    pub fn rank(&self) -> usize {
        self.q.cols()
    }
}

/// Orthonormalizes the columns of `y` through `Y = Q1 R`, `R = U S W'`.
///
/// Directions whose singular value is at most `rank_tol * sigma_max` are
/// dropped. An all-zero `y` yields an empty (`d x 0`) basis.
pub fn orthonormalize(y: &DenseMatrix, rank_tol: f64) -> Result<Orthonormalized> {
    let (d, m) = y.shape();
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("cannot orthonormalize a {d}x{m} matrix")));
    }
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rank_tol must be positive, got {rank_tol}")));
    }
    let (q1, r) = thin_qr(y);
    let svd = svd_jacobi(&r);
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    let cap = d.min(m);
    let ell = if sigma_max > 0.0 {
        svd.sigma
            .iter()
            .take(cap)
            .take_while(|s| **s > rank_tol * sigma_max)
            .count()
    } else {
        0
    };
    let q = if ell == 0 {
        DenseMatrix::zeros(d, 0)
    } else {
        q1.matmul(&svd.u.leading_columns(ell))
    };
    Ok(Orthonormalized {
        q,
        singular_values: svd.sigma,
    })
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: DenseMatrix,
}

impl SymmetricEigen {
    /// `V diag(values) V'`
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.values.len();
        let scaled = DenseMatrix::from_fn(n, n, |i, j| self.vectors[(i, j)] * self.values[j]);
        scaled.matmul(&self.vectors.transpose())
    }
}

/// Cyclic Jacobi eigensolver. The input is symmetrized as `(A + A')/2` first.
pub fn symmetric_eig(a: &DenseMatrix) -> Result<SymmetricEigen> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(Error::Dimension(format!("eigendecomposition of a {rows}x{cols} matrix")));
    }
    let n = rows;
    let mut m = a.symmetrized();
    let mut v = DenseMatrix::identity(n);
    let scale = m.frobenius_norm();

    let off_norm = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        if scale == 0.0 || off_norm(&m) <= 1e-14 * scale {
            break;
        }
        if sweeps == EIG_MAX_SWEEPS {
            return Err(Error::NotConverged {
                sweeps,
                off_norm: off_norm(&m),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                m[(p, p)] -= t * apq;
                m[(q, q)] += t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let (arp, arq) = (m[(r, p)], m[(r, q)]);
                        let new_rp = c * arp - s * arq;
                        let new_rq = s * arp + c * arq;
                        m[(r, p)] = new_rp;
                        m[(p, r)] = new_rp;
                        m[(r, q)] = new_rq;
                        m[(q, r)] = new_rq;
                    }
                    let (vrp, vrq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[(y, y)].total_cmp(&m[(x, x)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Minimizer of `||A X - B||_F`, minimum-norm when `A` is rank deficient.
pub fn least_squares(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let (p, q) = a.shape();
    if b.rows() != p {
        return Err(Error::Dimension(format!(
            "least squares: A has {p} rows but B has {}",
            b.rows()
        )));
    }
    if p < q {
        return Err(Error::Underdetermined { rows: p, cols: q });
    }
    let svd = svd_jacobi(a);
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    let cutoff = f64::EPSILON * p.max(q) as f64 * sigma_max;
    // X = V diag(1/sigma) U' B over the retained singular triplets.
    let utb = svd.u.tr_matmul(b);
    let mut x = DenseMatrix::zeros(q, b.cols());
    for (k, s) in svd.sigma.iter().enumerate() {
        if *s <= cutoff || *s == 0.0 {
            continue;
        }
        for i in 0..q {
            let vik = svd.v[(i, k)] / s;
            if vik == 0.0 {
                continue;
            }
            for j in 0..b.cols() {
                x[(i, j)] += vik * utb[(k, j)];
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, SeededRng};

    fn orthonormality_error(q: &DenseMatrix) -> f64 {
        q.tr_matmul(q).sub(&DenseMatrix::identity(q.cols())).max_abs()
    }

    #[test]
    fn qr_reconstructs_tall_and_wide() {
        for (d, m) in [(7, 3), (3, 7), (5, 5)] {
            let a = gaussian_matrix(&mut SeededRng::new(11, 0), d, m).unwrap();
            let (q, r) = thin_qr(&a);
            assert!(q.matmul(&r).sub(&a).frobenius_norm() <= 1e-12 * a.frobenius_norm());
            assert!(orthonormality_error(&q) <= 1e-12);
        }
    }

    #[test]
    fn orthonormalize_axis_aligned_columns() {
        let y = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0], vec![0.0, 3.0]]);
        let basis = orthonormalize(&y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.rank(), 2);
        // sigma = 3 first, up to sign
        assert!((basis.q[(2, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((basis.q[(0, 1)].abs() - 1.0).abs() < 1e-12);
        assert!(basis.q[(1, 0)].abs() < 1e-12 && basis.q[(1, 1)].abs() < 1e-12);
        assert!(orthonormality_error(&basis.q) <= 1e-10);
    }

    #[test]
    fn orthonormalize_single_column_normalizes() {
        let y = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]);
        let basis = orthonormalize(&y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.rank(), 1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((basis.q[(0, 0)].abs() - s).abs() < 1e-14);
        assert!((basis.q[(1, 0)] - basis.q[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn orthonormalize_zero_sketch_is_empty() {
        let basis = orthonormalize(&DenseMatrix::zeros(4, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.rank(), 0);
        assert_eq!(basis.q.shape(), (4, 0));
    }

    #[test]
    fn orthonormalize_recovers_exact_rank_five() {
        let mut rng = SeededRng::new(5, 0);
        let a = gaussian_matrix(&mut rng, 50, 5).unwrap();
        let b = gaussian_matrix(&mut rng, 20, 5).unwrap();
        let y = a.matmul(&b.transpose());
        let basis = orthonormalize(&y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.rank(), 5);
        let reproj = basis.q.matmul(&basis.q.tr_matmul(&y));
        assert!(reproj.sub(&y).frobenius_norm() <= 1e-8 * y.frobenius_norm());
        assert!(orthonormality_error(&basis.q) <= 1e-10);
    }

    #[test]
    fn orthonormalize_wide_input_caps_rank() {
        let y = gaussian_matrix(&mut SeededRng::new(3, 0), 4, 9).unwrap();
        let basis = orthonormalize(&y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.rank(), 4);
        assert!(orthonormality_error(&basis.q) <= 1e-10);
    }

    #[test]
    fn eig_diagonal() {
        let e = symmetric_eig(&DenseMatrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_swap_matrix() {
        let e = symmetric_eig(&DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-15 && (e.values[1] + 1.0).abs() < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[(0, 0)].abs() - s).abs() < 1e-15);
        assert!((e.vectors[(0, 0)] - e.vectors[(1, 0)]).abs() < 1e-15);
        assert!((e.vectors[(0, 1)] + e.vectors[(1, 1)]).abs() < 1e-15);
    }

    #[test]
    fn eig_zero_matrix() {
        let e = symmetric_eig(&DenseMatrix::zeros(3, 3)).unwrap();
        assert_eq!(e.values, vec![0.0; 3]);
        assert_eq!(e.vectors, DenseMatrix::identity(3));
    }

    #[test]
    fn eig_random_reconstruction() {
        let g = gaussian_matrix(&mut SeededRng::new(8, 0), 30, 30).unwrap();
        let a = g.add(&g.transpose());
        let e = symmetric_eig(&a).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let av = a.matmul(&e.vectors);
        let vl = DenseMatrix::from_fn(30, 30, |i, j| e.vectors[(i, j)] * e.values[j]);
        assert!(av.sub(&vl).frobenius_norm() <= 1e-9 * a.frobenius_norm());
        assert!(e.reconstruct().sub(&a).frobenius_norm() <= 1e-9 * a.frobenius_norm());
        assert!(orthonormality_error(&e.vectors) <= 1e-12);
    }

    #[test]
    fn least_squares_identity_and_mean() {
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let x = least_squares(&DenseMatrix::identity(2), &b).unwrap();
        assert!(x.sub(&b).max_abs() < 1e-14);

        let a = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]);
        let b = DenseMatrix::from_rows(&[vec![1.0], vec![3.0]]);
        let x = least_squares(&a, &b).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_orthonormal_columns() {
        let g = gaussian_matrix(&mut SeededRng::new(9, 0), 12, 4).unwrap();
        let (q, _) = thin_qr(&g);
        let b = gaussian_matrix(&mut SeededRng::new(9, 1), 12, 3).unwrap();
        let x = least_squares(&q, &b).unwrap();
        assert!(x.sub(&q.tr_matmul(&b)).max_abs() <= 1e-10);
    }

    #[test]
    fn least_squares_rank_deficient_is_min_norm() {
        // Two identical columns: minimum-norm solution splits the weight evenly.
        let a = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]);
        let b = DenseMatrix::from_rows(&[vec![2.0], vec![2.0], vec![0.0]]);
        let x = least_squares(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12 && (x[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_rejects_underdetermined() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 1);
        assert!(matches!(
            least_squares(&a, &b),
            Err(Error::Underdetermined { rows: 2, cols: 3 })
        ));
    }
}
