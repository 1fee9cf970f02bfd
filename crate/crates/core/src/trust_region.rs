//! Confidence radius, robust penalty, and the randomized low-rank solve
//! `v = M^+ g` restricted to the sketched range of `M = F + c R_n^2 Sigma`.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::linalg::{
    least_squares, orthonormalize, symmetric_eig, DenseMatrix, LinearOperator, SymmetricEigen,
    DEFAULT_RANK_TOL,
};
use crate::{Error, Result};

/// Eigenvalues at or below `EIG_FLOOR_REL * max(lambda_max, 1)` are treated
/// as zero (their eigenpairs are dropped from the inverse).
pub const EIG_FLOOR_REL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusParams {
    pub alpha: f64,
    pub n: usize,
    pub d: usize,
}

impl RadiusParams {
    pub fn new(alpha: f64, n: usize, d: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0,1), got {alpha}")));
        }
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!("radius needs n, d >= 1 (n={n}, d={d})")));
        }
        Ok(Self { alpha, n, d })
    }
}

/// `R_n^2 = (d + 2 sqrt(d ln(1/alpha)) + 2 ln(1/alpha)) / n`
pub fn radius_sq(p: RadiusParams) -> f64 {
    let log_inv = (1.0 / p.alpha).ln();
    let d = p.d as f64;
    (d + 2.0 * (d * log_inv).sqrt() + 2.0 * log_inv) / p.n as f64
}

/// `sigma_rn * sqrt(delta' Sigma delta)`: the worst-case loss of the
/// linear model over the gradient confidence ellipsoid.
pub fn robust_lower_bound_penalty<S: LinearOperator + ?Sized>(delta: &[f64], sigma: &S, sigma_rn: f64) -> f64 {
    let q = sigma.quadratic_form(delta);
    sigma_rn * q.max(0.0).sqrt()
}

/// `Y = M Omega`, one operator product per column.
pub fn sketch<M: LinearOperator + Sync + ?Sized>(op: &M, omega: &DenseMatrix) -> DenseMatrix {
    let columns: Vec<Vec<f64>> = omega.columns().par_iter().map(|c| op.apply(c)).collect();
    DenseMatrix::from_columns(op.dim(), &columns)
}

/// Default number of random projections for a `d`-parameter policy.
pub fn default_num_projections(d: usize) -> usize {
    200.min(d.div_ceil(4)).min(d).max(1)
}

/// How the small matrix `M~ = Q' M Q` is obtained.
#[derive(Clone, Copy, Debug)]
pub enum Projection<'a> {
    /// `ell` fresh operator products `M Q`.
    Operator,
    /// Least-squares fit of `M~ (Q' Omega) = Q' Y`, for sketches that were
    /// not produced by the current operator (EMA).
    LeastSquares { omega: &'a DenseMatrix },
}

#[derive(Clone, Debug)]
pub struct SubspaceModel {
    /// `d x ell` orthonormal basis of the sketched range.
    pub q: DenseMatrix,
    /// `ell x ell` symmetric projection of `M`.
    pub m_tilde: DenseMatrix,
    /// Retained eigenpairs of `m_tilde` (eigenvalues above the floor).
    pub eigen: SymmetricEigen,
    pub eig_floor: f64,
}

impl SubspaceModel {
    pub fn build<M: LinearOperator + Sync + ?Sized>(
        y: &DenseMatrix,
        op: &M,
        projection: Projection<'_>,
        rank_tol: f64,
    ) -> Result<Self> {
        let q = orthonormalize(y, rank_tol)?.q;
        if q.cols() == 0 {
            return Err(Error::NoSubspace);
        }
        let m_tilde = match projection {
            Projection::Operator => q.tr_matmul(&sketch(op, &q)),
            Projection::LeastSquares { omega } => {
                if omega.shape() != y.shape() {
                    return Err(Error::Dimension(format!(
                        "omega is {:?} but sketch is {:?}",
                        omega.shape(),
                        y.shape()
                    )));
                }
                // (Q'Omega)' M~' = (Q'Y)'
                let a = q.tr_matmul(omega).transpose();
                let b = q.tr_matmul(y).transpose();
                least_squares(&a, &b)?.transpose()
            }
        }
        .symmetrized();
        let full = symmetric_eig(&m_tilde)?;
        let lambda_max = full.values.first().copied().unwrap_or(0.0);
        let eig_floor = EIG_FLOOR_REL * lambda_max.max(1.0);
        let keep = full.values.iter().take_while(|l| **l > eig_floor).count();
        if keep == 0 {
            return Err(Error::NoSubspace);
        }
        let eigen = SymmetricEigen {
            values: full.values[..keep].to_vec(),
            vectors: full.vectors.leading_columns(keep),
        };
        Ok(Self {
            q,
            m_tilde,
            eigen,
            eig_floor,
        })
    }

    pub fn ell(&self) -> usize {
        self.q.cols()
    }

    /// `v = Q V Lambda^{-1} V' Q' g`
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let qg = self.q.tr_matvec(g);
        let mut coeffs = self.eigen.vectors.tr_matvec(&qg);
        for (c, l) in coeffs.iter_mut().zip(&self.eigen.values) {
            *c /= l;
        }
        self.q.matvec(&self.eigen.vectors.matvec(&coeffs))
    }
}

/// Update direction from a sketch `y` of `op` (or of an EMA of past
/// operators when `projection` is least squares).
pub fn update_direction<M: LinearOperator + Sync + ?Sized>(
    y: &DenseMatrix,
    op: &M,
    projection: Projection<'_>,
    g: &[f64],
) -> Result<Vec<f64>> {
    if g.len() != op.dim() || y.rows() != op.dim() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries, sketch {} rows, operator dimension {}",
            g.len(),
            y.rows(),
            op.dim()
        )));
    }
    Ok(SubspaceModel::build(y, op, projection, DEFAULT_RANK_TOL)?.direction(g))
}

/// Exponential moving averages of the Fisher and covariance sketches.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaSketch {
    pub y_f: DenseMatrix,
    pub y_sigma: DenseMatrix,
    pub k: u64,
    pub beta: f64,
}

impl EmaSketch {
    pub fn new(d: usize, m: usize, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta must be in [0,1), got {beta}")));
        }
        Ok(Self {
            y_f: DenseMatrix::zeros(d, m),
            y_sigma: DenseMatrix::zeros(d, m),
            k: 0,
            beta,
        })
    }

    /// Folds in `F Omega` and `Sigma Omega` and returns the bias-corrected
    /// combined sketch `(Y_F + c_rn2 Y_Sigma) / (1 - beta^k)`.
    pub fn update(&mut self, f_omega: &DenseMatrix, sigma_omega: &DenseMatrix, c_rn2: f64) -> Result<DenseMatrix> {
        if f_omega.shape() != self.y_f.shape() || sigma_omega.shape() != self.y_f.shape() {
            return Err(Error::Dimension(format!(
                "EMA sketch is {:?}, got {:?} and {:?}",
                self.y_f.shape(),
                f_omega.shape(),
                sigma_omega.shape()
            )));
        }
        let b = self.beta;
        self.y_f = self.y_f.scaled(b).add(&f_omega.scaled(1.0 - b));
        self.y_sigma = self.y_sigma.scaled(b).add(&sigma_omega.scaled(1.0 - b));
        self.k += 1;
        let correction = 1.0 - b.powi(self.k.min(i32::MAX as u64) as i32);
        Ok(self.y_f.add(&self.y_sigma.scaled(c_rn2)).scaled(1.0 / correction))
    }

    /// Plain-text form: a header line `ema <d> <m> <k> <beta>` followed by
    /// the entries of `Y_F` then `Y_Sigma`, row-major, one per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (d, m) = self.y_f.shape();
        writeln!(w, "ema {d} {m} {} {:?}", self.k, self.beta)?;
        for x in self.y_f.as_slice().iter().chain(self.y_sigma.as_slice()) {
            writeln!(w, "{x:?}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            path: "<ema>".into(),
            msg,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty input".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "ema" {
            return Err(bad(format!("bad header {header:?}")));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        let (d, m) = (parse_usize(fields[1])?, parse_usize(fields[2])?);
        let k = fields[3].parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let beta = fields[4].parse::<f64>().map_err(|e| bad(e.to_string()))?;
        let mut values = Vec::with_capacity(2 * d * m);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            values.push(line.trim().parse::<f64>().map_err(|e| bad(format!("{line:?}: {e}")))?);
        }
        if values.len() != 2 * d * m {
            return Err(bad(format!("expected {} values, got {}", 2 * d * m, values.len())));
        }
        let y_sigma = values.split_off(d * m);
        let mut out = Self::new(d, m, beta)?;
        out.y_f = DenseMatrix::from_vec(d, m, values)?;
        out.y_sigma = DenseMatrix::from_vec(d, m, y_sigma)?;
        out.k = k;
        Ok(out)
    }
}
