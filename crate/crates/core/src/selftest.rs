//! Fast numerical self-checks, runnable from the command line.
//!
//! Each check compares a production code path with an independent route
//! to the same quantity (dense decomposition, closed form, Monte Carlo,
//! finite differences).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::estimation::gae_from_values;
use crate::harness::cvar;
use crate::linalg::{dot, gaussian_matrix, norm, symmetric_eig, DenseMatrix, SeededRng, SymmetricEigen};
use crate::policy::{PolicyArch, PolicyParams};
use crate::trust_region::{radius_sq, robust_lower_bound_penalty, sketch, update_direction, Projection, RadiusParams};
use crate::Result;

/// Deliberate perturbations used to confirm that the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs eigenvalues returned by the eigensolver.
    Eig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelftestOptions {
    /// Halves the Monte Carlo trial counts.
    pub quick: bool,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn eig(a: &DenseMatrix, fault: Option<Fault>) -> Result<SymmetricEigen> {
    let mut e = symmetric_eig(a)?;
    if fault == Some(Fault::Eig) {
        let scale = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for (i, v) in e.values.iter_mut().enumerate() {
            *v += 1e-3 * scale * (i + 1) as f64;
        }
    }
    Ok(e)
}

fn random_psd(rng: &mut SeededRng, d: usize, rank: usize) -> Result<DenseMatrix> {
    let b = gaussian_matrix(rng, d, rank)?;
    Ok(b.matmul(&b.transpose()))
}

fn check_eig_reconstruction(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = SeededRng::new(101, 0);
    let mut worst = 0.0f64;
    for d in [2, 5, 10, 20] {
        let b = gaussian_matrix(&mut rng, d, d)?;
        let a = b.add(&b.transpose());
        let e = eig(&a, opts.fault)?;
        let err = e.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
        worst = worst.max(err);
    }
    Ok((worst <= 1e-10, format!("max relative reconstruction error {worst:.2e} (tol 1e-10)")))
}

/// Dense pseudoinverse applied to `g` from a full eigendecomposition.
fn dense_pinv_apply(m: &DenseMatrix, g: &[f64], fault: Option<Fault>) -> Result<Vec<f64>> {
    let e = eig(m, fault)?;
    let floor = 1e-8 * e.values[0].max(1.0);
    let mut out = vec![0.0; g.len()];
    for (k, l) in e.values.iter().enumerate() {
        if *l > floor {
            let u = e.vectors.col(k);
            let c = dot(&u, g) / l;
            for (o, ui) in out.iter_mut().zip(&u) {
                *o += c * ui;
            }
        }
    }
    Ok(out)
}

fn check_dense_equivalence(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = SeededRng::new(102, 0);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let d = 5 + 3 * trial;
        let rank = 1 + rng.random_range(0..d);
        let m = random_psd(&mut rng, d, rank)?;
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let omega = gaussian_matrix(&mut rng, d, rank + 3)?;
        let v = update_direction(&sketch(&m, &omega), &m, Projection::Operator, &g)?;
        let oracle = dense_pinv_apply(&m, &g, opts.fault)?;
        let diff: Vec<f64> = v.iter().zip(&oracle).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&oracle).max(1e-300));
    }
    Ok((worst <= 1e-6, format!("max relative error vs dense pseudoinverse {worst:.2e} (tol 1e-6)")))
}

fn cholesky(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        let ljj = s.max(0.0).sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = if ljj > 0.0 { s / ljj } else { 0.0 };
        }
    }
    l
}

fn check_duality(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = SeededRng::new(103, 0);
    let budget = if opts.quick { 10_000 } else { 20_000 };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let d = rng.random_range(2..=6);
        let sigma = random_psd(&mut rng, d, d)?.add(&DenseMatrix::identity(d).scaled(0.1));
        let delta: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = rng.random_range(0.1..2.0);
        let closed = robust_lower_bound_penalty(&delta, &sigma, r);
        // boundary points u = g + r L z / |z| of {(u-g)' Sigma^-1 (u-g) <= r^2}
        let l = cholesky(&sigma);
        let objective = |z: &[f64]| {
            let lz = l.matvec(z);
            r * dot(&lz, &delta) / norm(z)
        };
        let mut best_z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut best = objective(&best_z);
        let mut step = 1.0;
        for i in 0..budget {
            let cand: Vec<f64> = best_z
                .iter()
                .map(|z| z + step * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let val = objective(&cand);
            if val < best {
                best = val;
                best_z = cand;
            }
            if i % 200 == 199 {
                step *= 0.7;
            }
        }
        let searched = -best;
        worst = worst.max((closed - searched).abs() / closed.abs().max(1e-12));
    }
    Ok((worst <= 1e-3, format!("max relative gap closed form vs search {worst:.2e} (tol 1e-3)")))
}

fn check_coverage(opts: &SelftestOptions) -> Result<(bool, String)> {
    let (d, n, alpha) = (5, 100, 0.05);
    let reps = if opts.quick { 2_500 } else { 5_000 };
    let mut rng = SeededRng::new(104, 0);
    let sigma = random_psd(&mut rng, d, d)?.add(&DenseMatrix::identity(d));
    let l = cholesky(&sigma);
    let r2 = radius_sq(RadiusParams::new(alpha, n, d)?);
    let g: Vec<f64> = (0..d).map(|i| i as f64).collect();
    let mut covered = 0usize;
    for _ in 0..reps {
        let mut mean = vec![0.0; d];
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xi = l.matvec(&z);
            for j in 0..d {
                mean[j] += (g[j] + xi[j]) / n as f64;
            }
        }
        // (g_hat - g)' Sigma^-1 (g_hat - g) through the Cholesky factor
        let diff: Vec<f64> = mean.iter().zip(&g).map(|(a, b)| a - b).collect();
        let mut y = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
            y[i] = (diff[i] - s) / l[(i, i)];
        }
        if dot(&y, &y) <= r2 {
            covered += 1;
        }
    }
    let freq = covered as f64 / reps as f64;
    Ok((freq >= 1.0 - alpha, format!("coverage {freq:.4} over {reps} trials (need >= {})", 1.0 - alpha)))
}

fn check_radius() -> Result<(bool, String)> {
    let r = radius_sq(RadiusParams::new(0.05, 100, 5)?);
    Ok(((r - 0.18732).abs() <= 1e-4, format!("R^2(n=100, d=5, alpha=0.05) = {r:.6}")))
}

fn check_score() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(105, 0);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let arch = PolicyArch::new(3, 2, vec![5, 4]);
        let mut params = PolicyParams::init(arch.clone(), &mut rng);
        let theta: Vec<f64> = params
            .flat()
            .iter()
            .map(|t| t + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        params = PolicyParams::from_flat(arch.clone(), theta)?;
        let obs: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let action: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let score = params.score(&obs, &action);
        let h = 1e-6;
        let fd: Vec<f64> = (0..params.dim())
            .map(|i| {
                let mut e = vec![0.0; params.dim()];
                e[i] = 1.0;
                let up = params.stepped(&e, h).log_prob(&obs, &action);
                let down = params.stepped(&e, -h).log_prob(&obs, &action);
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = score.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&fd).max(1e-12));
    }
    Ok((worst <= 1e-5, format!("max relative error vs central differences {worst:.2e}")))
}

fn check_gae() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(106, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let len = rng.random_range(1..=10);
        let gamma = rng.random_range(0.5..1.0);
        let lambda = rng.random_range(0.0..1.0);
        let r: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v_next: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut dones = vec![false; len];
        dones[len - 1] = rng.random_bool(0.5);
        let adv = gae_from_values(&r, &v, &v_next, &dones, gamma, lambda);
        for t in 0..len {
            let mut direct = 0.0;
            for k in t..len {
                let live = if dones[k] { 0.0 } else { 1.0 };
                let delta = r[k] + gamma * v_next[k] * live - v[k];
                direct += (gamma * lambda).powi((k - t) as i32) * delta;
            }
            worst = worst.max((direct - adv[t]).abs());
        }
    }
    Ok((worst <= 1e-10, format!("max abs error vs direct sum {worst:.2e}")))
}

fn check_cvar() -> Result<(bool, String)> {
    let v = [10.0, 20.0, 30.0, 40.0, 50.0];
    let got = [cvar(&v, 1.0)?, cvar(&v, 0.2)?, cvar(&v, 0.4)?];
    Ok((got == [30.0, 10.0, 15.0], format!("kappa 1.0/0.2/0.4 -> {got:?}")))
}

/// Runs every check; a check that errors counts as failed.
pub fn run(opts: SelftestOptions) -> Vec<CheckResult> {
    type Check = fn(&SelftestOptions) -> Result<(bool, String)>;
    let checks: [(&'static str, Check); 8] = [
        ("eig_reconstruction", check_eig_reconstruction),
        ("dense_equivalence", check_dense_equivalence),
        ("duality", check_duality),
        ("coverage", check_coverage),
        ("radius", |_| check_radius()),
        ("score_fd", |_| check_score()),
        ("gae", |_| check_gae()),
        ("cvar", |_| check_cvar()),
    ];
    checks
        .iter()
        .map(|(name, check)| match check(&opts) {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}
