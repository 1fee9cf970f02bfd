//! Dense and finite-difference cross-checks of the operator-based code.

use nalgebra::{DMatrix, DVector};

use uatrpo::envs::{collect, make_env, ObsNormalizer};
use uatrpo::estimation::{policy_gradient, standardize_advantages, FisherOperator, ScoreSample, TrustRegionOperator};
use uatrpo::linalg::{conjugate_gradient, gaussian_matrix, DenseMatrix, LinearOperator};
use uatrpo::optimizers::{surrogate, trpo_direction, trpo_step, ua_trpo_step, TrpoConfig, UaTrpoConfig, UaTrpoState, UpdateBatch};
use uatrpo::policy::{kl_between, PolicyArch, PolicyParams, PolicySnapshot};
use uatrpo::trust_region::{radius_sq, sketch, EmaSketch, RadiusParams};
use uatrpo::SeededRng;

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn synthetic_samples(seed: u64, n: usize, d: usize) -> Vec<ScoreSample> {
    let scores = gaussian_matrix(&mut SeededRng::new(seed, 0), n, d).unwrap();
    let adv = gaussian_matrix(&mut SeededRng::new(seed, 1), n, 1).unwrap();
    (0..n).map(|i| ScoreSample::new(scores.row(i).to_vec(), adv[(i, 0)])).collect()
}

/// Dense F, Sigma built from the sample definition.
fn dense_fisher_sigma(samples: &[ScoreSample]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = samples.len();
    let d = samples[0].score.len();
    let mut f = DMatrix::zeros(d, d);
    let mut mean = DVector::zeros(d);
    for s in samples {
        let v = DVector::from_column_slice(&s.score);
        f += &v * v.transpose();
        mean += DVector::from_column_slice(&s.xi);
    }
    f /= n as f64;
    mean /= n as f64;
    let mut sigma = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(&s.xi) - &mean;
        sigma += &c * c.transpose();
    }
    sigma /= (n - 1) as f64;
    (f, sigma)
}

#[test]
fn operator_products_match_dense_construction() {
    for (seed, d) in [(1, 3), (2, 11), (3, 20)] {
        let samples = synthetic_samples(seed, 17, d);
        let coef = 0.42;
        let op = TrustRegionOperator::from_samples(&samples, coef).unwrap();
        let (f, sigma) = dense_fisher_sigma(&samples);
        let m = &f + &sigma * coef;
        let omega = gaussian_matrix(&mut SeededRng::new(seed, 5), d, 4).unwrap();
        for j in 0..4 {
            let v = omega.col(j);
            let (fv, sv, mv) = op.products(&v);
            let vv = DVector::from_column_slice(&v);
            for (got, want) in [(fv, &f * &vv), (sv, &sigma * &vv), (mv, &m * &vv)] {
                for i in 0..d {
                    assert!((got[i] - want[i]).abs() <= 1e-10 * (1.0 + want[i].abs()));
                }
            }
        }
        let y = sketch(&op, &omega);
        let dense_y = &m * to_na(&omega);
        for i in 0..d {
            for j in 0..4 {
                assert!((y[(i, j)] - dense_y[(i, j)]).abs() <= 1e-10 * (1.0 + dense_y[(i, j)].abs()));
            }
        }
    }
}

#[test]
fn cg_direction_matches_damped_dense_solve() {
    for (seed, d) in [(4, 5), (5, 12), (6, 20)] {
        let samples = synthetic_samples(seed, 40, d);
        let fisher = FisherOperator::from_samples(&samples).unwrap();
        let (f, _) = dense_fisher_sigma(&samples);
        let g = gaussian_matrix(&mut SeededRng::new(seed, 6), d, 1).unwrap().col(0);
        let cfg = TrpoConfig::default();
        let v = trpo_direction(&fisher, &g, &cfg);
        let dense = (&f + DMatrix::identity(d, d) * cfg.cg_damping)
            .lu()
            .solve(&DVector::from_column_slice(&g))
            .unwrap();
        let err = (DVector::from_column_slice(&v) - &dense).norm() / dense.norm();
        assert!(err <= 1e-6, "d={d}: {err:e}");
        // the same solve through the generic CG entry point
        let w = conjugate_gradient(&fisher, &g, cfg.cg_iters, cfg.cg_damping);
        assert_eq!(v, w);
    }
}

struct Scenario {
    params: PolicyParams,
    batch: UpdateBatch,
    samples: Vec<ScoreSample>,
    g: Vec<f64>,
}

fn lqr_scenario(seed: u64) -> Scenario {
    let env = make_env("lqr").unwrap();
    let spec = env.spec().clone();
    let arch = PolicyArch::new(spec.state_dim, spec.action_dim, vec![6]);
    let params = PolicyParams::init(arch, &mut SeededRng::new(seed, 0));
    let mut norm = ObsNormalizer::new(spec.state_dim);
    let rollout = collect(&params, env.as_ref(), &mut norm, 300, &mut SeededRng::new(seed, 1)).unwrap();
    let raw: Vec<f64> = rollout.transitions().map(|t| t.reward).collect();
    let adv = standardize_advantages(&raw);
    let (est, samples) = policy_gradient(&rollout, &PolicySnapshot::capture(&params), &adv).unwrap();
    let batch = UpdateBatch::from_rollout(&rollout, &adv).unwrap();
    Scenario {
        params,
        batch,
        samples,
        g: est.g_hat,
    }
}

#[test]
fn gradient_equals_surrogate_finite_difference() {
    let s = lqr_scenario(7);
    let base = s.params.flat().to_vec();
    let h = 1e-5;
    for i in 0..s.params.dim() {
        let mut up = base.clone();
        let mut down = base.clone();
        up[i] += h;
        down[i] -= h;
        let arch = s.params.arch().clone();
        let fd = (surrogate(&PolicyParams::from_flat(arch.clone(), up).unwrap(), &s.batch)
            - surrogate(&PolicyParams::from_flat(arch, down).unwrap(), &s.batch))
            / (2.0 * h);
        let scale = s.g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((fd - s.g[i]).abs() <= 1e-4 * scale.max(fd.abs()), "coordinate {i}: {fd} vs {}", s.g[i]);
    }
}

#[test]
fn trpo_accepted_steps_respect_kl() {
    for seed in 0..6 {
        let s = lqr_scenario(seed);
        let fisher = FisherOperator::from_samples(&s.samples).unwrap();
        let cfg = TrpoConfig::default();
        let (next, report) = trpo_step(&s.params, &s.batch, &s.g, &fisher, &cfg).unwrap();
        let kl = kl_between(&PolicySnapshot::capture(&s.params), &next, &s.batch.obs);
        if report.accepted {
            assert!(kl <= cfg.delta_kl * (1.0 + 1e-12), "seed {seed}: {kl}");
            assert!(report.surrogate_improvement > 0.0);
            assert_eq!(kl, report.final_kl);
        } else {
            assert_eq!(next.flat(), s.params.flat());
        }
    }
}

#[test]
fn trpo_with_identity_fisher_hits_the_constraint() {
    struct Identity(usize);
    impl LinearOperator for Identity {
        fn dim(&self) -> usize {
            self.0
        }
        fn apply(&self, v: &[f64]) -> Vec<f64> {
            v.to_vec()
        }
    }
    let s = lqr_scenario(3);
    let cfg = TrpoConfig {
        cg_damping: 0.0,
        ..TrpoConfig::default()
    };
    let v = trpo_direction(&Identity(s.params.dim()), &s.g, &cfg);
    for (a, b) in v.iter().zip(&s.g) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
    let (_, report) = trpo_step(&s.params, &s.batch, &s.g, &Identity(s.params.dim()), &cfg).unwrap();
    assert!((report.est_kl - cfg.delta_kl).abs() <= 1e-12);
}

#[test]
fn ua_step_meets_trust_region_exactly() {
    for use_ema in [false, true] {
        let s = lqr_scenario(11);
        let cfg = UaTrpoConfig {
            use_ema,
            ..UaTrpoConfig::default()
        };
        let mut state = UaTrpoState::new(s.params.dim(), &cfg, &mut SeededRng::new(11, 4)).unwrap();
        let (next, report) = ua_trpo_step(&s.params, &s.batch, &s.g, &s.samples, &mut state, &cfg).unwrap();
        assert!(report.accepted);
        let rn2 = radius_sq(RadiusParams::new(cfg.alpha, s.samples.len(), s.params.dim()).unwrap());
        assert_eq!(report.rn2, rn2);
        let op = TrustRegionOperator::from_samples(&s.samples, cfg.c * rn2).unwrap();
        let dtheta: Vec<f64> = next.flat().iter().zip(s.params.flat()).map(|(a, b)| a - b).collect();
        let quad = 0.5 * op.quadratic_form(&dtheta);
        assert!((quad - cfg.delta_ua).abs() <= 1e-8 * cfg.delta_ua, "{quad}");
        if let Some(ema) = &state.ema {
            assert_eq!(ema.k, 1);
        }
    }
}

#[test]
fn ema_converges_for_constant_inputs() {
    let mut rng = SeededRng::new(12, 0);
    let f = gaussian_matrix(&mut rng, 9, 3).unwrap();
    let s = gaussian_matrix(&mut rng, 9, 3).unwrap();
    let target = f.add(&s.scaled(0.25));
    let mut ema = EmaSketch::new(9, 3, 0.9).unwrap();
    let mut last = DenseMatrix::zeros(9, 3);
    for _ in 0..50 {
        last = ema.update(&f, &s, 0.25).unwrap();
    }
    assert_eq!(ema.k, 50);
    assert!(last.sub(&target).max_abs() <= 1e-8 * target.max_abs());
}
