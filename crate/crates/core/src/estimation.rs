//! Advantage estimation, value learning, per-sample policy-gradient
//! vectors and the matrix-free Fisher / gradient-covariance operators.
//!
//! The `1/(1-gamma)` factor in front of the policy gradient is dropped
//! everywhere; it only rescales the trade-off parameter.

use rand::seq::index;
use rayon::prelude::*;

use crate::envs::RolloutBatch;
use crate::linalg::{all_finite, axpy, DenseMatrix, LinearOperator, SeededRng};
use crate::mlp::MlpLayout;
use crate::policy::PolicySnapshot;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Population-std floor used when standardizing advantages.
pub const ADV_STD_FLOOR: f64 = 1e-8;

/// State-value network with its Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    layout: MlpLayout,
    params: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl ValueFunction {
    /// Tanh MLP `obs_dim -> hidden -> 1`; the output layer starts at zero so
    /// the initial prediction is identically 0.
    pub fn new(obs_dim: usize, hidden: &[usize], rng: &mut SeededRng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend(hidden);
        sizes.push(1);
        let layout = MlpLayout::new(sizes);
        let params = layout.init(rng, 0.0);
        Self::with_params(layout, params)
    }

    fn with_params(layout: MlpLayout, params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            layout,
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn predict(&self, obs: &[f64]) -> f64 {
        self.layout.forward(&self.params, obs)[0]
    }

    /// Mean squared error over a batch.
    pub fn loss(&self, states: &[Vec<f64>], targets: &[f64]) -> f64 {
        states
            .iter()
            .zip(targets)
            .map(|(s, y)| (self.predict(s) - y).powi(2))
            .sum::<f64>()
            / states.len() as f64
    }

    fn loss_and_grad(&self, states: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let n = states.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (s, y) in states.iter().zip(targets) {
            let (out, trace) = self.layout.forward_trace(&self.params, s);
            let err = out[0] - y;
            loss += err * err;
            self.layout.backward(&self.params, &trace, &[err], 2.0 / n, &mut grad);
        }
        (loss / n, grad)
    }

    fn adam_step(&mut self, grad: &[f64], step_size: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..self.params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            self.params[i] -= step_size * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// `iters` full-batch Adam steps on the mean squared error. Returns the
/// loss before the last step.
pub fn fit_value(
    vf: &mut ValueFunction,
    states: &[Vec<f64>],
    targets: &[f64],
    step_size: f64,
    iters: usize,
) -> Result<f64> {
    if states.is_empty() || states.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "fit_value needs matching non-empty states/targets, got {} and {}",
            states.len(),
            targets.len()
        )));
    }
    let mut last = f64::NAN;
    for _ in 0..iters {
        let (loss, grad) = vf.loss_and_grad(states, targets);
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(Error::Diverged(format!("value loss is {loss}")));
        }
        vf.adam_step(&grad, step_size);
        last = loss;
    }
    Ok(last)
}

/// GAE over one trajectory given `V(s_t)` and `V(s_{t+1})` per step.
///
/// `dones[t]` stops both the bootstrap and the recursion at step `t`.
pub fn gae_from_values(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_values[t] * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    adv
}

/// Advantages and value targets `A + V(s)` for every step of the batch,
/// in batch order.
pub fn gae(batch: &RolloutBatch, vf: &ValueFunction, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut advantages = Vec::with_capacity(batch.n_steps());
    let mut targets = Vec::with_capacity(batch.n_steps());
    for traj in &batch.trajectories {
        let tr = &traj.transitions;
        let rewards: Vec<f64> = tr.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = tr.iter().map(|t| vf.predict(&t.obs)).collect();
        let next_values: Vec<f64> = tr
            .iter()
            .map(|t| if t.done { 0.0 } else { vf.predict(&t.next_obs) })
            .collect();
        let dones: Vec<bool> = tr.iter().map(|t| t.done).collect();
        let adv = gae_from_values(&rewards, &values, &next_values, &dones, gamma, lambda);
        targets.extend(adv.iter().zip(&values).map(|(a, v)| a + v));
        advantages.extend(adv);
    }
    (advantages, targets)
}

/// Zero mean, unit population std. Constant input maps to zeros.
pub fn standardize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ADV_STD_FLOOR {
        return vec![0.0; adv.len()];
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSample {
    /// `advantage * score`
    pub xi: Vec<f64>,
    pub score: Vec<f64>,
    pub advantage: f64,
}

impl ScoreSample {
    pub fn new(score: Vec<f64>, advantage: f64) -> Self {
        let xi = score.iter().map(|s| advantage * s).collect();
        Self { xi, score, advantage }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub g_hat: Vec<f64>,
    pub n: usize,
    /// Sample std (N-1 denominator) of each coordinate of `xi`, over `sqrt(N)`.
    pub per_dim_stderr: Vec<f64>,
}

impl GradientEstimate {
    pub fn from_samples(samples: &[ScoreSample]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let d = samples[0].xi.len();
        let mut g_hat = vec![0.0; d];
        for s in samples {
            axpy(1.0, &s.xi, &mut g_hat);
        }
        g_hat.iter_mut().for_each(|g| *g /= n as f64);
        let per_dim_stderr = if n < 2 {
            vec![0.0; d]
        } else {
            let mut ss = vec![0.0; d];
            for s in samples {
                for ((acc, x), g) in ss.iter_mut().zip(&s.xi).zip(&g_hat) {
                    *acc += (x - g) * (x - g);
                }
            }
            ss.iter()
                .map(|v| (v / (n - 1) as f64).sqrt() / (n as f64).sqrt())
                .collect()
        };
        Ok(Self {
            g_hat,
            n,
            per_dim_stderr,
        })
    }
}

/// Per-step score samples under the pre-update policy and their average.
pub fn policy_gradient(
    batch: &RolloutBatch,
    params_k: &PolicySnapshot,
    advantages: &[f64],
) -> Result<(GradientEstimate, Vec<ScoreSample>)> {
    let steps: Vec<_> = batch.transitions().collect();
    if steps.len() != advantages.len() {
        return Err(Error::Dimension(format!(
            "{} advantages for {} steps",
            advantages.len(),
            steps.len()
        )));
    }
    let policy = params_k.params();
    let samples: Vec<ScoreSample> = steps
        .par_iter()
        .zip(advantages.par_iter())
        .map(|(t, a)| ScoreSample::new(policy.score(&t.obs, &t.action), *a))
        .collect();
    Ok((GradientEstimate::from_samples(&samples)?, samples))
}

/// Uniform draw of `ceil(N / factor)` samples without replacement, kept in
/// their original order.
pub fn subsample(samples: &[ScoreSample], factor: usize, rng: &mut SeededRng) -> Result<Vec<ScoreSample>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("subsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(samples.to_vec());
    }
    let keep = samples.len().div_ceil(factor);
    let mut picked = index::sample(rng, samples.len(), keep).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| samples[i].clone()).collect())
}

fn gram_apply(rows: &DenseMatrix, denom: f64, v: &[f64]) -> Vec<f64> {
    let mut out = rows.tr_matvec(&rows.matvec(v));
    out.iter_mut().for_each(|x| *x /= denom);
    out
}

/// `F v = (1/N) sum_i s_i (s_i' v)` over raw score vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherOperator {
    scores: DenseMatrix,
}

impl FisherOperator {
    /// One score vector per row.
    pub fn from_rows(scores: DenseMatrix) -> Result<Self> {
        if scores.rows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        Ok(Self { scores })
    }

    pub fn from_samples(samples: &[ScoreSample]) -> Result<Self> {
        Self::from_rows(DenseMatrix::from_rows(
            &samples.iter().map(|s| s.score.clone()).collect::<Vec<_>>(),
        ))
    }

    pub fn n(&self) -> usize {
        self.scores.rows()
    }
}

impl LinearOperator for FisherOperator {
    fn dim(&self) -> usize {
        self.scores.cols()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        gram_apply(&self.scores, self.n() as f64, v)
    }
}

/// Sample covariance of the `xi` vectors, centered at their own mean.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceOperator {
    centered: DenseMatrix,
}

impl CovarianceOperator {
    /// One `xi` vector per row; needs at least two rows.
    pub fn from_rows(xi: &DenseMatrix) -> Result<Self> {
        let n = xi.rows();
        if n < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: n });
        }
        let d = xi.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            axpy(1.0 / n as f64, xi.row(i), &mut mean);
        }
        let mut centered = xi.clone();
        for i in 0..n {
            axpy(-1.0, &mean, centered.row_mut(i));
        }
        Ok(Self { centered })
    }

    pub fn from_samples(samples: &[ScoreSample]) -> Result<Self> {
        Self::from_rows(&DenseMatrix::from_rows(
            &samples.iter().map(|s| s.xi.clone()).collect::<Vec<_>>(),
        ))
    }

    pub fn n(&self) -> usize {
        self.centered.rows()
    }
}

impl LinearOperator for CovarianceOperator {
    fn dim(&self) -> usize {
        self.centered.cols()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        gram_apply(&self.centered, (self.n() - 1) as f64, v)
    }
}

/// `M = F + coef * Sigma` with `coef = c R_n^2`. Applies as `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegionOperator {
    pub fisher: FisherOperator,
    pub covariance: CovarianceOperator,
    pub coef: f64,
}

impl TrustRegionOperator {
    pub fn from_samples(samples: &[ScoreSample], coef: f64) -> Result<Self> {
        Ok(Self {
            fisher: FisherOperator::from_samples(samples)?,
            covariance: CovarianceOperator::from_samples(samples)?,
            coef,
        })
    }

    pub fn n(&self) -> usize {
        self.fisher.n()
    }

    /// `(F v, Sigma v, M v)`
    pub fn products(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let fv = self.fisher.apply(v);
        let sv = self.covariance.apply(v);
        let mv = if self.coef == 0.0 {
            fv.clone()
        } else {
            fv.iter().zip(&sv).map(|(f, s)| f + self.coef * s).collect()
        };
        (fv, sv, mv)
    }
}

impl LinearOperator for TrustRegionOperator {
    fn dim(&self) -> usize {
        self.fisher.dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.products(v).2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_monte_carlo_case() {
        let adv = gae_from_values(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[false, true], 1.0, 1.0);
        assert_eq!(adv, vec![2.0, 1.0]);
    }

    #[test]
    fn gae_one_step_td() {
        let r = [0.5, -1.0, 2.0];
        let adv = gae_from_values(&r, &[0.0; 3], &[0.0; 3], &[false, false, true], 0.9, 0.0);
        assert_eq!(adv, r.to_vec());
    }

    #[test]
    fn gae_truncated_tail_bootstraps() {
        // single non-done step: A = r + gamma V(s') - V(s)
        let adv = gae_from_values(&[1.0], &[0.5], &[2.0], &[false], 0.9, 0.97);
        assert!((adv[0] - (1.0 + 0.9 * 2.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn standardize_examples() {
        let out = standardize_advantages(&[1.0, 2.0, 3.0]);
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12);
        }
        let again = standardize_advantages(&out);
        for (a, b) in again.iter().zip(&out) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(standardize_advantages(&[5.0, 5.0, 5.0]), vec![0.0; 3]);
    }

    fn linear_vf(w: f64, b: f64) -> ValueFunction {
        ValueFunction::with_params(MlpLayout::new(vec![1, 1]), vec![w, b])
    }

    #[test]
    fn first_adam_step_is_sign_step() {
        let mut vf = linear_vf(0.3, -0.2);
        // prediction 0.3*2 - 0.2 = 0.4, target 1.0 -> gradient negative on both
        fit_value(&mut vf, &[vec![2.0]], &[1.0], 0.001, 1).unwrap();
        assert!((vf.params()[0] - 0.301).abs() < 1e-6);
        assert!((vf.params()[1] - -0.199).abs() < 1e-6);
        assert_eq!(vf.steps(), 1);
    }

    #[test]
    fn fit_at_optimum_is_noop() {
        let mut vf = linear_vf(0.3, -0.2);
        let states = vec![vec![1.0], vec![-2.0]];
        let targets: Vec<f64> = states.iter().map(|s| vf.predict(s)).collect();
        fit_value(&mut vf, &states, &targets, 0.001, 5).unwrap();
        assert_eq!(vf.params(), &[0.3, -0.2]);
    }

    #[test]
    fn fit_rejects_nonfinite_and_empty() {
        let mut vf = linear_vf(0.0, 0.0);
        assert!(fit_value(&mut vf, &[vec![1.0]], &[f64::NAN], 0.001, 1).is_err());
        assert!(fit_value(&mut vf, &[], &[], 0.001, 1).is_err());
    }

    #[test]
    fn fit_reduces_loss_over_many_steps() {
        let mut vf = ValueFunction::new(2, &[8], &mut SeededRng::new(0, 6));
        let states: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.1).sin(), (i as f64 * 0.3).cos()]).collect();
        let targets: Vec<f64> = states.iter().map(|s| 2.0 * s[0] - s[1]).collect();
        let before = vf.loss(&states, &targets);
        fit_value(&mut vf, &states, &targets, 0.01, 300).unwrap();
        assert!(vf.loss(&states, &targets) < 0.1 * before);
    }

    #[test]
    fn value_net_starts_at_zero() {
        let vf = ValueFunction::new(3, &[8, 8], &mut SeededRng::new(1, 6));
        assert_eq!(vf.predict(&[0.4, -1.0, 3.0]), 0.0);
    }

    #[test]
    fn gradient_two_point_example() {
        let samples = vec![
            ScoreSample::new(vec![2.0, 0.0], 1.0),
            ScoreSample::new(vec![0.0, 2.0], 1.0),
        ];
        let g = GradientEstimate::from_samples(&samples).unwrap();
        assert_eq!(g.g_hat, vec![1.0, 1.0]);
        for s in &g.per_dim_stderr {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_samples_shrink_stderr() {
        let samples: Vec<ScoreSample> = (0..7)
            .map(|i| ScoreSample::new(vec![i as f64, (i * i) as f64 * 0.1], 0.5 - i as f64 * 0.2))
            .collect();
        let doubled: Vec<ScoreSample> = samples.iter().chain(&samples).cloned().collect();
        let (a, b) = (
            GradientEstimate::from_samples(&samples).unwrap(),
            GradientEstimate::from_samples(&doubled).unwrap(),
        );
        for j in 0..2 {
            assert!((a.g_hat[j] - b.g_hat[j]).abs() < 1e-12);
            // population-vs-sample std correction for N -> 2N
            let ratio = a.per_dim_stderr[j] / b.per_dim_stderr[j];
            let expected = 2f64.sqrt() * ((2.0 * 7.0 - 1.0_f64) / (2.0 * (7.0 - 1.0))).sqrt();
            assert!((ratio - expected).abs() < 1e-10, "{ratio} vs {expected}");
        }
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let samples = vec![ScoreSample::new(vec![3.0, -1.0], 0.0); 4];
        assert_eq!(GradientEstimate::from_samples(&samples).unwrap().g_hat, vec![0.0, 0.0]);
    }

    #[test]
    fn subsample_sizes() {
        let samples: Vec<ScoreSample> = (0..1000).map(|i| ScoreSample::new(vec![i as f64], 1.0)).collect();
        let mut rng = SeededRng::new(0, 4);
        assert_eq!(subsample(&samples, 1, &mut rng).unwrap(), samples);
        let sub = subsample(&samples, 10, &mut rng).unwrap();
        assert_eq!(sub.len(), 100);
        assert!(sub.windows(2).all(|w| w[0].score[0] < w[1].score[0]));
        assert_eq!(subsample(&samples, 5000, &mut rng).unwrap().len(), 1);
        assert_eq!(subsample(&samples[..7], 3, &mut rng).unwrap().len(), 3);
        assert!(subsample(&samples, 0, &mut rng).is_err());
        let a = subsample(&samples, 10, &mut SeededRng::new(9, 4)).unwrap();
        let b = subsample(&samples, 10, &mut SeededRng::new(9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_one_fisher() {
        let f = FisherOperator::from_rows(DenseMatrix::from_rows(&[vec![1.0, 2.0]])).unwrap();
        assert_eq!(f.apply(&[1.0, 0.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn covariance_needs_two_samples() {
        let one = [ScoreSample::new(vec![1.0, 2.0], 1.0)];
        assert!(matches!(
            CovarianceOperator::from_samples(&one),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn zero_coefficient_is_fisher() {
        let samples: Vec<ScoreSample> = (0..5)
            .map(|i| ScoreSample::new(vec![i as f64, 1.0 - i as f64, 0.5], i as f64 - 2.0))
            .collect();
        let op = TrustRegionOperator::from_samples(&samples, 0.0).unwrap();
        let v = [0.3, -0.7, 1.1];
        assert_eq!(op.apply(&v), op.fisher.apply(&v));
    }
}
