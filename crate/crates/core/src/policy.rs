//! Diagonal-Gaussian policy with an MLP mean and state-independent
//! log standard deviations.
//!
//! Parameter vector layout (stable, documented for checkpoints): mean
//! network layer by layer, each layer's weights (row-major `out x in`)
//! followed by its biases; the per-action `log_std` entries come last.

use std::io::{BufRead, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{all_finite, SeededRng};
use crate::mlp::MlpLayout;
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Network shape of a policy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyArch {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
}

impl PolicyArch {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            obs_dim,
            action_dim,
            hidden,
        }
    }

    fn layout(&self) -> MlpLayout {
        let mut sizes = vec![self.obs_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.action_dim);
        MlpLayout::new(sizes)
    }

    /// Total parameter count `d`.
    pub fn num_params(&self) -> usize {
        self.layout().num_params() + self.action_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    arch: PolicyArch,
    layout: MlpLayout,
    theta: Vec<f64>,
}

/// Frozen copy of the parameters at the start of an iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot(PolicyParams);

impl PolicySnapshot {
    pub fn capture(params: &PolicyParams) -> Self {
        Self(params.clone())
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

impl PolicyParams {
    /// Orthogonal hidden init, output layer scaled by 0.01, `log_std = 0`.
    pub fn init(arch: PolicyArch, rng: &mut SeededRng) -> Self {
        let layout = arch.layout();
        let mut theta = layout.init(rng, 0.01);
        theta.extend(std::iter::repeat_n(0.0, arch.action_dim));
        Self { arch, layout, theta }
    }

    pub fn from_flat(arch: PolicyArch, theta: Vec<f64>) -> Result<Self> {
        let layout = arch.layout();
        let d = layout.num_params() + arch.action_dim;
        if theta.len() != d {
            return Err(Error::Dimension(format!(
                "policy with {arch:?} has {d} parameters, got {}",
                theta.len()
            )));
        }
        Ok(Self { arch, layout, theta })
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    fn mean_params(&self) -> &[f64] {
        &self.theta[..self.layout.num_params()]
    }

    pub fn log_std(&self) -> &[f64] {
        &self.theta[self.layout.num_params()..]
    }

    /// `theta + step * direction`, with `log_std` clamped to
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn stepped(&self, direction: &[f64], step: f64) -> Self {
        assert_eq!(direction.len(), self.dim());
        let mut next = self.clone();
        for (t, v) in next.theta.iter_mut().zip(direction) {
            *t += step * v;
        }
        let n = self.layout.num_params();
        for ls in &mut next.theta[n..] {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        next
    }

    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        self.layout.forward(self.mean_params(), obs)
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        let mu = self.mean(obs);
        gaussian_log_prob(&mu, self.log_std(), action)
    }

    /// Draws `a = mu(s) + exp(log_std) * z` and returns it with its log-density.
    pub fn sample_action(&self, obs: &[f64], rng: &mut SeededRng) -> Result<(Vec<f64>, f64)> {
        if obs.len() != self.arch.obs_dim {
            return Err(Error::Dimension(format!(
                "observation has {} entries, policy expects {}",
                obs.len(),
                self.arch.obs_dim
            )));
        }
        let mu = self.mean(obs);
        if !all_finite(&mu) {
            return Err(Error::Diverged(format!("non-finite mean action {mu:?}")));
        }
        let z: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
        Ok(self.action_from_noise(&mu, &z))
    }

    fn action_from_noise(&self, mu: &[f64], z: &[f64]) -> (Vec<f64>, f64) {
        let log_std = self.log_std();
        let action: Vec<f64> = mu
            .iter()
            .zip(log_std)
            .zip(z)
            .map(|((m, ls), z)| m + ls.exp() * z)
            .collect();
        let log_prob = gaussian_log_prob(mu, log_std, &action);
        (action, log_prob)
    }

    /// Gradient of `log pi(action | obs)` with respect to the flat parameters.
    pub fn score(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(obs, action, &mut out);
        out
    }

    /// Writes the score into `out` (overwrites).
    pub fn score_into(&self, obs: &[f64], action: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), self.dim());
        assert_eq!(action.len(), self.arch.action_dim);
        out.iter_mut().for_each(|v| *v = 0.0);
        let n = self.layout.num_params();
        let (mu, trace) = self.layout.forward_trace(self.mean_params(), obs);
        let log_std = self.log_std();
        let mut d_mu = vec![0.0; mu.len()];
        for j in 0..mu.len() {
            let inv_var = (-2.0 * log_std[j]).exp();
            let diff = action[j] - mu[j];
            d_mu[j] = diff * inv_var;
            out[n + j] = diff * diff * inv_var - 1.0;
        }
        self.layout.backward(self.mean_params(), &trace, &d_mu, 1.0, &mut out[..n]);
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let hidden: Vec<String> = self.arch.hidden.iter().map(|h| h.to_string()).collect();
        writeln!(
            w,
            "policy,{},{},{}",
            self.arch.obs_dim,
            self.arch.action_dim,
            hidden.join(",")
        )?;
        for v in &self.theta {
            writeln!(w, "{v:?}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint".into()))??;
        let fields: Vec<&str> = header.split(',').filter(|f| !f.is_empty()).collect();
        if fields.first() != Some(&"policy") || fields.len() < 3 {
            return Err(bad(format!("bad header {header:?}")));
        }
        let dims: Vec<usize> = fields[1..]
            .iter()
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("bad header {header:?}: {e}")))?;
        let arch = PolicyArch::new(dims[0], dims[1], dims[2..].to_vec());
        let mut theta = Vec::with_capacity(arch.num_params());
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            theta.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", i + 2)))?,
            );
        }
        Self::from_flat(arch, theta)
    }
}

fn gaussian_log_prob(mu: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Average over `states` of `KL(pi_old(.|s) || pi_new(.|s))`.
pub fn kl_between(old: &PolicySnapshot, new: &PolicyParams, states: &[Vec<f64>]) -> f64 {
    assert!(!states.is_empty(), "KL needs at least one state");
    let old = old.params();
    let (ls_old, ls_new) = (old.log_std(), new.log_std());
    let total: f64 = states
        .iter()
        .map(|s| {
            let (mu_old, mu_new) = (old.mean(s), new.mean(s));
            (0..mu_old.len())
                .map(|j| {
                    let var_old = (2.0 * ls_old[j]).exp();
                    let var_new = (2.0 * ls_new[j]).exp();
                    let diff = mu_old[j] - mu_new[j];
                    ls_new[j] - ls_old[j] + (var_old + diff * diff) / (2.0 * var_new) - 0.5
                })
                .sum::<f64>()
        })
        .sum();
    total / states.len() as f64
}
