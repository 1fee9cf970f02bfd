//! One-iteration policy updates: TRPO and UA-TRPO.

use crate::envs::RolloutBatch;
use crate::estimation::{ScoreSample, TrustRegionOperator};
use crate::linalg::{conjugate_gradient, dot, gaussian_matrix, norm, DenseMatrix, LinearOperator, SeededRng};
use crate::policy::{kl_between, PolicyParams, PolicySnapshot};
use crate::trust_region::{
    default_num_projections, radius_sq, sketch, EmaSketch, Projection, RadiusParams, SubspaceModel,
};
use crate::{Error, Result};
use crate::linalg::DEFAULT_RANK_TOL;

#[derive(Clone, Debug, PartialEq)]
pub struct TrpoConfig {
    pub delta_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            delta_kl: 0.01,
            cg_iters: 20,
            cg_damping: 0.1,
            backtrack_ratio: 0.5,
            max_backtracks: 10,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_kl > 0.0) {
            return Err(Error::Config(format!("delta_kl must be positive, got {}", self.delta_kl)));
        }
        if !(self.cg_damping >= 0.0) {
            return Err(Error::Config(format!("cg_damping must be >= 0, got {}", self.cg_damping)));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(Error::Config(format!(
                "backtrack_ratio must be in (0,1), got {}",
                self.backtrack_ratio
            )));
        }
        if self.max_backtracks == 0 {
            return Err(Error::Config("max_backtracks must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UaTrpoConfig {
    pub delta_ua: f64,
    pub c: f64,
    pub alpha: f64,
    /// Number of random projections; `None` picks `min(200, ceil(d/4), d)`.
    pub m: Option<usize>,
    pub beta: f64,
    pub use_ema: bool,
}

impl Default for UaTrpoConfig {
    fn default() -> Self {
        Self {
            delta_ua: 0.03,
            c: 6e-4,
            alpha: 0.05,
            m: None,
            beta: 0.9,
            use_ema: true,
        }
    }
}

impl UaTrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_ua > 0.0) {
            return Err(Error::Config(format!("delta_ua must be positive, got {}", self.delta_ua)));
        }
        if !(self.c >= 0.0) {
            return Err(Error::Config(format!("c must be >= 0, got {}", self.c)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.m == Some(0) {
            return Err(Error::Config("m must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0,1), got {}", self.beta)));
        }
        Ok(())
    }

    pub fn num_projections(&self, d: usize) -> usize {
        self.m.unwrap_or_else(|| default_num_projections(d))
    }
}

/// Outcome of one proposed update.
///
/// `est_kl` and `actual_kl` describe the full proposed step, before any
/// line search; `final_kl` is the KL of the step actually taken.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub direction_norm: f64,
    pub eta: f64,
    /// `0.5 eta^2 v' F v`
    pub est_kl: f64,
    pub actual_kl: f64,
    pub final_kl: f64,
    pub surrogate_improvement: f64,
    pub accepted: bool,
    pub ls_steps: usize,
    pub rn2: f64,
    pub ell: usize,
    /// `0.5 dtheta' M dtheta` for the parameter change actually applied
    /// (UA-TRPO only).
    pub trust_region_quad: f64,
}

impl StepReport {
    /// Whether a step was proposed at all (skipped updates have `eta = 0`).
    pub fn proposed(&self) -> bool {
        self.eta > 0.0
    }
}

/// Per-step data needed to score a candidate policy.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl UpdateBatch {
    pub fn from_rollout(batch: &RolloutBatch, advantages: &[f64]) -> Result<Self> {
        if batch.n_steps() != advantages.len() {
            return Err(Error::Dimension(format!(
                "{} advantages for {} steps",
                advantages.len(),
                batch.n_steps()
            )));
        }
        Ok(Self {
            obs: batch.transitions().map(|t| t.obs.clone()).collect(),
            actions: batch.transitions().map(|t| t.action.clone()).collect(),
            old_log_probs: batch.transitions().map(|t| t.log_prob).collect(),
            advantages: advantages.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Importance-weighted surrogate `(1/N) sum_i exp(log pi(a_i|s_i) - log pi_k(a_i|s_i)) A_i`.
pub fn surrogate(params: &PolicyParams, batch: &UpdateBatch) -> f64 {
    let total: f64 = (0..batch.len())
        .map(|i| {
            let ratio = (params.log_prob(&batch.obs[i], &batch.actions[i]) - batch.old_log_probs[i]).exp();
            ratio * batch.advantages[i]
        })
        .sum();
    total / batch.len() as f64
}

/// CG solution of `(F + damping I) v = g`.
pub fn trpo_direction<F: LinearOperator + ?Sized>(fisher: &F, g: &[f64], cfg: &TrpoConfig) -> Vec<f64> {
    conjugate_gradient(fisher, g, cfg.cg_iters, cfg.cg_damping)
}

fn noop(params: &PolicyParams, accepted: bool) -> (PolicyParams, StepReport) {
    (
        params.clone(),
        StepReport {
            accepted,
            ..StepReport::default()
        },
    )
}

/// TRPO: natural-gradient step of size `sqrt(2 delta_kl / v'Fv)` followed by
/// backtracking until the surrogate improves and the KL bound holds.
pub fn trpo_step<F: LinearOperator + ?Sized>(
    params: &PolicyParams,
    batch: &UpdateBatch,
    g: &[f64],
    fisher: &F,
    cfg: &TrpoConfig,
) -> Result<(PolicyParams, StepReport)> {
    check_inputs(params, batch, g, fisher.dim())?;
    if g.iter().all(|x| *x == 0.0) {
        return Ok(noop(params, true));
    }
    let v = trpo_direction(fisher, g, cfg);
    let vfv = fisher.quadratic_form(&v);
    if !(vfv > 0.0 && vfv.is_finite()) {
        return Ok(noop(params, false));
    }
    let eta = (2.0 * cfg.delta_kl / vfv).sqrt();
    let snapshot = PolicySnapshot::capture(params);
    let base = surrogate(params, batch);
    let mut report = StepReport {
        direction_norm: norm(&v),
        eta,
        est_kl: 0.5 * eta * eta * vfv,
        ..StepReport::default()
    };
    let mut fraction = 1.0;
    for shrink in 0..cfg.max_backtracks {
        let candidate = params.stepped(&v, eta * fraction);
        let kl = kl_between(&snapshot, &candidate, &batch.obs);
        let improvement = surrogate(&candidate, batch) - base;
        if shrink == 0 {
            report.actual_kl = kl;
        }
        if improvement > 0.0 && kl <= cfg.delta_kl {
            report.final_kl = kl;
            report.surrogate_improvement = improvement;
            report.accepted = true;
            report.ls_steps = shrink;
            return Ok((candidate, report));
        }
        fraction *= cfg.backtrack_ratio;
    }
    report.ls_steps = cfg.max_backtracks;
    Ok((params.clone(), report))
}

fn check_inputs(params: &PolicyParams, batch: &UpdateBatch, g: &[f64], op_dim: usize) -> Result<()> {
    if g.len() != params.dim() || op_dim != params.dim() {
        return Err(Error::Dimension(format!(
            "policy has {} parameters, gradient {}, operator {}",
            params.dim(),
            g.len(),
            op_dim
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty update batch".into()));
    }
    Ok(())
}

/// Per-run UA-TRPO state: the fixed projection matrix and EMA sketches.
#[derive(Clone, Debug, PartialEq)]
pub struct UaTrpoState {
    pub omega: DenseMatrix,
    pub ema: Option<EmaSketch>,
}

impl UaTrpoState {
    /// Draws the `d x m` Gaussian projection matrix once for the whole run.
    pub fn new(d: usize, cfg: &UaTrpoConfig, rng: &mut SeededRng) -> Result<Self> {
        let m = cfg.num_projections(d);
        let omega = gaussian_matrix(rng, d, m)?;
        let ema = if cfg.use_ema {
            Some(EmaSketch::new(d, m, cfg.beta)?)
        } else {
            None
        };
        Ok(Self { omega, ema })
    }
}

/// UA-TRPO: `v = M^+ g` on the sketched subspace, step size
/// `sqrt(2 delta_ua / v'Mv)`, no line search.
///
/// `samples` are the (subsampled) score samples that define `F`, `Sigma`
/// and the sample count `n` of the confidence radius.
pub fn ua_trpo_step(
    params: &PolicyParams,
    batch: &UpdateBatch,
    g: &[f64],
    samples: &[ScoreSample],
    state: &mut UaTrpoState,
    cfg: &UaTrpoConfig,
) -> Result<(PolicyParams, StepReport)> {
    let d = params.dim();
    let rn2 = radius_sq(RadiusParams::new(cfg.alpha, samples.len().max(1), d)?);
    let coef = cfg.c * rn2;
    let op = TrustRegionOperator::from_samples(samples, coef)?;
    check_inputs(params, batch, g, op.dim())?;

    let (y, projection) = match &mut state.ema {
        Some(ema) => {
            let f_omega = sketch(&op.fisher, &state.omega);
            let s_omega = if coef == 0.0 {
                DenseMatrix::zeros(d, state.omega.cols())
            } else {
                sketch(&op.covariance, &state.omega)
            };
            let y = ema.update(&f_omega, &s_omega, coef)?;
            (y, Projection::LeastSquares { omega: &state.omega })
        }
        None => (sketch(&op, &state.omega), Projection::Operator),
    };
    let skipped = |ell| {
        let (p, mut r) = noop(params, false);
        r.rn2 = rn2;
        r.ell = ell;
        (p, r)
    };
    let model = match SubspaceModel::build(&y, &op, projection, DEFAULT_RANK_TOL) {
        Ok(model) => model,
        Err(Error::NoSubspace) => return Ok(skipped(0)),
        Err(e) => return Err(e),
    };
    let v = model.direction(g);
    let (fv, _, mv) = op.products(&v);
    let vmv = dot(&v, &mv);
    if !(vmv > 0.0 && vmv.is_finite()) {
        return Ok(skipped(model.ell()));
    }
    let eta = (2.0 * cfg.delta_ua / vmv).sqrt();
    let candidate = params.stepped(&v, eta);
    let snapshot = PolicySnapshot::capture(params);
    let kl = kl_between(&snapshot, &candidate, &batch.obs);
    let dtheta: Vec<f64> = candidate.flat().iter().zip(params.flat()).map(|(a, b)| a - b).collect();
    let report = StepReport {
        direction_norm: norm(&v),
        eta,
        est_kl: 0.5 * eta * eta * dot(&v, &fv),
        actual_kl: kl,
        final_kl: kl,
        surrogate_improvement: surrogate(&candidate, batch) - surrogate(params, batch),
        accepted: true,
        ls_steps: 0,
        rn2,
        ell: model.ell(),
        trust_region_quad: 0.5 * op.quadratic_form(&dtheta),
    };
    Ok((candidate, report))
}
