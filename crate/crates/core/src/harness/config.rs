//! Experiment configuration and its flat `key = value` text form.

use std::fmt::Display;
use std::str::FromStr;

use crate::envs::ENV_NAMES;
use crate::optimizers::{TrpoConfig, UaTrpoConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Trpo,
    UaTrpo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Trpo => "trpo",
            Algorithm::UaTrpo => "ua_trpo",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trpo" => Ok(Algorithm::Trpo),
            "ua_trpo" => Ok(Algorithm::UaTrpo),
            other => Err(Error::Config(format!("unknown algo {other:?} (expected trpo or ua_trpo)"))),
        }
    }
}

impl Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: String,
    pub algo: Algorithm,
    pub total_steps: usize,
    pub batch_steps: usize,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub adversarial_noise: bool,
    pub gamma: f64,
    pub lambda: f64,
    pub vf_step_size: f64,
    pub vf_iters: usize,
    pub hidden: Vec<usize>,
    pub subsample_factor: usize,
    /// Multiplies every reward; 0 gives a reward-free variant of the env.
    pub reward_scale: f64,
    pub trpo: TrpoConfig,
    pub ua: UaTrpoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "lqr".into(),
            algo: Algorithm::UaTrpo,
            total_steps: 50_000,
            batch_steps: 1000,
            seeds: (0..20).collect(),
            eval_episodes: 5,
            adversarial_noise: false,
            gamma: 0.995,
            lambda: 0.97,
            vf_step_size: 0.001,
            vf_iters: 5,
            hidden: vec![8, 8],
            subsample_factor: 10,
            reward_scale: 1.0,
            trpo: TrpoConfig::default(),
            ua: UaTrpoConfig::default(),
        }
    }
}

/// Every key accepted by [`ExperimentConfig::set`], in echo order.
pub const CONFIG_KEYS: [&str; 25] = [
    "env",
    "algo",
    "total_steps",
    "batch_steps",
    "seed_list",
    "eval_episodes",
    "adversarial_noise",
    "gamma",
    "lambda",
    "vf_step_size",
    "vf_iters",
    "hidden",
    "subsample_factor",
    "reward_scale",
    "delta_kl",
    "cg_iters",
    "cg_damping",
    "backtrack_ratio",
    "max_backtracks",
    "delta_ua",
    "c",
    "alpha",
    "m",
    "beta",
    "use_ema",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "env" => self.env = value.to_string(),
            "algo" => self.algo = value.parse()?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "batch_steps" => self.batch_steps = parse(key, value)?,
            "seed_list" => self.seeds = parse_list(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "adversarial_noise" => self.adversarial_noise = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "vf_step_size" => self.vf_step_size = parse(key, value)?,
            "vf_iters" => self.vf_iters = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "subsample_factor" => self.subsample_factor = parse(key, value)?,
            "reward_scale" => self.reward_scale = parse(key, value)?,
            "delta_kl" => self.trpo.delta_kl = parse(key, value)?,
            "cg_iters" => self.trpo.cg_iters = parse(key, value)?,
            "cg_damping" => self.trpo.cg_damping = parse(key, value)?,
            "backtrack_ratio" => self.trpo.backtrack_ratio = parse(key, value)?,
            "max_backtracks" => self.trpo.max_backtracks = parse(key, value)?,
            "delta_ua" => self.ua.delta_ua = parse(key, value)?,
            "c" => self.ua.c = parse(key, value)?,
            "alpha" => self.ua.alpha = parse(key, value)?,
            "m" => {
                self.ua.m = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "beta" => self.ua.beta = parse(key, value)?,
            "use_ema" => self.ua.use_ema = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// All settings as `(key, value)` pairs, in [`CONFIG_KEYS`] order.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.env.clone(),
            self.algo.to_string(),
            self.total_steps.to_string(),
            self.batch_steps.to_string(),
            join(&self.seeds),
            self.eval_episodes.to_string(),
            self.adversarial_noise.to_string(),
            self.gamma.to_string(),
            self.lambda.to_string(),
            self.vf_step_size.to_string(),
            self.vf_iters.to_string(),
            join(&self.hidden),
            self.subsample_factor.to_string(),
            self.reward_scale.to_string(),
            self.trpo.delta_kl.to_string(),
            self.trpo.cg_iters.to_string(),
            self.trpo.cg_damping.to_string(),
            self.trpo.backtrack_ratio.to_string(),
            self.trpo.max_backtracks.to_string(),
            self.ua.delta_ua.to_string(),
            self.ua.c.to_string(),
            self.ua.alpha.to_string(),
            self.ua.m.map_or_else(|| "auto".to_string(), |m| m.to_string()),
            self.ua.beta.to_string(),
            self.ua.use_ema.to_string(),
        ];
        CONFIG_KEYS.into_iter().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies a `key = value` file on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn num_iterations(&self) -> usize {
        self.total_steps / self.batch_steps.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return fail(format!("unknown env {:?} (expected one of {ENV_NAMES:?})", self.env));
        }
        if self.batch_steps == 0 {
            return fail("batch_steps must be >= 1".into());
        }
        if self.total_steps < self.batch_steps {
            return fail(format!(
                "total_steps ({}) must be at least batch_steps ({})",
                self.total_steps, self.batch_steps
            ));
        }
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        if self.subsample_factor == 0 {
            return fail("subsample_factor must be >= 1".into());
        }
        if self.batch_steps.div_ceil(self.subsample_factor) < 2 {
            return fail(format!(
                "batch_steps / subsample_factor leaves fewer than 2 samples ({} / {})",
                self.batch_steps, self.subsample_factor
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("gamma and lambda must be in [0,1] ({}, {})", self.gamma, self.lambda));
        }
        if !(self.vf_step_size > 0.0) {
            return fail(format!("vf_step_size must be positive, got {}", self.vf_step_size));
        }
        if self.hidden.contains(&0) {
            return fail(format!("hidden layer sizes must be positive, got {:?}", self.hidden));
        }
        if !self.reward_scale.is_finite() {
            return fail(format!("reward_scale must be finite, got {}", self.reward_scale));
        }
        self.trpo.validate()?;
        self.ua.validate()
    }
}
