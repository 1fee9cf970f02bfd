//! Multi-seed training runs, metrics, and run-directory artifacts.
//!
//! A run directory holds `config.echo`, one `seed_<k>.csv` per seed,
//! `summary.csv`, the final policy of every seed (`policy_seed_<k>.txt`)
//! and, after `report`, a `plots/` directory.

mod config;
mod metrics;
mod plots;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{Algorithm, ExperimentConfig, CONFIG_KEYS};
pub use metrics::{
    adversarial_noise, cvar, kappa_grid, kl_ratio, kl_ratio_histogram, read_csv, write_csv_header, IterRecord,
    KlHistogram, ParsedCsv, CSV_HEADER, KL_RATIO_EDGES,
};
pub use plots::{emit_plots, render_cvar_vs_kappa, render_kl_histogram, render_mean_se, render_cvar_over_training, LabeledRuns};

use crate::envs::{collect, evaluate, make_env, Environment, ObsNormalizer, RewardScaled};
use crate::estimation::{
    fit_value, gae, policy_gradient, standardize_advantages, subsample, FisherOperator, ValueFunction,
};
use crate::linalg::{SeededRng, Stream};
use crate::optimizers::{trpo_step, ua_trpo_step, UaTrpoState, UpdateBatch};
use crate::policy::{PolicyArch, PolicyParams, PolicySnapshot};
use crate::{Error, Result};

/// Risk level of the per-checkpoint `cvar_eval_return` column.
pub const EVAL_CVAR_KAPPA: f64 = 0.2;

/// Everything recorded for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    /// Mean evaluation return of the initial policy.
    pub initial_return: f64,
    pub iters: Vec<IterRecord>,
    /// Why the run stopped early, if it did.
    pub failure: Option<String>,
}

impl RunRecord {
    /// Last recorded evaluation return (carried forward after a failure).
    pub fn final_return(&self) -> f64 {
        self.iters.last().map_or(self.initial_return, |r| r.mean_return)
    }

    /// Evaluation return after iteration `i`, carrying the last value
    /// forward past the end of the record.
    pub fn return_at(&self, i: usize) -> f64 {
        match self.iters.get(i) {
            Some(r) => r.mean_return,
            None => self.final_return(),
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

fn build_env(cfg: &ExperimentConfig) -> Result<Box<dyn Environment>> {
    let env = make_env(&cfg.env)?;
    Ok(if cfg.reward_scale == 1.0 {
        env
    } else {
        Box::new(RewardScaled::new(env, cfg.reward_scale))
    })
}

fn eval_returns(
    policy: &PolicyParams,
    env: &dyn Environment,
    normalizer: &ObsNormalizer,
    cfg: &ExperimentConfig,
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    let returns = evaluate(policy, env, normalizer, cfg.eval_episodes.max(1), rng)?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Diverged(format!("evaluation return {mean}")));
    }
    Ok((mean, cvar(&returns, EVAL_CVAR_KAPPA)?))
}

enum Updater {
    Trpo,
    UaTrpo(UaTrpoState),
}

/// Trains one seed. Rows are also written to `sink` as they are produced.
///
/// Errors raised inside the training loop (divergence, numerical failure)
/// end the run and are stored in [`RunRecord::failure`]; only setup
/// errors are returned as `Err`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    mut sink: Option<&mut dyn Write>,
) -> Result<(RunRecord, PolicyParams)> {
    cfg.validate()?;
    let env = build_env(cfg)?;
    let spec = env.spec().clone();
    let arch = PolicyArch::new(spec.state_dim, spec.action_dim, cfg.hidden.clone());
    let mut policy = PolicyParams::init(arch, &mut SeededRng::for_stream(seed, Stream::Init));
    let mut vf = ValueFunction::new(
        spec.state_dim,
        &cfg.hidden,
        &mut SeededRng::for_stream(seed, Stream::ValueInit),
    );
    let mut normalizer = ObsNormalizer::new(spec.state_dim);
    let mut rollout_rng = SeededRng::for_stream(seed, Stream::Rollout);
    let mut sub_rng = SeededRng::for_stream(seed, Stream::Subsample);
    let mut eval_rng = SeededRng::for_stream(seed, Stream::Eval);
    let mut updater = match cfg.algo {
        Algorithm::Trpo => Updater::Trpo,
        Algorithm::UaTrpo => Updater::UaTrpo(UaTrpoState::new(
            policy.dim(),
            &cfg.ua,
            &mut SeededRng::for_stream(seed, Stream::Omega),
        )?),
    };
    if let Some(w) = sink.as_deref_mut() {
        write_csv_header(w)?;
    }

    let (initial_return, _) = eval_returns(&policy, env.as_ref(), &normalizer, cfg, &mut eval_rng)?;
    let mut record = RunRecord {
        seed,
        initial_return,
        iters: Vec::with_capacity(cfg.num_iterations()),
        failure: None,
    };

    for iter in 0..cfg.num_iterations() {
        let outcome = (|| -> Result<IterRecord> {
            let batch = collect(&policy, env.as_ref(), &mut normalizer, cfg.batch_steps, &mut rollout_rng)?;
            let (advantages, targets) = gae(&batch, &vf, cfg.gamma, cfg.lambda);
            let advantages = standardize_advantages(&advantages);
            let observations = batch.observations();
            fit_value(&mut vf, &observations, &targets, cfg.vf_step_size, cfg.vf_iters)?;

            let snapshot = PolicySnapshot::capture(&policy);
            let (grad, samples) = policy_gradient(&batch, &snapshot, &advantages)?;
            let sub = subsample(&samples, cfg.subsample_factor, &mut sub_rng)?;
            let g = if cfg.adversarial_noise {
                adversarial_noise(&grad)
            } else {
                grad.g_hat.clone()
            };
            let update = UpdateBatch::from_rollout(&batch, &advantages)?;
            let (next, report) = match &mut updater {
                Updater::Trpo => {
                    let fisher = FisherOperator::from_samples(&sub)?;
                    trpo_step(&policy, &update, &g, &fisher, &cfg.trpo)?
                }
                Updater::UaTrpo(state) => ua_trpo_step(&policy, &update, &g, &sub, state, &cfg.ua)?,
            };
            if !crate::linalg::all_finite(next.flat()) {
                return Err(Error::Diverged("non-finite policy parameters".into()));
            }
            policy = next;
            normalizer.commit();

            let (mean_return, cvar_eval_return) =
                eval_returns(&policy, env.as_ref(), &normalizer, cfg, &mut eval_rng)?;
            Ok(IterRecord {
                seed,
                iter,
                env_steps: (iter + 1) * cfg.batch_steps,
                mean_return,
                cvar_eval_return,
                report,
            })
        })();
        match outcome {
            Ok(row) => {
                if let Some(w) = sink.as_deref_mut() {
                    writeln!(w, "{}", row.to_csv_row())?;
                }
                record.iters.push(row);
            }
            Err(e) => {
                log::warn!("seed {seed}: run failed at iteration {iter}: {e}");
                record.failure = Some(format!("iteration {iter}: {e}"));
                break;
            }
        }
    }
    if let Some(w) = sink {
        w.flush()?;
    }
    Ok((record, policy))
}

/// Trains every seed, `jobs` at a time (0 = all cores).
///
/// With `out_dir`, each seed streams its CSV to `seed_<k>.csv` and writes
/// `policy_seed_<k>.txt` at the end.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, jobs: usize) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| -> Result<RunRecord> {
                match out_dir {
                    Some(dir) => {
                        let mut csv = BufWriter::new(File::create(seed_csv_path(dir, seed))?);
                        let (record, policy) = run_seed(cfg, seed, Some(&mut csv))?;
                        let ckpt = BufWriter::new(File::create(dir.join(format!("policy_seed_{seed}.txt")))?);
                        policy.write_checkpoint(ckpt)?;
                        Ok(record)
                    }
                    None => Ok(run_seed(cfg, seed, None)?.0),
                }
            })
            .collect()
    })
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

/// Long-format summary: `label,kind,key,value` with one `final_return`
/// row per seed and one `cvar` row per kappa level.
pub fn summary_csv(groups: &[LabeledRuns]) -> Result<String> {
    let mut out = String::from("label,kind,key,value\n");
    for group in groups {
        if group.runs.is_empty() {
            continue;
        }
        let finals: Vec<f64> = group.runs.iter().map(RunRecord::final_return).collect();
        for run in &group.runs {
            out.push_str(&format!("{},final_return,{},{:?}\n", group.label, run.seed, run.final_return()));
        }
        for kappa in kappa_grid() {
            out.push_str(&format!("{},cvar,{kappa},{:?}\n", group.label, cvar(&finals, kappa)?));
        }
    }
    Ok(out)
}

/// Writes `config.echo`, `summary.csv` (the per-seed files are produced by
/// [`run_experiment`]).
pub fn write_run_summary(dir: &Path, cfg: &ExperimentConfig, runs: &[RunRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.echo"), cfg.to_text())?;
    let group = LabeledRuns {
        label: cfg.algo.to_string(),
        runs: runs.to_vec(),
    };
    fs::write(dir.join("summary.csv"), summary_csv(&[group])?)?;
    Ok(())
}

/// Loads every `seed_<k>.csv` of a run directory. Malformed rows are
/// skipped with a warning; seeds without any valid row are dropped.
pub fn load_run_dir(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(seed) = seed {
            paths.push((seed, path));
        }
    }
    paths.sort();
    let mut runs = Vec::new();
    for (seed, path) in paths {
        let parsed = match read_csv(std::io::BufReader::new(File::open(&path)?)) {
            Ok(parsed) => parsed,
            Err(e) => {
                log::warn!("{}: {e}; skipping file", path.display());
                continue;
            }
        };
        for msg in &parsed.skipped {
            log::warn!("{}: skipping {msg}", path.display());
        }
        if parsed.rows.is_empty() {
            continue;
        }
        runs.push(RunRecord {
            seed,
            initial_return: parsed.rows[0].mean_return,
            iters: parsed.rows,
            failure: None,
        });
    }
    Ok(runs)
}
