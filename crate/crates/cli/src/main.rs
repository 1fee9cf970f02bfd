use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use uatrpo::harness::{
    emit_plots, load_run_dir, run_experiment, summary_csv, write_run_summary, ExperimentConfig, LabeledRuns,
};
use uatrpo::selftest::{self, Fault, SelftestOptions};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "uatrpo", version, about = "Train and compare TRPO and uncertainty-aware TRPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over a set of seeds.
    Train(TrainArgs),
    /// Merge completed run directories into a summary and plots.
    Report(ReportArgs),
    /// Run the fast numerical self-checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for seeds (default: all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    /// Train the single seed K.
    #[arg(long, value_name = "K", conflicts_with_all = ["seeds", "seed_list"])]
    seed: Option<u64>,
    /// Train seeds 0..N.
    #[arg(long, value_name = "N", conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long)]
    seed_list: Option<String>,
    /// Total environment steps per seed.
    #[arg(long)]
    steps: Option<String>,
    /// Environment steps per policy update.
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    adversarial_noise: bool,
    #[arg(long)]
    eval_episodes: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    vf_step_size: Option<String>,
    #[arg(long)]
    vf_iters: Option<String>,
    /// Comma-separated hidden layer sizes.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    subsample_factor: Option<String>,
    #[arg(long)]
    reward_scale: Option<String>,
    #[arg(long)]
    delta_kl: Option<String>,
    #[arg(long)]
    cg_iters: Option<String>,
    #[arg(long)]
    cg_damping: Option<String>,
    #[arg(long)]
    backtrack_ratio: Option<String>,
    #[arg(long)]
    max_backtracks: Option<String>,
    #[arg(long)]
    delta_ua: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Number of random projections, or `auto`.
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    use_ema: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut kv: Vec<(&'static str, Option<String>)> = vec![
            ("env", self.env.clone()),
            ("algo", self.algo.clone()),
            ("seed_list", self.seed_list.clone()),
            ("total_steps", self.steps.clone()),
            ("batch_steps", self.batch.clone()),
            ("eval_episodes", self.eval_episodes.clone()),
            ("gamma", self.gamma.clone()),
            ("lambda", self.lambda.clone()),
            ("vf_step_size", self.vf_step_size.clone()),
            ("vf_iters", self.vf_iters.clone()),
            ("hidden", self.hidden.clone()),
            ("subsample_factor", self.subsample_factor.clone()),
            ("reward_scale", self.reward_scale.clone()),
            ("delta_kl", self.delta_kl.clone()),
            ("cg_iters", self.cg_iters.clone()),
            ("cg_damping", self.cg_damping.clone()),
            ("backtrack_ratio", self.backtrack_ratio.clone()),
            ("max_backtracks", self.max_backtracks.clone()),
            ("delta_ua", self.delta_ua.clone()),
            ("c", self.c.clone()),
            ("alpha", self.alpha.clone()),
            ("m", self.m.clone()),
            ("beta", self.beta.clone()),
            ("use_ema", self.use_ema.clone()),
        ];
        if let Some(k) = self.seed {
            kv.push(("seed_list", Some(k.to_string())));
        }
        if let Some(n) = self.seeds {
            let list: Vec<String> = (0..n).map(|s| s.to_string()).collect();
            kv.push(("seed_list", Some(list.join(","))));
        }
        if self.adversarial_noise {
            kv.push(("adversarial_noise", Some("true".into())));
        }
        kv.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect()
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Completed run directories.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Output directory (default: the first run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Halve the Monte Carlo trial counts.
    #[arg(long)]
    quick: bool,
    /// Deliberately perturb a component to confirm the checks catch it.
    #[arg(long, value_name = "COMPONENT", value_parser = ["eig"])]
    inject_fault: Option<String>,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n");
    eprintln!("{}", Cli::command().render_usage());
    ExitCode::from(EXIT_USAGE)
}

fn build_config(args: &TrainArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::default();
    cfg.env.clear();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    for (key, value) in args.overrides() {
        cfg.set(key, &value).map_err(|e| e.to_string())?;
    }
    if cfg.env.is_empty() {
        return Err("no environment given (use --env or an `env` line in --config)".into());
    }
    uatrpo::envs::make_env(&cfg.env).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> ExitCode {
    let cfg = match build_config(&args) {
        Ok(cfg) => cfg,
        Err(msg) => return usage_error(&msg),
    };
    if let Err(e) = fs::create_dir_all(&args.out).and_then(|_| fs::write(args.out.join("config.echo"), cfg.to_text())) {
        eprintln!("error: {}: {e}", args.out.display());
        return ExitCode::from(EXIT_FAILURE);
    }
    let runs = match run_experiment(&cfg, Some(&args.out), args.jobs) {
        Ok(runs) => runs,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let group = LabeledRuns {
        label: cfg.algo.to_string(),
        runs: runs.clone(),
    };
    let written = write_run_summary(&args.out, &cfg, &runs).and_then(|_| emit_plots(&[group], &args.out.join("plots")));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    for run in &runs {
        match &run.failure {
            Some(msg) => println!("seed {}: failed after {} iterations: {msg}", run.seed, run.iters.len()),
            None => println!("seed {}: final return {:.3}", run.seed, run.final_return()),
        }
    }
    if runs.iter().all(|r| r.failed()) {
        eprintln!("error: every seed diverged");
        return ExitCode::from(EXIT_FAILURE);
    }
    ExitCode::SUCCESS
}

/// Label for a run directory: the algorithm from its `config.echo`, falling
/// back to the directory name.
fn run_label(dir: &Path) -> String {
    let fallback = || dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    fs::read_to_string(dir.join("config.echo"))
        .ok()
        .and_then(|text| ExperimentConfig::from_text(&text).ok())
        .map_or_else(fallback, |cfg| format!("{}_{}", cfg.algo, cfg.env))
}

fn cmd_report(args: ReportArgs) -> ExitCode {
    let mut groups: Vec<LabeledRuns> = Vec::new();
    for dir in &args.runs {
        match load_run_dir(dir) {
            Ok(runs) if !runs.is_empty() => {
                let mut label = run_label(dir);
                if groups.iter().any(|g| g.label == label) {
                    label = format!("{label}:{}", dir.display());
                }
                groups.push(LabeledRuns { label, runs });
            }
            Ok(_) => log::warn!("{}: no valid rows", dir.display()),
            Err(e) => log::warn!("{}: {e}", dir.display()),
        }
    }
    if groups.is_empty() {
        eprintln!("error: no valid runs found");
        return ExitCode::from(EXIT_FAILURE);
    }
    let out = args.out.unwrap_or_else(|| args.runs[0].clone());
    let result = summary_csv(&groups).and_then(|summary| {
        fs::create_dir_all(&out)?;
        fs::write(out.join("summary.csv"), summary)?;
        emit_plots(&groups, &out.join("plots"))
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn cmd_selftest(args: SelftestArgs) -> ExitCode {
    let opts = SelftestOptions {
        quick: args.quick,
        fault: args.inject_fault.map(|_| Fault::Eig),
    };
    let results = selftest::run(opts);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("{status}  {:width$}  {}", r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILURE)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Report(args) => cmd_report(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}
