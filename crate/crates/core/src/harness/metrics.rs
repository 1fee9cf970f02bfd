//! Robustness metrics, the KL-ratio diagnostic and CSV I/O.

use std::io::{BufRead, Write};

use crate::estimation::GradientEstimate;
use crate::optimizers::StepReport;
use crate::{Error, Result};

/// Mean of the lowest `ceil(kappa * N)` values.
pub fn cvar(values: &[f64], kappa: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("CVaR of an empty set".into()));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidArgument(format!("kappa must be in (0,1], got {kappa}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // guard against kappa * N landing a hair above an integer
    let k = ((kappa * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Levels of the summary CVaR table: 0.05, 0.10, ..., 1.00.
pub fn kappa_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

/// Moves every coordinate of the gradient one standard error toward
/// (and possibly past) zero: `g_j - sign(g_j) * stderr_j`, `sign(0) = 0`.
pub fn adversarial_noise(g: &GradientEstimate) -> Vec<f64> {
    g.g_hat
        .iter()
        .zip(&g.per_dim_stderr)
        .map(|(gj, s)| {
            let sign = if *gj > 0.0 {
                1.0
            } else if *gj < 0.0 {
                -1.0
            } else {
                0.0
            };
            gj - sign * s
        })
        .collect()
}

pub const KL_RATIO_EDGES: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// Counts of actual/estimated KL ratios in `[0,.5), [.5,1), ..., [3, inf)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KlHistogram {
    pub counts: [usize; 7],
}

impl KlHistogram {
    pub fn add_ratio(&mut self, ratio: f64) {
        let bin = KL_RATIO_EDGES.iter().rposition(|e| ratio >= *e).unwrap_or(0);
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of ratios at or above `threshold`, which must be a bin edge.
    pub fn fraction_at_least(&self, threshold: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let start = KL_RATIO_EDGES
            .iter()
            .position(|e| *e == threshold)
            .expect("threshold must be a histogram edge");
        self.counts[start..].iter().sum::<usize>() as f64 / total as f64
    }

    pub fn bin_label(i: usize) -> String {
        match KL_RATIO_EDGES.get(i + 1) {
            Some(hi) => format!("[{},{})", KL_RATIO_EDGES[i], hi),
            None => format!("[{},inf)", KL_RATIO_EDGES[i]),
        }
    }
}

pub fn kl_ratio(est_kl: f64, actual_kl: f64) -> f64 {
    actual_kl / est_kl.max(1e-12)
}

/// Histogram over all proposed updates (rows with `eta > 0`).
pub fn kl_ratio_histogram<'a>(rows: impl IntoIterator<Item = &'a IterRecord>) -> KlHistogram {
    let mut hist = KlHistogram::default();
    for row in rows {
        if row.report.proposed() {
            hist.add_ratio(kl_ratio(row.report.est_kl, row.report.actual_kl));
        }
    }
    hist
}

/// One training iteration of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub seed: u64,
    pub iter: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    /// 0.2-CVaR over the evaluation episodes of this checkpoint.
    pub cvar_eval_return: f64,
    pub report: StepReport,
}

pub const CSV_HEADER: &str = "seed,iter,env_steps,mean_return,cvar_eval_return,eta,est_kl,actual_kl,kl_ratio,surrogate_improvement,accepted,ls_steps,rn2,ell";

impl IterRecord {
    pub fn kl_ratio(&self) -> f64 {
        if self.report.proposed() {
            kl_ratio(self.report.est_kl, self.report.actual_kl)
        } else {
            0.0
        }
    }

    pub fn to_csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{:?},{}",
            self.seed,
            self.iter,
            self.env_steps,
            self.mean_return,
            self.cvar_eval_return,
            r.eta,
            r.est_kl,
            r.actual_kl,
            self.kl_ratio(),
            r.surrogate_improvement,
            r.accepted,
            r.ls_steps,
            r.rn2,
            r.ell
        )
    }

    /// Inverse of [`to_csv_row`](Self::to_csv_row). Fields not stored in the
    /// CSV keep their defaults.
    pub fn from_csv_row(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 14 {
            return Err(format!("expected 14 fields, got {}", f.len()));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {name} {s:?}"))
        }
        let real = |s: &str, name: &str| -> std::result::Result<f64, String> {
            let v: f64 = num(s, name)?;
            if v.is_nan() {
                Err(format!("{name} is NaN"))
            } else {
                Ok(v)
            }
        };
        let report = StepReport {
            eta: real(f[5], "eta")?,
            est_kl: real(f[6], "est_kl")?,
            actual_kl: real(f[7], "actual_kl")?,
            surrogate_improvement: real(f[9], "surrogate_improvement")?,
            accepted: num(f[10], "accepted")?,
            ls_steps: num(f[11], "ls_steps")?,
            rn2: real(f[12], "rn2")?,
            ell: num(f[13], "ell")?,
            ..StepReport::default()
        };
        real(f[8], "kl_ratio")?;
        Ok(Self {
            seed: num(f[0], "seed")?,
            iter: num(f[1], "iter")?,
            env_steps: num(f[2], "env_steps")?,
            mean_return: real(f[3], "mean_return")?,
            cvar_eval_return: real(f[4], "cvar_eval_return")?,
            report,
        })
    }
}

pub fn write_csv_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")
}

/// Rows parsed from a metrics CSV plus a description of every skipped line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedCsv {
    pub rows: Vec<IterRecord>,
    pub skipped: Vec<String>,
}

/// Parses a metrics CSV, skipping malformed rows. A missing or wrong header
/// is an error.
pub fn read_csv<R: BufRead>(r: R) -> Result<ParsedCsv> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(Error::Parse {
            path: "<csv>".into(),
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut out = ParsedCsv::default();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match IterRecord::from_csv_row(&line) {
            Ok(row) => out.rows.push(row),
            Err(msg) => out.skipped.push(format!("line {}: {msg}", i + 2)),
        }
    }
    Ok(out)
}
