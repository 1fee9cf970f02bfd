//! Static SVG figures. Output is a pure function of the input records, so
//! files are byte-identical across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{cvar, kappa_grid, kl_ratio_histogram, KlHistogram};
use super::RunRecord;
use crate::{Error, Result};

/// Runs sharing a label (one algorithm, one run directory, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRuns {
    pub label: String,
    pub runs: Vec<RunRecord>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    /// Lower/upper band per point.
    band: Option<Vec<(f64, f64)>>,
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Copy)]
struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn fit(values: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in values.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x0 == x1 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y0 == y1 {
            let pad = y0.abs().max(1.0) * 0.05;
            y0 -= pad;
            y1 += pad;
        }
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
}

fn draw_frame(out: &mut String, axes: &Axes, xlabel: &str, ylabel: &str, x_ticks: bool) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        "<rect x=\"{l:.1}\" y=\"{t:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>",
        r - l,
        b - t
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = axes.y0 + f * (axes.y1 - axes.y0);
        let py = axes.py(y);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{l:.1}\" y2=\"{py:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            l - 4.0,
            l - 6.0,
            py + 4.0,
            fmt_num(y)
        );
        if x_ticks {
            let x = axes.x0 + f * (axes.x1 - axes.x0);
            let px = axes.px(x);
            let _ = writeln!(
                out,
                "<line x1=\"{px:.1}\" y1=\"{b:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                b + 4.0,
                b + 16.0,
                fmt_num(x)
            );
        }
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (l + r) / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn draw_legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 14.0 + 16.0 * i as f64;
        let x = WIDTH - RIGHT - 150.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"4\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{y:.1}\">{}</text>",
            y - 5.0,
            x + 18.0,
            escape(label)
        );
    }
}

fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let extent = series.iter().flat_map(|s| {
        let band = s.band.iter().flatten().zip(&s.points).flat_map(|((lo, hi), (x, _))| [(*x, *lo), (*x, *hi)]);
        s.points.iter().copied().chain(band)
    });
    let axes = Axes::fit(extent);
    let mut out = String::new();
    open_svg(&mut out, title);
    draw_frame(&mut out, &axes, xlabel, ylabel, true);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite: Vec<usize> = (0..s.points.len())
            .filter(|&j| s.points[j].0.is_finite() && s.points[j].1.is_finite())
            .collect();
        if let Some(band) = &s.band {
            let upper = finite.iter().map(|&j| (s.points[j].0, band[j].1));
            let lower = finite.iter().rev().map(|&j| (s.points[j].0, band[j].0));
            let pts: Vec<String> = upper
                .chain(lower)
                .map(|(x, y)| format!("{:.1},{:.1}", axes.px(x), axes.py(y)))
                .collect();
            let _ = writeln!(
                out,
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
                pts.join(" ")
            );
        }
        let pts: Vec<String> = finite
            .iter()
            .map(|&j| format!("{:.1},{:.1}", axes.px(s.points[j].0), axes.py(s.points[j].1)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
    }
    draw_legend(&mut out, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

fn non_empty(groups: &[LabeledRuns]) -> Result<Vec<&LabeledRuns>> {
    let kept: Vec<&LabeledRuns> = groups.iter().filter(|g| !g.runs.is_empty()).collect();
    if kept.is_empty() {
        return Err(Error::EmptyRecords("no runs to plot".into()));
    }
    Ok(kept)
}

/// Longest iteration axis (environment steps) among the runs of a group.
fn step_axis(group: &LabeledRuns) -> Vec<f64> {
    group
        .runs
        .iter()
        .max_by_key(|r| r.iters.len())
        .map(|r| r.iters.iter().map(|i| i.env_steps as f64).collect())
        .unwrap_or_default()
}

/// CVaR of the final return across seeds against kappa.
pub fn render_cvar_vs_kappa(groups: &[LabeledRuns]) -> Result<String> {
    let series = non_empty(groups)?
        .into_iter()
        .map(|g| {
            let finals: Vec<f64> = g.runs.iter().map(RunRecord::final_return).collect();
            let points = kappa_grid()
                .into_iter()
                .map(|k| Ok((k, cvar(&finals, k)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Series {
                label: g.label.clone(),
                points,
                band: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(line_chart("CVaR of final return", "kappa", "CVaR", &series))
}

/// 0.2-CVaR across seeds of the evaluation return at each iteration.
pub fn render_cvar_over_training(groups: &[LabeledRuns]) -> Result<String> {
    let series = non_empty(groups)?
        .into_iter()
        .map(|g| {
            let points = step_axis(g)
                .into_iter()
                .enumerate()
                .map(|(i, x)| {
                    let values: Vec<f64> = g.runs.iter().map(|r| r.return_at(i)).collect();
                    Ok((x, cvar(&values, 0.2)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Series {
                label: g.label.clone(),
                points,
                band: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(line_chart("0.2-CVaR of return over training", "environment steps", "CVaR", &series))
}

/// Mean evaluation return across seeds with a one-standard-error band.
pub fn render_mean_se(groups: &[LabeledRuns]) -> Result<String> {
    let series = non_empty(groups)?
        .into_iter()
        .map(|g| {
            let mut points = Vec::new();
            let mut band = Vec::new();
            for (i, x) in step_axis(g).into_iter().enumerate() {
                let values: Vec<f64> = g.runs.iter().map(|r| r.return_at(i)).collect();
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let se = if values.len() < 2 {
                    0.0
                } else {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
                };
                points.push((x, mean));
                band.push((mean - se, mean + se));
            }
            Series {
                label: g.label.clone(),
                points,
                band: Some(band),
            }
        })
        .collect::<Vec<_>>();
    Ok(line_chart("Mean return over training (one standard error)", "environment steps", "return", &series))
}

/// Grouped bars: share of proposed updates per actual/estimated KL bin.
pub fn render_kl_histogram(groups: &[LabeledRuns]) -> Result<String> {
    let groups = non_empty(groups)?;
    let hists: Vec<KlHistogram> = groups
        .iter()
        .map(|g| kl_ratio_histogram(g.runs.iter().flat_map(|r| &r.iters)))
        .collect();
    let fractions: Vec<Vec<f64>> = hists
        .iter()
        .map(|h| {
            let total = h.total().max(1) as f64;
            h.counts.iter().map(|c| *c as f64 / total).collect()
        })
        .collect();
    let y_max = fractions.iter().flatten().copied().fold(0.0, f64::max).max(0.05);
    let axes = Axes {
        x0: 0.0,
        x1: 7.0,
        y0: 0.0,
        y1: y_max * 1.05,
    };
    let mut out = String::new();
    open_svg(&mut out, "Actual / estimated KL of proposed updates");
    draw_frame(&mut out, &axes, "KL ratio", "fraction of updates", false);
    let width = 0.8 / groups.len() as f64;
    for (gi, fr) in fractions.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        for (bin, f) in fr.iter().enumerate() {
            let x = bin as f64 + 0.1 + gi as f64 * width;
            let (px0, px1) = (axes.px(x), axes.px(x + width));
            let (py0, py1) = (axes.py(*f), axes.py(0.0));
            let _ = writeln!(
                out,
                "<rect x=\"{px0:.1}\" y=\"{py0:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\"/>",
                px1 - px0,
                py1 - py0
            );
        }
    }
    for bin in 0..7 {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            axes.px(bin as f64 + 0.5),
            HEIGHT - BOTTOM + 16.0,
            KlHistogram::bin_label(bin)
        );
    }
    let labels: Vec<String> = groups
        .iter()
        .zip(&hists)
        .map(|(g, h)| format!("{} (n={})", g.label, h.total()))
        .collect();
    draw_legend(&mut out, &labels);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Writes the four figures into `dir` and returns their paths.
pub fn emit_plots(groups: &[LabeledRuns], dir: &Path) -> Result<Vec<PathBuf>> {
    let figures = [
        ("cvar_vs_kappa.svg", render_cvar_vs_kappa(groups)?),
        ("cvar20_over_training.svg", render_cvar_over_training(groups)?),
        ("mean_return_se.svg", render_mean_se(groups)?),
        ("kl_ratio_histogram.svg", render_kl_histogram(groups)?),
    ];
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, svg) in figures {
        let path = dir.join(name);
        fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::IterRecord;
    use crate::optimizers::StepReport;

    fn run(seed: u64, returns: &[f64]) -> RunRecord {
        RunRecord {
            seed,
            initial_return: -100.0,
            iters: returns
                .iter()
                .enumerate()
                .map(|(i, r)| IterRecord {
                    seed,
                    iter: i,
                    env_steps: 1000 * (i + 1),
                    mean_return: *r,
                    cvar_eval_return: *r,
                    report: StepReport {
                        eta: 0.1,
                        est_kl: 0.01,
                        actual_kl: 0.005 * (i + 1) as f64,
                        ..StepReport::default()
                    },
                })
                .collect(),
            failure: None,
        }
    }

    #[test]
    fn empty_records_are_rejected() {
        let empty = LabeledRuns {
            label: "x".into(),
            runs: vec![],
        };
        assert!(matches!(render_mean_se(&[empty]), Err(Error::EmptyRecords(_))));
        assert!(render_cvar_vs_kappa(&[]).is_err());
    }

    #[test]
    fn single_seed_band_is_degenerate() {
        let g = LabeledRuns {
            label: "one".into(),
            runs: vec![run(0, &[-5.0, -3.0, -1.0])],
        };
        let svg = render_mean_se(&[g]).unwrap();
        assert!(svg.contains("<polygon"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn axis_labels_cover_extrema() {
        let g = LabeledRuns {
            label: "a".into(),
            runs: vec![run(0, &[-50.0, -20.0]), run(1, &[-10.0, 30.0])],
        };
        let svg = render_mean_se(&[g]).unwrap();
        // y axis spans the SE band around the means (-30, 5)
        assert!(svg.contains(">-50.00<") || svg.contains(">-50<") || svg.contains("-5.0e1"), "{svg}");
    }

    #[test]
    fn carried_forward_returns() {
        let r = run(0, &[-5.0, -3.0]);
        assert_eq!(r.return_at(1), -3.0);
        assert_eq!(r.return_at(9), -3.0);
        assert_eq!(run(0, &[]).final_return(), -100.0);
    }
}
