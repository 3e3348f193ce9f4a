//! Minimal self-generated SVG plots: mean curves with a shaded band of
//! half a standard deviation across seeds. No plotting dependency.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_summary, write_atomic, ExperimentConfig, HarnessError, RunSummary};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

/// One plotted family: a shared x grid and one y series per member
/// (typically one per seed). The plot shows the member mean and a band of
/// +- std/2.
#[derive(Debug, Clone)]
pub struct CurveFamily {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys_per_member: Vec<Vec<f64>>,
}

impl CurveFamily {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.xs.is_empty() || self.ys_per_member.is_empty() {
            return Err(HarnessError::Plot(format!(
                "curve '{}' has no data",
                self.label
            )));
        }
        for ys in &self.ys_per_member {
            if ys.len() != self.xs.len() {
                return Err(HarnessError::Plot(format!(
                    "curve '{}' members disagree on length",
                    self.label
                )));
            }
        }
        Ok(())
    }

    fn mean_and_halfband(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.ys_per_member.len() as f64;
        let mut means = Vec::with_capacity(self.xs.len());
        let mut halves = Vec::with_capacity(self.xs.len());
        for i in 0..self.xs.len() {
            let vals: Vec<f64> = self.ys_per_member.iter().map(|ys| ys[i]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            halves.push(var.sqrt() / 2.0);
        }
        (means, halves)
    }
}

/// Renders curve families to an SVG file (atomically). Errors on an empty
/// curve list without writing anything.
pub fn emit_curves_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    families: &[CurveFamily],
    path: &Path,
) -> Result<(), HarnessError> {
    if families.is_empty() {
        return Err(HarnessError::Plot("no curves to plot".into()));
    }
    for f in families {
        f.validate()?;
    }

    let stats: Vec<(Vec<f64>, Vec<f64>)> = families.iter().map(|f| f.mean_and_halfband()).collect();
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (f, (means, halves)) in families.iter().zip(&stats) {
        for &x in &f.xs {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
        }
        for (m, h) in means.iter().zip(halves) {
            y_min = y_min.min(m - h);
            y_max = y_max.max(m + h);
        }
    }
    if !(x_min.is_finite() && y_min.is_finite()) {
        return Err(HarnessError::Plot("non-finite plot data".into()));
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    y_min -= pad;
    y_max += pad;

    const W: f64 = 860.0;
    const H: f64 = 540.0;
    const L: f64 = 80.0;
    const R: f64 = 840.0;
    const T: f64 = 50.0;
    const B: f64 = 490.0;
    let px = |x: f64| L + (x - x_min) / (x_max - x_min) * (R - L);
    let py = |y: f64| B - (y - y_min) / (y_max - y_min) * (B - T);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        (L + R) / 2.0,
        xml_escape(title)
    );
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{L}\" y1=\"{B}\" x2=\"{R}\" y2=\"{B}\" stroke=\"black\"/>\n\
         <line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{B}\" stroke=\"black\"/>\n"
    );
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n\
             <line x1=\"{:.1}\" y1=\"{B}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#cccccc\"/>\n",
            px(fx),
            B + 20.0,
            format_tick(fx),
            L - 8.0,
            py(fy) + 4.0,
            format_tick(fy),
            px(fx),
            px(fx),
            B + 4.0,
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        (L + R) / 2.0,
        B + 42.0,
        xml_escape(x_label),
        (T + B) / 2.0,
        (T + B) / 2.0,
        xml_escape(y_label)
    );

    for (idx, (f, (means, halves))) in families.iter().zip(&stats).enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        // Shaded +- std/2 band: upper edge forward, lower edge reversed.
        let mut pts = String::new();
        for ((x, m), h) in f.xs.iter().zip(means).zip(halves) {
            let _ = write!(pts, "{:.2},{:.2} ", px(*x), py(m + h));
        }
        for ((x, m), h) in f.xs.iter().zip(means).zip(halves).rev() {
            let _ = write!(pts, "{:.2},{:.2} ", px(*x), py(m - h));
        }
        let _ = write!(
            svg,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
            pts.trim_end()
        );
        let mut line = String::new();
        for (x, m) in f.xs.iter().zip(means) {
            let _ = write!(line, "{:.2},{:.2} ", px(*x), py(*m));
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            line.trim_end()
        );
        // Legend entry.
        let ly = T + 18.0 * idx as f64;
        let _ = write!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"3\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            R - 180.0,
            R - 150.0,
            R - 144.0,
            ly + 4.0,
            xml_escape(&f.label)
        );
    }
    svg.push_str("</svg>\n");
    write_atomic(path, svg.as_bytes())?;
    Ok(())
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Numeric CSV reader: skips `#` comment lines, validates the header,
/// returns rows of optional floats (empty cells stay `None`).
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Plot(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| HarnessError::Plot(format!("{} is empty", path.display())))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        for cell in line.split(',') {
            if cell.is_empty() {
                row.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    HarnessError::Plot(format!(
                        "{}: bad number '{}' on data line {}",
                        path.display(),
                        cell,
                        lineno + 1
                    ))
                })?;
                row.push(Some(v));
            }
        }
        if row.len() != header.len() {
            return Err(HarnessError::Plot(format!(
                "{}: ragged row on data line {}",
                path.display(),
                lineno + 1
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn seed_dirs(run_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("seed_"))
                    .unwrap_or(false)
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(HarnessError::Plot(format!(
            "no seed_* directories under {}",
            run_dir.display()
        )));
    }
    Ok(dirs)
}

/// Evaluation-return curves of one run directory, one member per seed.
pub fn read_eval_curves(run_dir: &Path) -> Result<CurveFamily, HarnessError> {
    let summary = read_summary(run_dir).map_err(|e| HarnessError::Plot(e.to_string()))?;
    let mut xs: Option<Vec<f64>> = None;
    let mut members = Vec::new();
    for dir in seed_dirs(run_dir)? {
        let (header, rows) = read_numeric_csv(&dir.join("eval.csv"))?;
        let step_col = column(&header, "step")?;
        let ret_col = column(&header, "mean_return")?;
        let steps: Vec<f64> = rows.iter().filter_map(|r| r[step_col]).collect();
        let returns: Vec<f64> = rows.iter().filter_map(|r| r[ret_col]).collect();
        match &xs {
            None => xs = Some(steps),
            Some(prev) if *prev != steps => {
                return Err(HarnessError::Plot(format!(
                    "{}: seeds disagree on evaluation steps",
                    run_dir.display()
                )))
            }
            _ => {}
        }
        members.push(returns);
    }
    Ok(CurveFamily {
        label: format!("{} {}", summary.target_spec, summary.env_id),
        xs: xs.unwrap(),
        ys_per_member: members,
    })
}

fn column(header: &[String], name: &str) -> Result<usize, HarnessError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| HarnessError::Plot(format!("missing csv column '{name}'")))
}

/// Overlaid evaluation-return curves of several runs.
pub fn emit_plots(run_dirs: &[PathBuf], out: &Path) -> Result<(), HarnessError> {
    let mut families = Vec::new();
    for dir in run_dirs {
        families.push(read_eval_curves(dir)?);
    }
    emit_curves_svg("Evaluation return", "environment steps", "return", &families, out)
}

/// Per-run plots written at the end of `run_experiment`: the return curve
/// and, when gap recording is on, the 1-vs-i-step target gap curves.
pub fn emit_run_plots(
    out_dir: &Path,
    summary: &RunSummary,
    config: &ExperimentConfig,
) -> Result<(), HarnessError> {
    let returns = CurveFamily {
        label: format!("{} {}", summary.target_spec, summary.env_id),
        xs: summary.eval_steps.iter().map(|&s| s as f64).collect(),
        ys_per_member: summary
            .per_seed
            .iter()
            .map(|s| s.eval_mean_returns.clone())
            .collect(),
    };
    emit_curves_svg(
        "Evaluation return",
        "environment steps",
        "return",
        &[returns],
        &out_dir.join("returns.svg"),
    )?;

    if config.record_gaps {
        let mut families = Vec::new();
        for i in 2..=config.gap_max_n {
            let col_name = format!("gap_1_{i}");
            let mut xs: Option<Vec<f64>> = None;
            let mut members = Vec::new();
            for dir in seed_dirs(out_dir)? {
                let (header, rows) = read_numeric_csv(&dir.join("diag.csv"))?;
                let step_col = column(&header, "step")?;
                let gap_col = column(&header, &col_name)?;
                let mut s = Vec::new();
                let mut g = Vec::new();
                for row in &rows {
                    if let (Some(step), Some(gap)) = (row[step_col], row[gap_col]) {
                        s.push(step);
                        g.push(gap);
                    }
                }
                match &xs {
                    None => xs = Some(s),
                    Some(prev) if *prev != s => {
                        return Err(HarnessError::Plot(
                            "seeds disagree on gap-recording steps".into(),
                        ))
                    }
                    _ => {}
                }
                members.push(g);
            }
            let xs = xs.unwrap();
            if !xs.is_empty() {
                families.push(CurveFamily {
                    label: format!("TQ 1step - TQ {i}step"),
                    xs,
                    ys_per_member: members,
                });
            }
        }
        if !families.is_empty() {
            emit_curves_svg(
                "Difference in estimated target Q-values",
                "environment steps",
                "gap",
                &families,
                &out_dir.join("gaps.svg"),
            )?;
        }
    }
    Ok(())
}
