//! Log-log regret charts written directly as SVG.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{PricingError, Result};
use crate::harness::{
    fit_intercept, read_summary_csv, read_trial_csv, wald_band, FIT_WINDOW_DIVISOR,
};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One policy's curve as it will be drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotCurve {
    pub label: String,
    pub checkpoints: Vec<usize>,
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
    pub slope: f64,
    /// `log2` intercept of the fitted line.
    pub intercept: f64,
}

/// Renders the curves on shared log2-log2 axes.
pub fn render_svg(title: &str, curves: &[PlotCurve]) -> Result<String> {
    if curves.is_empty() {
        return Err(PricingError::InvalidArgument(
            "nothing to plot: no policies".into(),
        ));
    }
    let mut x_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y_range = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for ((&t, &m), &h) in c.checkpoints.iter().zip(&c.mean).zip(&c.half_width) {
            if m <= 0.0 {
                continue;
            }
            let lx = (t as f64).log2();
            x_range = (x_range.0.min(lx), x_range.1.max(lx));
            let low = if m - h > 0.0 { m - h } else { m };
            y_range = (y_range.0.min(low.log2()), y_range.1.max((m + h).log2()));
        }
    }
    if !x_range.0.is_finite() || !y_range.0.is_finite() {
        return Err(PricingError::InvalidArgument(
            "nothing to plot: no positive regret values".into(),
        ));
    }
    let x_axis = (
        x_range.0.floor(),
        x_range.1.ceil().max(x_range.0.floor() + 1.0),
    );
    let y_axis = (
        y_range.0.floor(),
        y_range.1.ceil().max(y_range.0.floor() + 1.0),
    );
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |lx: f64| MARGIN_LEFT + (lx - x_axis.0) / (x_axis.1 - x_axis.0) * plot_w;
    let py = |ly: f64| MARGIN_TOP + plot_h - (ly - y_axis.0) / (y_axis.1 - y_axis.0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );

    // Grid and ticks at integer powers of two.
    let x_step = tick_step(x_axis.1 - x_axis.0);
    let mut k = x_axis.0;
    while k <= x_axis.1 + 1e-9 {
        let x = px(k);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#e5e5e5"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">2<tspan dy="-5" font-size="9">{}</tspan></text>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 18.0,
            k as i64
        );
        k += x_step;
    }
    let y_step = tick_step(y_axis.1 - y_axis.0);
    let mut k = y_axis.0;
    while k <= y_axis.1 + 1e-9 {
        let y = py(k);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e5e5e5"/><text x="{:.1}" y="{:.1}" text-anchor="end">2<tspan dy="-5" font-size="9">{}</tspan></text>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 8.0,
            y + 4.0,
            k as i64
        );
        k += y_step;
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round t (log2)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">cumulative regret (log2)</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<(f64, f64, f64)> = c
            .checkpoints
            .iter()
            .zip(&c.mean)
            .zip(&c.half_width)
            .filter(|((_, m), _)| **m > 0.0)
            .map(|((t, m), h)| ((*t as f64).log2(), *m, *h))
            .collect();
        let upper: Vec<String> = points
            .iter()
            .map(|(lx, m, h)| format!("{:.2},{:.2}", px(*lx), py((m + h).log2())))
            .collect();
        let lower: Vec<String> = points
            .iter()
            .rev()
            .map(|(lx, m, h)| {
                let low = if m - h > 0.0 { m - h } else { *m };
                format!("{:.2},{:.2}", px(*lx), py(low.log2().max(y_axis.0)))
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = points
            .iter()
            .map(|(lx, m, _)| format!("{:.2},{:.2}", px(*lx), py(m.log2())))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        if let Some(&horizon) = c.checkpoints.iter().max() {
            let x0 = ((horizon / FIT_WINDOW_DIVISOR).max(1) as f64).log2();
            let x1 = (horizon as f64).log2();
            let y = |lx: f64| c.intercept + c.slope * lx;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                px(x0),
                py(y(x0)),
                px(x1),
                py(y(x1))
            );
        }
        let ly = MARGIN_TOP + 20.0 + 34.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text><text x="{:.1}" y="{:.1}" font-size="11">slope {:.3}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&c.label),
            lx + 28.0,
            ly + 18.0,
            c.slope
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick_step(span: f64) -> f64 {
    (span / 8.0).ceil().max(1.0)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// File holding the per-trial curve of `policy` inside a run directory.
pub fn trial_csv_name(policy: &str) -> String {
    format!("trials_{policy}.csv")
}

/// Reads a run directory's summary and trial CSVs and writes one SVG per experiment.
pub fn plot_run_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let summary_path = dir.join("summary.csv");
    let data_error = |path: &Path, message: String| PricingError::Data {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(&summary_path).map_err(|e| data_error(&summary_path, e.to_string()))?;
    let rows = read_summary_csv(file).map_err(|e| data_error(&summary_path, e.to_string()))?;
    if rows.is_empty() {
        return Err(data_error(
            &summary_path,
            "nothing to plot: no policies".into(),
        ));
    }
    let mut envs: Vec<&str> = Vec::new();
    for r in &rows {
        if !envs.contains(&r.env.as_str()) {
            envs.push(&r.env);
        }
    }
    let mut written = Vec::new();
    // Render everything first so a malformed file leaves no partial output behind.
    let mut rendered = Vec::new();
    for env in envs {
        let mut curves = Vec::new();
        for row in rows.iter().filter(|r| r.env == env) {
            let path = dir.join(trial_csv_name(&row.policy));
            let file = File::open(&path).map_err(|e| data_error(&path, e.to_string()))?;
            let records = read_trial_csv(file).map_err(|e| data_error(&path, e.to_string()))?;
            curves.push(
                curve_from_records(&row.policy, row.slope, &records)
                    .map_err(|e| data_error(&path, e.to_string()))?,
            );
        }
        let svg = render_svg(&format!("{env}: cumulative regret"), &curves)?;
        rendered.push((dir.join(format!("{env}.svg")), svg));
    }
    for (path, svg) in rendered {
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

/// Mean and Wald band from `(trial, t, cum_regret)` rows.
pub fn curve_from_records(
    label: &str,
    slope: f64,
    records: &[(u64, usize, f64)],
) -> Result<PlotCurve> {
    let mut trials: Vec<u64> = records.iter().map(|r| r.0).collect();
    trials.sort_unstable();
    trials.dedup();
    let mut checkpoints: Vec<usize> = records.iter().map(|r| r.1).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if trials.is_empty() {
        return Err(PricingError::InvalidArgument(format!(
            "no rows for {label}"
        )));
    }
    let mut samples = vec![Vec::with_capacity(trials.len()); checkpoints.len()];
    for &(_, t, v) in records {
        let i = checkpoints
            .binary_search(&t)
            .expect("checkpoint collected above");
        samples[i].push(v);
    }
    if samples.iter().any(|s| s.len() != trials.len()) {
        return Err(PricingError::InvalidArgument(format!(
            "trials of {label} do not share one checkpoint grid"
        )));
    }
    let (mean, half_width) = wald_band(&samples)?;
    let intercept = fit_intercept(&checkpoints, &mean, slope).unwrap_or(0.0);
    Ok(PlotCurve {
        label: label.to_string(),
        checkpoints,
        mean,
        half_width,
        slope,
        intercept,
    })
}
