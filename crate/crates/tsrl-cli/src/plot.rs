//! `plot`: return-vs-episode learning curves as a standalone SVG.
//!
//! Each run contributes one faint raw polyline (`class="raw"`); each
//! algorithm contributes one bold smoothed polyline (`class="smooth"`): the
//! across-run average (truncated to the shortest run) passed through a
//! window-20 trailing moving average. Axes and a legend are drawn directly,
//! so the file has no external dependencies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tsrl_core::error::Error;
use tsrl_core::Result;

use crate::aggregate::{read_run, RunSeries};

pub const SMOOTHING_WINDOW: usize = 20;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 6] =
    ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct PlotSummary {
    pub raw_lines: usize,
    pub smooth_lines: usize,
    pub algorithms: Vec<String>,
}

/// Trailing moving average: element `i` averages the last `window` values
/// ending at `i` (fewer at the start).
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "smoothing window must be positive");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i.min(window - 1) + 1) as f64);
    }
    out
}

fn mean_truncated(series: &[&RunSeries]) -> Vec<f64> {
    let min_len = series.iter().map(|s| s.returns.len()).min().unwrap_or(0);
    (0..min_len)
        .map(|i| series.iter().map(|s| s.returns[i]).sum::<f64>() / series.len() as f64)
        .collect()
}

struct Scale {
    max_episode: f64,
    y_min: f64,
    y_max: f64,
}

impl Scale {
    fn x(&self, episode: usize) -> f64 {
        let frac = if self.max_episode <= 1.0 {
            0.5
        } else {
            (episode as f64 - 1.0) / (self.max_episode - 1.0)
        };
        MARGIN_LEFT + frac * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, value: f64) -> f64 {
        let frac = (value - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - MARGIN_BOTTOM - frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn polyline(points: &[(f64, f64)], attrs: &str) -> String {
    let coords: Vec<String> =
        points.iter().map(|(x, y)| format!("{:.2},{:.2}", x, y)).collect();
    format!("  <polyline {} fill=\"none\" points=\"{}\"/>\n", attrs, coords.join(" "))
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{:.2}", v)
    }
}

/// Build the SVG text for a set of runs.
pub fn render_plot(runs: &[RunSeries]) -> Result<(String, PlotSummary)> {
    if runs.is_empty() {
        return Err(Error::Usage("plot: at least one run directory is required".to_string()));
    }
    let mut sorted: Vec<&RunSeries> = runs.iter().collect();
    sorted.sort_by(|a, b| a.dir.cmp(&b.dir));

    let mut groups: BTreeMap<&str, Vec<&RunSeries>> = BTreeMap::new();
    for run in &sorted {
        groups.entry(run.algo.as_str()).or_default().push(run);
    }
    let colors: BTreeMap<&str, &str> = groups
        .keys()
        .enumerate()
        .map(|(i, algo)| (*algo, PALETTE[i % PALETTE.len()]))
        .collect();

    let max_episode = sorted.iter().map(|s| s.returns.len()).max().unwrap_or(1);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for run in &sorted {
        for &v in &run.returns {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if y_min == y_max {
        y_min -= 1.0;
        y_max += 1.0;
    } else {
        let pad = (y_max - y_min) * 0.05;
        y_min -= pad;
        y_max += pad;
    }
    let scale = Scale { max_episode: max_episode as f64, y_min, y_max };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = WIDTH,
        h = HEIGHT
    ));
    svg.push_str(&format!(
        "  <rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        WIDTH, HEIGHT
    ));

    // Axes with five ticks each.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let episode = 1.0 + frac * (max_episode as f64 - 1.0);
        let x = x0 + frac * (x1 - x0);
        svg.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            fmt_tick(episode.round())
        ));
        let value = y_min + frac * (y_max - y_min);
        let y = scale.y(value);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            x0 - 9.0,
            y + 4.0,
            fmt_tick(value)
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">episode</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 20.0
    ));
    svg.push_str(&format!(
        "  <text x=\"20\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">return</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));

    let mut raw_lines = 0;
    for run in &sorted {
        let color = colors[run.algo.as_str()];
        let points: Vec<(f64, f64)> = run
            .returns
            .iter()
            .enumerate()
            .map(|(i, &v)| (scale.x(i + 1), scale.y(v)))
            .collect();
        svg.push_str(&polyline(
            &points,
            &format!("class=\"raw\" stroke=\"{}\" stroke-opacity=\"0.25\"", color),
        ));
        raw_lines += 1;
    }

    let mut smooth_lines = 0;
    for (algo, series) in &groups {
        let color = colors[algo];
        let smoothed = moving_average(&mean_truncated(series), SMOOTHING_WINDOW);
        let points: Vec<(f64, f64)> = smoothed
            .iter()
            .enumerate()
            .map(|(i, &v)| (scale.x(i + 1), scale.y(v)))
            .collect();
        svg.push_str(&polyline(
            &points,
            &format!("class=\"smooth\" stroke=\"{}\" stroke-width=\"2.5\"", color),
        ));
        smooth_lines += 1;
    }

    for (i, (algo, _)) in groups.iter().enumerate() {
        let color = colors[algo];
        let y = MARGIN_TOP + 14.0 + i as f64 * 20.0;
        svg.push_str(&format!(
            "  <line x1=\"{x}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"{}\" stroke-width=\"2.5\"/>\n",
            x1 + 40.0,
            color,
            x = x1 + 12.0,
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.2}\" font-size=\"13\">{}</text>\n",
            x1 + 46.0,
            y + 4.0,
            algo
        ));
    }
    svg.push_str("</svg>\n");

    let summary = PlotSummary {
        raw_lines,
        smooth_lines,
        algorithms: groups.keys().map(|a| a.to_string()).collect(),
    };
    Ok((svg, summary))
}

pub fn cmd_plot(dirs: &[PathBuf], out: &Path) -> Result<PlotSummary> {
    if dirs.is_empty() {
        return Err(Error::Usage("plot: at least one run directory is required".to_string()));
    }
    let runs = dirs.iter().map(|d| read_run(d)).collect::<Result<Vec<_>>>()?;
    let (svg, summary) = render_plot(&runs)?;
    std::fs::write(out, svg).map_err(|e| Error::External(format!("{}: {}", out.display(), e)))?;
    Ok(summary)
}
