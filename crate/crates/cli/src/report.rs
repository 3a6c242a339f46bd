//! Per-node views of a metrics table: the round-by-node table, per-node
//! series files and an SVG chart.
//!
//! A node's value in round `t` is the global model it holds after that
//! round's aggregation: its own if it aggregated, its aggregator's if it was
//! a client, and nothing (`---`) if it sat the round out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dfl_core::{MetricsTable, NodeId};

use crate::error::{read_text, write_file, CmdResult, Failure};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Text,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown format `{other}` (expected text or markdown)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub loss: f64,
    pub accuracy: f64,
    /// Aggregator whose global model this is.
    pub from: NodeId,
}

impl Cell {
    pub fn table_cell(&self) -> String {
        format!("({:.2}, {:.0}%)", self.loss, self.accuracy * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeView {
    /// Every node that aggregates at least once, ascending.
    pub columns: Vec<NodeId>,
    /// `rows[t - 1][k]` is the cell of `columns[k]` in round `t`.
    pub rows: Vec<Vec<Option<Cell>>>,
}

impl NodeView {
    pub fn new(table: &MetricsTable) -> Self {
        let columns: Vec<NodeId> = table.aggregators().into_iter().collect();
        let rows = (1..=table.rounds())
            .map(|t| {
                let mut held: BTreeMap<NodeId, Cell> = BTreeMap::new();
                for r in table.round(t) {
                    let cell = Cell { loss: r.loss, accuracy: r.accuracy, from: r.aggregator };
                    for &p in &r.participants {
                        held.insert(p, cell);
                    }
                    held.insert(r.aggregator, cell);
                }
                columns.iter().map(|c| held.get(c).copied()).collect()
            })
            .collect();
        NodeView { columns, rows }
    }

    pub fn column(&self, node: NodeId) -> Option<usize> {
        self.columns.iter().position(|&c| c == node)
    }

    pub fn cell(&self, round: u32, node: NodeId) -> Option<Cell> {
        let k = self.column(node)?;
        *self.rows.get(round.checked_sub(1)? as usize)?.get(k)?
    }

    /// Values in the last round, skipping nodes without one.
    pub fn final_cells(&self) -> Vec<(NodeId, Cell)> {
        match self.rows.last() {
            Some(row) => self.columns.iter().zip(row).filter_map(|(&n, c)| c.map(|c| (n, c))).collect(),
            None => Vec::new(),
        }
    }
}

pub fn render_table(view: &NodeView, format: ReportFormat) -> String {
    let mut header = vec!["round".to_string()];
    header.extend(view.columns.iter().map(|c| format!("node {c}")));
    let body: Vec<Vec<String>> = view
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut line = vec![(i + 1).to_string()];
            line.extend(row.iter().map(|c| c.map_or_else(|| "---".to_string(), |c| c.table_cell())));
            line
        })
        .collect();

    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let rule: Vec<&str> = header.iter().map(|_| "---").collect();
            let _ = writeln!(out, "|{}|", rule.join("|"));
            for line in &body {
                let _ = writeln!(out, "| {} |", line.join(" | "));
            }
        }
        ReportFormat::Text => {
            let widths: Vec<usize> = (0..header.len())
                .map(|k| body.iter().map(|l| l[k].len()).chain([header[k].len()]).max().unwrap_or(0))
                .collect();
            let fmt_line = |cells: &[String]| {
                let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                padded.join("  ").trim_end().to_string()
            };
            let _ = writeln!(out, "{}", fmt_line(&header));
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", fmt_line(&rule));
            for line in &body {
                let _ = writeln!(out, "{}", fmt_line(line));
            }
        }
    }
    out
}

/// `round,loss,accuracy` for the rounds in which `node` holds a model.
pub fn node_series_csv(view: &NodeView, node: NodeId) -> String {
    let mut out = String::from("round,loss,accuracy\n");
    if let Some(k) = view.column(node) {
        for (i, row) in view.rows.iter().enumerate() {
            if let Some(c) = row[k] {
                let _ = writeln!(out, "{},{},{}", i + 1, c.loss, c.accuracy);
            }
        }
    }
    out
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Loss and accuracy against round, one line per node, side by side.
pub fn render_svg(view: &NodeView) -> String {
    const W: f64 = 460.0;
    const H: f64 = 320.0;
    const PAD_L: f64 = 58.0;
    const PAD_R: f64 = 16.0;
    const PAD_T: f64 = 34.0;
    const PAD_B: f64 = 44.0;
    let legend_h = 24.0;
    let total_w = 2.0 * W;
    let total_h = H + legend_h;
    let rounds = view.rows.len().max(1);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{total_w}" height="{total_h}" fill="white"/>"#);

    let panels: [(&str, fn(&Cell) -> f64); 2] = [("loss", |c| c.loss), ("accuracy (%)", |c| c.accuracy * 100.0)];
    for (p, (title, value)) in panels.iter().enumerate() {
        let x0 = p as f64 * W;
        let values: Vec<f64> = view.rows.iter().flatten().flatten().map(value).collect();
        let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let margin = 0.05 * (hi - lo);
        let (lo, hi) = (lo - margin, hi + margin);
        let plot_w = W - PAD_L - PAD_R;
        let plot_h = H - PAD_T - PAD_B;
        let sx = |round: usize| {
            let frac = if rounds == 1 { 0.5 } else { (round - 1) as f64 / (rounds - 1) as f64 };
            x0 + PAD_L + frac * plot_w
        };
        let sy = |v: f64| PAD_T + (hi - v) / (hi - lo) * plot_h;

        let _ = writeln!(svg, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, x0 + W / 2.0);
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{PAD_T}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#444"/>"##,
            x0 + PAD_L
        );
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let y = sy(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
                x0 + PAD_L,
                x0 + PAD_L + plot_w,
                x0 + PAD_L - 4.0,
                y + 4.0
            );
        }
        for r in 1..=rounds {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{r}</text>"#,
                sx(r),
                PAD_T + plot_h + 16.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round</text>"#,
            x0 + PAD_L + plot_w / 2.0,
            H - 8.0
        );

        for (k, _) in view.columns.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            // Break the line where the node has no value.
            let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
            for (i, row) in view.rows.iter().enumerate() {
                match row[k] {
                    Some(c) => segments.last_mut().expect("non-empty").push((sx(i + 1), sy(value(&c)))),
                    None => segments.push(Vec::new()),
                }
            }
            for seg in segments.iter().filter(|s| !s.is_empty()) {
                let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    pts.join(" ")
                );
                for (x, y) in seg {
                    let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{color}"/>"#);
                }
            }
        }
    }

    let mut lx = PAD_L;
    for (k, node) in view.columns.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let y = H + 8.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.1}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">node {node}</text>"#,
            y - 2.0,
            lx + 18.0,
            y + 3.0
        );
        lx += 72.0;
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads `metrics.json` or any other path as CSV; a directory means its
/// `metrics.csv`.
pub fn load_metrics(path: &Path) -> CmdResult<MetricsTable> {
    let path: PathBuf = if path.is_dir() { path.join("metrics.csv") } else { path.to_path_buf() };
    let text = read_text(&path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        MetricsTable::from_json(&text)
    } else {
        MetricsTable::from_csv(&text)
    };
    parsed.map_err(|e| Failure::io(&path, e))
}

/// Files written by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub series: Vec<PathBuf>,
    pub chart: PathBuf,
}

pub fn write_report(view: &NodeView, format: ReportFormat, dir: &Path) -> CmdResult<ReportFiles> {
    let series_dir = dir.join("series");
    std::fs::create_dir_all(&series_dir).map_err(|e| Failure::io(&series_dir, e))?;
    let table = dir.join(match format {
        ReportFormat::Text => "table.txt",
        ReportFormat::Markdown => "table.md",
    });
    write_file(&table, render_table(view, format))?;
    let mut series = Vec::new();
    for &node in &view.columns {
        let path = series_dir.join(format!("node_{node}.csv"));
        write_file(&path, node_series_csv(view, node))?;
        series.push(path);
    }
    let chart = dir.join("chart.svg");
    write_file(&chart, render_svg(view))?;
    Ok(ReportFiles { table, series, chart })
}

/// Nodes that appear in `view` but never hold a model in round `round`.
pub fn idle_columns(view: &NodeView, round: u32) -> BTreeSet<NodeId> {
    view.columns.iter().copied().filter(|&n| view.cell(round, n).is_none()).collect()
}
