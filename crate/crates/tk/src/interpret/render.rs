//! Deterministic SVG heatmaps and exact CSV serialization for attribution
//! and importance matrices.
//!
//! CSV values use the shortest round-trip `f64` formatting, so parsing the
//! file back reproduces the matrix bit-for-bit. The SVG emitter is a pure
//! string builder: identical inputs give identical bytes.

use super::InterpretError;
use crate::matrix::Matrix;
use crate::timebase::TaskSpec;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Color mapping for heatmap cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorScale {
    /// Blue–white–red, centered at 0 — for signed attribution maps.
    Diverging,
    /// White–blue ramp from 0 to the maximum — for importance maps.
    Sequential,
}

/// Row labels for an input window: the delays `a..=b` as signed integers.
pub fn delay_labels(task: &TaskSpec) -> Vec<String> {
    (task.in_delays.0..=task.in_delays.1)
        .map(|d| d.to_string())
        .collect()
}

/// Serializes a window matrix as CSV: header `delay,<component...>`, one
/// row per input delay. Values round-trip exactly through `parse`.
pub fn attribution_csv(m: &Matrix, task: &TaskSpec) -> String {
    let mut out = String::from("delay");
    for name in &task.in_components {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (r, label) in delay_labels(task).iter().enumerate() {
        out.push_str(label);
        for c in 0..m.cols {
            let _ = write!(out, ",{}", m.get(r, c));
        }
        out.push('\n');
    }
    out
}

/// Parses a matrix written by [`attribution_csv`] (labels are discarded).
pub fn parse_attribution_csv(text: &str) -> Result<Matrix, InterpretError> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        fields.next(); // delay label
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    InterpretError::Config(format!(
                        "line {}: `{f}` is not a number",
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(InterpretError::Config(
            "CSV has no rows or ragged rows".into(),
        ));
    }
    Ok(Matrix::from_rows(&rows))
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn lerp_channel(from: u8, to: u8, t: f64) -> u8 {
    (f64::from(from) + t * (f64::from(to) - f64::from(from))).round() as u8
}

fn lerp(from: (u8, u8, u8), to: (u8, u8, u8), t: f64) -> (u8, u8, u8) {
    (
        lerp_channel(from.0, to.0, t),
        lerp_channel(from.1, to.1, t),
        lerp_channel(from.2, to.2, t),
    )
}

const WHITE: (u8, u8, u8) = (255, 255, 255);
const BLUE: (u8, u8, u8) = (33, 102, 172);
const RED: (u8, u8, u8) = (178, 24, 43);
const DEEP_BLUE: (u8, u8, u8) = (8, 81, 156);

/// Cell color: diverging scales map `v/max|v|` to blue (negative) or red
/// (positive) around white; sequential scales ramp white→blue over
/// `v/max(v)`.
fn cell_color(v: f64, lo: f64, hi: f64, scale: ColorScale) -> (u8, u8, u8) {
    match scale {
        ColorScale::Diverging => {
            let m = lo.abs().max(hi.abs());
            if m == 0.0 {
                return WHITE;
            }
            let t = (v / m).clamp(-1.0, 1.0);
            if t < 0.0 {
                lerp(WHITE, BLUE, -t)
            } else {
                lerp(WHITE, RED, t)
            }
        }
        ColorScale::Sequential => {
            if hi <= 0.0 {
                return WHITE;
            }
            let t = (v / hi).clamp(0.0, 1.0);
            lerp(WHITE, DEEP_BLUE, t)
        }
    }
}

/// Renders a matrix as a standalone SVG heatmap with axis labels.
pub fn heatmap_svg(
    m: &Matrix,
    row_labels: &[String],
    col_labels: &[String],
    scale: ColorScale,
    title: &str,
) -> String {
    const CELL_W: usize = 46;
    const CELL_H: usize = 26;
    const LEFT: usize = 64;
    const TOP: usize = 58;
    const RIGHT: usize = 14;
    const BOTTOM: usize = 30;

    let width = LEFT + m.cols * CELL_W + RIGHT;
    let height = TOP + m.rows * CELL_H + BOTTOM;
    let (lo, hi) = m
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });

    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"12\">\n"
    );
    let _ = write!(
        s,
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"{LEFT}\" y=\"20\" font-size=\"13\" fill=\"#222\">{}</text>\n",
        escape_xml(title)
    );
    for (c, label) in col_labels.iter().enumerate() {
        let x = LEFT + c * CELL_W + CELL_W / 2;
        let _ = write!(
            s,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" fill=\"#222\">{}</text>\n",
            TOP - 8,
            escape_xml(label)
        );
    }
    for (r, label) in row_labels.iter().enumerate() {
        let y = TOP + r * CELL_H + CELL_H / 2 + 4;
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\" fill=\"#222\">{}</text>\n",
            LEFT - 8,
            escape_xml(label)
        );
    }
    for r in 0..m.rows {
        for c in 0..m.cols {
            let v = m.get(r, c);
            let (cr, cg, cb) = cell_color(v, lo, hi, scale);
            let x = LEFT + c * CELL_W;
            let y = TOP + r * CELL_H;
            let _ = write!(
                s,
                "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" \
                 fill=\"rgb({cr},{cg},{cb})\" stroke=\"#ccc\" stroke-width=\"0.5\">\
                 <title>{} @ {}: {v}</title></rect>\n",
                escape_xml(col_labels.get(c).map_or("", String::as_str)),
                escape_xml(row_labels.get(r).map_or("", String::as_str)),
            );
        }
    }
    let _ = write!(
        s,
        "<text x=\"{LEFT}\" y=\"{}\" fill=\"#555\">min {lo}  max {hi}</text>\n</svg>\n",
        height - 10
    );
    s
}

/// Writes a matrix as `<stem>.svg` and `<stem>.csv` under `dir`, with axis
/// labels taken from the task. Returns the two paths.
pub fn render_attribution(
    m: &Matrix,
    task: &TaskSpec,
    scale: ColorScale,
    title: &str,
    dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf), InterpretError> {
    let svg = heatmap_svg(m, &delay_labels(task), &task.in_components, scale, title);
    let csv = attribution_csv(m, task);
    let svg_path = dir.join(format!("{stem}.svg"));
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&svg_path, svg)?;
    std::fs::write(&csv_path, csv)?;
    Ok((svg_path, csv_path))
}
