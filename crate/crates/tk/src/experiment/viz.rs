//! Deterministic SVG line charts for training curves and fit plots: pure
//! string building, fixed palette, no external assets — identical inputs
//! give identical bytes.

use std::fmt::Write as _;

use crate::train::EpochRecord;

/// One plotted line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#e67e22", "#16a085", "#7f8c8d", "#2c3e50",
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 54.0;
const RIGHT: f64 = 20.0;
const BOTTOM: f64 = 50.0;

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        return format!("{v:.2e}");
    }
    let mut s = format!("{v:.4}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders index-vs-value polylines with axes, gridlines, and a legend.
/// Non-finite values break the line into segments.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);

    let finite: Vec<f64> = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    let (lo, hi) = match finite
        .iter()
        .fold(None::<(f64, f64)>, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        }) {
        Some((min, max)) if min == max => {
            let pad = if min == 0.0 { 1.0 } else { min.abs() * 0.1 };
            (min - pad, max + pad)
        }
        Some((min, max)) => {
            let pad = (max - min) * 0.04;
            (min - pad, max + pad)
        }
        None => (0.0, 1.0),
    };

    let x_of = |i: usize| {
        if n <= 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| TOP + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    );
    let _ = write!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{LEFT}\" y=\"24\" font-size=\"15\" fill=\"#222\">{}</text>\n",
        escape_xml(title)
    );

    // horizontal gridlines + y tick labels
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        let _ = write!(
            svg,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#e3e3e3\" stroke-width=\"1\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#555\" \
             text-anchor=\"end\">{}</text>\n",
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(v)
        );
    }

    // axes
    let _ = write!(
        svg,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.2}\" stroke=\"#444\" \
         stroke-width=\"1\"/>\n\
         <line x1=\"{LEFT}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" stroke=\"#444\" \
         stroke-width=\"1\"/>\n",
        TOP + plot_h,
        LEFT + plot_w,
    );

    // x extent labels and axis names
    if n > 0 {
        let _ = write!(
            svg,
            "<text x=\"{LEFT}\" y=\"{0:.2}\" font-size=\"11\" fill=\"#555\">0</text>\n\
             <text x=\"{1:.2}\" y=\"{0:.2}\" font-size=\"11\" fill=\"#555\" \
             text-anchor=\"end\">{2}</text>\n",
            TOP + plot_h + 16.0,
            LEFT + plot_w,
            n.saturating_sub(1)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{0:.2}\" y=\"{1:.2}\" font-size=\"12\" fill=\"#333\" \
         text-anchor=\"middle\">{2}</text>\n\
         <text x=\"16\" y=\"{3:.2}\" font-size=\"12\" fill=\"#333\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {3:.2})\">{4}</text>\n",
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape_xml(x_label),
        TOP + plot_h / 2.0,
        escape_xml(y_label),
    );

    // series polylines, split at non-finite values
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut segment: Vec<(f64, f64)> = Vec::new();
        let flush = |seg: &mut Vec<(f64, f64)>, svg: &mut String| {
            if seg.len() > 1 {
                let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = write!(
                    svg,
                    "<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                     stroke-width=\"1.6\"/>\n",
                    pts.join(" ")
                );
            } else if seg.len() == 1 {
                let (x, y) = seg[0];
                let _ = write!(
                    svg,
                    "<circle class=\"series\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" \
                     fill=\"{color}\"/>\n"
                );
            }
            seg.clear();
        };
        for (i, &v) in s.values.iter().enumerate() {
            if v.is_finite() {
                segment.push((x_of(i), y_of(v)));
            } else {
                flush(&mut segment, &mut svg);
            }
        }
        flush(&mut segment, &mut svg);
    }

    // legend, left to right under the title
    let mut lx = LEFT;
    let ly = 40.0;
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let _ = write!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" stroke=\"{color}\" \
             stroke-width=\"3\"/>\n\
             <text x=\"{2:.2}\" y=\"{3:.2}\" font-size=\"11\" fill=\"#333\">{4}</text>\n",
            ly - 4.0,
            lx + 18.0,
            lx + 23.0,
            ly,
            escape_xml(&s.label)
        );
        lx += 34.0 + 6.6 * s.label.len() as f64;
    }

    svg.push_str("</svg>\n");
    svg
}

/// The training-curve plot: train and validation loss per epoch.
pub fn training_curves_svg(curves: &[EpochRecord]) -> String {
    let series = [
        Series {
            label: "train loss".to_string(),
            values: curves.iter().map(|r| r.train_loss).collect(),
        },
        Series {
            label: "val loss".to_string(),
            values: curves.iter().map(|r| r.val_loss).collect(),
        },
    ];
    line_chart_svg("training curves", "epoch", "loss (scaled targets)", &series)
}

/// The regression fit plot: target and prediction series over the split's
/// points in chronological order.
pub fn fit_plot_svg(split: &str, series: &[Series]) -> String {
    line_chart_svg(
        &format!("predictions vs targets — {split} split"),
        "point (chronological)",
        "value (raw units)",
        series,
    )
}
