//! Minimal deterministic SVG charts for ablation outputs: one line chart
//! and one grouped bar chart, no external renderer.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_labels(svg: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        escape(y_label)
    );
}

fn frame_and_y_ticks(svg: &mut String, y_min: f64, y_max: f64) -> (f64, f64) {
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\"/>"
    );
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let value = y_min + frac * (y_max - y_min);
        let y = MARGIN_T + plot_h * (1.0 - frac);
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>",
            MARGIN_L + plot_w
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{value:.3}</text>",
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    (plot_w, plot_h)
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((max - min) * 0.1).max(0.01);
    ((min - pad).max(0.0), max + pad)
}

/// Line chart with one polyline and point markers per series.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let mut svg = header(title);
    let (y_min, y_max) = y_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let (x_min, x_max) = {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (_, pts) in series {
            for (x, _) in pts {
                min = min.min(*x);
                max = max.max(*x);
            }
        }
        if min == max {
            (min - 1.0, max + 1.0)
        } else {
            (min, max)
        }
    };
    let (plot_w, plot_h) = frame_and_y_ticks(&mut svg, y_min, y_max);
    let to_xy = |x: f64, y: f64| -> (f64, f64) {
        (
            MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w,
            MARGIN_T + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h,
        )
    };
    // X ticks on the union of sample positions.
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.1.iter().map(|p| p.0)).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    for x in &xs {
        let (px, _) = to_xy(*x, y_min);
        let _ = writeln!(
            svg,
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{x}</text>",
            MARGIN_T + plot_h + 18.0
        );
    }
    for (si, (name, points)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let path: Vec<String> = points
            .iter()
            .map(|(x, y)| {
                let (px, py) = to_xy(*x, *y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        );
        for (x, y) in points {
            let (px, py) = to_xy(*x, *y);
            let _ = writeln!(svg, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\"/>");
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            MARGIN_L + 10.0,
            MARGIN_T + 16.0 + 16.0 * si as f64,
            escape(name)
        );
    }
    axis_labels(&mut svg, x_label, y_label);
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bar chart: one bar per (group, series) pair.
pub fn grouped_bar_chart(
    title: &str,
    y_label: &str,
    groups: &[String],
    series: &[(String, Vec<f64>)],
) -> String {
    let mut svg = header(title);
    let (y_min, y_max) = {
        let (_, max) = y_range(series.iter().flat_map(|s| s.1.iter().copied()));
        (0.0, max)
    };
    let (plot_w, plot_h) = frame_and_y_ticks(&mut svg, y_min, y_max);
    let n_groups = groups.len().max(1);
    let n_series = series.len().max(1);
    let group_w = plot_w / n_groups as f64;
    let bar_w = group_w * 0.8 / n_series as f64;
    for (gi, group) in groups.iter().enumerate() {
        let gx = MARGIN_L + gi as f64 * group_w;
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            gx + group_w / 2.0,
            MARGIN_T + plot_h + 18.0,
            escape(group)
        );
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(gi).copied().unwrap_or(0.0);
            let frac = if y_max > y_min { (v - y_min) / (y_max - y_min) } else { 0.0 };
            let bar_h = plot_h * frac.clamp(0.0, 1.0);
            let x = gx + group_w * 0.1 + si as f64 * bar_w;
            let y = MARGIN_T + plot_h - bar_h;
            let color = COLORS[si % COLORS.len()];
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{bar_h:.2}\" fill=\"{color}\"/>",
                bar_w * 0.9
            );
        }
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            MARGIN_L + 10.0,
            MARGIN_T + 16.0 + 16.0 * si as f64,
            escape(name)
        );
    }
    axis_labels(&mut svg, "", y_label);
    svg.push_str("</svg>\n");
    svg
}
