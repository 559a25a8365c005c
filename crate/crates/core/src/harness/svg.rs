//! Minimal static SVG line and bar charts; enough to eyeball a run without
//! any plotting dependency.

use std::fmt::Write;

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 200.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 140.0;
const MARGIN_TOP: f64 = 30.0;
const PANEL_GAP: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" \
         viewBox=\"0 0 {WIDTH} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Vertically stacked line charts sharing the x axis.
pub fn trajectory_panels(title: &str, panels: &[(&str, Vec<Series>)]) -> String {
    let height = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + PANEL_GAP);
    let mut out = header(height);
    let _ = writeln!(out, "<text x=\"{}\" y=\"18\" font-size=\"14\">{}</text>", MARGIN_LEFT, escape(title));
    let (x_lo, x_hi) = bounds(panels.iter().flat_map(|(_, s)| s.iter().flat_map(|s| s.points.iter().map(|p| &p.0))));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (i, (label, series)) in panels.iter().enumerate() {
        let top = MARGIN_TOP + i as f64 * (PANEL_HEIGHT + PANEL_GAP);
        let (y_lo, y_hi) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| &p.1)));
        let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = |y: f64| top + PANEL_HEIGHT - (y.clamp(y_lo, y_hi) - y_lo) / (y_hi - y_lo) * PANEL_HEIGHT;
        let _ = writeln!(
            out,
            "<rect x=\"{MARGIN_LEFT}\" y=\"{top}\" width=\"{plot_w}\" height=\"{PANEL_HEIGHT}\" fill=\"none\" stroke=\"#999\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" transform=\"rotate(-90 {0} {1})\" text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT - 50.0,
            top + PANEL_HEIGHT / 2.0,
            escape(label)
        );
        for (value, anchor) in [(y_hi, top + 10.0), (y_lo, top + PANEL_HEIGHT)] {
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{anchor}\" text-anchor=\"end\">{value:.3}</text>",
                MARGIN_LEFT - 4.0
            );
        }
        for (j, s) in series.iter().enumerate() {
            if s.points.is_empty() {
                continue;
            }
            let path: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if s.dashed { " stroke-dasharray=\"5,3\"" } else { "" };
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.3\"{dash} points=\"{}\"/>",
                s.color,
                path.join(" ")
            );
            let ly = top + 14.0 + 14.0 * j as f64;
            let lx = WIDTH - MARGIN_RIGHT + 10.0;
            let _ = writeln!(
                out,
                "<line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{0}\" stroke=\"{}\"{dash}/><text x=\"{}\" y=\"{ly}\">{}</text>",
                ly - 4.0,
                lx + 18.0,
                s.color,
                lx + 22.0,
                escape(&s.name)
            );
        }
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">time step</text>",
        MARGIN_LEFT + plot_w / 2.0,
        height - 8.0
    );
    out.push_str("</svg>\n");
    out
}

/// Grouped bars `(label, color, a, b)` on a log10 axis; non-positive and
/// non-finite values are left out.
pub fn bar_chart(title: &str, groups: (&str, &str), bars: &[(String, &str, f64, f64)]) -> String {
    let height = MARGIN_TOP + PANEL_HEIGHT + 60.0;
    let mut out = header(height);
    let _ = writeln!(out, "<text x=\"{MARGIN_LEFT}\" y=\"18\" font-size=\"14\">{}</text>", escape(title));
    let logs: Vec<f64> = bars
        .iter()
        .flat_map(|b| [b.2, b.3])
        .filter(|v| v.is_finite() && *v > 0.0)
        .map(f64::log10)
        .collect();
    let (lo, hi) = bounds(logs.iter());
    let (lo, hi) = (lo.min(0.0).floor(), hi.ceil().max(lo.floor() + 1.0));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let base = MARGIN_TOP + PANEL_HEIGHT;
    let sy = |v: f64| base - (v.log10() - lo) / (hi - lo) * PANEL_HEIGHT;
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{PANEL_HEIGHT}\" fill=\"none\" stroke=\"#999\"/>"
    );
    for decade in lo as i64..=hi as i64 {
        let y = sy(10f64.powi(decade as i32));
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\">1e{decade}</text>",
            MARGIN_LEFT - 4.0
        );
    }
    let slot = plot_w / bars.len().max(1) as f64;
    for (i, (label, color, a, b)) in bars.iter().enumerate() {
        let x0 = MARGIN_LEFT + i as f64 * slot + slot * 0.15;
        let bw = slot * 0.35;
        for (k, v) in [*a, *b].into_iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                continue;
            }
            let y = sy(v);
            let opacity = if k == 0 { 1.0 } else { 0.5 };
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"{opacity}\"><title>{v}</title></rect>",
                x0 + k as f64 * bw,
                (base - y).max(0.0)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x0 + bw,
            base + 16.0,
            escape(label)
        );
    }
    let lx = WIDTH - MARGIN_RIGHT + 10.0;
    for (k, name) in [groups.0, groups.1].iter().enumerate() {
        let y = MARGIN_TOP + 14.0 + 16.0 * k as f64;
        let opacity = if k == 0 { 1.0 } else { 0.5 };
        let _ = writeln!(
            out,
            "<rect x=\"{lx}\" y=\"{}\" width=\"12\" height=\"10\" fill=\"#444\" fill-opacity=\"{opacity}\"/><text x=\"{}\" y=\"{y}\">{}</text>",
            y - 9.0,
            lx + 16.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panels_contain_every_series() {
        let s = |name: &str| Series {
            name: name.into(),
            color: "#000",
            points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, -1.0)],
            dashed: false,
        };
        let svg = trajectory_panels("a<b", &[("x", vec![s("one"), s("two")]), ("y", vec![])]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn bars_skip_unplottable_values() {
        let bars = vec![("A".to_string(), "#111", 1.0, 1.1), ("B".to_string(), "#222", f64::NAN, 3e13)];
        let svg = bar_chart("t", ("all", "stable"), &bars);
        assert_eq!(svg.matches("<title>").count(), 3);
    }
}
