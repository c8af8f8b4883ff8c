//! Minimal SVG line plots of `metrics.csv`, one panel per column.

use std::fmt::Write;

use crate::experiment::MetricsRow;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 30.0;

struct Series {
    name: &'static str,
    points: Vec<(f64, f64)>,
}

fn series(rows: &[MetricsRow]) -> Vec<Series> {
    let pick = |name, f: &dyn Fn(&MetricsRow) -> Option<f64>| Series {
        name,
        points: rows
            .iter()
            .filter_map(|r| f(r).filter(|v| v.is_finite()).map(|v| (r.iter as f64, v)))
            .collect(),
    };
    vec![
        pick("kl_estimate", &|r| r.kl_estimate),
        pick("mean_norm", &|r| Some(r.mean_norm)),
        pick("cov_trace", &|r| Some(r.cov_trace)),
        pick("max_particle_norm", &|r| Some(r.max_particle_norm)),
    ]
    .into_iter()
    .filter(|s| !s.points.is_empty())
    .collect()
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        // flat or single-point series
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG document plotting every available metric against iteration.
pub fn metrics_svg(rows: &[MetricsRow], title: &str) -> String {
    let panels = series(rows);
    let height = MARGIN_TOP + PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    if panels.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, WIDTH / 2.0, height / 2.0 + 20.0);
    }
    let (x_lo, x_hi) = range(panels.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_BOTTOM - 16.0;
    for (k, s) in panels.iter().enumerate() {
        let top = MARGIN_TOP + k as f64 * PANEL_HEIGHT + 16.0;
        let (y_lo, y_hi) = range(s.points.iter().map(|p| p.1));
        let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = |y: f64| top + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;
        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{MARGIN_LEFT}" y="{}">{}</text>"#, top - 4.0, s.name);
        for (v, y) in [(y_hi, top), (y_lo, top + plot_h)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{v:.4e}</text>"#,
                MARGIN_LEFT - 6.0,
                y + 4.0
            );
        }
        for (v, anchor) in [(x_lo, "start"), (x_hi, "end")] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="{anchor}">{v}</text>"#,
                sx(v),
                top + plot_h + 14.0
            );
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{}"/>"##,
            pts.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}
