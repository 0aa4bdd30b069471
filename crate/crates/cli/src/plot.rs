//! Minimal SVG line charts.

use std::fmt::Write as _;

use vlpipe_core::caption::SweepRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Precision, recall and F1 against the length hint.
pub fn sweep_chart(rows: &[SweepRow]) -> String {
    let pick = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| (r.hint as f64, f(r))).collect();
    line_chart(
        "cap F1 by length hint",
        "length hint",
        "score",
        &[
            Series { label: "precision", color: "#1f77b4", points: pick(|r| r.precision) },
            Series { label: "recall", color: "#d62728", points: pick(|r| r.recall) },
            Series { label: "f1", color: "#2ca02c", points: pick(|r| r.f1) },
        ],
    )
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain([0.0]));
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    // axes
    let (left, bottom) = (MARGIN, HEIGHT - MARGIN);
    writeln!(w, r#"<line x1="{left}" y1="{bottom}" x2="{:.1}" y2="{bottom}" stroke="black"/>"#, WIDTH - MARGIN).unwrap();
    writeln!(w, r#"<line x1="{left}" y1="{MARGIN}" x2="{left}" y2="{bottom}" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#, sx(xv), bottom + 16.0, tick(xv)).unwrap();
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#, left - 6.0, sy(yv) + 4.0, tick(yv)).unwrap();
    }
    writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, HEIGHT - 14.0, escape(x_label)).unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    )
    .unwrap();

    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(w, r#"<polyline class="series" data-label="{}" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, escape(s.label), s.color, pts.join(" ")).unwrap();
        let ly = MARGIN + 16.0 * k as f64;
        writeln!(w, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/>"#, WIDTH - MARGIN - 90.0, WIDTH - MARGIN - 70.0, s.color).unwrap();
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#, WIDTH - MARGIN - 64.0, ly + 4.0, escape(s.label)).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
