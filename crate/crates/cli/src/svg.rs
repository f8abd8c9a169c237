//! Minimal SVG scatter plots; every plotted value is also written as CSV.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    // constant data still gets a nonzero range
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// Scatter of `(x, y, group)` points, coloured by group in order of first appearance.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, String)]) -> String {
    let (x0, x1) = span(points.iter().map(|p| p.0));
    let (y0, y1) = span(points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut groups: Vec<&str> = Vec::new();
    for p in points {
        if !groups.contains(&p.2.as_str()) {
            groups.push(&p.2);
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (v, x) in [(x0, left), (x1, right)] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{v:.3}</text>"#, bottom + 14.0);
    }
    for (v, y) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-size="10">{v:.3}</text>"#, left - 4.0);
    }
    for p in points {
        let g = groups.iter().position(|g| *g == p.2).unwrap_or(0);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            sx(p.0),
            sy(p.1),
            PALETTE[g % PALETTE.len()]
        );
    }
    for (g, name) in groups.iter().enumerate() {
        let y = top + 14.0 + 16.0 * g as f64;
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}"/>"#, right - 60.0, y - 4.0, PALETTE[g % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, right - 50.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
