//! Minimal dependency-free SVG plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(
        out,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

/// Scatter plot of `points`, with `highlight` (e.g. a Pareto front) drawn as
/// a connected line on top.
pub fn scatter(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    highlight: &[(f64, f64)],
) -> String {
    let (x0, x1) = extent(points.iter().chain(highlight).map(|p| p.0));
    let (y0, y1) = extent(points.iter().chain(highlight).map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    header(&mut out, title);
    let _ = write!(
        out,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text><text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        W / 2.0,
        H - 14.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let _ = write!(
        out,
        r#"<text x="{m}" y="{}" text-anchor="start">{x0:.3}</text><text x="{}" y="{}" text-anchor="end">{x1:.3}</text><text x="{}" y="{}" text-anchor="end">{y0:.3}</text><text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#,
        H - MARGIN + 16.0,
        W - MARGIN,
        H - MARGIN + 16.0,
        MARGIN - 4.0,
        H - MARGIN,
        MARGIN - 4.0,
        MARGIN + 4.0,
        m = MARGIN
    );
    for &(x, y) in points {
        let _ = write!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#4a7ab5" fill-opacity="0.6"/>"##,
            sx(x),
            sy(y)
        );
    }
    if !highlight.is_empty() {
        let path: Vec<String> = highlight
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = write!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="1.5"/>"##,
            path.join(" ")
        );
        for &(x, y) in highlight {
            let _ = write!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="#c0392b"/>"##,
                sx(x),
                sy(y)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Heat map of `values[row][col]` on a log2 diverging scale centred at 1.0,
/// which suits latency ratios.
pub fn ratio_heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> String {
    let rows = row_labels.len().max(1) as f64;
    let cols = col_labels.len().max(1) as f64;
    let cw = (W - 2.0 * MARGIN) / cols;
    let ch = (H - 2.0 * MARGIN) / rows;
    let span = values
        .iter()
        .flatten()
        .map(|v| v.log2().abs())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-9);

    let mut out = String::new();
    header(&mut out, title);
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = (v.log2() / span).clamp(-1.0, 1.0);
            // blue below 1, red above
            let (red, green, blue) = if t >= 0.0 {
                (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
            } else {
                (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
            };
            let x = MARGIN + c as f64 * cw;
            let y = MARGIN + r as f64 * ch;
            let _ = write!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="rgb({},{},{})" stroke="white"/><text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{v:.2}</text>"#,
                red as u8,
                green as u8,
                blue as u8,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    for (r, label) in row_labels.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            MARGIN + (r as f64 + 0.5) * ch + 4.0,
            escape(label)
        );
    }
    for (c, label) in col_labels.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN + (c as f64 + 0.5) * cw,
            MARGIN - 6.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
