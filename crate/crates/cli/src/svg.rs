//! Minimal SVG charts: polylines per series and min/quartile/max boxes.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (_, y1) = bounds(ys);
        Self { x0, x1, y0: 0.0, y1: if y1 > 0.0 { y1 * 1.1 } else { 1.0 } }
    }

    fn x(&self, v: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN + (v - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn header(out: &mut String, title: &str, frame: &Frame, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = write!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, l - 4.0, t + 4.0, frame.y1);
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, l - 4.0, b + 4.0);
    let _ = write!(out, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0, escape(y_label));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per named series of `(x, y)` points.
pub fn line_chart(title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let points = series.iter().flat_map(|s| s.1.iter().copied());
    let frame = Frame::new(points.clone().map(|p| p.0), points.map(|p| p.1));
    let mut out = String::new();
    header(&mut out, title, &frame, y_label);
    let b = HEIGHT - MARGIN;
    for x in [frame.x0, frame.x1].iter().filter(|x| x.is_finite()) {
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#, frame.x(*x), b + 16.0);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.x(x), frame.y(y)))
            .collect();
        let _ = write!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        let _ = write!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 100.0,
            MARGIN + 16.0 * i as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One box per group: whiskers at min/max, box at the quartiles, line at the median.
pub fn box_chart(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let all = groups.iter().flat_map(|g| g.1.iter().copied());
    let frame = Frame::new([0.0, groups.len() as f64].into_iter(), all);
    let mut out = String::new();
    header(&mut out, title, &frame, y_label);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let _ = write!(out, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - MARGIN + 16.0, escape(name));
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let [min, q1, med, q3, max] = [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| frame.y(quantile(&v, q)));
        let color = COLORS[i % COLORS.len()];
        let half = slot * 0.2;
        let _ = write!(out, r#"<line x1="{cx}" y1="{min}" x2="{cx}" y2="{max}" stroke="{color}"/>"#);
        let _ = write!(
            out,
            r#"<rect x="{}" y="{q3}" width="{}" height="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            cx - half,
            2.0 * half,
            (q1 - q3).max(1.0)
        );
        let _ = write!(out, r#"<line x1="{}" y1="{med}" x2="{}" y2="{med}" stroke="{color}" stroke-width="2"/>"#, cx - half, cx + half);
    }
    out.push_str("</svg>\n");
    out
}
