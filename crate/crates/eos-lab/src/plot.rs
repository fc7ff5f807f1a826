//! Minimal deterministic SVG line charts for trajectory logs.

use crate::tracker::TrajectoryRecord;
use std::fmt::Write;

const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
    /// Draw markers instead of a polyline.
    pub scatter: bool,
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    pub log_y: bool,
    pub series: Vec<Series<'a>>,
    /// Horizontal reference lines `(y, label)`.
    pub hlines: Vec<(f64, &'a str)>,
}

fn bounds(p: &Panel) -> Option<(f64, f64, f64, f64)> {
    let tr = |y: f64| if p.log_y { y.log10() } else { y };
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let ys = p.series.iter().flat_map(|s| s.points.iter().copied()).chain(p.hlines.iter().map(|h| (f64::NAN, h.0)));
    for (x, y) in ys {
        if x.is_finite() {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
        }
        let y = tr(y);
        if y.is_finite() {
            b.2 = b.2.min(y);
            b.3 = b.3.max(y);
        }
    }
    if !(b.0.is_finite() && b.2.is_finite()) {
        return None;
    }
    if b.1 == b.0 {
        b.1 = b.0 + 1.0;
    }
    if b.3 == b.2 {
        b.3 = b.2 + 1.0;
    }
    let pad = 0.05 * (b.3 - b.2);
    Some((b.0, b.1, b.2 - pad, b.3 + pad))
}

fn draw_panel(out: &mut String, p: &Panel, ox: f64, oy: f64) {
    let _ = writeln!(out, r#"<g transform="translate({ox:.1},{oy:.1})">"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="18" font-size="14" text-anchor="middle">{}</text>"#, PANEL_W / 2.0, p.title);
    let (x0, y0, w, h) = (MARGIN, 28.0, PANEL_W - MARGIN - 12.0, PANEL_H - 28.0 - 36.0);
    let _ = writeln!(out, r#"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-size="11" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        y0 + h / 2.0,
        y0 + h / 2.0,
        p.y_label
    );
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">step</text>"#, x0 + w / 2.0, PANEL_H - 4.0);
    let Some((xa, xb, ya, yb)) = bounds(p) else {
        let _ = writeln!(out, "</g>");
        return;
    };
    let tr = |y: f64| if p.log_y { y.log10() } else { y };
    let sx = |x: f64| x0 + (x - xa) / (xb - xa) * w;
    let sy = |y: f64| y0 + h - (tr(y) - ya) / (yb - ya) * h;
    for k in 0..=4 {
        let fx = xa + (xb - xa) * k as f64 / 4.0;
        let fy = ya + (yb - ya) * k as f64 / 4.0;
        let ylab = if p.log_y { format!("1e{fy:.1}") } else { format!("{fy:.3}") };
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{fx:.0}</text>"#, sx(fx), y0 + h + 14.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{ylab}</text>"#, x0 - 3.0, y0 + h - h * k as f64 / 4.0 + 3.0);
    }
    for (y, label) in &p.hlines {
        if tr(*y).is_finite() {
            let yy = sy(*y);
            let _ = writeln!(out, r##"<line x1="{x0:.1}" x2="{:.1}" y1="{yy:.2}" y2="{yy:.2}" stroke="#555" stroke-dasharray="5,4"/>"##, x0 + w);
            let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end" fill="#555">{label}</text>"##, x0 + w - 4.0, yy - 3.0);
        }
    }
    for (i, s) in p.series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().filter(|(x, y)| x.is_finite() && tr(*y).is_finite()).map(|&(x, y)| (sx(x), sy(y))).collect();
        if s.scatter {
            for (x, y) in &pts {
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{c}"/>"#);
            }
        } else if !pts.is_empty() {
            let mut d = String::new();
            for (k, (x, y)) in pts.iter().enumerate() {
                let _ = write!(d, "{}{x:.2},{y:.2}", if k == 0 { "M" } else { " L" });
            }
            let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{c}" stroke-width="1.2"/>"#);
        }
        let ly = y0 + 14.0 + 14.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{:.1}" y="{:.1}" width="10" height="3" fill="{c}"/>"#, x0 + 8.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}" font-size="10">{}</text>"#, x0 + 22.0, s.label);
    }
    let _ = writeln!(out, "</g>");
}

/// Panels stacked vertically in one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W:.0}" height="{height:.0}" viewBox="0 0 {PANEL_W:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, 0.0, PANEL_H * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

fn line<'a>(label: &'a str, records: &[TrajectoryRecord], f: impl Fn(&TrajectoryRecord) -> f64) -> Series<'a> {
    Series { label, points: records.iter().map(|r| (r.t as f64, f(r))).collect(), scatter: false }
}

/// Loss (log scale) above sharpness with the `2/eta` threshold.
pub fn sharpness_loss(records: &[TrajectoryRecord]) -> String {
    let two = records.first().map(|r| r.two_over_eta).unwrap_or(f64::NAN);
    render(&[
        Panel { title: "Training loss", y_label: "loss", log_y: true, series: vec![line("loss", records, |r| r.loss)], hlines: vec![] },
        Panel { title: "Sharpness", y_label: "Lambda", log_y: false, series: vec![line("Lambda", records, |r| r.lambda1)], hlines: vec![(two, "2/eta")] },
    ])
}

/// Output-layer norm and sharpness, with anomalous steps marked.
pub fn anorm_sharpness(records: &[TrajectoryRecord]) -> String {
    let anomalies: Vec<(f64, f64)> = records.iter().filter(|r| r.anomaly).map(|r| (r.t as f64, r.lambda1)).collect();
    let two = records.first().map(|r| r.two_over_eta).unwrap_or(f64::NAN);
    render(&[
        Panel { title: "Output-layer norm", y_label: "||A||^2", log_y: false, series: vec![line("||A||^2", records, |r| r.anorm2)], hlines: vec![] },
        Panel {
            title: "Sharpness and coupling anomalies",
            y_label: "Lambda",
            log_y: false,
            series: vec![line("Lambda", records, |r| r.lambda1), Series { label: "anomaly", points: anomalies, scatter: true }],
            hlines: vec![(two, "2/eta")],
        },
    ])
}

/// Residual split into the top-direction part and the remainder, with the auxiliary sequence.
pub fn r_decomposition(records: &[TrajectoryRecord], n: usize) -> String {
    let nf = n as f64;
    render(&[Panel {
        title: "Residual decomposition",
        y_label: "squared norm / n",
        log_y: true,
        series: vec![
            line("||D||^2/n", records, |r| r.loss),
            line("(D^T v1)^2/n", records, |r| r.dtv1 * r.dtv1 / nf),
            line("||R||^2/n", records, |r| r.rnorm2 / nf),
            line("||R'||^2/n", records, |r| r.rprime_norm2 / nf),
        ],
        hlines: vec![],
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_panel_renders() {
        let s = render(&[Panel { title: "x", y_label: "y", log_y: true, series: vec![], hlines: vec![] }]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }

    #[test]
    fn log_panel_skips_nonpositive() {
        let s = render(&[Panel {
            title: "x",
            y_label: "y",
            log_y: true,
            series: vec![Series { label: "a", points: vec![(0.0, 0.0), (1.0, 1.0), (2.0, 10.0)], scatter: false }],
            hlines: vec![],
        }]);
        assert_eq!(s.matches(" L").count(), 1);
    }
}
