//! CSV and SVG output for contours and harmonic rhythm.

use std::fmt::Write;

use super::harmony::HarmonicRhythmSeries;
use super::melody::ContourPoint;

/// `onset_beats,pitch`, one row per note.
pub fn contour_csv(points: &[ContourPoint]) -> String {
    let mut out = String::from("onset_beats,pitch\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.onset_beats, p.pitch);
    }
    out
}

/// `bar,changes`, one row per bar (bars counted from 0).
pub fn harmonic_rhythm_csv(series: &HarmonicRhythmSeries) -> String {
    let mut out = String::from("bar,changes\n");
    for (bar, changes) in &series.chords_per_bar {
        let _ = writeln!(out, "{bar},{changes}");
    }
    out
}

/// A named line for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = ["#1f5fbf", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], step: bool) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}"/></g>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}" font-size="10" text-anchor="end">{y0}</text>"#, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{MARGIN}" font-size="10" text-anchor="end">{y1}</text>"#);

    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (i, &(x, y)) in s.points.iter().enumerate() {
            if step && i > 0 {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(s.points[i - 1].1));
            }
            let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, pts.trim_end());
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{colour}">{}</text>"#,
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * k as f64,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Melodic contours (onset in beats vs MIDI pitch) as a stepped line chart.
pub fn contour_svg(title: &str, series: &[Series]) -> String {
    line_chart(title, "onset (beats)", "MIDI pitch", series, true)
}

/// Chord changes per bar as a line chart.
pub fn harmonic_rhythm_svg(title: &str, series: &[Series]) -> String {
    line_chart(title, "bar", "chord changes", series, false)
}
