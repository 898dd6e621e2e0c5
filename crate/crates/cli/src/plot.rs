//! Minimal SVG learning curve.

use std::fmt::Write;

/// Fulfilled fraction per iteration, with a dashed horizontal reference line.
pub fn learning_curve_svg(points: &[(usize, f64)], reference: f64, reference_label: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let max_iter = points.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let x = |i: f64| left + pw * i / max_iter;
    let y = |v: f64| top + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{}" x2="{left}" y1="{yy}" y2="{yy}" stroke="black"/><text x="{}" y="{}" text-anchor="end">{:.0}%</text>"##,
            left - 4.0,
            left - 6.0,
            y(v) + 4.0,
            v * 100.0,
            yy = y(v)
        );
    }
    let step = ((max_iter / 10.0).ceil() as usize).max(1);
    for i in (0..=max_iter as usize).step_by(step) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{i}</text>"#,
            x(i as f64),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">policy iteration</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" x2="{}" y1="{ry}" y2="{ry}" stroke="#c0392b" stroke-dasharray="6 4"/><text x="{}" y="{}" text-anchor="end" fill="#c0392b">{reference_label}</text>"##,
        left + pw,
        left + pw - 4.0,
        y(reference) - 6.0,
        ry = y(reference)
    );
    if !points.is_empty() {
        let path: Vec<String> = points
            .iter()
            .map(|&(i, v)| format!("{:.2},{:.2}", x(i as f64), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#2c3e50" stroke-width="2"/>"##,
            path.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}
