//! Clean-versus-attacked overlays as standalone SVG.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 320.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

fn points(samples: &[f64]) -> String {
    let n = samples.len().max(2) - 1;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let mut out = String::new();
    for (i, v) in samples.iter().enumerate() {
        let x = LEFT + pw * i as f64 / n as f64;
        let y = TOP + ph * (1.0 - v.clamp(0.0, 1.0));
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x:.2},{y:.2}");
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Both traces on shared axes: sample index against normalized amplitude.
pub fn overlay_svg(title: &str, clean: &[f64], attacked: &[f64], attacked_name: &str) -> String {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let last = clean.len().max(attacked.len()).saturating_sub(1);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="middle">0</text>"#, y1 + 16.0);
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="middle">{last}</text>"#, y1 + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, x0 - 6.0, y1 + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1</text>"#, x0 - 6.0, y0 + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">sample index</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let cy = (y0 + y1) / 2.0;
    let _ = writeln!(
        s,
        r#"<text x="20" y="{cy}" text-anchor="middle" transform="rotate(-90 20 {cy})">normalized amplitude</text>"#
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        points(clean)
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#d62728" stroke-width="1" stroke-dasharray="4 2" points="{}"/>"##,
        points(attacked)
    );
    let lx = x1 - 150.0;
    let _ = writeln!(s, r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="#1f77b4" stroke-width="1.5"/>"##, y0 + 8.0, lx + 24.0, y0 + 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">clean</text>"#, lx + 30.0, y0 + 12.0);
    let _ = writeln!(
        s,
        r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="#d62728" stroke-width="1" stroke-dasharray="4 2"/>"##,
        y0 + 26.0,
        lx + 24.0,
        y0 + 26.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, y0 + 30.0, escape(attacked_name));
    s.push_str("</svg>\n");
    s
}
