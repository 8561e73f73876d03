//! Minimal SVG charts: grouped bars, line plots, and pose overlays.

use std::fmt::Write as _;

use crate::pose::Pose;
use crate::render::ImageGrid;

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(out: &mut String, names: &[&str], x: f64, y: f64) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#, yy - 9.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{yy:.1}" font-size="11">{}</text>"#, x + 14.0, escape(name));
    }
}

/// Grouped bars: one group per category, one bar per series. Values share
/// a 0..=max(100, largest) axis.
pub fn bar_chart(title: &str, categories: &[String], series: &[(String, Vec<f64>)], y_label: &str, notes: &[String]) -> String {
    let (w, h) = (760.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 70.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let max = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(100.0f64, f64::max);
    let group = plot_w / categories.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    let notes_h = 14.0 * notes.len() as f64;

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" font-family="sans-serif">"#, h + notes_h);
    let _ = writeln!(out, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for i in 0..=5 {
        let v = max * i as f64 / 5.0;
        let y = top + plot_h - plot_h * v / max;
        let _ = writeln!(out, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + plot_w);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.0}</text>"#, left - 4.0, y + 3.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-size="11" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (c, cat) in categories.iter().enumerate() {
        let gx = left + group * c as f64 + group * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0).max(0.0);
            let bh = plot_h * v / max;
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{}"><title>{v:.2}</title></rect>"#,
                gx + bar * s as f64,
                top + plot_h - bh,
                bar,
                PALETTE[s % PALETTE.len()]
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end" transform="rotate(-35 {:.1} {:.1})">{}</text>"#,
            gx + group * 0.4,
            top + plot_h + 14.0,
            gx + group * 0.4,
            top + plot_h + 14.0,
            escape(cat)
        );
    }
    let _ =
        writeln!(out, r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, top + plot_h, left + plot_w, top + plot_h);
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names, left + plot_w + 16.0, top + 10.0);
    for (i, note) in notes.iter().enumerate() {
        let _ = writeln!(out, r#"<text x="{left}" y="{:.1}" font-size="11">{}</text>"#, h + 14.0 * i as f64, escape(note));
    }
    out.push_str("</svg>\n");
    out
}

/// Line plot of `(x, y)` series over a shared axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let points = || series.iter().flat_map(|(_, v)| v.iter().copied());
    let x_min = points().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = points().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (x_min, x_max) = if x_min.is_finite() && x_max > x_min { (x_min, x_max) } else { (0.0, 1.0) };
    let y_max = points().map(|p| p.1).fold(100.0f64, f64::max);
    let sx = |x: f64| left + plot_w * (x - x_min) / (x_max - x_min);
    let sy = |y: f64| top + plot_h - plot_h * y / y_max;

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif">"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let _ = writeln!(out, r##"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, sy(v), left + plot_w, sy(v));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.0}</text>"#, left - 4.0, sy(v) + 3.0);
    }
    let ticks = (x_max - x_min).round().clamp(1.0, 10.0) as usize;
    for i in 0..=ticks {
        let x = x_min + (x_max - x_min) * i as f64 / ticks as f64;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{x:.0}</text>"#, sx(x), top + plot_h + 14.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        left + plot_w / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-size="11" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (i, (_, values)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = values.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for &(x, y) in values {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"><title>{y:.2}</title></circle>"#, sx(x), sy(y));
        }
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names, left + plot_w + 16.0, top + 10.0);
    out.push_str("</svg>\n");
    out
}

/// The first image channel as gray pixels, with the skeleton of every pose in
/// `steps` (initial estimate first) drawn over it, and `truth` in green.
pub fn pose_overlay(image: &ImageGrid, steps: &[Pose], truth: &Pose, limbs: &[[usize; 2]], scale: f64) -> String {
    let (w, h) = (image.width, image.height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#,
        w as f64 * scale,
        h as f64 * scale
    );
    let plane = image.plane(0);
    for y in 0..h {
        for x in 0..w {
            let v = (plane[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            let _ = writeln!(out, r##"<rect x="{x}" y="{y}" width="1" height="1" fill="#{v:02x}{v:02x}{v:02x}"/>"##);
        }
    }
    out.push_str(r#"<g shape-rendering="geometricPrecision" stroke-linecap="round">"#);
    out.push('\n');
    let draw = |out: &mut String, pose: &Pose, color: &str, width: f64, opacity: f64| {
        for &[a, b] in limbs {
            let (p, q) = (pose.point(a), pose.point(b));
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
                p.x, p.y, q.x, q.y
            );
        }
        for p in pose.points() {
            let _ = writeln!(out, r#"<circle cx="{:.3}" cy="{:.3}" r="{:.2}" fill="{color}" fill-opacity="{opacity}"/>"#, p.x, p.y, width);
        }
    };
    draw(&mut out, truth, "#2ca02c", 0.6, 0.9);
    let n = steps.len().max(2) - 1;
    for (t, pose) in steps.iter().enumerate() {
        // From red (initial) to blue (final).
        let f = t as f64 / n as f64;
        let color = format!("#{:02x}30{:02x}", (230.0 * (1.0 - f)) as u8, (230.0 * f) as u8);
        draw(&mut out, pose, &color, 0.4, 0.5 + 0.5 * f);
    }
    out.push_str("</g>\n</svg>\n");
    out
}
