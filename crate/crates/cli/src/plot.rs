//! Minimal SVG renderings of survival curves and attention profiles.

use std::collections::BTreeMap;
use std::fmt::Write;

use bdrisk_core::analysis::{AttentionProfile, SurvivalCurve};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn survival_svg(curves: &BTreeMap<String, SurvivalCurve>) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let t_max = curves
        .values()
        .flat_map(|c| c.times.last().copied())
        .fold(1.0f64, f64::max)
        * 1.05;
    let x = |t: f64| pad + (w - 2.0 * pad) * t / t_max;
    let y = |s: f64| h - pad - (h - 2.0 * pad) * s;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad},{} V{} H{}" fill="none" stroke="black"/>"#,
        pad,
        h - pad,
        w - pad
    );
    for tick in 0..=4 {
        let s = tick as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{s:.2}</text>"#, pad - 6.0, y(s) + 4.0);
    }
    for tick in 0..=4 {
        let t = t_max * tick as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{t:.0}</text>"#, x(t), h - pad + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">days since first post</text>"#, w / 2.0, h - 8.0);
    for (i, (group, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = format!("M{},{}", x(0.0), y(1.0));
        let mut s_prev = 1.0;
        for (t, s) in c.times.iter().zip(&c.survival) {
            let _ = write!(d, " H{:.2} V{:.2}", x(*t), y(*s));
            s_prev = *s;
        }
        let _ = write!(d, " H{:.2}", x(t_max));
        let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#);
        let ly = pad + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}">{} (n={}, S={s_prev:.2})</text>"#,
            w - pad - 150.0,
            escape(group),
            c.n_subjects
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn attention_svg(profile: &AttentionProfile) -> String {
    let (cell_w, cell_h, left, top) = (90.0, 32.0, 110.0, 40.0);
    let w = left + cell_w * profile.levels.len() as f64 + 20.0;
    let h = top + cell_h * profile.symptoms.len() as f64 + 20.0;
    let peak = profile.mean.iter().flatten().flatten().copied().fold(0.0f64, f64::max).max(1e-12);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (j, level) in profile.levels.iter().enumerate() {
        let cx = left + cell_w * (j as f64 + 0.5);
        let _ = writeln!(svg, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, top - 10.0, escape(level));
    }
    for (i, symptom) in profile.symptoms.iter().enumerate() {
        let cy = top + cell_h * i as f64;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 8.0, cy + cell_h / 2.0 + 4.0, escape(symptom));
        for j in 0..profile.levels.len() {
            let cx = left + cell_w * j as f64;
            let (fill, label) = match profile.mean[i][j] {
                Some(v) => {
                    let shade = 255.0 - 200.0 * (v / peak);
                    (format!("rgb({0:.0},{0:.0},255)", shade), format!("{v:.3}"))
                }
                None => ("#eeeeee".to_string(), "-".to_string()),
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{cx}" y="{cy}" width="{cell_w}" height="{cell_h}" fill="{fill}" stroke="white"/><text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                cx + cell_w / 2.0,
                cy + cell_h / 2.0 + 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
