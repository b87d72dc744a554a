//! Minimal static SVG bar charts; no external rendering dependency.

use std::fmt::Write as _;

use super::ProbabilityBin;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 40.0;
const CORRECT: &str = "#4c78a8";
const INCORRECT: &str = "#e45756";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = HEIGHT - MARGIN,
        x2 = WIDTH - MARGIN / 2.0
    );
    out
}

/// Stacked correct/incorrect counts per max-probability bin.
pub fn bins_chart(bins: &[ProbabilityBin]) -> String {
    let mut out = open("Predictions by max probability");
    let max = bins.iter().map(ProbabilityBin::total).max().unwrap_or(0).max(1) as f64;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = (WIDTH - 1.5 * MARGIN) / bins.len().max(1) as f64;
    for (j, b) in bins.iter().enumerate() {
        let x = MARGIN + j as f64 * slot + slot * 0.15;
        let w = slot * 0.7;
        let base = HEIGHT - MARGIN;
        let hc = plot_h * b.correct as f64 / max;
        let hi = plot_h * b.incorrect as f64 / max;
        let _ = writeln!(out, r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{hc:.2}" fill="{CORRECT}"/>"#, base - hc);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{hi:.2}" fill="{INCORRECT}"/>"#,
            base - hc - hi
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + w / 2.0,
            base + 14.0,
            escape(&b.label())
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}/{}</text>"#,
            x + w / 2.0,
            base - hc - hi - 4.0,
            b.correct,
            b.incorrect
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" fill="{CORRECT}">correct</text><text x="{}" y="{}" fill="{INCORRECT}">incorrect</text>"#,
        HEIGHT - 8.0,
        MARGIN + 60.0,
        HEIGHT - 8.0
    );
    out.push_str("</svg>\n");
    out
}

/// One bar per class Brier component.
pub fn per_class_chart(values: &[f64], class_names: &[String]) -> String {
    let mut out = open("Brier score per class");
    let max = values.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = (WIDTH - 1.5 * MARGIN) / values.len().max(1) as f64;
    for (k, &v) in values.iter().enumerate() {
        let x = MARGIN + k as f64 * slot + slot * 0.15;
        let w = slot * 0.7;
        let h = plot_h * v / max;
        let base = HEIGHT - MARGIN;
        let name = class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
        let _ = writeln!(out, r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" fill="{CORRECT}"/>"#, base - h);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + w / 2.0,
            base + 14.0,
            escape(&name)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.4}</text>"#,
            x + w / 2.0,
            base - h - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}
