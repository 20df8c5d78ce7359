//! Minimal deterministic SVG output: partition plots and convergence curves.

use std::fmt::Write;

use eit_shapes::measurements::ElectrodeLayout;
use eit_shapes::meshing::boundary_point;
use eit_shapes::{Conductivity, Partition};

const SIZE: f64 = 400.0;
const PAD: f64 = 20.0;

fn px(x: f64) -> f64 {
    PAD + x * SIZE
}

fn py(y: f64) -> f64 {
    PAD + (1.0 - y) * SIZE
}

/// Diverging colour on a log scale: blue below 1, red above, white at 1.
fn color(value: f64) -> String {
    let t = (value.max(1e-3).log10() / 1.0).clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (1.0, 1.0 - 0.8 * t, 1.0 - 0.8 * t)
    } else {
        (1.0 + 0.8 * t, 1.0 + 0.8 * t, 1.0)
    };
    format!("#{:02x}{:02x}{:02x}", (r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8)
}

fn points(p: &eit_shapes::Polygon) -> String {
    p.vertices()
        .iter()
        .map(|v| format!("{:.2},{:.2}", px(v.x), py(v.y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
}

/// Filled conductivity, optional electrode layout and optional outline of a
/// reference partition drawn in blue.
pub fn conductivity(
    sigma: &Conductivity,
    electrodes: Option<&ElectrodeLayout>,
    outline: Option<&Partition>,
) -> String {
    let mut out = String::new();
    let side = SIZE + 2.0 * PAD;
    header(&mut out, side, side);
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="{}" stroke="black" stroke-width="1"/>"#,
        color(sigma.background())
    );
    for (p, v) in sigma.partition().inclusions().iter().zip(sigma.values()) {
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{}" stroke="black" stroke-width="0.8"/>"#,
            points(p),
            color(*v)
        );
    }
    if let Some(layout) = electrodes {
        for e in &layout.electrodes {
            let a = boundary_point(e.start);
            let b = boundary_point(e.end);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-width="6" stroke-opacity="0.6"/>"#,
                px(a.x),
                py(a.y),
                px(b.x),
                py(b.y)
            );
        }
    }
    if let Some(part) = outline {
        for p in part.inclusions() {
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="none" stroke="blue" stroke-width="1.5"/>"#,
                points(p)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// `log10 J` against iteration.
pub fn convergence(misfits: &[f64]) -> String {
    let (w, h) = (480.0, 300.0);
    let mut out = String::new();
    header(&mut out, w, h);
    let logs: Vec<f64> = misfits.iter().map(|j| j.max(1e-300).log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = logs.len().max(2) - 1;
    let (x0, y0, pw, ph) = (50.0, 20.0, w - 70.0, h - 60.0);
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let pts: Vec<String> = logs
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{:.2},{:.2}", x0 + pw * i as f64 / n as f64, y0 + ph * (hi - l) / span))
        .collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.2"/>"#, pts.join(" "));
    let _ = writeln!(out, r#"<text x="{x0}" y="{:.0}" font-size="12">iteration 0..{}</text>"#, h - 20.0, logs.len().saturating_sub(1));
    let _ = writeln!(out, r#"<text x="4" y="{:.0}" font-size="12">1e{hi:.0}</text>"#, y0 + 10.0);
    let _ = writeln!(out, r#"<text x="4" y="{:.0}" font-size="12">1e{lo:.0}</text>"#, y0 + ph);
    out.push_str("</svg>\n");
    out
}

/// One row per vertex: `region,vertex,x,y,value`.
pub fn partition_csv(sigma: &Conductivity) -> String {
    let mut out = String::from("region,vertex,x,y,value\n");
    for (r, (p, v)) in sigma.partition().inclusions().iter().zip(sigma.values()).enumerate() {
        for (k, q) in p.vertices().iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", r + 1, k, q.x, q.y, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_scale() {
        assert_eq!(color(1.0), "#ffffff");
        assert_eq!(color(10.0), "#ff3333");
        assert_eq!(color(0.1), "#3333ff");
        assert_eq!(color(1e6), color(10.0));
    }

    #[test]
    fn convergence_plot_is_well_formed() {
        let s = convergence(&[1.0, 0.1, 0.01]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("1e0") && s.contains("1e-2"));
        let single = convergence(&[0.5]);
        assert!(single.contains("polyline"));
    }
}
