use std::fmt::Write as _;
use std::io;
use std::path::Path;

use hstab_core::marginal::marginal_curves;

use crate::sweep::{CellCount, SweepResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// Colors for counts 0, 1, 2, ...; the last entry repeats.
const COUNT_PALETTE: [&str; 6] = ["#2c7bb6", "#fdae61", "#f46d43", "#d73027", "#a50026", "#67001f"];
const MARGINAL_COLOR: &str = "#bdbdbd";
const ERROR_COLOR: &str = "#000000";

fn diverging(rate: f64, scale: f64) -> String {
    // blue for decay, red for growth
    let t = (rate / scale).clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let s = -t;
        (255.0 - s * (255.0 - 44.0), 255.0 - s * (255.0 - 123.0), 255.0 - s * (255.0 - 182.0))
    } else {
        (255.0 - t * (255.0 - 215.0), 255.0 - t * (255.0 - 48.0), 255.0 - t * (255.0 - 39.0))
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Self-contained SVG of a sweep: one rectangle per cell, marginal curves as
/// polylines, axes `k` (horizontal) and `L` (vertical).
pub fn render_svg(result: &SweepResult) -> String {
    let spec = &result.spec;
    let (k0, k1) = (spec.k_range.min, spec.k_range.max);
    let (l0, l1) = (spec.l_range.min, spec.l_range.max);
    let (nk, nl) = (spec.k_range.count, spec.l_range.count);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let (cw, ch) = (plot_w / nk as f64, plot_h / nl as f64);
    // cell centers sit on grid values, so pad the axis by half a cell
    let dk = (k1 - k0) / (nk - 1) as f64;
    let dl = (l1 - l0) / (nl - 1) as f64;
    let (kmin, kmax) = (k0 - 0.5 * dk, k1 + 0.5 * dk);
    let (lmin, lmax) = (l0 - 0.5 * dl, l1 + 0.5 * dl);
    let px = |k: f64| MARGIN + (k - kmin) / (kmax - kmin) * plot_w;
    let py = |l: f64| HEIGHT - MARGIN - (l - lmin) / (lmax - lmin) * plot_h;

    let use_counts = result.cells.iter().any(|c| matches!(c.count, Some(CellCount::Count(_))));
    let rate_scale = result
        .cells
        .iter()
        .filter_map(|c| c.rate)
        .fold(0.0f64, |m, r| m.max(r.abs()))
        .max(1e-12);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    for (idx, c) in result.cells.iter().enumerate() {
        let (ik, il) = (idx / nl, idx % nl);
        let color = if c.error.is_some() {
            ERROR_COLOR.to_string()
        } else if c.is_marginal() {
            MARGINAL_COLOR.to_string()
        } else if use_counts {
            match c.count {
                Some(CellCount::Count(n)) => COUNT_PALETTE[n.min(COUNT_PALETTE.len() - 1)].to_string(),
                _ => MARGINAL_COLOR.to_string(),
            }
        } else {
            c.rate.map(|r| diverging(r, rate_scale)).unwrap_or_else(|| MARGINAL_COLOR.into())
        };
        let x = MARGIN + ik as f64 * cw;
        let y = HEIGHT - MARGIN - (il + 1) as f64 * ch;
        let _ = writeln!(
            svg,
            r#"<rect class="cell" x="{x:.3}" y="{y:.3}" width="{cw:.3}" height="{ch:.3}" fill="{color}"><title>k={} L={}</title></rect>"#,
            c.k, c.length
        );
    }

    if let Ok(curves) = marginal_curves(spec.a, spec.b, spec.lambda, lmax) {
        for curve in &curves {
            let pts: Vec<(f64, f64)> = curve
                .sample(400, lmax)
                .into_iter()
                .filter(|&(k, l)| k >= kmin && k <= kmax && l >= lmin && l <= lmax)
                .collect();
            if pts.len() < 2 {
                continue;
            }
            let coords: Vec<String> = pts.iter().map(|&(k, l)| format!("{:.3},{:.3}", px(k), py(l))).collect();
            let _ = writeln!(
                svg,
                r##"<polyline class="curve" data-branch="{}" points="{}" fill="none" stroke="#d7191c" stroke-width="2"/>"##,
                curve.branch_index,
                coords.join(" ")
            );
        }
    }

    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, WIDTH - MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN}" stroke="black"/>"#);
    for (v, label) in [(k0, k0), (k1, k1)] {
        let _ = writeln!(svg, r#"<text x="{:.3}" y="{}" font-size="12" text-anchor="middle">{label}</text>"#, px(v), y0 + 16.0);
    }
    for (v, label) in [(l0, l0), (l1, l1)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{:.3}" font-size="12" text-anchor="end">{label}</text>"#, x0 - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">k</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 16 {})">L</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn render_heatmap(result: &SweepResult, path: &Path) -> io::Result<()> {
    if result.cells.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "empty sweep result"));
    }
    std::fs::write(path, render_svg(result))
}
