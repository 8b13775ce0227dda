//! Minimal SVG figures: psi1 = 0 contours over the (lambda, x) box and a rho heat map.

use std::fmt::Write;

use crate::invariance::BoxGrid;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 56.0;

#[derive(Debug, Default, Clone)]
pub struct Marks {
    /// Eigenvalues, drawn on the top shelf (x = 1).
    pub eigenvalues: Vec<f64>,
    /// Left-shelf crossings (x values at lambda1).
    pub left_crossings: Vec<f64>,
    /// Interior loss points (x, lambda).
    pub loss_points: Vec<(f64, f64)>,
}

struct Frame {
    l0: f64,
    l1: f64,
}

impl Frame {
    fn px(&self, lambda: f64) -> f64 {
        PAD + (lambda - self.l0) / (self.l1 - self.l0) * (W - 2.0 * PAD)
    }
    fn py(&self, x: f64) -> f64 {
        H - PAD - x * (H - 2.0 * PAD)
    }
}

/// Segments of the zero level set, in (lambda, x) coordinates.
pub fn zero_contour(lambdas: &[f64], xs: &[f64], f: &[Vec<f64>]) -> Vec<[(f64, f64); 2]> {
    let mut segs = Vec::new();
    let cut = |a: f64, b: f64| if a == b { 0.5 } else { a / (a - b) };
    for j in 0..lambdas.len().saturating_sub(1) {
        for i in 0..xs.len().saturating_sub(1) {
            // Corners counterclockwise: (j,i) (j+1,i) (j+1,i+1) (j,i+1).
            let v = [f[j][i], f[j + 1][i], f[j + 1][i + 1], f[j][i + 1]];
            let p = [(lambdas[j], xs[i]), (lambdas[j + 1], xs[i]), (lambdas[j + 1], xs[i + 1]), (lambdas[j], xs[i + 1])];
            let mut hits = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (v[e], v[(e + 1) % 4]);
                if (a < 0.0) != (b < 0.0) {
                    let t = cut(a, b);
                    let (pa, pb) = (p[e], p[(e + 1) % 4]);
                    hits.push((pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)));
                }
            }
            match hits.len() {
                2 => segs.push([hits[0], hits[1]]),
                4 => {
                    // Saddle: resolve by the cell-center value.
                    let center = v.iter().sum::<f64>() / 4.0;
                    if (center < 0.0) == (v[0] < 0.0) {
                        segs.push([hits[0], hits[3]]);
                        segs.push([hits[1], hits[2]]);
                    } else {
                        segs.push([hits[0], hits[1]]);
                        segs.push([hits[2], hits[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

fn header(out: &mut String, fr: &Frame, title: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">lambda</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(out, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">x</text>"#, H / 2.0, H / 2.0);
    for (v, anchor, x) in [(fr.l0, "start", fr.px(fr.l0)), (fr.l1, "end", fr.px(fr.l1))] {
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="{anchor}">{v}</text>"#, H - PAD + 16.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">0</text><text x="{}" y="{:.2}" text-anchor="end">1</text>"#, PAD - 6.0, fr.py(0.0) + 4.0, PAD - 6.0, fr.py(1.0) + 4.0);
}

fn footer(out: &mut String, fr: &Frame, marks: &Marks) {
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        fr.px(fr.l1) - PAD,
        fr.py(0.0) - PAD
    );
    for &l in &marks.eigenvalues {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="crimson"/>"#, fr.px(l), fr.py(1.0));
    }
    for &x in &marks.left_crossings {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="royalblue"/>"#, fr.px(fr.l0), fr.py(x));
    }
    for &(x, l) in &marks.loss_points {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="darkorange" stroke-width="2"/>"#, fr.px(l), fr.py(x));
    }
    out.push_str("</svg>\n");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn contour_path(out: &mut String, fr: &Frame, grid: &BoxGrid) {
    let segs = zero_contour(&grid.lambdas, &grid.xs, &grid.psi1);
    let mut d = String::new();
    for [a, b] in segs {
        let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", fr.px(a.0), fr.py(a.1), fr.px(b.0), fr.py(b.1));
    }
    let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="black" stroke-width="1.2"/>"#);
}

/// Box outline, spectral curves {psi1 = 0}, eigenvalues and crossings.
pub fn box_figure(grid: &BoxGrid, marks: &Marks, title: &str) -> String {
    let fr = Frame { l0: grid.lambdas[0], l1: *grid.lambdas.last().unwrap() };
    let mut out = String::new();
    header(&mut out, &fr, title);
    contour_path(&mut out, &fr, grid);
    footer(&mut out, &fr, marks);
    out
}

const HEAT_CELLS: usize = 160;

fn heat_color(t: f64) -> String {
    // Dark (small rho) to light yellow (large rho).
    let t = t.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t) as u8;
    let g = (20.0 + 215.0 * t.powf(1.5)) as u8;
    let b = (80.0 + 60.0 * (1.0 - t) - 40.0 * t).max(0.0) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// log10(rho) heat map, block-minimum downsampled, with the psi1 = 0 contour on top.
pub fn rho_heatmap(grid: &BoxGrid, marks: &Marks, title: &str) -> String {
    let fr = Frame { l0: grid.lambdas[0], l1: *grid.lambdas.last().unwrap() };
    let nl = grid.lambdas.len();
    let nx = grid.xs.len();
    let bl = nl.div_ceil(HEAT_CELLS).max(1);
    let bx = nx.div_ceil(HEAT_CELLS).max(1);
    let floor = 1e-12f64;
    let mut blocks = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j0 in (0..nl).step_by(bl) {
        for i0 in (0..nx).step_by(bx) {
            let mut v = f64::INFINITY;
            for row in &grid.rho[j0..(j0 + bl).min(nl)] {
                for &r in &row[i0..(i0 + bx).min(nx)] {
                    v = v.min(r);
                }
            }
            let lv = v.max(floor).log10();
            lo = lo.min(lv);
            hi = hi.max(lv);
            blocks.push((j0, i0, lv));
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    header(&mut out, &fr, title);
    for (j0, i0, lv) in blocks {
        let j1 = (j0 + bl).min(nl - 1);
        let i1 = (i0 + bx).min(nx - 1);
        let (x0, x1) = (fr.px(grid.lambdas[j0]), fr.px(grid.lambdas[j1]));
        let (y1, y0) = (fr.py(grid.xs[i0]), fr.py(grid.xs[i1]));
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            (x1 - x0).max(0.5),
            (y1 - y0).max(0.5),
            heat_color((lv - lo) / span)
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="40" text-anchor="end">log10 rho in [{lo:.2}, {hi:.2}]</text>"#, W - PAD);
    contour_path(&mut out, &fr, grid);
    footer(&mut out, &fr, marks);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contour_of_a_line() {
        let ls: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let xs = ls.clone();
        let f: Vec<Vec<f64>> = ls.iter().map(|&l| xs.iter().map(|&x| l - x - 0.05).collect()).collect();
        let segs = zero_contour(&ls, &xs, &f);
        assert!(!segs.is_empty());
        for [a, b] in segs {
            assert!((a.0 - a.1 - 0.05).abs() < 1e-12 && (b.0 - b.1 - 0.05).abs() < 1e-12);
        }
    }
}
