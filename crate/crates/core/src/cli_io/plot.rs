//! SVG heatmaps of node fields.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::field::{MetricField, OneFormField};
use crate::flat_bundle::SurfaceMode;

const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(x: f64) -> [u8; 3] {
    let x = if x.is_finite() {
        x.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let s = x * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    [0, 1, 2].map(|k| (STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f).round() as u8)
}

/// Heatmap of per-node `values` over the square `[lo, hi]²`, pixels taking the
/// mean of the nodes inside them (empty pixels copy a filled neighbour).
pub fn heatmap_svg(
    title: &str,
    z: &[Complex64],
    values: &[f64],
    lo: Complex64,
    hi: Complex64,
    size: usize,
    marks: &[Complex64],
) -> String {
    let (w, h) = (hi.re - lo.re, hi.im - lo.im);
    let mut sum = vec![0.0; size * size];
    let mut cnt = vec![0u32; size * size];
    for (p, &v) in z.iter().zip(values) {
        let px = ((p.re - lo.re) / w * size as f64).floor();
        let py = ((hi.im - p.im) / h * size as f64).floor();
        if v.is_finite() && px >= 0.0 && py >= 0.0 && px < size as f64 && py < size as f64 {
            let k = py as usize * size + px as usize;
            sum[k] += v;
            cnt[k] += 1;
        }
    }
    let mut val: Vec<Option<f64>> = sum
        .iter()
        .zip(&cnt)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    // dilate into empty pixels, in a fixed order for reproducible output
    while val.iter().any(|v| v.is_none()) && val.iter().any(|v| v.is_some()) {
        let prev = val.clone();
        for y in 0..size {
            for x in 0..size {
                if prev[y * size + x].is_some() {
                    continue;
                }
                let nb = [(0i64, -1i64), (-1, 0), (1, 0), (0, 1)]
                    .iter()
                    .filter_map(|(dx, dy)| {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        (xx >= 0 && yy >= 0 && xx < size as i64 && yy < size as i64)
                            .then(|| prev[yy as usize * size + xx as usize])
                            .flatten()
                    })
                    .next();
                val[y * size + x] = nb;
            }
        }
    }
    let vals: Vec<f64> = val.iter().map(|v| v.unwrap_or(0.0)).collect();
    let (vmin, vmax) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if vmax - vmin > 1e-300 {
        vmax - vmin
    } else {
        1.0
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" viewBox="0 0 {size} {}" shape-rendering="crispEdges">"#,
        size + 20,
        size + 20
    );
    let _ = writeln!(s, "<title>{title}</title>");
    for y in 0..size {
        let mut x = 0;
        while x < size {
            let c = colour((vals[y * size + x] - vmin) / span);
            let mut run = 1;
            while x + run < size && colour((vals[y * size + x + run] - vmin) / span) == c {
                run += 1;
            }
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{run}" height="1" fill="#{:02x}{:02x}{:02x}"/>"##,
                c[0], c[1], c[2]
            );
            x += run;
        }
    }
    for m in marks {
        let px = (m.re - lo.re) / w * size as f64;
        let py = (hi.im - m.im) / h * size as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="none" stroke="red" stroke-width="1"/>"#
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="2" y="{}" font-size="11" font-family="monospace">{title}: [{vmin:.4e}, {vmax:.4e}]</text>"#,
        size + 14
    );
    s.push_str("</svg>\n");
    s
}

fn view(field: &MetricField) -> (Complex64, Complex64) {
    let disc = &field.disc;
    match disc.mesh.mode {
        SurfaceMode::Torus => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0)),
        SurfaceMode::SphereChart => {
            let r = disc.surface.chart_radius;
            (Complex64::new(-r, -r), Complex64::new(r, r))
        }
    }
}

/// `log det H` per node.
pub fn log_det(field: &MetricField) -> Vec<f64> {
    let disc = &field.disc;
    (0..field.num_nodes())
        .map(|a| {
            let h = field.rel_at(a);
            let d = h.determinant().re.ln();
            d + disc.l(a).iter().sum::<f64>()
        })
        .collect()
}

/// The two standard plots: `log det H` and `log10 ‖φ_dz‖`.
pub fn emit_plots(field: &MetricField, phi: &OneFormField, size: usize) -> Vec<(String, String)> {
    let disc = &field.disc;
    let z: Vec<Complex64> = disc.mesh.nodes.iter().map(|x| x.z).collect();
    let (lo, hi) = view(field);
    let marks = &disc.surface.punctures;
    let norm: Vec<f64> = (0..field.num_nodes())
        .map(|a| phi.dz_at(a).norm().max(1e-300).log10())
        .collect();
    vec![
        (
            "log_det.svg".into(),
            heatmap_svg("log det H", &z, &log_det(field), lo, hi, size, marks),
        ),
        (
            "phi_norm.svg".into(),
            heatmap_svg("log10 |phi_dz|", &z, &norm, lo, hi, size, marks),
        ),
    ]
}
