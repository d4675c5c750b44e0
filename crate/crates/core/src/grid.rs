//! Patched point sets and the conforming triangulation built on them.
//!
//! Each puncture gets a log-polar patch in its disk coordinate, a uniform
//! lattice covers the rest of the chart (or the torus fundamental domain),
//! optional polar annuli resolve interface circles, and in sphere mode a
//! graded far-field patch carries the chart out towards infinity. A single
//! Delaunay triangulation of the union ties all patches together, so the
//! discrete energy is one consistent cotangent-weighted sum.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::flat_bundle::{SurfaceMode, SurfaceSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// Lattice cells across the chart diameter (sphere) or the unit side (torus).
    pub background: usize,
    /// Angular nodes of every puncture patch.
    pub angular: usize,
    /// Radial rings per factor two; the grading ratio is `2^(1/rings_per_octave)`.
    pub rings_per_octave: usize,
    /// Innermost ring radius in disk units.
    pub r_min: f64,
    /// Angular nodes of the far-field patch.
    pub far_angular: usize,
    /// Outer radius of the far-field patch relative to the chart radius.
    pub far_factor: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            background: 128,
            angular: 256,
            rings_per_octave: 9,
            r_min: 1e-4,
            far_angular: 128,
            far_factor: 200.0,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        if self.background < 8
            || self.angular < 16
            || self.rings_per_octave < 2
            || self.far_angular < 16
        {
            return Err(Error::Mesh("grid resolution too small".into()));
        }
        if !(self.r_min > 0.0 && self.r_min < 0.25) {
            return Err(Error::Mesh("r_min must lie in (0, 1/4)".into()));
        }
        if !(self.far_factor > 2.0) {
            return Err(Error::Mesh("far_factor must exceed 2".into()));
        }
        Ok(())
    }

    /// The same grid refined by a factor of two in every direction.
    pub fn refined(&self) -> Self {
        Self {
            background: self.background * 2,
            angular: self.angular * 2,
            rings_per_octave: self.rings_per_octave * 2,
            far_angular: self.far_angular * 2,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    Puncture(usize),
    Circle,
    Far,
    Lattice,
}

/// Log-polar patch: node (ring j, angle k) sits at `center + scale·radii[j]·e^{2πik/angular}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarPatch {
    pub kind: PatchKind,
    pub center: Complex64,
    pub scale: f64,
    pub radii: Vec<f64>,
    pub angular: usize,
    pub first: usize,
    /// Uniform spacing of `s = ln r`.
    pub ds: f64,
}

impl PolarPatch {
    pub fn node(&self, ring: usize, k: usize) -> usize {
        self.first + ring * self.angular + (k % self.angular)
    }

    /// Ring index whose radius equals `r` within 1e-9 relative, if any.
    pub fn ring_at(&self, r: f64) -> Option<usize> {
        self.radii.iter().position(|x| (x - r).abs() <= 1e-9 * r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticePatch {
    pub origin: Complex64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub periodic: bool,
    pub index: Vec<Option<usize>>,
}

impl LatticePatch {
    /// Node at lattice position (i, j) together with the period shift used to reach it.
    pub fn at(&self, i: i64, j: i64) -> Option<(usize, (i32, i32))> {
        let (nx, ny) = (self.nx as i64, self.ny as i64);
        let (ii, jj, sx, sy) = if self.periodic {
            (
                i.rem_euclid(nx),
                j.rem_euclid(ny),
                i.div_euclid(nx) as i32,
                j.div_euclid(ny) as i32,
            )
        } else {
            if i < 0 || j < 0 || i >= nx || j >= ny {
                return None;
            }
            (i, j, 0, 0)
        };
        self.index[(jj * nx + ii) as usize].map(|n| (n, (sx, sy)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Patch {
    Polar(PolarPatch),
    Lattice(LatticePatch),
}

impl Patch {
    pub fn kind(&self) -> PatchKind {
        match self {
            Patch::Polar(p) => p.kind,
            Patch::Lattice(_) => PatchKind::Lattice,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub z: Complex64,
    pub patch: usize,
    /// Ring (polar) or row (lattice).
    pub ring: usize,
    /// Angle index (polar) or column (lattice).
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triangle {
    pub v: [usize; 3],
    /// Period shift of each vertex image (torus only).
    pub shift: [(i32, i32); 3],
    pub pos: [Complex64; 3],
    pub area: f64,
    /// Cotangent of the angle at each vertex.
    pub cot: [f64; 3],
    pub centroid: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// The neighbour image used is `b` translated by this period shift (relative to `a`).
    pub shift: (i32, i32),
    /// (triangle, cot(opposite angle) / 8) contributions.
    pub tris: Vec<(usize, f64)>,
}

/// Linear derivative stencil: `∂f(a) ≈ Σ c·f(b)` over (node, period shift, coefficient).
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub entries: Vec<(usize, (i32, i32), Complex64)>,
    /// Central, patch-native stencil.
    pub regular: bool,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub mode: SurfaceMode,
    pub nodes: Vec<Node>,
    pub patches: Vec<Patch>,
    pub triangles: Vec<Triangle>,
    pub edges: Vec<Edge>,
    pub node_edges: Vec<Vec<usize>>,
    pub dual_area: Vec<f64>,
    /// Greedy colouring: no two nodes of one colour share an edge.
    pub colors: Vec<Vec<usize>>,
    /// `∂_z` stencil per node; `∂_z̄` uses conjugated coefficients.
    pub dz: Vec<Stencil>,
    pub lattice_h: f64,
}

fn geometric_rings(r_min: f64, per_octave: usize) -> (Vec<f64>, f64) {
    let m = per_octave as f64;
    let depth = (m * (0.5 / r_min).log2()).ceil() as i64;
    let radii = (-depth..=per_octave as i64)
        .map(|j| 0.5 * 2f64.powf(j as f64 / m))
        .collect::<Vec<_>>();
    (radii, std::f64::consts::LN_2 / m)
}

fn cross(a: Complex64, b: Complex64) -> f64 {
    a.re * b.im - a.im * b.re
}

fn dot(a: Complex64, b: Complex64) -> f64 {
    a.re * b.re + a.im * b.im
}

struct Builder {
    nodes: Vec<Node>,
    patches: Vec<Patch>,
}

impl Builder {
    fn add_polar(
        &mut self,
        kind: PatchKind,
        center: Complex64,
        scale: f64,
        radii: Vec<f64>,
        angular: usize,
        ds: f64,
    ) {
        let pid = self.patches.len();
        let first = self.nodes.len();
        for (j, r) in radii.iter().enumerate() {
            for k in 0..angular {
                let th = 2.0 * std::f64::consts::PI * k as f64 / angular as f64;
                self.nodes.push(Node {
                    z: center + Complex64::from_polar(scale * r, th),
                    patch: pid,
                    ring: j,
                    index: k,
                });
            }
        }
        self.patches.push(Patch::Polar(PolarPatch {
            kind,
            center,
            scale,
            radii,
            angular,
            first,
            ds,
        }));
    }
}

impl Mesh {
    /// Builds the patched mesh. `circles` are (centre, radius) interface circles that
    /// must be resolved exactly by a ring of nodes.
    pub fn build(
        surface: &SurfaceSpec,
        circles: &[(Complex64, f64)],
        params: &GridParams,
    ) -> Result<Mesh> {
        params.validate()?;
        surface.validate()?;
        let torus = surface.mode == SurfaceMode::Torus;
        let rd = surface.disk_radius;
        let h = if torus {
            1.0 / params.background as f64
        } else {
            2.0 * surface.chart_radius / params.background as f64
        };
        let gap = 0.6 * h;
        let mut b = Builder {
            nodes: Vec::new(),
            patches: Vec::new(),
        };
        // excluded annuli for lattice points: (centre, inner, outer)
        let mut holes: Vec<(Complex64, f64, f64)> = Vec::new();
        let (radii, ds) = geometric_rings(params.r_min, params.rings_per_octave);
        for (i, p) in surface.punctures.iter().enumerate() {
            b.add_polar(
                PatchKind::Puncture(i),
                *p,
                rd,
                radii.clone(),
                params.angular,
                ds,
            );
            holes.push((*p, -1.0, rd + gap));
        }
        for (c, r) in circles {
            let m = ((2.0 * std::f64::consts::PI * r / h).round() as usize).max(32);
            let q = (2.0 * std::f64::consts::PI / m as f64).exp();
            let cr: Vec<f64> = (-2..=2).map(|j| q.powi(j)).collect();
            for (pc, _, po) in &holes {
                let d = (c - pc).norm();
                if d + po > r / (q * q) - gap && d - po < r * q * q + gap {
                    return Err(Error::Mesh(
                        "interface circle too close to a puncture disk".into(),
                    ));
                }
            }
            holes.push((*c, r / (q * q) - gap, r * q * q + gap));
            b.add_polar(PatchKind::Circle, *c, *r, cr, m, q.ln());
        }
        let (n_lat, origin) = if torus {
            (params.background, Complex64::new(0.0, 0.0))
        } else {
            let rc = surface.chart_radius;
            let r0 = rc + h;
            let m = params.far_angular;
            let q = (2.0 * std::f64::consts::PI / m as f64).exp();
            let nr = ((params.far_factor * rc / r0).ln() / q.ln()).ceil() as i32 + 1;
            let fr: Vec<f64> = (0..nr).map(|j| q.powi(j)).collect();
            b.add_polar(PatchKind::Far, Complex64::new(0.0, 0.0), r0, fr, m, q.ln());
            (params.background + 1, Complex64::new(-rc, -rc))
        };
        let lat_pid = b.patches.len();
        let mut index = vec![None; n_lat * n_lat];
        for j in 0..n_lat {
            for i in 0..n_lat {
                let z = origin + Complex64::new(i as f64 * h, j as f64 * h);
                if !torus && z.norm() > surface.chart_radius + 1e-12 {
                    continue;
                }
                // excluded disks never straddle the torus edges (checked by validation)
                let blocked = holes.iter().any(|(c, lo, hi)| {
                    let d = (z - c).norm();
                    d > *lo && d < *hi
                });
                if blocked {
                    continue;
                }
                index[j * n_lat + i] = Some(b.nodes.len());
                b.nodes.push(Node {
                    z,
                    patch: lat_pid,
                    ring: j,
                    index: i,
                });
            }
        }
        b.patches.push(Patch::Lattice(LatticePatch {
            origin,
            h,
            nx: n_lat,
            ny: n_lat,
            periodic: torus,
            index,
        }));
        let Builder { nodes, patches } = b;
        let triangles = triangulate(&nodes, &patches, torus, h)?;
        let mut mesh = Mesh {
            mode: surface.mode,
            nodes,
            patches,
            triangles,
            edges: Vec::new(),
            node_edges: Vec::new(),
            dual_area: Vec::new(),
            colors: Vec::new(),
            dz: Vec::new(),
            lattice_h: h,
        };
        mesh.build_edges()?;
        mesh.build_colors();
        mesh.build_stencils();
        Ok(mesh)
    }

    fn build_edges(&mut self) -> Result<()> {
        let mut map: HashMap<(usize, usize, (i32, i32)), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut dual = vec![0.0; self.nodes.len()];
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                dual[t.v[k]] += t.area / 3.0;
                let (p, q) = ((k + 1) % 3, (k + 2) % 3);
                let (mut a, mut b) = (t.v[p], t.v[q]);
                let mut sh = (t.shift[q].0 - t.shift[p].0, t.shift[q].1 - t.shift[p].1);
                if a == b {
                    return Err(Error::Mesh("edge joins a node to its own image".into()));
                }
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                    sh = (-sh.0, -sh.1);
                }
                let id = *map.entry((a, b, sh)).or_insert_with(|| {
                    edges.push(Edge {
                        a,
                        b,
                        shift: sh,
                        tris: Vec::new(),
                    });
                    edges.len() - 1
                });
                edges[id].tris.push((ti, t.cot[k] / 8.0));
            }
        }
        let mut node_edges = vec![Vec::new(); self.nodes.len()];
        for (e, ed) in edges.iter().enumerate() {
            if ed.tris.len() > 2 {
                return Err(Error::Mesh("non-manifold edge".into()));
            }
            node_edges[ed.a].push(e);
            node_edges[ed.b].push(e);
        }
        if let Some(i) = node_edges.iter().position(|v| v.is_empty()) {
            return Err(Error::Mesh(format!("node {i} is not part of any triangle")));
        }
        self.edges = edges;
        self.node_edges = node_edges;
        self.dual_area = dual;
        Ok(())
    }

    fn build_colors(&mut self) {
        let n = self.nodes.len();
        let mut color = vec![usize::MAX; n];
        let mut colors: Vec<Vec<usize>> = Vec::new();
        let mut used = Vec::new();
        for a in 0..n {
            used.clear();
            for &e in &self.node_edges[a] {
                let o = self.other(e, a);
                if color[o] != usize::MAX {
                    used.push(color[o]);
                }
            }
            let c = (0..).find(|c| !used.contains(c)).unwrap();
            color[a] = c;
            if c == colors.len() {
                colors.push(Vec::new());
            }
            colors[c].push(a);
        }
        self.colors = colors;
    }

    /// The endpoint of edge `e` opposite to `a`.
    pub fn other(&self, e: usize, a: usize) -> usize {
        let ed = &self.edges[e];
        if ed.a == a {
            ed.b
        } else {
            ed.a
        }
    }

    /// Position of the neighbour across edge `e` as seen from `a` (image shifts applied).
    pub fn neighbour_position(&self, e: usize, a: usize) -> Complex64 {
        let ed = &self.edges[e];
        let (o, s) = if ed.a == a {
            (ed.b, ed.shift)
        } else {
            (ed.a, (-ed.shift.0, -ed.shift.1))
        };
        self.nodes[o].z + Complex64::new(s.0 as f64, s.1 as f64)
    }

    /// Shift of the neighbour image across edge `e` as seen from `a`.
    pub fn neighbour_shift(&self, e: usize, a: usize) -> (i32, i32) {
        let ed = &self.edges[e];
        if ed.a == a {
            ed.shift
        } else {
            (-ed.shift.0, -ed.shift.1)
        }
    }

    pub fn polar(&self, patch: usize) -> Option<&PolarPatch> {
        match &self.patches[patch] {
            Patch::Polar(p) => Some(p),
            _ => None,
        }
    }

    /// Patch of puncture i.
    pub fn puncture_patch(&self, i: usize) -> Option<&PolarPatch> {
        self.patches.iter().find_map(|p| match p {
            Patch::Polar(pp) if pp.kind == PatchKind::Puncture(i) => Some(pp),
            _ => None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn lsq_stencil(&self, a: usize) -> Stencil {
        let mut m = [[0.0f64; 2]; 2];
        let mut rows = Vec::new();
        let za = self.nodes[a].z;
        for &e in &self.node_edges[a] {
            let d = self.neighbour_position(e, a) - za;
            let w = 1.0 / d.norm_sqr();
            m[0][0] += w * d.re * d.re;
            m[0][1] += w * d.re * d.im;
            m[1][1] += w * d.im * d.im;
            rows.push((self.other(e, a), self.neighbour_shift(e, a), d, w));
        }
        m[1][0] = m[0][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[0][1];
        let inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        let mut entries = Vec::new();
        let mut self_c = Complex64::new(0.0, 0.0);
        for (o, s, d, w) in rows {
            let cx = w * (inv[0][0] * d.re + inv[0][1] * d.im);
            let cy = w * (inv[1][0] * d.re + inv[1][1] * d.im);
            let c = Complex64::new(cx, -cy) * 0.5;
            entries.push((o, s, c));
            self_c -= c;
        }
        entries.push((a, (0, 0), self_c));
        Stencil {
            entries,
            regular: false,
        }
    }

    fn build_stencils(&mut self) {
        let mut out = Vec::with_capacity(self.nodes.len());
        for a in 0..self.nodes.len() {
            let node = self.nodes[a];
            let st = match &self.patches[node.patch] {
                Patch::Polar(p) => polar_stencil(p, node.ring, node.index),
                Patch::Lattice(l) => lattice_stencil(l, node.index as i64, node.ring as i64),
            };
            out.push(st.unwrap_or_else(|| self.lsq_stencil(a)));
        }
        self.dz = out;
    }

    /// Applies the `∂_z` stencil at node a to scalar samples (no period transport).
    pub fn dz_scalar(&self, a: usize, f: &[f64]) -> Complex64 {
        self.dz[a].entries.iter().map(|(b, _, c)| c * f[*b]).sum()
    }
}

const D1_4: [(i64, f64); 4] = [
    (-2, 1.0 / 12.0),
    (-1, -8.0 / 12.0),
    (1, 8.0 / 12.0),
    (2, -1.0 / 12.0),
];
const D1_2: [(i64, f64); 2] = [(-1, -0.5), (1, 0.5)];

fn polar_stencil(p: &PolarPatch, j: usize, k: usize) -> Option<Stencil> {
    let nr = p.radii.len() as i64;
    let m = p.angular as i64;
    let (ji, ki) = (j as i64, k as i64);
    let mut regular = true;
    // s-derivative weights
    let sw: Vec<(i64, f64)> = if ji >= 2 && ji + 2 < nr {
        D1_4.to_vec()
    } else if ji >= 1 && ji + 1 < nr {
        regular = false;
        D1_2.to_vec()
    } else if ji == 0 {
        regular = false;
        vec![(0, -1.5), (1, 2.0), (2, -0.5)]
    } else {
        regular = false;
        vec![(0, 1.5), (-1, -2.0), (-2, 0.5)]
    };
    let th = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
    let dth = 2.0 * std::f64::consts::PI / m as f64;
    let rho = p.scale * p.radii[j];
    // ∂_z = e^{-iθ}/(2ρ) (∂_s − i ∂_θ)
    let pre = Complex64::from_polar(1.0 / (2.0 * rho), -th);
    let mut entries: Vec<(usize, (i32, i32), Complex64)> = Vec::new();
    for (o, w) in sw {
        entries.push((p.node((ji + o) as usize, k), (0, 0), pre * (w / p.ds)));
    }
    for (o, w) in D1_4 {
        let kk = (ki + o).rem_euclid(m) as usize;
        entries.push((p.node(j, kk), (0, 0), pre * Complex64::new(0.0, -w / dth)));
    }
    Some(Stencil { entries, regular })
}

fn lattice_stencil(l: &LatticePatch, i: i64, j: i64) -> Option<Stencil> {
    let axis = |di: i64, dj: i64| -> Option<(Vec<(usize, (i32, i32), f64)>, bool)> {
        let get = |o: i64| l.at(i + o * di, j + o * dj);
        if let (Some(m2), Some(m1), Some(p1), Some(p2)) = (get(-2), get(-1), get(1), get(2)) {
            let v = [m2, m1, p1, p2];
            return Some((
                v.iter()
                    .zip(D1_4.iter())
                    .map(|((n, s), (_, w))| (*n, *s, w / l.h))
                    .collect(),
                true,
            ));
        }
        if let (Some(m1), Some(p1)) = (get(-1), get(1)) {
            return Some((
                vec![(m1.0, m1.1, -0.5 / l.h), (p1.0, p1.1, 0.5 / l.h)],
                false,
            ));
        }
        None
    };
    let (xs, rx) = axis(1, 0)?;
    let (ys, ry) = axis(0, 1)?;
    let mut entries = Vec::new();
    for (n, s, w) in xs {
        entries.push((n, s, Complex64::new(0.5 * w, 0.0)));
    }
    for (n, s, w) in ys {
        entries.push((n, s, Complex64::new(0.0, -0.5 * w)));
    }
    Some(Stencil {
        entries,
        regular: rx && ry,
    })
}

fn triangulate(nodes: &[Node], patches: &[Patch], torus: bool, h: f64) -> Result<Vec<Triangle>> {
    // (original node, shift) for every inserted vertex
    let mut verts: Vec<(usize, (i32, i32))> = (0..nodes.len()).map(|i| (i, (0, 0))).collect();
    let mut pts: Vec<Point2<f64>> = nodes.iter().map(|n| Point2::new(n.z.re, n.z.im)).collect();
    if torus {
        let band = 4.0 * h;
        for (i, n) in nodes.iter().enumerate() {
            for dx in -1i32..=1 {
                for dy in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let x = n.z.re + dx as f64;
                    let y = n.z.im + dy as f64;
                    if x >= -band && x <= 1.0 + band && y >= -band && y <= 1.0 + band {
                        verts.push((i, (dx, dy)));
                        pts.push(Point2::new(x, y));
                    }
                }
            }
        }
    }
    let tri = DelaunayTriangulation::<Point2<f64>>::bulk_load_stable(pts.clone())
        .map_err(|e| Error::Mesh(format!("triangulation failed: {e:?}")))?;
    if tri.num_vertices() != pts.len() {
        return Err(Error::Mesh("duplicate mesh points".into()));
    }
    let innermost = |v: usize| -> Option<usize> {
        let n = &nodes[v];
        match &patches[n.patch] {
            Patch::Polar(p) if matches!(p.kind, PatchKind::Puncture(_)) && n.ring == 0 => {
                Some(n.patch)
            }
            _ => None,
        }
    };
    let mut out = Vec::new();
    for f in tri.inner_faces() {
        let vh = f.vertices();
        let ids = [
            vh[0].fix().index(),
            vh[1].fix().index(),
            vh[2].fix().index(),
        ];
        let pos: [Complex64; 3] = [0, 1, 2].map(|k| Complex64::new(pts[ids[k]].x, pts[ids[k]].y));
        let centroid = (pos[0] + pos[1] + pos[2]) / 3.0;
        if torus
            && !(centroid.re >= 0.0 && centroid.re < 1.0 && centroid.im >= 0.0 && centroid.im < 1.0)
        {
            continue;
        }
        let v = [0, 1, 2].map(|k| verts[ids[k]].0);
        let shift = [0, 1, 2].map(|k| verts[ids[k]].1);
        // the hole around a puncture is not part of the surface
        if let (Some(a), Some(b), Some(c)) = (innermost(v[0]), innermost(v[1]), innermost(v[2])) {
            if a == b && b == c {
                continue;
            }
        }
        let area2 = cross(pos[1] - pos[0], pos[2] - pos[0]);
        if area2 <= 0.0 {
            return Err(Error::Mesh("degenerate triangle".into()));
        }
        let cot = [0, 1, 2].map(|k| {
            let u = pos[(k + 1) % 3] - pos[k];
            let w = pos[(k + 2) % 3] - pos[k];
            dot(u, w) / cross(u, w).abs()
        });
        out.push(Triangle {
            v,
            shift,
            pos,
            area: 0.5 * area2,
            cot,
            centroid,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GridParams {
        GridParams {
            background: 24,
            angular: 32,
            rings_per_octave: 4,
            r_min: 0.01,
            far_angular: 32,
            far_factor: 20.0,
        }
    }

    #[test]
    fn torus_mesh_tiles_the_square() {
        let s = SurfaceSpec {
            mode: SurfaceMode::Torus,
            punctures: vec![Complex64::new(0.5, 0.5)],
            disk_radius: 0.2,
            chart_radius: 0.0,
        };
        let m = Mesh::build(&s, &[], &small()).unwrap();
        let area: f64 = m.triangles.iter().map(|t| t.area).sum();
        let hole = std::f64::consts::PI * (0.2 * 0.01f64).powi(2);
        assert!((area + hole - 1.0).abs() < 1e-4, "{area}");
        // every edge away from the puncture hole has two triangles
        let inner = m.puncture_patch(0).unwrap();
        for e in &m.edges {
            let on_hole = |v: usize| m.nodes[v].patch == 0 && m.nodes[v].ring == 0;
            if !(on_hole(e.a) && on_hole(e.b)) {
                assert_eq!(e.tris.len(), 2);
            }
        }
        assert!(inner.ring_at(0.5).is_some() && inner.ring_at(1.0).is_some());
        assert!(m.edges.iter().any(|e| e.shift != (0, 0)));
        for c in &m.colors {
            for &a in c {
                for &e in &m.node_edges[a] {
                    assert!(!c.contains(&m.other(e, a)));
                }
            }
        }
    }

    #[test]
    fn sphere_mesh_with_circle() {
        let s = SurfaceSpec {
            mode: SurfaceMode::SphereChart,
            punctures: vec![Complex64::new(0.0, 0.0), Complex64::new(0.6, 0.0)],
            disk_radius: 0.25,
            chart_radius: 2.5,
        };
        let params = GridParams {
            background: 64,
            ..small()
        };
        let m = Mesh::build(&s, &[(Complex64::new(0.0, 0.0), 1.2)], &params).unwrap();
        let r_out = 2.5 * 20.0;
        let area: f64 = m.triangles.iter().map(|t| t.area).sum();
        // the outer boundary is a polygon inscribed in the last ring
        let far = m.patches.iter().find_map(|p| match p {
            Patch::Polar(pp) if pp.kind == PatchKind::Far => Some(pp),
            _ => None,
        });
        let far = far.unwrap();
        let r_last = far.scale * far.radii.last().unwrap();
        assert!(r_last >= r_out);
        let polygon = 0.5
            * far.angular as f64
            * r_last
            * r_last
            * (2.0 * std::f64::consts::PI / far.angular as f64).sin();
        let inner = m.puncture_patch(0).unwrap();
        let rh = inner.scale * inner.radii[0];
        let hole = 0.5
            * inner.angular as f64
            * rh
            * rh
            * (2.0 * std::f64::consts::PI / inner.angular as f64).sin();
        assert!(
            (area + 2.0 * hole - polygon).abs() < 1e-9 * polygon,
            "{area} {polygon}"
        );
        let circ = m.patches.iter().find_map(|p| match p {
            Patch::Polar(pp) if pp.kind == PatchKind::Circle => Some(pp),
            _ => None,
        });
        assert!(circ.unwrap().ring_at(1.0).is_some());
    }

    #[test]
    fn stencils_differentiate_linear_and_quadratic() {
        let s = SurfaceSpec {
            mode: SurfaceMode::SphereChart,
            punctures: vec![Complex64::new(0.1, 0.0)],
            disk_radius: 0.5,
            chart_radius: 2.0,
        };
        let m = Mesh::build(&s, &[], &small()).unwrap();
        // f = x² - y² + 3x = Re(z² + 3z) has ∂f = z + 3/2
        let f: Vec<f64> = m.nodes.iter().map(|n| (n.z * n.z + 3.0 * n.z).re).collect();
        for a in (0..m.num_nodes()).step_by(7) {
            let z = m.nodes[a].z;
            let exact = z + 1.5;
            let got = m.dz_scalar(a, &f);
            let tol = if m.dz[a].regular { 1e-2 } else { 0.5 };
            assert!(
                (got - exact).norm() < tol * (1.0 + exact.norm()),
                "node {a} {z} {got} {exact}"
            );
        }
    }
}
