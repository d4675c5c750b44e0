//! Discrete metric fields on a mesh, stored relative to the model K₀.
//!
//! A node stores `h̃ = K₀^{-1/2} K K₀^{-1/2}`, which stays bounded near the poles
//! even though K and K₀ themselves blow up. K₀ is diagonal, `K₀ = diag(e^{l})`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat_bundle::{commutant_basis, Representation, SurfaceSpec};
use crate::grid::{GridParams, Mesh, Patch, PatchKind};
use crate::model_metric::{ModelMetric, Zone};
use crate::pd_geometry::{CMat, PdMatrix};

/// How the energy of an edge moves the neighbour value into the frame of the node.
#[derive(Clone, Debug, PartialEq)]
pub enum Transport {
    /// `T = diag(e^{τ_j})`.
    Diag(Vec<f64>),
    Full(CMat),
}

impl Transport {
    pub fn inverse(&self) -> Transport {
        match self {
            Transport::Diag(t) => Transport::Diag(t.iter().map(|x| -x).collect()),
            Transport::Full(m) => {
                Transport::Full(m.clone().try_inverse().expect("invertible transport"))
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Transport::Diag(t) => t.iter().all(|x| *x == 0.0),
            Transport::Full(_) => false,
        }
    }

    /// `T h T*`.
    pub fn apply(&self, h: &CMat) -> CMat {
        match self {
            Transport::Diag(t) => {
                CMat::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * (t[i] + t[j]).exp())
            }
            Transport::Full(m) => m * h * m.adjoint(),
        }
    }

    pub fn as_matrix(&self, n: usize) -> CMat {
        match self {
            Transport::Diag(t) => CMat::from_fn(n, n, |i, j| {
                if i == j {
                    Complex64::new(t[i].exp(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
            Transport::Full(m) => m.clone(),
        }
    }
}

/// Whether the modified energy subtracts the model on the tail region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    /// The ordinary energy E everywhere.
    Plain,
    /// Ê: plain on the compact part, model-relative on the tail.
    #[default]
    Modified,
}

/// Everything about a problem that does not change during a solve.
#[derive(Debug)]
pub struct Discretization {
    pub mesh: Mesh,
    pub model: ModelMetric,
    pub rep: Representation,
    pub surface: SurfaceSpec,
    pub grid: GridParams,
    pub n: usize,
    /// Node-major `l` (n per node).
    pub log_k0: Vec<f64>,
    /// Node-major `∂_z l`.
    pub dlog_k0: Vec<Complex64>,
    pub tri_tail: Vec<bool>,
    /// `[plain, tail]` weight of every edge.
    pub edge_w: Vec<[f64; 2]>,
    /// Plain transport moving the `b` value into the frame of `a`.
    pub transport: Vec<Transport>,
    pub transport_inv: Vec<Transport>,
    /// Gauge anchor node.
    pub anchor: Option<usize>,
    /// Basis of the commutant of ρ (infinitesimal gauge symmetries).
    pub gauge: Vec<CMat>,
    /// Every transport is a diagonal matrix, so diagonal fields stay diagonal.
    pub diagonal_transports: bool,
}

impl Discretization {
    pub fn new(
        surface: SurfaceSpec,
        rep: Representation,
        model: ModelMetric,
        grid: GridParams,
    ) -> Result<Arc<Self>> {
        rep.validate(surface.mode)?;
        let n = rep.n;
        if model.n != n {
            return Err(Error::Config(
                "model rank differs from representation rank".into(),
            ));
        }
        let circles: Vec<(Complex64, f64)> = model
            .third
            .as_ref()
            .map(|(_, t)| vec![(t.center, t.gamma_radius)])
            .unwrap_or_default();
        let mesh = Mesh::build(&surface, &circles, &grid)?;
        let nn = mesh.num_nodes();
        let mut log_k0 = vec![0.0; nn * n];
        let mut dlog_k0 = vec![Complex64::new(0.0, 0.0); nn * n];
        for (a, node) in mesh.nodes.iter().enumerate() {
            let (l, d) = model.log_diag_and_derivative(node.z)?;
            log_k0[a * n..(a + 1) * n].copy_from_slice(&l);
            dlog_k0[a * n..(a + 1) * n].copy_from_slice(&d);
        }
        let tri_tail: Vec<bool> = mesh
            .triangles
            .iter()
            .map(|t| model.in_tail(t.centroid))
            .collect();
        let mut edge_w = vec![[0.0; 2]; mesh.edges.len()];
        let mut transport = Vec::with_capacity(mesh.edges.len());
        let mut diagonal_transports = true;
        for (e, ed) in mesh.edges.iter().enumerate() {
            for &(t, w) in &ed.tris {
                edge_w[e][tri_tail[t] as usize] += w;
            }
            let la = &log_k0[ed.a * n..(ed.a + 1) * n];
            let lb = &log_k0[ed.b * n..(ed.b + 1) * n];
            let tr = if ed.shift == (0, 0) {
                Transport::Diag((0..n).map(|j| 0.5 * (lb[j] - la[j])).collect())
            } else {
                if edge_w[e][1] != 0.0 {
                    return Err(Error::Mesh("tail region crosses a period edge".into()));
                }
                let g = rep.translation(ed.shift.0, ed.shift.1)?;
                let diag_pos = (0..n).all(|i| {
                    (0..n).all(|j| i == j || g[(i, j)].norm() == 0.0)
                        && g[(i, i)].im == 0.0
                        && g[(i, i)].re > 0.0
                });
                if diag_pos {
                    Transport::Diag(
                        (0..n)
                            .map(|j| 0.5 * (lb[j] - la[j]) + g[(j, j)].re.ln())
                            .collect(),
                    )
                } else {
                    let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || g[(i, j)].norm() == 0.0));
                    diagonal_transports &= is_diag;
                    let m = CMat::from_fn(n, n, |i, j| g[(i, j)] * (0.5 * (lb[j] - la[i])).exp());
                    Transport::Full(m)
                }
            };
            transport.push(tr);
        }
        let transport_inv = transport.iter().map(Transport::inverse).collect();
        let gauge = commutant_basis(&rep);
        let anchor = pick_anchor(&mesh, &surface);
        Ok(Arc::new(Self {
            mesh,
            model,
            rep,
            surface,
            grid,
            n,
            log_k0,
            dlog_k0,
            tri_tail,
            edge_w,
            transport,
            transport_inv,
            anchor,
            gauge,
            diagonal_transports,
        }))
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn l(&self, a: usize) -> &[f64] {
        &self.log_k0[a * self.n..(a + 1) * self.n]
    }

    pub fn dl(&self, a: usize) -> &[Complex64] {
        &self.dlog_k0[a * self.n..(a + 1) * self.n]
    }

    /// Transport of the neighbour across edge `e` into the frame of `a`.
    pub fn transport_into(&self, e: usize, a: usize) -> &Transport {
        if self.mesh.edges[e].a == a {
            &self.transport[e]
        } else {
            &self.transport_inv[e]
        }
    }

    /// Weights of edge `e` for an energy kind: `(weight with plain transport, weight with identity)`.
    pub fn weights(&self, e: usize, kind: EnergyKind) -> (f64, f64) {
        let [p, t] = self.edge_w[e];
        match kind {
            EnergyKind::Plain => (p + t, 0.0),
            EnergyKind::Modified => (p, t),
        }
    }

    /// Disk coordinate radius `|t_i|` of a node, for the puncture whose patch or
    /// disk contains it.
    pub fn disk_radius_of(&self, i: usize, a: usize) -> f64 {
        self.model.disk_coordinate(i, self.mesh.nodes[a].z).norm()
    }

    /// Number of edges whose total weight is negative (zero on a Delaunay mesh).
    pub fn negative_edges(&self) -> usize {
        self.edge_w.iter().filter(|w| w[0] + w[1] < 0.0).count()
    }

    pub fn zone(&self, a: usize) -> Zone {
        self.model.zone(self.mesh.nodes[a].z)
    }
}

fn pick_anchor(mesh: &Mesh, surface: &SurfaceSpec) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (a, node) in mesh.nodes.iter().enumerate() {
        if mesh.patches[node.patch].kind() != PatchKind::Lattice {
            continue;
        }
        let d = surface
            .punctures
            .iter()
            .map(|p| {
                let mut w = node.z - p;
                if surface.mode == crate::flat_bundle::SurfaceMode::Torus {
                    w = Complex64::new(w.re - w.re.round(), w.im - w.im.round());
                }
                w.norm()
            })
            .fold(f64::INFINITY, f64::min);
        let d = if d.is_finite() { d } else { -node.z.norm() };
        if best.is_none_or(|(bd, _)| d > bd + 1e-12) {
            best = Some((d, a));
        }
    }
    best.map(|(_, a)| a)
}

/// A discrete metric field: `h̃` per node on a shared discretization.
#[derive(Clone, Debug)]
pub struct MetricField {
    pub disc: Arc<Discretization>,
    /// Node-major, column-major n×n blocks.
    pub rel: Vec<Complex64>,
}

impl MetricField {
    /// K = K₀ (h̃ ≡ I).
    pub fn model(disc: &Arc<Discretization>) -> Self {
        let n = disc.n;
        let mut rel = vec![Complex64::new(0.0, 0.0); disc.num_nodes() * n * n];
        for a in 0..disc.num_nodes() {
            for j in 0..n {
                rel[a * n * n + j * n + j] = Complex64::new(1.0, 0.0);
            }
        }
        Self {
            disc: Arc::clone(disc),
            rel,
        }
    }

    pub fn n(&self) -> usize {
        self.disc.n
    }

    pub fn num_nodes(&self) -> usize {
        self.disc.num_nodes()
    }

    /// `h̃` at node a.
    pub fn rel_at(&self, a: usize) -> CMat {
        let n = self.n();
        CMat::from_column_slice(n, n, &self.rel[a * n * n..(a + 1) * n * n])
    }

    pub fn set_rel(&mut self, a: usize, m: &CMat) {
        let n = self.n();
        self.rel[a * n * n..(a + 1) * n * n].copy_from_slice(m.as_slice());
    }

    /// `K` at node a (may overflow close to a pole).
    pub fn metric_at(&self, a: usize) -> Result<PdMatrix> {
        let n = self.n();
        let l = self.disc.l(a);
        let h = self.rel_at(a);
        PdMatrix::new(CMat::from_fn(n, n, |i, j| {
            h[(i, j)] * (0.5 * (l[i] + l[j])).exp()
        }))
    }

    /// Builds a field from metric values `K` per node.
    pub fn from_metric(disc: &Arc<Discretization>, mut f: impl FnMut(usize) -> CMat) -> Self {
        let mut out = Self::model(disc);
        let n = disc.n;
        for a in 0..disc.num_nodes() {
            let k = f(a);
            let l = disc.l(a);
            let h = CMat::from_fn(n, n, |i, j| k[(i, j)] * (-0.5 * (l[i] + l[j])).exp());
            out.set_rel(a, &crate::pd_geometry::hermitian_part(&h));
        }
        out
    }

    /// Builds a field from relative values `h̃` per node.
    pub fn from_rel(disc: &Arc<Discretization>, mut f: impl FnMut(usize) -> CMat) -> Self {
        let mut out = Self::model(disc);
        for a in 0..disc.num_nodes() {
            out.set_rel(a, &crate::pd_geometry::hermitian_part(&f(a)));
        }
        out
    }

    /// True if every stored value is diagonal.
    pub fn is_diagonal(&self) -> bool {
        let n = self.n();
        self.rel
            .chunks(n * n)
            .all(|b| (0..n).all(|i| (0..n).all(|j| i == j || b[j * n + i].norm() == 0.0)))
    }

    /// `distance(K, K₀) = distance(h̃, I)` per node.
    pub fn distance_to_model(&self) -> Result<Vec<f64>> {
        (0..self.num_nodes())
            .map(|a| {
                let h = PdMatrix::new(self.rel_at(a))?;
                Ok(h.eigenvalues()?
                    .iter()
                    .map(|x| x.ln().powi(2))
                    .sum::<f64>()
                    .sqrt())
            })
            .collect()
    }

    /// Node-wise distance between two fields on the same discretization.
    pub fn distance_to(&self, other: &MetricField) -> Result<Vec<f64>> {
        (0..self.num_nodes())
            .map(|a| {
                crate::pd_geometry::distance(
                    &PdMatrix::new(self.rel_at(a))?,
                    &PdMatrix::new(other.rel_at(a))?,
                )
            })
            .collect()
    }

    pub fn sup_distance(&self, other: &MetricField) -> Result<f64> {
        Ok(self.distance_to(other)?.into_iter().fold(0.0, f64::max))
    }
}

/// Matrix-valued one-form samples: `dz` and `dz̄` components per node.
#[derive(Clone, Debug)]
pub struct OneFormField {
    pub n: usize,
    pub dz: Vec<Complex64>,
    pub dzbar: Vec<Complex64>,
}

impl OneFormField {
    pub fn zeros(n: usize, nodes: usize) -> Self {
        Self {
            n,
            dz: vec![Complex64::new(0.0, 0.0); nodes * n * n],
            dzbar: vec![Complex64::new(0.0, 0.0); nodes * n * n],
        }
    }

    pub fn dz_at(&self, a: usize) -> CMat {
        let n = self.n;
        CMat::from_column_slice(n, n, &self.dz[a * n * n..(a + 1) * n * n])
    }

    pub fn dzbar_at(&self, a: usize) -> CMat {
        let n = self.n;
        CMat::from_column_slice(n, n, &self.dzbar[a * n * n..(a + 1) * n * n])
    }

    pub fn set(&mut self, a: usize, dz: &CMat, dzbar: &CMat) {
        let n = self.n;
        self.dz[a * n * n..(a + 1) * n * n].copy_from_slice(dz.as_slice());
        self.dzbar[a * n * n..(a + 1) * n * n].copy_from_slice(dzbar.as_slice());
    }
}

/// A set of nodes and triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub nodes: Vec<bool>,
    pub triangles: Vec<bool>,
}

impl Region {
    pub fn all(disc: &Discretization) -> Self {
        Self {
            nodes: vec![true; disc.num_nodes()],
            triangles: vec![true; disc.mesh.triangles.len()],
        }
    }

    pub fn from_predicate(disc: &Discretization, f: impl Fn(Complex64) -> bool) -> Self {
        Self {
            nodes: disc.mesh.nodes.iter().map(|n| f(n.z)).collect(),
            triangles: disc.mesh.triangles.iter().map(|t| f(t.centroid)).collect(),
        }
    }

    /// X minus the half-disks `|t_i| < 1/2`.
    pub fn compact(disc: &Discretization) -> Self {
        let m = &disc.model;
        Self::from_predicate(disc, |z| {
            (0..m.punctures.len()).all(|i| m.disk_coordinate(i, z).norm() >= 0.5 * (1.0 - 1e-9))
        })
    }

    /// The disk `|t_i| ≤ r` of puncture i.
    pub fn disk(disc: &Discretization, i: usize, r: f64) -> Self {
        let m = &disc.model;
        Self::from_predicate(disc, |z| m.disk_coordinate(i, z).norm() <= r * (1.0 + 1e-9))
    }

    /// The annulus `r_in ≤ |t_i| ≤ r_out`.
    pub fn annulus(disc: &Discretization, i: usize, r_in: f64, r_out: f64) -> Self {
        let m = &disc.model;
        Self::from_predicate(disc, |z| {
            let r = m.disk_coordinate(i, z).norm();
            r >= r_in * (1.0 - 1e-9) && r <= r_out * (1.0 + 1e-9)
        })
    }

    /// Nodes of the region that have a neighbour outside it.
    pub fn boundary_nodes(&self, disc: &Discretization) -> Vec<usize> {
        let mesh = &disc.mesh;
        (0..mesh.num_nodes())
            .filter(|&a| {
                self.nodes[a]
                    && mesh.node_edges[a]
                        .iter()
                        .any(|&e| !self.nodes[mesh.other(e, a)])
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        self.nodes.iter().filter(|x| **x).count()
    }
}

/// Id of the patch kind of a node (for dumps).
pub fn patch_label(disc: &Discretization, a: usize) -> String {
    match &disc.mesh.patches[disc.mesh.nodes[a].patch] {
        Patch::Polar(p) => match p.kind {
            PatchKind::Puncture(i) => format!("p{i}"),
            PatchKind::Circle => "circle".into(),
            PatchKind::Far => "far".into(),
            PatchKind::Lattice => "lattice".into(),
        },
        Patch::Lattice(_) => "lattice".into(),
    }
}
