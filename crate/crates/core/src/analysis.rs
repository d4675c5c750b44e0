//! Post-processing of solved metrics: the twisted differential φ = (∂K)K⁻¹,
//! its holomorphy and Laurent data, qualitative checks, and the scalar
//! closed-form oracle.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::energy_forms::{endomorphism_derivatives, log_derivative};
use crate::error::{Error, Result};
use crate::field::{Discretization, MetricField, OneFormField, Region};
use crate::flat_bundle::{PunctureData, SingularData, SurfaceMode};
use crate::grid::{Patch, PatchKind};

type CMat = DMatrix<Complex64>;

/// φ = (∂K)K⁻¹ per node (dz part) together with (∂̄K)K⁻¹ (dz̄ part).
pub fn differential(field: &MetricField) -> Result<OneFormField> {
    log_derivative(field)
}

/// L² norm of the discrete ∂̄ of the dz-component of φ over `region`.
///
/// Only nodes with a regular (fourth-order) stencil enter, and a disk of radius
/// `2·r_min` around every puncture is excised.
pub fn holomorphy_residual(
    disc: &Discretization,
    phi: &OneFormField,
    region: Option<&Region>,
) -> Result<f64> {
    Ok(holomorphy_residuals(disc, phi, region)?.0)
}

/// `(‖∂̄φ‖, ‖∂̄φ‖ / ‖∂φ‖)` in L² over the nodes used by [`holomorphy_residual`].
pub fn holomorphy_residuals(
    disc: &Discretization,
    phi: &OneFormField,
    region: Option<&Region>,
) -> Result<(f64, f64)> {
    let nn = disc.num_nodes();
    let vals: Vec<CMat> = (0..nn).map(|a| phi.dz_at(a)).collect();
    let d = endomorphism_derivatives(disc, &vals)?;
    let cut = 2.0 * disc.grid.r_min;
    let npunct = disc.model.punctures.len();
    let (mut bar, mut hol) = (0.0, 0.0);
    for a in 0..nn {
        if region.is_some_and(|r| !r.nodes[a]) || !disc.mesh.dz[a].regular {
            continue;
        }
        if (0..npunct).any(|i| disc.disk_radius_of(i, a) < cut) {
            continue;
        }
        bar += d.dzbar_at(a).norm_squared() * disc.mesh.dual_area[a];
        hol += d.dz_at(a).norm_squared() * disc.mesh.dual_area[a];
    }
    let rel = if hol > 0.0 { (bar / hol).sqrt() } else { 0.0 };
    Ok((bar.sqrt(), rel))
}

/// Laurent coefficients of φ around one puncture, in the disk coordinate `t`:
/// φ ≈ Σ C_m t^m dt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaurentTable {
    pub puncture: usize,
    pub n: usize,
    pub m_max: i32,
    /// Contour radius actually used (`|t|`).
    pub radius: f64,
    /// Second contour radius, near `radius/2`.
    pub radius_half: f64,
    /// `coeffs[j*n + l][m + m_max]`.
    pub coeffs: Vec<Vec<Complex64>>,
    /// `|C_m(r) − C_m(r/2)|`, same layout.
    pub error: Vec<Vec<f64>>,
}

impl LaurentTable {
    pub fn coeff(&self, j: usize, l: usize, m: i32) -> Complex64 {
        self.coeffs[j * self.n + l][(m + self.m_max) as usize]
    }

    pub fn err(&self, j: usize, l: usize, m: i32) -> f64 {
        self.error[j * self.n + l][(m + self.m_max) as usize]
    }

    /// Residue matrix `C_{-1}`.
    pub fn residue(&self) -> CMat {
        CMat::from_fn(self.n, self.n, |j, l| self.coeff(j, l, -1))
    }

    /// Largest extraction error over all slots and orders `m ≤ 0`.
    pub fn max_principal_error(&self) -> f64 {
        self.error
            .iter()
            .flat_map(|e| e[..=self.m_max as usize].iter())
            .fold(0.0, |a: f64, &b| a.max(b))
    }
}

/// Trapezoid rule on one circle: `C_m = (1/M) Σ_k f(t_k) t_k^{−m}` for the
/// `dt`-components `f` sampled at equally spaced `t_k`.
fn trapezoid(samples: &[(Complex64, CMat)], n: usize, m_max: i32) -> Vec<Vec<Complex64>> {
    let mut out = vec![vec![Complex64::new(0.0, 0.0); (2 * m_max + 1) as usize]; n * n];
    let inv = 1.0 / samples.len() as f64;
    for (t, f) in samples {
        for (mi, m) in (-m_max..=m_max).enumerate() {
            let w = t.powi(-m) * inv;
            for j in 0..n {
                for l in 0..n {
                    out[j * n + l][mi] += f[(j, l)] * w;
                }
            }
        }
    }
    out
}

fn table_from(
    puncture: usize,
    n: usize,
    m_max: i32,
    (r1, c1): (f64, Vec<Vec<Complex64>>),
    (r2, c2): (f64, Vec<Vec<Complex64>>),
) -> LaurentTable {
    let error = c1
        .iter()
        .zip(&c2)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()).collect())
        .collect();
    LaurentTable {
        puncture,
        n,
        m_max,
        radius: r1,
        radius_half: r2,
        coeffs: c1,
        error,
    }
}

fn nearest_ring(radii: &[f64], r: f64) -> usize {
    (0..radii.len())
        .min_by(|&x, &y| {
            let dx = (radii[x].ln() - r.ln()).abs();
            let dy = (radii[y].ln() - r.ln()).abs();
            dx.total_cmp(&dy)
        })
        .unwrap_or(0)
}

/// Laurent table of φ at puncture `i` from the puncture-patch rings nearest
/// `r_c` and `r_c/2`.
pub fn laurent_extract(
    disc: &Discretization,
    phi: &OneFormField,
    i: usize,
    m_max: i32,
    r_c: f64,
) -> Result<LaurentTable> {
    let p = disc
        .mesh
        .puncture_patch(i)
        .ok_or_else(|| Error::Geometry(format!("no patch for puncture {i}")))?;
    let r_min = p.radii[0];
    if !(r_c > r_min && r_c <= 1.0) || m_max < 0 {
        return Err(Error::Geometry(format!(
            "contour radius {r_c} outside ({r_min}, 1]"
        )));
    }
    if p.angular < (2 * m_max + 2) as usize {
        return Err(Error::Geometry(format!(
            "{} angular samples cannot resolve orders up to {m_max}",
            p.angular
        )));
    }
    let rd = disc.model.disk_radius;
    let ring = |r: f64| {
        let j = nearest_ring(&p.radii, r);
        let samples: Vec<(Complex64, CMat)> = (0..p.angular)
            .map(|k| {
                let a = p.node(j, k);
                let t = disc.model.disk_coordinate(i, disc.mesh.nodes[a].z);
                (t, phi.dz_at(a) * Complex64::new(rd, 0.0))
            })
            .collect();
        (p.radii[j], trapezoid(&samples, disc.n, m_max))
    };
    let first = ring(r_c);
    let second = ring((r_c / 2.0).max(r_min));
    Ok(table_from(i, disc.n, m_max, first, second))
}

/// Laurent table of a closed-form `dt`-component `f(t)` sampled on circles of
/// radius `r_c` and `r_c/2` with `samples` points each.
pub fn laurent_closed_form(
    f: impl Fn(Complex64) -> CMat,
    n: usize,
    puncture: usize,
    m_max: i32,
    r_c: f64,
    samples: usize,
) -> LaurentTable {
    let ring = |r: f64| {
        let s: Vec<(Complex64, CMat)> = (0..samples)
            .map(|k| {
                let t = Complex64::from_polar(r, 2.0 * PI * k as f64 / samples as f64);
                (t, f(t))
            })
            .collect();
        (r, trapezoid(&s, n, m_max))
    };
    table_from(puncture, n, m_max, ring(r_c), ring(r_c / 2.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    /// Relative tolerance on prescribed coefficients (absolute below magnitude 1).
    pub coefficient: f64,
    /// Bound on `|Σ_i C_{−1}^{(i)}|` per slot for third-kind data.
    pub residue_sum: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            coefficient: 1e-3,
            residue_sum: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCheck {
    pub puncture: usize,
    pub slot: (usize, usize),
    /// The check concerns `C_{-m}`.
    pub order: u32,
    pub expected: f64,
    pub extracted: [f64; 2],
    pub error: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub checks: Vec<CoefficientCheck>,
    /// Per diagonal slot: `|Σ_i C_{−1}^{(i)}|` over third-kind punctures.
    pub residue_sums: Vec<f64>,
    pub pass: bool,
}

impl AsymptoticsReport {
    pub fn max_error(&self) -> f64 {
        self.checks.iter().fold(0.0, |a, c| a.max(c.error))
    }
}

/// Compares extracted principal parts with the prescribed data.
///
/// Every `C_{−m}`, `1 ≤ m ≤ m_max`, in every slot is checked: diagonal entries
/// against `−k·a_k` (second kind, m = k+1) or the residue (third kind, m = 1),
/// everything else against zero.
pub fn verify_asymptotics(
    tables: &[LaurentTable],
    data: &SingularData,
    tol: &VerifyTolerances,
) -> Result<AsymptoticsReport> {
    let mut checks = Vec::new();
    let n = tables.first().map_or(0, |t| t.n);
    let mut sums = vec![Complex64::new(0.0, 0.0); n];
    let mut any_third = false;
    for t in tables {
        let pd = data.punctures.get(t.puncture).ok_or_else(|| {
            Error::Config(format!("no singular data for puncture {}", t.puncture))
        })?;
        let expected = |j: usize, m: u32| -> f64 {
            match pd {
                PunctureData::Second { slots } => slots[j]
                    .iter()
                    .filter(|(k, _)| k + 1 == m)
                    .map(|(k, a)| -(*k as f64) * a)
                    .sum(),
                PunctureData::Third { residues } if m == 1 => residues[j],
                PunctureData::Third { .. } => 0.0,
            }
        };
        let top = match pd {
            PunctureData::Second { slots } => slots
                .iter()
                .flatten()
                .map(|(k, _)| k + 1)
                .max()
                .unwrap_or(0),
            PunctureData::Third { .. } => 1,
        };
        if top as i32 > t.m_max {
            return Err(Error::Config(format!(
                "m_max {} below prescribed pole order {top}",
                t.m_max
            )));
        }
        if let PunctureData::Third { .. } = pd {
            any_third = true;
            for (j, s) in sums.iter_mut().enumerate() {
                *s += t.coeff(j, j, -1);
            }
        }
        for m in 1..=t.m_max as u32 {
            for j in 0..t.n {
                for l in 0..t.n {
                    let e = if j == l { expected(j, m) } else { 0.0 };
                    let c = t.coeff(j, l, -(m as i32));
                    let error = (c - e).norm();
                    let bound = tol.coefficient * e.abs().max(1.0) + t.err(j, l, -(m as i32));
                    checks.push(CoefficientCheck {
                        puncture: t.puncture,
                        slot: (j, l),
                        order: m,
                        expected: e,
                        extracted: [c.re, c.im],
                        error,
                        bound,
                        pass: error <= bound,
                    });
                }
            }
        }
    }
    let residue_sums: Vec<f64> = if any_third {
        sums.iter().map(|s| s.norm()).collect()
    } else {
        Vec::new()
    };
    let pass = checks.iter().all(|c| c.pass) && residue_sums.iter().all(|&s| s <= tol.residue_sum);
    Ok(AsymptoticsReport {
        checks,
        residue_sums,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubharmonicityReport {
    /// Minimum over interior nodes of the discrete Laplacian of d².
    pub min_laplacian: f64,
    pub argmin: Option<usize>,
    pub nodes: usize,
}

impl SubharmonicityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.min_laplacian >= -tol
    }
}

/// Graph Laplacian `Σ_b w_ab (f_b − f_a)` (cotangent weights, no area
/// normalization) of `d²(K1, K2)` at every node of `region` whose whole star
/// lies in `region`.
pub fn subharmonicity_check(
    k1: &MetricField,
    k2: &MetricField,
    region: Option<&Region>,
) -> Result<SubharmonicityReport> {
    let disc = &k1.disc;
    let f: Vec<f64> = k1.distance_to(k2)?.into_iter().map(|d| d * d).collect();
    let all = Region::all(disc);
    let region = region.unwrap_or(&all);
    let mesh = &disc.mesh;
    let mut min = f64::INFINITY;
    let mut argmin = None;
    let mut count = 0;
    for a in crate::energy_forms::interior_nodes(disc, region) {
        let lap: f64 = mesh.node_edges[a]
            .iter()
            .map(|&e| {
                let [p, t] = disc.edge_w[e];
                (p + t) * (f[mesh.other(e, a)] - f[a])
            })
            .sum();
        count += 1;
        if lap < min {
            min = lap;
            argmin = Some(a);
        }
    }
    Ok(SubharmonicityReport {
        min_laplacian: if count == 0 { 0.0 } else { min },
        argmin,
        nodes: count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub puncture: usize,
    pub max_distance: f64,
    pub min_distance: f64,
    pub node: usize,
    pub ring: usize,
    pub outer_ring: usize,
    pub pass: bool,
}

/// Location of the maximum of `d(K, K₀)` over the puncture patch `|t_i| ≤ 1`.
/// Passes when the maximum sits on the outermost ring (within one ring) or the
/// distance is constant to `tol`.
pub fn max_principle_check(
    field: &MetricField,
    model: &MetricField,
    i: usize,
    tol: f64,
) -> Result<MaxPrincipleReport> {
    let disc = &field.disc;
    let p = disc
        .mesh
        .puncture_patch(i)
        .ok_or_else(|| Error::Geometry(format!("no patch for puncture {i}")))?;
    let d = field.distance_to(model)?;
    let outer_ring = p.radii.len() - 1;
    let (mut best, mut lo, mut node, mut ring) = (f64::NEG_INFINITY, f64::INFINITY, 0, 0);
    for j in 0..=outer_ring {
        for k in 0..p.angular {
            let a = p.node(j, k);
            lo = lo.min(d[a]);
            if d[a] > best {
                (best, node, ring) = (d[a], a, j);
            }
        }
    }
    Ok(MaxPrincipleReport {
        puncture: i,
        max_distance: best,
        min_distance: lo,
        node,
        ring,
        outer_ring,
        pass: ring + 1 >= outer_ring || best - lo <= tol,
    })
}

/// Closed-form scalar harmonic function for trivial holonomy on the sphere
/// chart: `u = Σ 2a Re(((z−p)/R_d)^{−k}) + Σ 2b log|z−q| + const`, with optional
/// Neumann images for a free outer circle.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarOracle {
    /// Second-kind poles: centre, disk radius, `(k, a_k)`.
    pub poles: Vec<(Complex64, f64, Vec<(u32, f64)>)>,
    /// Third-kind logarithms: centre, residue.
    pub logs: Vec<(Complex64, f64)>,
    /// Radius of a free (Neumann) outer circle centred at 0.
    pub mirror_radius: Option<f64>,
    pub constant: f64,
}

impl ScalarOracle {
    pub fn u(&self, z: Complex64) -> f64 {
        let mut u = self.constant;
        for (p, rd, terms) in &self.poles {
            let t = (z - p) / rd;
            for &(k, a) in terms {
                u += 2.0 * a * t.powi(-(k as i32)).re;
                if let Some(r) = self.mirror_radius {
                    // image of the centred multipole; exact for p = 0
                    u += 2.0 * a * (z * *rd / (r * r)).powi(k as i32).re;
                }
            }
        }
        for (q, b) in &self.logs {
            u += 2.0 * b * (z - q).norm().ln();
            if let (Some(r), true) = (self.mirror_radius, q.norm() > 0.0) {
                u += 2.0 * b * (z - r * r / q.conj()).norm().ln();
            }
        }
        u
    }

    /// `φ_dz = ∂_z u`.
    pub fn phi(&self, z: Complex64) -> Complex64 {
        let mut f = Complex64::new(0.0, 0.0);
        for (p, rd, terms) in &self.poles {
            for &(k, a) in terms {
                let kf = k as f64;
                f -= kf * a * rd.powi(k as i32) * (z - p).powi(-(k as i32) - 1);
                if let Some(r) = self.mirror_radius {
                    let c = rd / (r * r);
                    f += kf * a * c.powi(k as i32) * z.powi(k as i32 - 1);
                }
            }
        }
        for (q, b) in &self.logs {
            f += b / (z - q);
            if let (Some(r), true) = (self.mirror_radius, q.norm() > 0.0) {
                f += b / (z - r * r / q.conj());
            }
        }
        f
    }

    /// Shifts the constant so that `u(z) = value`.
    pub fn pin(&mut self, z: Complex64, value: f64) {
        self.constant += value - self.u(z);
    }
}

/// Oracle for diagonal slot `slot` of a discretized problem, pinned at the
/// gauge anchor to the model value there (as the solver pins it).
pub fn oracle_scalar(disc: &Discretization, slot: usize, mirror: bool) -> Result<ScalarOracle> {
    if disc.mesh.mode != SurfaceMode::SphereChart {
        return Err(Error::Config("oracle requires the sphere chart".into()));
    }
    let id = CMat::identity(disc.n, disc.n);
    if disc
        .rep
        .generators
        .iter()
        .any(|(_, g)| (g - &id).norm() > 1e-12)
    {
        return Err(Error::Config("oracle requires trivial holonomy".into()));
    }
    if slot >= disc.n {
        return Err(Error::Config(format!("slot {slot} out of range")));
    }
    let m = &disc.model;
    let poles = m
        .second
        .iter()
        .map(|(_, p, piece)| (*p, m.disk_radius, piece.slots[slot].clone()))
        .collect();
    let logs = match &m.third {
        Some((idx, _)) => idx
            .iter()
            .map(|&i| {
                let r = m.principal_part(i)[slot]
                    .iter()
                    .find(|(o, _)| *o == 1)
                    .map_or(0.0, |x| x.1);
                (m.punctures[i], r)
            })
            .collect(),
        None => Vec::new(),
    };
    let mirror_radius = if mirror {
        disc.mesh.patches.iter().find_map(|p| match p {
            Patch::Polar(pp) if pp.kind == PatchKind::Far => pp.radii.last().map(|r| r * pp.scale),
            _ => None,
        })
    } else {
        None
    };
    let mut o = ScalarOracle {
        poles,
        logs,
        mirror_radius,
        constant: 0.0,
    };
    if let Some(a) = disc.anchor {
        o.pin(disc.mesh.nodes[a].z, disc.l(a)[slot]);
    }
    Ok(o)
}

/// Diagonal metric `diag(e^{u_j})` from one oracle per slot.
pub fn oracle_field(
    disc: &std::sync::Arc<Discretization>,
    oracles: &[ScalarOracle],
) -> MetricField {
    MetricField::from_rel(disc, |a| {
        let z = disc.mesh.nodes[a].z;
        let l = disc.l(a);
        CMat::from_fn(disc.n, disc.n, |j, k| {
            if j == k {
                Complex64::new((oracles[j].u(z) - l[j]).exp(), 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    })
}

/// φ of the oracle fields sampled at every node.
pub fn oracle_differential(disc: &Discretization, oracles: &[ScalarOracle]) -> OneFormField {
    let mut out = OneFormField::zeros(disc.n, disc.num_nodes());
    for a in 0..disc.num_nodes() {
        let z = disc.mesh.nodes[a].z;
        let dz = CMat::from_fn(disc.n, disc.n, |j, k| {
            if j == k {
                oracles[j].phi(z)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        out.set(a, &dz, &dz.map(|c| c.conj()));
    }
    out
}

/// Sup over nodes of `|u_solved − u_oracle|` per slot, skipping nodes within
/// `exclude` (disk units) of any puncture.
pub fn oracle_sup_error(field: &MetricField, oracles: &[ScalarOracle], exclude: f64) -> Vec<f64> {
    let disc = &field.disc;
    let np = disc.model.punctures.len();
    let mut out = vec![0.0f64; disc.n];
    for a in 0..disc.num_nodes() {
        if (0..np).any(|i| disc.disk_radius_of(i, a) < exclude) {
            continue;
        }
        let z = disc.mesh.nodes[a].z;
        let rel = field.rel_at(a);
        let l = disc.l(a);
        for j in 0..disc.n {
            let u = rel[(j, j)].re.ln() + l[j];
            out[j] = out[j].max((u - oracles[j].u(z)).abs());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridParams;
    use crate::problem::Problem;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(f: impl Fn(Complex64) -> Complex64) -> impl Fn(Complex64) -> CMat {
        move |t| CMat::from_element(1, 1, f(t))
    }

    fn small_grid() -> GridParams {
        GridParams {
            background: 32,
            angular: 64,
            rings_per_octave: 4,
            r_min: 1e-2,
            far_angular: 32,
            far_factor: 10.0,
        }
    }

    #[test]
    fn trapezoid_isolates_modes() {
        let t = laurent_closed_form(scalar(|t| t.powi(-2)), 1, 0, 4, 0.5, 256);
        for m in -4..=4 {
            let want = if m == -2 { 1.0 } else { 0.0 };
            assert!((t.coeff(0, 0, m) - want).norm() < 1e-12, "m={m}");
        }
        let t = laurent_closed_form(scalar(|t| t.inv()), 1, 0, 3, 0.3, 256);
        assert!((t.residue()[(0, 0)] - 1.0).norm() < 1e-12);
    }

    #[test]
    fn third_kind_oracle_residue() {
        let o = ScalarOracle {
            poles: vec![],
            logs: vec![(c(0.0, 0.0), 1.0), (c(0.6, 0.0), -1.0)],
            mirror_radius: None,
            constant: 0.0,
        };
        // disk radius 1: φ_dt = φ_dz
        let t = laurent_closed_form(scalar(|t| o.phi(t)), 1, 0, 4, 0.2, 256);
        assert!((t.coeff(0, 0, -1) - 1.0).norm() < 1e-10);
        let data = SingularData {
            punctures: vec![PunctureData::Third {
                residues: vec![1.0],
            }],
            rational_bound: 8,
        };
        let tol = VerifyTolerances {
            coefficient: 1e-10,
            residue_sum: 2.0,
        };
        let rep = verify_asymptotics(&[t], &data, &tol).unwrap();
        assert!(rep.pass, "{:?}", rep.checks);
    }

    #[test]
    fn second_kind_oracle_principal_part() {
        let o = ScalarOracle {
            poles: vec![(c(0.0, 0.0), 1.0, vec![(1, 1.0), (2, 0.5)])],
            logs: vec![],
            mirror_radius: Some(20.0),
            constant: 0.0,
        };
        let t = laurent_closed_form(scalar(|t| o.phi(t)), 1, 0, 4, 0.5, 256);
        assert!((t.coeff(0, 0, -2) + 1.0).norm() < 1e-12);
        assert!((t.coeff(0, 0, -3) + 1.0).norm() < 1e-12);
        let data = SingularData {
            punctures: vec![PunctureData::Second {
                slots: vec![vec![(1, 1.0), (2, 0.5)]],
            }],
            rational_bound: 8,
        };
        let tol = VerifyTolerances {
            coefficient: 1e-10,
            ..Default::default()
        };
        assert!(
            verify_asymptotics(std::slice::from_ref(&t), &data, &tol)
                .unwrap()
                .pass
        );
        // wrong data is caught
        let bad = SingularData {
            punctures: vec![PunctureData::Second {
                slots: vec![vec![(1, 1.1), (2, 0.5)]],
            }],
            rational_bound: 8,
        };
        assert!(!verify_asymptotics(&[t], &bad, &tol).unwrap().pass);
    }

    #[test]
    fn oracle_phi_is_derivative_of_u() {
        let o = ScalarOracle {
            poles: vec![(c(0.1, -0.2), 0.7, vec![(2, 0.3)])],
            logs: vec![(c(1.0, 1.0), 0.4), (c(-1.0, 0.5), -0.4)],
            mirror_radius: Some(9.0),
            constant: 1.0,
        };
        let h = 1e-6;
        for z in [c(0.5, 0.3), c(-0.4, 0.9), c(2.0, -1.0)] {
            let dx = (o.u(z + h) - o.u(z - h)) / (2.0 * h);
            let dy = (o.u(z + c(0.0, h)) - o.u(z - c(0.0, h))) / (2.0 * h);
            assert!((o.phi(z) - c(dx, -dy) * 0.5).norm() < 1e-6);
        }
    }

    #[test]
    fn mirror_gives_neumann_circle() {
        let o = ScalarOracle {
            poles: vec![(c(0.0, 0.0), 0.5, vec![(1, 1.0), (3, -0.2)])],
            logs: vec![],
            mirror_radius: Some(4.0),
            constant: 0.0,
        };
        for th in [0.0, 1.0, 2.5] {
            let z = Complex64::from_polar(4.0, th);
            // radial derivative = 2 Re(e^{iθ} ∂_z u)
            let dr = 2.0 * (Complex64::from_polar(1.0, th) * o.phi(z)).re;
            assert!(dr.abs() < 1e-14);
        }
    }

    #[test]
    fn constant_metric_has_zero_differential() {
        let g = GridParams {
            background: 64,
            ..small_grid()
        };
        let p = Problem::sphere_third_kind(c(0.0, 0.0), c(0.6, 0.0), 0.0, 0.25, 3.0, g);
        let disc = p.discretize().unwrap();
        let k = MetricField::model(&disc);
        let phi = differential(&k).unwrap();
        assert!(phi.dz.iter().all(|v| v.norm() < 1e-12));
        assert!(holomorphy_residual(&disc, &phi, None).unwrap() < 1e-12);
        let tab = laurent_extract(&disc, &phi, 0, 3, 0.5).unwrap();
        let rep = verify_asymptotics(&[tab], &p.data, &VerifyTolerances::default()).unwrap();
        assert!(rep.pass && rep.max_error() < 1e-12);
        let sub = subharmonicity_check(&k, &k, None).unwrap();
        assert_eq!(sub.min_laplacian, 0.0);
        let mp = max_principle_check(&k, &k, 0, 1e-12).unwrap();
        assert!(mp.pass);
    }

    fn probe_residuals(grid: GridParams, antiholomorphic: bool) -> f64 {
        let p = Problem::sphere_second_kind(1, 1.0, 1.0, 2.5, grid);
        let disc = p.discretize().unwrap();
        let mut phi = OneFormField::zeros(1, disc.num_nodes());
        let region = Region::from_predicate(&disc, |z| z.norm() > 0.2 && z.norm() < 2.0);
        for a in 0..disc.num_nodes() {
            let z = disc.mesh.nodes[a].z;
            let mut v = -z.powi(-2);
            if antiholomorphic {
                v += z.conj();
            }
            let m = CMat::from_element(1, 1, v);
            phi.set(a, &m, &m.map(|x| x.conj()));
        }
        holomorphy_residual(&disc, &phi, Some(&region)).unwrap()
    }

    #[test]
    fn holomorphy_residual_probes() {
        let g = small_grid();
        let (r1, r2) = (
            probe_residuals(g.clone(), false),
            probe_residuals(g.refined(), false),
        );
        assert!(r2 < r1 / 1.8, "{r1:e} {r2:e}");
        let (b1, b2) = (
            probe_residuals(g.clone(), true),
            probe_residuals(g.refined(), true),
        );
        // ∂̄ z̄ = 1 on a region of area ≈ 4π
        assert!(b1 > 2.0 && b2 > 2.0, "{b1} {b2}");
    }

    #[test]
    fn laurent_extract_on_grid_samples() {
        let p = Problem::sphere_second_kind(2, 1.0, 0.5, 2.0, small_grid());
        let disc = p.discretize().unwrap();
        let o = oracle_scalar(&disc, 0, false).unwrap();
        let phi = oracle_differential(&disc, &[o]);
        let tab = laurent_extract(&disc, &phi, 0, 4, 0.4).unwrap();
        assert!((tab.coeff(0, 0, -3) + 2.0).norm() < 1e-10);
        assert!(tab.max_principal_error() < 1e-10);
        assert!(laurent_extract(&disc, &phi, 0, 40, 0.4).is_err());
        assert!(laurent_extract(&disc, &phi, 0, 2, 1e-4).is_err());
    }
}
