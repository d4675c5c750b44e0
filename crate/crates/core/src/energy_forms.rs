//! Operator calculus on metric fields: θ_K, θ̄_K, covariant derivatives,
//! energy, modified energy, tension (harmonic residual) and first variation.
//!
//! The discrete energy is the edge sum `Σ_e w_e d²(K_a, K_b)` with cotangent
//! weights `w_e = Σ cot/8`, which for n = 1 and `K = e^u` is the P1 quadrature of
//! `(1/4)∫|∇u|²` — the same as `∫(|θ_K|² + |θ̄_K|²)` with `ω = i dz∧dz̄`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{Discretization, EnergyKind, MetricField, OneFormField, Region, Transport};
use crate::pd_geometry::{eigh, hermitian_part, CMat};
use crate::Complex64;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `θ = −½ (∂K)K⁻¹`, `θ̄ = −½ (∂̄K)K⁻¹` from a metric value and its derivatives.
pub fn theta_pointwise(k: &CMat, dk: &CMat, dbar_k: &CMat) -> Result<(CMat, CMat)> {
    let kinv = crate::pd_geometry::PdMatrix::new(k.clone())?.inverse()?;
    Ok((dk * &kinv * c(-0.5), dbar_k * &kinv * c(-0.5)))
}

/// `δ′h = ∂h + 2[θ, h]`, `δ″h = ∂̄h + 2[θ̄, h]`.
pub fn cov_deriv_pointwise(
    h: &CMat,
    dh: &CMat,
    dbar_h: &CMat,
    theta: &CMat,
    theta_bar: &CMat,
) -> (CMat, CMat) {
    let d1 = dh + (theta * h - h * theta) * c(2.0);
    let d2 = dbar_h + (theta_bar * h - h * theta_bar) * c(2.0);
    (d1, d2)
}

/// `θ̄_{K₁} = −½ δ″h·h⁻¹ + θ̄_{K₀}` for `K₁ = hK₀`, with δ″ taken in the K₀ connection.
pub fn theta_bar_transformed(h: &CMat, dbar_h: &CMat, theta0_bar: &CMat) -> Result<CMat> {
    let hinv = h.clone().try_inverse().ok_or(crate::Error::Singular(0.0))?;
    let zero = CMat::zeros(h.nrows(), h.ncols());
    let (_, d2) = cov_deriv_pointwise(h, &zero, dbar_h, &zero, theta0_bar);
    Ok(d2 * hinv * c(-0.5) + theta0_bar)
}

/// Neighbour value of a relative field, as seen from node `a` across a period shift.
fn rel_image(
    disc: &Discretization,
    a: usize,
    b: usize,
    shift: (i32, i32),
    hb: &CMat,
) -> Result<CMat> {
    if shift == (0, 0) {
        return Ok(hb.clone());
    }
    let n = disc.n;
    let g = disc.rep.translation(shift.0, shift.1)?;
    let (la, lb) = (disc.l(a), disc.l(b));
    let t = CMat::from_fn(n, n, |i, j| g[(i, j)] * (0.5 * (lb[j] - la[i])).exp());
    Ok(&t * hb * t.adjoint())
}

/// `∂h̃` and `∂̄h̃` per node from the derivative stencils.
pub fn rel_derivatives(field: &MetricField) -> Result<OneFormField> {
    let disc = &field.disc;
    let n = disc.n;
    let rows: Vec<Result<(CMat, CMat)>> = (0..disc.num_nodes())
        .into_par_iter()
        .map(|a| {
            let mut d = CMat::zeros(n, n);
            let mut db = CMat::zeros(n, n);
            for &(b, s, coef) in &disc.mesh.dz[a].entries {
                let v = rel_image(disc, a, b, s, &field.rel_at(b))?;
                d += &v * coef;
                db += &v * coef.conj();
            }
            Ok((d, db))
        })
        .collect();
    let mut out = OneFormField::zeros(n, disc.num_nodes());
    for (a, r) in rows.into_iter().enumerate() {
        let (d, db) = r?;
        out.set(a, &d, &db);
    }
    Ok(out)
}

/// `S X S⁻¹` with `S = diag(e^{l/2})`, skipping exact zeros so that huge
/// scalings never produce `0·∞`.
pub(crate) fn conj_s(l: &[f64], x: &CMat) -> CMat {
    CMat::from_fn(x.nrows(), x.ncols(), |i, j| {
        let v = x[(i, j)];
        if v == Complex64::new(0.0, 0.0) || i == j {
            v
        } else {
            v * (0.5 * (l[i] - l[j])).exp()
        }
    })
}

/// `(∂K)K⁻¹` and `(∂̄K)K⁻¹` from a relative value, its derivatives and the model data.
pub fn log_derivative_pointwise(
    l: &[f64],
    dl: &[Complex64],
    h: &CMat,
    dh: &CMat,
    dbar_h: &CMat,
) -> Result<(CMat, CMat)> {
    let n = l.len();
    let hinv = crate::pd_geometry::PdMatrix::new(h.clone())?.inverse()?;
    let d = CMat::from_fn(n, n, |i, j| if i == j { dl[i] * 0.5 } else { c(0.0) });
    let db = CMat::from_fn(
        n,
        n,
        |i, j| if i == j { dl[i].conj() * 0.5 } else { c(0.0) },
    );
    let inner = dh * &hinv + h * &d * &hinv;
    let inner_b = dbar_h * &hinv + h * &db * &hinv;
    Ok((&d + conj_s(l, &inner), &db + conj_s(l, &inner_b)))
}

/// `φ = (∂K)K⁻¹` (dz part) and `(∂̄K)K⁻¹` (dz̄ part) per node.
pub fn log_derivative(field: &MetricField) -> Result<OneFormField> {
    let disc = &field.disc;
    let rd = rel_derivatives(field)?;
    let mut out = OneFormField::zeros(disc.n, disc.num_nodes());
    for a in 0..disc.num_nodes() {
        let (p, pb) = log_derivative_pointwise(
            disc.l(a),
            disc.dl(a),
            &field.rel_at(a),
            &rd.dz_at(a),
            &rd.dzbar_at(a),
        )?;
        out.set(a, &p, &pb);
    }
    Ok(out)
}

/// θ_K (dz part) and θ̄_K (dz̄ part) per node.
pub fn theta(field: &MetricField) -> Result<OneFormField> {
    let mut f = log_derivative(field)?;
    f.dz.iter_mut()
        .chain(f.dzbar.iter_mut())
        .for_each(|v| *v *= -0.5);
    Ok(f)
}

/// Derivatives of an endomorphism field (values transform as `G h G⁻¹` across seams).
pub fn endomorphism_derivatives(disc: &Discretization, h: &[CMat]) -> Result<OneFormField> {
    let n = disc.n;
    let mut out = OneFormField::zeros(n, disc.num_nodes());
    for a in 0..disc.num_nodes() {
        let mut d = CMat::zeros(n, n);
        let mut db = CMat::zeros(n, n);
        for &(b, s, coef) in &disc.mesh.dz[a].entries {
            let v = if s == (0, 0) {
                h[b].clone()
            } else {
                let g = disc.rep.translation(s.0, s.1)?;
                let gi = g.clone().try_inverse().ok_or(crate::Error::Singular(0.0))?;
                g * &h[b] * gi
            };
            d += &v * coef;
            db += &v * coef.conj();
        }
        out.set(a, &d, &db);
    }
    Ok(out)
}

/// Covariant derivatives δ′h, δ″h of an endomorphism field in the connection of K.
pub fn cov_deriv(h: &[CMat], field: &MetricField) -> Result<OneFormField> {
    let disc = &field.disc;
    let th = theta(field)?;
    let dh = endomorphism_derivatives(disc, h)?;
    let mut out = OneFormField::zeros(disc.n, disc.num_nodes());
    for a in 0..disc.num_nodes() {
        let (d1, d2) = cov_deriv_pointwise(
            &h[a],
            &dh.dz_at(a),
            &dh.dzbar_at(a),
            &th.dz_at(a),
            &th.dzbar_at(a),
        );
        out.set(a, &d1, &d2);
    }
    Ok(out)
}

/// Edge weights `(plain, identity-transport)` restricted to the triangles of a region.
pub fn edge_weights(
    disc: &Discretization,
    kind: EnergyKind,
    region: Option<&Region>,
) -> Vec<(f64, f64)> {
    disc.mesh
        .edges
        .iter()
        .map(|ed| {
            let (mut p, mut t) = (0.0, 0.0);
            for &(tri, w) in &ed.tris {
                if region.is_some_and(|r| !r.triangles[tri]) {
                    continue;
                }
                if disc.tri_tail[tri] && kind == EnergyKind::Modified {
                    t += w;
                } else {
                    p += w;
                }
            }
            (p, t)
        })
        .collect()
}

/// Squared distance `d²(A, B)` between two PD matrices.
pub(crate) fn d2(a: &CMat, b: &CMat) -> Result<f64> {
    if a.nrows() == 1 {
        return Ok((b[(0, 0)].re / a[(0, 0)].re).ln().powi(2));
    }
    let (l, _) = frame_log(a, b)?;
    Ok(l.iter().map(|z| z.norm_sqr()).sum())
}

/// Cholesky factor of a relative value.
pub(crate) fn chol(a: &CMat) -> Result<CMat> {
    a.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(crate::Error::NotPositiveDefinite {
            min: f64::NAN,
            max: f64::NAN,
        })
}

/// `log(L⁻¹ B L^{-*})` where `A = LL*`, and its squared norm.
pub(crate) fn frame_log(a: &CMat, b: &CMat) -> Result<(CMat, f64)> {
    let l = chol(a)?;
    frame_log_with(&l, b)
}

pub(crate) fn frame_log_with(l: &CMat, b: &CMat) -> Result<(CMat, f64)> {
    let y = l
        .solve_lower_triangular(b)
        .ok_or(crate::Error::Singular(0.0))?;
    let m = l
        .solve_lower_triangular(&y.adjoint())
        .ok_or(crate::Error::Singular(0.0))?;
    let (vals, vecs) = eigh(&hermitian_part(&m.adjoint()))?;
    if vals.iter().any(|v| *v <= 0.0) {
        return Err(crate::Error::NotPositiveDefinite {
            min: vals[0],
            max: vals[vals.len() - 1],
        });
    }
    let d2 = vals.iter().map(|v| v.ln().powi(2)).sum();
    Ok((
        crate::pd_geometry::spectral_apply(&vals, &vecs, f64::ln),
        d2,
    ))
}

fn edge_energy(field: &MetricField, w: &[(f64, f64)]) -> Result<f64> {
    let disc = &field.disc;
    let parts: Result<Vec<f64>> = disc
        .mesh
        .edges
        .par_iter()
        .enumerate()
        .map(|(e, ed)| {
            let (p, t) = w[e];
            if p == 0.0 && t == 0.0 {
                return Ok(0.0);
            }
            let ha = field.rel_at(ed.a);
            let hb = field.rel_at(ed.b);
            let mut s = 0.0;
            if p != 0.0 {
                s += p * d2(&ha, &disc.transport[e].apply(&hb))?;
            }
            if t != 0.0 {
                s += t * d2(&ha, &hb)?;
            }
            Ok(s)
        })
        .collect();
    Ok(parts?.into_iter().sum())
}

/// Energy of the field over a region (`None` = whole surface).
pub fn energy(field: &MetricField, region: Option<&Region>, kind: EnergyKind) -> Result<f64> {
    edge_energy(field, &edge_weights(&field.disc, kind, region))
}

/// The modified energy Ê over the whole surface.
pub fn modified_energy(field: &MetricField) -> Result<f64> {
    energy(field, None, EnergyKind::Modified)
}

/// Ê split into its compact part and its tail (model-relative) part.
pub fn energy_split(field: &MetricField) -> Result<(f64, f64)> {
    let w = edge_weights(&field.disc, EnergyKind::Modified, None);
    let compact: Vec<(f64, f64)> = w.iter().map(|&(p, _)| (p, 0.0)).collect();
    let tail: Vec<(f64, f64)> = w.iter().map(|&(_, t)| (0.0, t)).collect();
    Ok((edge_energy(field, &compact)?, edge_energy(field, &tail)?))
}

/// Tension per node in its Cholesky frame: `τ_a = Σ_e w_e log(L⁻¹ B_e L^{-*})`.
/// The gradient of the energy with respect to a frame direction `X` at `a` is `−2 tr(X τ_a)`.
pub fn tension(
    field: &MetricField,
    region: Option<&Region>,
    kind: EnergyKind,
) -> Result<Vec<CMat>> {
    let disc = &field.disc;
    let w = edge_weights(disc, kind, region);
    (0..disc.num_nodes())
        .into_par_iter()
        .map(|a| {
            let ha = field.rel_at(a);
            let l = chol(&ha)?;
            let mut tau = CMat::zeros(disc.n, disc.n);
            for &e in &disc.mesh.node_edges[a] {
                let (p, t) = w[e];
                let hb = field.rel_at(disc.mesh.other(e, a));
                if p != 0.0 {
                    tau += frame_log_with(&l, &disc.transport_into(e, a).apply(&hb))?.0 * c(p);
                }
                if t != 0.0 {
                    tau += frame_log_with(&l, &hb)?.0 * c(t);
                }
            }
            Ok(tau)
        })
        .collect()
}

/// Nodes of a region whose every neighbour is also in the region.
pub fn interior_nodes(disc: &Discretization, region: &Region) -> Vec<usize> {
    let mesh = &disc.mesh;
    (0..mesh.num_nodes())
        .filter(|&a| {
            region.nodes[a]
                && mesh.node_edges[a]
                    .iter()
                    .all(|&e| region.nodes[mesh.other(e, a)])
        })
        .collect()
}

/// Discrete L² norm of the tension density over the interior of a region:
/// `sqrt(Σ_a |τ_a|² / A_a)`. Zero exactly at discretely harmonic fields.
pub fn harmonic_residual(
    field: &MetricField,
    region: Option<&Region>,
    kind: EnergyKind,
) -> Result<f64> {
    let disc = &field.disc;
    let tau = tension(field, region, kind)?;
    let nodes: Vec<usize> = match region {
        Some(r) => interior_nodes(disc, r),
        None => (0..disc.num_nodes()).collect(),
    };
    Ok(nodes
        .iter()
        .map(|&a| tau[a].norm_squared() / disc.mesh.dual_area[a].max(f64::MIN_POSITIVE))
        .sum::<f64>()
        .sqrt())
}

/// Frame direction `X = L⁻¹ S⁻¹ h S L` at a node for an endomorphism h (`h̃ = LL*`).
pub fn frame_direction(disc: &Discretization, a: usize, h_rel: &CMat, h: &CMat) -> Result<CMat> {
    let neg: Vec<f64> = disc.l(a).iter().map(|x| -x).collect();
    let hat = conj_s(&neg, h);
    let l = chol(h_rel)?;
    let linv = l.clone().try_inverse().ok_or(crate::Error::Singular(0.0))?;
    Ok(hermitian_part(&(linv * hat * l)))
}

/// The field `exp(εh)·K`.
pub fn perturb(field: &MetricField, h: &[CMat], eps: f64) -> Result<MetricField> {
    let disc = &field.disc;
    let mut out = field.clone();
    for a in 0..disc.num_nodes() {
        let hr = field.rel_at(a);
        let x = frame_direction(disc, a, &hr, &h[a])?;
        let l = chol(&hr)?;
        let (vals, vecs) = eigh(&x)?;
        let e = crate::pd_geometry::spectral_apply(&vals, &vecs, |v| (eps * v).exp());
        out.set_rel(a, &hermitian_part(&(&l * e * l.adjoint())));
    }
    Ok(out)
}

/// `d/dt E(exp(th)K)` at t = 0 for a K-self-adjoint endomorphism field h.
pub fn first_variation(
    field: &MetricField,
    h: &[CMat],
    region: Option<&Region>,
    kind: EnergyKind,
) -> Result<f64> {
    let disc = &field.disc;
    let tau = tension(field, region, kind)?;
    let mut s = 0.0;
    for a in 0..disc.num_nodes() {
        let x = frame_direction(disc, a, &field.rel_at(a), &h[a])?;
        s += (x * &tau[a]).trace().re;
    }
    Ok(-2.0 * s)
}

/// Bounds for the admissibility test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissibilityBounds {
    pub max_distance: f64,
    pub tail_integral: f64,
}

impl Default for AdmissibilityBounds {
    fn default() -> Self {
        Self {
            max_distance: 50.0,
            tail_integral: 1e4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Max over nodes of `distance(K, K₀)`.
    pub max_distance: f64,
    /// The model-relative energy of K on the tail region.
    pub tail_integral: f64,
}

/// Whether K stays at bounded distance from the model with a finite tail integral.
pub fn admissibility_check(
    field: &MetricField,
    bounds: &AdmissibilityBounds,
) -> Result<AdmissibilityReport> {
    let max_distance = field.distance_to_model()?.into_iter().fold(0.0, f64::max);
    let (_, tail_integral) = energy_split(field)?;
    Ok(AdmissibilityReport {
        admissible: max_distance <= bounds.max_distance && tail_integral <= bounds.tail_integral,
        max_distance,
        tail_integral,
    })
}

/// Matrix of a transport (test and diagnostics helper).
pub fn transport_matrix(t: &Transport, n: usize) -> CMat {
    t.as_matrix(n)
}

/// Endomorphism `h = S L X L⁻¹ S⁻¹` whose frame direction at a node is `X`.
pub fn endomorphism_from_frame(
    disc: &Discretization,
    a: usize,
    h_rel: &CMat,
    x: &CMat,
) -> Result<CMat> {
    let l = chol(h_rel)?;
    let linv = l.clone().try_inverse().ok_or(crate::Error::Singular(0.0))?;
    Ok(conj_s(disc.l(a), &(l * x * linv)))
}
