//! Explicit singular model metric K₀.
//!
//! Every model used here is diagonal, so it is stored and evaluated through its
//! log-diagonal `l(z)` (K₀ = diag(e^{l_j})) together with the holomorphic
//! derivative `∂_z l`. This keeps evaluation finite arbitrarily close to a pole.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat_bundle::{PunctureData, SingularData, SurfaceMode, SurfaceSpec};
use crate::pd_geometry::PdMatrix;

/// `Re(t^{-k}) + 4^k Re(t^k)`: harmonic, with vanishing radial derivative on |t| = 1/2.
pub fn u_k_second(t: Complex64, k: u32) -> Result<f64> {
    if t.norm() == 0.0 {
        return Err(Error::AtPole);
    }
    let tk = t.powu(k);
    Ok(tk.inv().re + 4f64.powi(k as i32) * tk.re)
}

/// `∂_t u_k = (-k t^{-k-1} + 4^k k t^{k-1}) / 2`.
fn du_k_second(t: Complex64, k: u32) -> Complex64 {
    let kf = k as f64;
    (-kf * t.powi(-(k as i32) - 1) + 4f64.powi(k as i32) * kf * t.powi(k as i32 - 1)) * 0.5
}

/// Quintic smoothstep falling from 1 at s=0 to 0 at s=1 (C² at both ends).
fn chi(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        (1.0, 0.0)
    } else if s >= 1.0 {
        (0.0, 0.0)
    } else {
        let v = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let d = -30.0 * s * s * (1.0 - s) * (1.0 - s);
        (v, d)
    }
}

/// Second-kind model on one punctured disk, in the disk coordinate `t = (z − p)/R_d`.
///
/// Slot j carries `Σ 2 a_k u_k(t)`, so that `(∂H)H⁻¹ ≈ −k a_k t^{-k-1} dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondKindPiece {
    pub slots: Vec<Vec<(u32, f64)>>,
}

impl SecondKindPiece {
    pub fn new(slots: Vec<Vec<(u32, f64)>>) -> Self {
        Self { slots }
    }

    pub fn log_diag(&self, t: Complex64) -> Result<Vec<f64>> {
        self.slots
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&(k, a)| u_k_second(t, k).map(|u| 2.0 * a * u))
                    .sum()
            })
            .collect()
    }

    /// `∂_t` of [`Self::log_diag`].
    pub fn dlog_dt(&self, t: Complex64) -> Vec<Complex64> {
        self.slots
            .iter()
            .map(|s| s.iter().map(|&(k, a)| du_k_second(t, k) * (2.0 * a)).sum())
            .collect()
    }

    pub fn metric(&self, t: Complex64) -> Result<PdMatrix> {
        let l = self.log_diag(t)?;
        PdMatrix::from_diagonal(&l.iter().map(|x| x.exp()).collect::<Vec<_>>())
    }
}

/// `g(z) = z^{Σl} / (Π (z−ξ_i)^{l_i} Π (z−ξ'_i)^{l_i})`, coordinates centred so that the
/// distinguished puncture sits at 0.
pub fn third_kind_g(
    z: Complex64,
    xi: &[Complex64],
    xi_ref: &[Complex64],
    l: &[i64],
) -> Result<Complex64> {
    let total: i64 = l.iter().sum();
    if z.norm() == 0.0 && total != 0 {
        return Err(Error::AtPole);
    }
    let mut g = z.powi(total as i32);
    for ((x, xr), &li) in xi.iter().zip(xi_ref).zip(l) {
        if li != 0 && ((z - x).norm() == 0.0 || (z - xr).norm() == 0.0) {
            return Err(Error::AtPole);
        }
        g /= (z - x).powi(li as i32) * (z - xr).powi(li as i32);
    }
    Ok(g)
}

/// Reflection across the circle |z| = R: `R² / conj(ξ)`.
pub fn reflect(xi: Complex64, radius: f64) -> Complex64 {
    Complex64::new(radius * radius, 0.0) / xi.conj()
}

/// One slot of the third-kind model: `2c log|g(z)|` with integer exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct ThirdKindSlot {
    pub c: f64,
    pub exponents: Vec<i64>,
}

/// Third-kind model on the disk Γ' around the distinguished puncture p₁.
#[derive(Clone, Debug, PartialEq)]
pub struct ThirdKindPiece {
    pub center: Complex64,
    /// Radius of Γ; the model has vanishing radial derivative on ∂Γ.
    pub gamma_radius: f64,
    /// Radius of Γ' (model exact inside).
    pub gamma_prime: f64,
    /// Blend to the constant finishes here.
    pub blend_outer: f64,
    /// Other third-kind punctures ξ_2..ξ_s, relative to `center`.
    pub xi: Vec<Complex64>,
    pub xi_ref: Vec<Complex64>,
    pub slots: Vec<ThirdKindSlot>,
}

impl ThirdKindPiece {
    /// Realises the residues `res[i][j]` (puncture i, slot j; i=0 is the centre).
    pub fn new(
        center: Complex64,
        others: &[Complex64],
        res: &[Vec<f64>],
        denominators: &[u32],
        gamma_radius: f64,
        gamma_prime: f64,
        blend_outer: f64,
    ) -> Self {
        let xi: Vec<Complex64> = others.iter().map(|p| p - center).collect();
        let xi_ref = xi.iter().map(|x| reflect(*x, gamma_radius)).collect();
        let n = denominators.len();
        let slots = (0..n)
            .map(|j| {
                let q = denominators[j] as f64;
                ThirdKindSlot {
                    c: 1.0 / q,
                    exponents: res[1..]
                        .iter()
                        .map(|r| (-(q * r[j])).round() as i64)
                        .collect(),
                }
            })
            .collect();
        Self {
            center,
            gamma_radius,
            gamma_prime,
            blend_outer,
            xi,
            xi_ref,
            slots,
        }
    }

    /// Exact model log-diagonal at relative coordinate `w = z − center`.
    pub fn log_diag_exact(&self, w: Complex64) -> Result<Vec<f64>> {
        self.slots
            .iter()
            .map(|s| {
                let g = third_kind_g(w, &self.xi, &self.xi_ref, &s.exponents)?;
                Ok(2.0 * s.c * g.norm().ln())
            })
            .collect()
    }

    /// `∂_w` of [`Self::log_diag_exact`], i.e. `c g'/g`.
    pub fn dlog_exact(&self, w: Complex64) -> Vec<Complex64> {
        self.slots
            .iter()
            .map(|s| {
                let total: i64 = s.exponents.iter().sum();
                let mut d = if total != 0 {
                    Complex64::new(total as f64, 0.0) / w
                } else {
                    Complex64::new(0.0, 0.0)
                };
                for ((x, xr), &l) in self.xi.iter().zip(&self.xi_ref).zip(&s.exponents) {
                    if l != 0 {
                        d -= (l as f64) / (w - x) + (l as f64) / (w - xr);
                    }
                }
                d * s.c
            })
            .collect()
    }

    /// Residue of `(∂H)H⁻¹` of slot j at puncture i (0 = centre).
    pub fn residue(&self, slot: usize, puncture: usize) -> f64 {
        let s = &self.slots[slot];
        if puncture == 0 {
            s.c * s.exponents.iter().sum::<i64>() as f64
        } else {
            -s.c * s.exponents[puncture - 1] as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Outer radius of the blending collar, in disk units.
    pub r_blend: f64,
    /// Log-diagonal of the constant metric C used away from punctures.
    pub log_c: Option<Vec<f64>>,
    /// Radius of Γ (third kind).
    pub gamma_radius: f64,
    /// Radius of Γ' (third kind).
    pub gamma_prime: f64,
    /// Radius where the third-kind blend reaches C.
    pub gamma_blend_outer: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            r_blend: 1.5,
            log_c: None,
            gamma_radius: 1.2,
            gamma_prime: 1.6,
            gamma_blend_outer: 2.1,
        }
    }
}

/// Which piece of the model governs a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Zone {
    /// Inside Δ*_{i/2} of a second-kind puncture, or inside Γ.
    Tail,
    /// Exact model but outside the tail.
    Model,
    Blend,
    Constant,
}

/// The assembled model K₀.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMetric {
    pub n: usize,
    pub mode: SurfaceMode,
    pub log_c: Vec<f64>,
    pub disk_radius: f64,
    pub r_blend: f64,
    /// (puncture centre, piece) for second-kind punctures.
    pub second: Vec<(usize, Complex64, SecondKindPiece)>,
    pub third: Option<(Vec<usize>, ThirdKindPiece)>,
    pub punctures: Vec<Complex64>,
}

impl ModelMetric {
    /// Assembles K₀ from the per-puncture pieces.
    pub fn assemble(
        surface: &SurfaceSpec,
        n: usize,
        data: &SingularData,
        params: &ModelParams,
    ) -> Result<Self> {
        surface.validate()?;
        data.validate(n, surface.punctures.len())?;
        let log_c = params.log_c.clone().unwrap_or_else(|| vec![0.0; n]);
        if log_c.len() != n || log_c.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularData(
                "log_c must have one finite entry per slot".into(),
            ));
        }
        if !(params.r_blend > 1.0) {
            return Err(Error::SingularData("r_blend must exceed 1".into()));
        }
        let rd = surface.disk_radius;
        let collar = rd * params.r_blend;
        let mut second = Vec::new();
        let mut third_idx = Vec::new();
        for (i, (p, d)) in surface.punctures.iter().zip(&data.punctures).enumerate() {
            match d {
                PunctureData::Second { slots } => {
                    second.push((i, *p, SecondKindPiece::new(slots.clone())));
                }
                PunctureData::Third { .. } => third_idx.push(i),
            }
        }
        for (a, (i, p, _)) in second.iter().enumerate() {
            for (j, q, _) in second.iter().skip(a + 1) {
                if (p - q).norm() <= 2.0 * collar {
                    return Err(Error::OverlappingCollars(format!("punctures {i} and {j}")));
                }
            }
            match surface.mode {
                SurfaceMode::Torus => {
                    let d = p.re.min(1.0 - p.re).min(p.im).min(1.0 - p.im);
                    if d <= collar {
                        return Err(Error::OverlappingCollars(format!(
                            "collar of puncture {i} crosses the fundamental-domain edge"
                        )));
                    }
                }
                SurfaceMode::SphereChart => {
                    if p.norm() + collar >= surface.chart_radius {
                        return Err(Error::OverlappingCollars(format!(
                            "collar of puncture {i} leaves the chart"
                        )));
                    }
                }
            }
        }
        let third = if third_idx.is_empty() {
            None
        } else {
            if surface.mode != SurfaceMode::SphereChart {
                return Err(Error::SingularData(
                    "third kind is supported in sphere_chart mode only".into(),
                ));
            }
            let (rg, rgp, rgo) = (
                params.gamma_radius,
                params.gamma_prime,
                params.gamma_blend_outer,
            );
            if !(0.0 < rg && rg < rgp && rgp < rgo) {
                return Err(Error::SingularData(
                    "need 0 < gamma_radius < gamma_prime < gamma_blend_outer".into(),
                ));
            }
            let center = surface.punctures[third_idx[0]];
            if center.norm() + rgo >= surface.chart_radius {
                return Err(Error::OverlappingCollars(
                    "third-kind blend leaves the chart".into(),
                ));
            }
            let others: Vec<Complex64> = third_idx[1..]
                .iter()
                .map(|&i| surface.punctures[i])
                .collect();
            for (&i, o) in third_idx[1..].iter().zip(&others) {
                let w = o - center;
                if w.norm() + rd >= rg {
                    return Err(Error::SingularData(format!(
                        "puncture {i} disk is not inside Γ"
                    )));
                }
                if reflect(w, rg).norm() <= rgo {
                    return Err(Error::SingularData(format!(
                        "reflection of puncture {i} falls inside the model region; enlarge gamma_radius or shrink gamma_blend_outer"
                    )));
                }
            }
            for (i, p, _) in &second {
                if (p - center).norm() <= rgo + collar {
                    return Err(Error::OverlappingCollars(format!(
                        "second-kind collar of puncture {i} meets the third-kind region"
                    )));
                }
            }
            let res: Vec<Vec<f64>> = third_idx
                .iter()
                .map(|&i| match &data.punctures[i] {
                    PunctureData::Third { residues } => residues.clone(),
                    _ => unreachable!(),
                })
                .collect();
            let dens = (0..n)
                .map(|j| data.slot_denominator(j))
                .collect::<Result<Vec<_>>>()?;
            Some((
                third_idx,
                ThirdKindPiece::new(center, &others, &res, &dens, rg, rgp, rgo),
            ))
        };
        Ok(Self {
            n,
            mode: surface.mode,
            log_c,
            disk_radius: rd,
            r_blend: params.r_blend,
            second,
            third,
            punctures: surface.punctures.clone(),
        })
    }

    /// Puncture-disk coordinate `t_i = (z − p_i)/R_d`.
    pub fn disk_coordinate(&self, i: usize, z: Complex64) -> Complex64 {
        (z - self.punctures[i]) / self.disk_radius
    }

    pub fn zone(&self, z: Complex64) -> Zone {
        for (_, p, _) in &self.second {
            let r = (z - p).norm() / self.disk_radius;
            if r < 0.5 {
                return Zone::Tail;
            }
            if r <= 1.0 {
                return Zone::Model;
            }
            if r < self.r_blend {
                return Zone::Blend;
            }
        }
        if let Some((_, t)) = &self.third {
            let r = (z - t.center).norm();
            if r < t.gamma_radius {
                return Zone::Tail;
            }
            if r <= t.gamma_prime {
                return Zone::Model;
            }
            if r < t.blend_outer {
                return Zone::Blend;
            }
        }
        Zone::Constant
    }

    /// True on the tail region where the modified energy subtracts the model.
    pub fn in_tail(&self, z: Complex64) -> bool {
        self.zone(z) == Zone::Tail
    }

    /// Log-diagonal `l(z)` together with `∂_z l(z)`.
    pub fn log_diag_and_derivative(&self, z: Complex64) -> Result<(Vec<f64>, Vec<Complex64>)> {
        let zero = Complex64::new(0.0, 0.0);
        for (_, p, piece) in &self.second {
            let t = (z - p) / self.disk_radius;
            let r = t.norm();
            if r >= self.r_blend {
                continue;
            }
            let lm = piece.log_diag(t)?;
            let dm: Vec<Complex64> = piece
                .dlog_dt(t)
                .iter()
                .map(|d| d / self.disk_radius)
                .collect();
            if r <= 1.0 {
                return Ok((lm, dm));
            }
            let (c, dc) = chi((r - 1.0) / (self.r_blend - 1.0));
            // ∂_z |t| = conj(t) / (2 |t| R_d)
            let dr = t.conj() / (2.0 * r * self.disk_radius) * (dc / (self.r_blend - 1.0));
            let l = (0..self.n)
                .map(|j| c * lm[j] + (1.0 - c) * self.log_c[j])
                .collect();
            let d = (0..self.n)
                .map(|j| dm[j] * c + dr * (lm[j] - self.log_c[j]))
                .collect();
            return Ok((l, d));
        }
        if let Some((_, piece)) = &self.third {
            let w = z - piece.center;
            let r = w.norm();
            if r < piece.blend_outer {
                let lm = piece.log_diag_exact(w)?;
                let dm = piece.dlog_exact(w);
                if r <= piece.gamma_prime {
                    return Ok((lm, dm));
                }
                let width = piece.blend_outer - piece.gamma_prime;
                let (c, dc) = chi((r - piece.gamma_prime) / width);
                let dr = w.conj() / (2.0 * r) * (dc / width);
                let l = (0..self.n)
                    .map(|j| c * lm[j] + (1.0 - c) * self.log_c[j])
                    .collect();
                let d = (0..self.n)
                    .map(|j| dm[j] * c + dr * (lm[j] - self.log_c[j]))
                    .collect();
                return Ok((l, d));
            }
        }
        Ok((self.log_c.clone(), vec![zero; self.n]))
    }

    pub fn log_diag(&self, z: Complex64) -> Result<Vec<f64>> {
        Ok(self.log_diag_and_derivative(z)?.0)
    }

    /// K₀(z) as a matrix (may overflow very close to a pole; prefer [`Self::log_diag`]).
    pub fn eval(&self, z: Complex64) -> Result<PdMatrix> {
        let l = self.log_diag(z)?;
        PdMatrix::from_diagonal(&l.iter().map(|x| x.exp()).collect::<Vec<_>>())
    }

    /// Expected principal part of `(∂K)K⁻¹` at puncture i in the disk coordinate:
    /// per slot, pairs `(m, C_{-m})` for every nonzero coefficient.
    pub fn principal_part(&self, i: usize) -> Vec<Vec<(u32, f64)>> {
        for (idx, _, piece) in &self.second {
            if *idx == i {
                return piece
                    .slots
                    .iter()
                    .map(|s| {
                        let mut acc: Vec<(u32, f64)> = Vec::new();
                        for &(k, a) in s {
                            let m = k + 1;
                            match acc.iter_mut().find(|(mm, _)| *mm == m) {
                                Some(e) => e.1 -= k as f64 * a,
                                None => acc.push((m, -(k as f64) * a)),
                            }
                        }
                        acc
                    })
                    .collect();
            }
        }
        if let Some((idx, piece)) = &self.third {
            if let Some(pos) = idx.iter().position(|&x| x == i) {
                return (0..self.n)
                    .map(|j| vec![(1, piece.residue(j, pos))])
                    .collect();
            }
        }
        vec![Vec::new(); self.n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cz(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn u_k_examples() {
        assert!((u_k_second(cz(0.5, 0.0), 1).unwrap() - 4.0).abs() < 1e-14);
        for th in [0.0, 0.4, 2.0, 5.0] {
            let t = Complex64::from_polar(1.0, th);
            assert!((u_k_second(t, 1).unwrap() - 5.0 * th.cos()).abs() < 1e-13);
        }
        assert!(matches!(u_k_second(cz(0.0, 0.0), 1), Err(Error::AtPole)));
    }

    #[test]
    fn u_k_radial_derivative_vanishes_on_half_circle() {
        for k in 1..5 {
            for th in [0.1, 1.3, 2.9, 4.4] {
                let t = Complex64::from_polar(0.5, th);
                // r ∂_r u = 2 Re(t ∂_t u)
                let rd = 2.0 * (t * du_k_second(t, k)).re;
                assert!(rd.abs() < 1e-12 * 4f64.powi(k as i32), "k={k} {rd}");
                let h = 1e-6;
                let fd = (u_k_second(Complex64::from_polar(0.5 + h, th), k).unwrap()
                    - u_k_second(Complex64::from_polar(0.5 - h, th), k).unwrap())
                    / (2.0 * h);
                assert!(fd.abs() < 1e-5 * 4f64.powi(k as i32));
            }
        }
    }

    #[test]
    fn second_kind_examples() {
        let z = SecondKindPiece::new(vec![vec![(1, 0.0)], vec![]]);
        let m = z.metric(cz(0.3, 0.1)).unwrap();
        assert!((m.as_matrix() - PdMatrix::identity(2).as_matrix()).norm() < 1e-15);
        let p = SecondKindPiece::new(vec![vec![(1, 1.0)]]);
        let l = p.log_diag(cz(0.5, 0.0)).unwrap();
        assert!((l[0] - 8.0).abs() < 1e-13);
    }

    #[test]
    fn second_kind_derivative_matches_fd() {
        let p = SecondKindPiece::new(vec![vec![(1, 0.7), (2, -0.3)]]);
        let t = cz(0.31, -0.22);
        let h = 1e-6;
        let dx = (p.log_diag(t + h).unwrap()[0] - p.log_diag(t - h).unwrap()[0]) / (2.0 * h);
        let dy = (p.log_diag(t + cz(0.0, h)).unwrap()[0] - p.log_diag(t - cz(0.0, h)).unwrap()[0])
            / (2.0 * h);
        let d = p.dlog_dt(t)[0];
        assert!((d - cz(dx, -dy) * 0.5).norm() < 1e-6);
    }

    #[test]
    fn g_residues_and_neumann_circle() {
        let xi = [cz(0.6, 0.0)];
        let xr = [reflect(xi[0], 1.2)];
        let l = [1i64];
        // residue of d log g by contour integral
        let res = |c: Complex64, r: f64| {
            let m = 400;
            let mut acc = cz(0.0, 0.0);
            for k in 0..m {
                let th = 2.0 * std::f64::consts::PI * (k as f64) / m as f64;
                let z = c + Complex64::from_polar(r, th);
                let h = 1e-6;
                let dlog = ((third_kind_g(z + h, &xi, &xr, &l).unwrap()).ln()
                    - (third_kind_g(z - h, &xi, &xr, &l).unwrap()).ln())
                    / (2.0 * h);
                acc += dlog * Complex64::from_polar(r, th) / m as f64;
            }
            acc.re
        };
        assert!((res(cz(0.0, 0.0), 0.1) - 1.0).abs() < 1e-6);
        assert!((res(xi[0], 0.1) + 1.0).abs() < 1e-6);
        for th in [0.0, 0.7, 2.2, 3.3, 5.9] {
            let h = 1e-5;
            let f = |r: f64| {
                third_kind_g(Complex64::from_polar(r, th), &xi, &xr, &l)
                    .unwrap()
                    .norm()
                    .ln()
            };
            let d = (f(1.2 + h) - f(1.2 - h)) / (2.0 * h);
            assert!(d.abs() < 1e-8, "{d}");
        }
        assert!(third_kind_g(cz(0.0, 0.0), &xi, &xr, &l).is_err());
    }

    fn sphere(p: Vec<Complex64>, rd: f64) -> SurfaceSpec {
        SurfaceSpec {
            mode: SurfaceMode::SphereChart,
            punctures: p,
            disk_radius: rd,
            chart_radius: 3.0,
        }
    }

    #[test]
    fn third_kind_model_residues() {
        let s = sphere(vec![cz(0.0, 0.0), cz(0.6, 0.0)], 0.25);
        let d = SingularData {
            punctures: vec![
                PunctureData::Third {
                    residues: vec![1.0, 0.5],
                },
                PunctureData::Third {
                    residues: vec![-1.0, -0.5],
                },
            ],
            rational_bound: 64,
        };
        let m = ModelMetric::assemble(&s, 2, &d, &ModelParams::default()).unwrap();
        assert_eq!(m.principal_part(0), vec![vec![(1, 1.0)], vec![(1, 0.5)]]);
        assert_eq!(m.principal_part(1), vec![vec![(1, -1.0)], vec![(1, -0.5)]]);
        // slot decoupling: slot 1 equals the scalar model with residues ±0.5
        let d1 = SingularData {
            punctures: vec![
                PunctureData::Third {
                    residues: vec![0.5],
                },
                PunctureData::Third {
                    residues: vec![-0.5],
                },
            ],
            rational_bound: 64,
        };
        let m1 = ModelMetric::assemble(&s, 1, &d1, &ModelParams::default()).unwrap();
        for z in [cz(0.3, 0.4), cz(-1.0, 0.2), cz(1.8, 0.0)] {
            assert!((m.log_diag(z).unwrap()[1] - m1.log_diag(z).unwrap()[0]).abs() < 1e-13);
        }
        let zero = SingularData {
            punctures: vec![
                PunctureData::Third {
                    residues: vec![0.0],
                },
                PunctureData::Third {
                    residues: vec![0.0],
                },
            ],
            rational_bound: 64,
        };
        let m0 = ModelMetric::assemble(&s, 1, &zero, &ModelParams::default()).unwrap();
        assert!(m0.log_diag(cz(0.2, 0.1)).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn assembled_continuity_and_zones() {
        let s = sphere(vec![cz(0.2, -0.1)], 0.8);
        let d = SingularData {
            punctures: vec![PunctureData::Second {
                slots: vec![vec![(1, 1.0)], vec![(2, -0.5)]],
            }],
            rational_bound: 64,
        };
        let m = ModelMetric::assemble(&s, 2, &d, &ModelParams::default()).unwrap();
        let p = cz(0.2, -0.1);
        let t = Complex64::from_polar(0.3, 0.9);
        let piece = SecondKindPiece::new(vec![vec![(1, 1.0)], vec![(2, -0.5)]]);
        let (a, b) = (m.log_diag(p + t * 0.8).unwrap(), piece.log_diag(t).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        assert_eq!(m.log_diag(cz(2.5, 0.0)).unwrap(), vec![0.0, 0.0]);
        for k in 0..2000 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 2000.0;
            for r in [1.0, 1.5] {
                let a = m
                    .log_diag(p + Complex64::from_polar(0.8 * r * (1.0 - 1e-13), th))
                    .unwrap();
                let b = m
                    .log_diag(p + Complex64::from_polar(0.8 * r * (1.0 + 1e-13), th))
                    .unwrap();
                for j in 0..2 {
                    assert!((a[j] - b[j]).abs() < 1e-10);
                }
            }
        }
        assert_eq!(m.zone(p + 0.3), Zone::Tail);
        assert_eq!(m.zone(p + 0.5), Zone::Model);
        assert_eq!(m.zone(p + 1.0), Zone::Blend);
        assert_eq!(m.zone(p + 1.3), Zone::Constant);
    }

    #[test]
    fn blended_derivative_matches_fd() {
        let s = sphere(vec![cz(0.0, 0.0), cz(0.6, 0.0)], 0.25);
        let d = SingularData {
            punctures: vec![
                PunctureData::Third {
                    residues: vec![1.0],
                },
                PunctureData::Third {
                    residues: vec![-1.0],
                },
            ],
            rational_bound: 64,
        };
        let m = ModelMetric::assemble(&s, 1, &d, &ModelParams::default()).unwrap();
        let s2 = sphere(vec![cz(0.0, 0.0)], 1.0);
        let d2 = SingularData {
            punctures: vec![PunctureData::Second {
                slots: vec![vec![(1, 1.0)]],
            }],
            rational_bound: 64,
        };
        let m2 = ModelMetric::assemble(&s2, 1, &d2, &ModelParams::default()).unwrap();
        for (mm, z) in [
            (&m, cz(1.8, 0.3)),
            (&m, cz(0.3, 0.2)),
            (&m2, cz(1.2, 0.2)),
            (&m2, cz(0.3, -0.4)),
        ] {
            let h = 1e-6;
            let f = |z: Complex64| mm.log_diag(z).unwrap()[0];
            let dx = (f(z + h) - f(z - h)) / (2.0 * h);
            let dy = (f(z + cz(0.0, h)) - f(z - cz(0.0, h))) / (2.0 * h);
            let d = mm.log_diag_and_derivative(z).unwrap().1[0];
            assert!(
                (d - cz(dx, -dy) * 0.5).norm() < 1e-5 * (1.0 + d.norm()),
                "{z} {d}"
            );
        }
    }

    #[test]
    fn overlapping_collars_rejected() {
        let s = sphere(vec![cz(0.0, 0.0), cz(0.9, 0.0)], 0.4);
        let sd = PunctureData::Second {
            slots: vec![vec![(1, 1.0)]],
        };
        let d = SingularData {
            punctures: vec![sd.clone(), sd],
            rational_bound: 64,
        };
        assert!(matches!(
            ModelMetric::assemble(&s, 1, &d, &ModelParams::default()),
            Err(Error::OverlappingCollars(_))
        ));
    }
}
