//! Surfaces, punctures, representations of the fundamental group and the
//! twisting rules they induce.

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pd_geometry::{congruence_act, CMat, PdMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceMode {
    /// Punctured Riemann sphere seen through one chart; infinity is a regular point.
    SphereChart,
    /// Unit square with `a: x→x+1`, `b: y→y+1`.
    Torus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSpec {
    pub mode: SurfaceMode,
    pub punctures: Vec<Complex64>,
    /// Radius of the coordinate disk Δ_i around each puncture (chart units).
    pub disk_radius: f64,
    /// Radius of the finite chart region (sphere mode only).
    pub chart_radius: f64,
}

impl SurfaceSpec {
    pub fn validate(&self) -> Result<()> {
        let r = self.disk_radius;
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Geometry(format!("disk radius {r} must be positive")));
        }
        for (i, p) in self.punctures.iter().enumerate() {
            if !(p.re.is_finite() && p.im.is_finite()) {
                return Err(Error::Geometry(format!("puncture {i} is not finite")));
            }
            for (j, q) in self.punctures.iter().enumerate().skip(i + 1) {
                if (p - q).norm() <= 2.0 * r {
                    return Err(Error::Geometry(format!(
                        "punctures {i} and {j} closer than twice the disk radius"
                    )));
                }
            }
            match self.mode {
                SurfaceMode::Torus => {
                    let d = p.re.min(1.0 - p.re).min(p.im).min(1.0 - p.im);
                    if d <= r {
                        return Err(Error::Geometry(format!(
                            "puncture {i} within one disk radius of the fundamental-domain edge"
                        )));
                    }
                }
                SurfaceMode::SphereChart => {
                    if p.norm() + r >= self.chart_radius {
                        return Err(Error::Geometry(format!(
                            "puncture {i} disk leaves the chart of radius {}",
                            self.chart_radius
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// ρ on the generators of π₁ of the compact surface.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub n: usize,
    pub generators: Vec<(String, CMat)>,
}

impl Representation {
    pub fn trivial(n: usize) -> Self {
        Self {
            n,
            generators: Vec::new(),
        }
    }

    pub fn torus(a: CMat, b: CMat) -> Self {
        Self {
            n: a.nrows(),
            generators: vec![("a".into(), a), ("b".into(), b)],
        }
    }

    fn image(&self, name: &str) -> Result<&CMat> {
        self.generators
            .iter()
            .find(|(g, _)| g == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::UnknownGenerator(name.to_string()))
    }

    /// Checks shapes, invertibility and, for the torus, commutativity.
    pub fn validate(&self, mode: SurfaceMode) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Representation("rank must be positive".into()));
        }
        for (name, m) in &self.generators {
            if m.nrows() != self.n || m.ncols() != self.n {
                return Err(Error::Representation(format!(
                    "image of {name} has wrong shape"
                )));
            }
            if m.clone().try_inverse().is_none() {
                return Err(Error::Representation(format!(
                    "image of {name} is singular"
                )));
            }
        }
        match mode {
            SurfaceMode::SphereChart => {
                if !self.generators.is_empty() {
                    return Err(Error::Representation(
                        "sphere chart carries no generators (π₁ of the sphere is trivial)".into(),
                    ));
                }
            }
            SurfaceMode::Torus => {
                let a = self.image("a")?;
                let b = self.image("b")?;
                if self.generators.len() != 2 {
                    return Err(Error::Representation(
                        "torus needs exactly generators a, b".into(),
                    ));
                }
                let defect = (a * b - b * a).norm();
                if defect > 1e-12 * (1.0 + (a * b).norm()) {
                    return Err(Error::Representation(format!(
                        "torus relation violated: |ρ(a)ρ(b) − ρ(b)ρ(a)| = {defect:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `ρ(a)^dx ρ(b)^dy`, the holonomy for a lattice translation of the torus.
    pub fn translation(&self, dx: i32, dy: i32) -> Result<CMat> {
        let mut word = Vec::new();
        if dx != 0 {
            word.push(("a".to_string(), dx));
        }
        if dy != 0 {
            word.push(("b".to_string(), dy));
        }
        holonomy(self, &word)
    }
}

/// Parses words like `"a b a^-1 b^-1"` or `"a^2"`.
pub fn parse_word(s: &str) -> Result<Vec<(String, i32)>> {
    s.split_whitespace()
        .map(|tok| {
            let tok = tok.replace('⁻', "^-").replace('¹', "1").replace('²', "2");
            match tok.split_once('^') {
                None => Ok((tok.to_string(), 1)),
                Some((g, e)) => {
                    let e = e.replace("^", "");
                    e.parse::<i32>()
                        .map(|e| (g.to_string(), e))
                        .map_err(|_| Error::UnknownGenerator(tok.to_string()))
                }
            }
        })
        .collect()
}

/// Ordered product of generator images (negative exponents use inverses).
pub fn holonomy(rep: &Representation, word: &[(String, i32)]) -> Result<CMat> {
    let mut out = CMat::identity(rep.n, rep.n);
    for (name, e) in word {
        let g = rep.image(name)?;
        let base = if *e < 0 {
            g.clone()
                .try_inverse()
                .ok_or_else(|| Error::Representation(format!("image of {name} is singular")))?
        } else {
            g.clone()
        };
        for _ in 0..e.unsigned_abs() {
            out *= &base;
        }
    }
    Ok(out)
}

/// `ρ(γ)^{±1} ∘ H`: the value of the equivariant map on the translated sheet.
pub fn equivariant_wrap(
    rep: &Representation,
    h: &PdMatrix,
    gen: &str,
    direction: i32,
) -> Result<PdMatrix> {
    let g = holonomy(rep, &[(gen.to_string(), direction.signum())])?;
    congruence_act(&g, h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semisimplicity {
    Semisimple,
    NotSemisimple,
}

#[derive(Clone, Debug)]
pub struct SemisimplicityReport {
    pub verdict: Semisimplicity,
    pub radical_dim: usize,
    pub algebra_dim: usize,
    /// Basis of the generated algebra.
    pub basis: Vec<CMat>,
    /// Basis of the radical of the trace form.
    pub radical: Vec<CMat>,
    /// Algebra dimension after each closure round (monotone).
    pub closure_dims: Vec<usize>,
}

const SPAN_TOL: f64 = 1e-10;

/// Orthonormal (Frobenius) basis accumulator over C^{n×n}.
struct Span {
    ortho: Vec<CMat>,
    raw: Vec<CMat>,
}

impl Span {
    fn new() -> Self {
        Self {
            ortho: Vec::new(),
            raw: Vec::new(),
        }
    }

    fn try_add(&mut self, m: &CMat) -> bool {
        let scale = m.norm();
        if scale == 0.0 {
            return false;
        }
        let mut r = m / Complex64::new(scale, 0.0);
        for _ in 0..2 {
            for q in &self.ortho {
                let c = q.dotc(&r);
                r -= q * c;
            }
        }
        let nr = r.norm();
        if nr <= SPAN_TOL {
            return false;
        }
        self.ortho.push(r / Complex64::new(nr, 0.0));
        self.raw.push(m / Complex64::new(scale, 0.0));
        true
    }
}

/// Algebraic semisimplicity proxy: complete reducibility of the enveloping
/// algebra, tested by nondegeneracy of the trace form.
pub fn semisimplicity_check(rep: &Representation) -> SemisimplicityReport {
    let n = rep.n;
    let mut span = Span::new();
    span.try_add(&CMat::identity(n, n));
    for (_, g) in &rep.generators {
        span.try_add(g);
    }
    let mut closure_dims = vec![span.ortho.len()];
    loop {
        let before = span.ortho.len();
        let current = span.ortho.clone();
        for b in &current {
            for (_, g) in &rep.generators {
                span.try_add(&(b * g));
                if span.ortho.len() >= n * n {
                    break;
                }
            }
        }
        closure_dims.push(span.ortho.len());
        if span.ortho.len() == before || span.ortho.len() >= n * n {
            break;
        }
    }
    let basis = span.ortho;
    let d = basis.len();
    let gram = DMatrix::<Complex64>::from_fn(d, d, |i, j| (&basis[i] * &basis[j]).trace());
    let svd = gram.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(1.0);
    let v_t = svd.v_t.expect("requested");
    let mut radical = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= SPAN_TOL * smax {
            // row k of V* (conjugated) is a right null vector of the Gram matrix
            let mut x = CMat::zeros(n, n);
            for (i, b) in basis.iter().enumerate() {
                x += b * v_t[(k, i)].conj();
            }
            radical.push(x);
        }
    }
    let verdict = if radical.is_empty() {
        Semisimplicity::Semisimple
    } else {
        warn!(
            "representation is not semisimple (radical dimension {}); convergence is not guaranteed",
            radical.len()
        );
        Semisimplicity::NotSemisimple
    };
    SemisimplicityReport {
        verdict,
        radical_dim: radical.len(),
        algebra_dim: d,
        basis,
        radical,
        closure_dims,
    }
}

/// Basis of the commutant `{Y : Y ρ(γ) = ρ(γ) Y for all generators}`.
///
/// These are the infinitesimal gauge symmetries of the equivariant harmonic
/// map problem.
pub fn commutant_basis(rep: &Representation) -> Vec<CMat> {
    let n = rep.n;
    let nn = n * n;
    if rep.generators.is_empty() {
        return (0..nn)
            .map(|k| {
                let mut m = CMat::zeros(n, n);
                m[(k % n, k / n)] = Complex64::new(1.0, 0.0);
                m
            })
            .collect();
    }
    let rows = nn * rep.generators.len();
    let mut sys = DMatrix::<Complex64>::zeros(rows, nn);
    for k in 0..nn {
        let mut y = CMat::zeros(n, n);
        y[(k % n, k / n)] = Complex64::new(1.0, 0.0);
        for (gi, (_, g)) in rep.generators.iter().enumerate() {
            let c = g * &y - &y * g;
            for (e, v) in c.iter().enumerate() {
                sys[(gi * nn + e, k)] = *v;
            }
        }
    }
    let scale = sys.norm().max(1.0);
    // null space through the Hermitian normal matrix
    let normal = sys.adjoint() * &sys;
    let (vals, vecs) = crate::pd_geometry::eigh(&crate::pd_geometry::hermitian_part(&normal))
        .expect("finite normal matrix");
    vals.iter()
        .enumerate()
        .filter(|(_, &v)| v <= 1e-20 * scale * scale + 1e-24)
        .map(|(c, _)| CMat::from_fn(n, n, |i, j| vecs[(j * n + i, c)]))
        .collect()
}

/// Per-puncture prescription.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PunctureData {
    /// For every diagonal slot j, pairs `(k, a_k)`: the slot behaves like `-k a_k t^{-k-1} dt`.
    Second { slots: Vec<Vec<(u32, f64)>> },
    /// Residue of every diagonal slot.
    Third { residues: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularData {
    pub punctures: Vec<PunctureData>,
    /// Largest admissible denominator of residue ratios.
    pub rational_bound: u32,
}

impl SingularData {
    pub fn validate(&self, n: usize, n_punctures: usize) -> Result<()> {
        if self.punctures.len() != n_punctures {
            return Err(Error::SingularData(format!(
                "{} punctures but {} data entries",
                n_punctures,
                self.punctures.len()
            )));
        }
        let mut sums = vec![0.0; n];
        let mut any_third = false;
        for (i, p) in self.punctures.iter().enumerate() {
            match p {
                PunctureData::Second { slots } => {
                    if slots.len() != n {
                        return Err(Error::SingularData(format!("puncture {i}: need {n} slots")));
                    }
                    for s in slots {
                        for &(k, a) in s {
                            if k < 1 {
                                return Err(Error::SingularData(format!(
                                    "puncture {i}: exponent must be >= 1"
                                )));
                            }
                            if !a.is_finite() {
                                return Err(Error::SingularData(format!(
                                    "puncture {i}: non-finite coefficient"
                                )));
                            }
                        }
                    }
                }
                PunctureData::Third { residues } => {
                    any_third = true;
                    if residues.len() != n {
                        return Err(Error::SingularData(format!(
                            "puncture {i}: need {n} residues"
                        )));
                    }
                    for (j, a) in residues.iter().enumerate() {
                        if !a.is_finite() {
                            return Err(Error::SingularData(format!(
                                "puncture {i}: non-finite residue"
                            )));
                        }
                        sums[j] += a;
                    }
                }
            }
        }
        if any_third {
            for (j, s) in sums.iter().enumerate() {
                let scale: f64 = self
                    .punctures
                    .iter()
                    .filter_map(|p| match p {
                        PunctureData::Third { residues } => Some(residues[j].abs()),
                        _ => None,
                    })
                    .sum::<f64>()
                    .max(1.0);
                if s.abs() > 1e-12 * scale {
                    return Err(Error::ResidueSum { slot: j, sum: *s });
                }
            }
            for j in 0..n {
                self.slot_denominator(j)?;
            }
        }
        Ok(())
    }

    /// Third-kind residues of slot `j`, in puncture order (zero for second-kind punctures).
    pub fn third_residues(&self, j: usize) -> Vec<Option<f64>> {
        self.punctures
            .iter()
            .map(|p| match p {
                PunctureData::Third { residues } => Some(residues[j]),
                _ => None,
            })
            .collect()
    }

    /// Smallest positive integer q ≤ bound making `q·a_j^i` integral for every
    /// third-kind puncture i. All residues of a slot are then integer multiples of `1/q`.
    pub fn slot_denominator(&self, j: usize) -> Result<u32> {
        let res: Vec<f64> = self.third_residues(j).into_iter().flatten().collect();
        if res.iter().all(|a| *a == 0.0) {
            return Ok(1);
        }
        for q in 1..=self.rational_bound {
            let ok = res.iter().all(|a| {
                let x = a * q as f64;
                (x - x.round()).abs() <= 1e-9 * (1.0 + x.abs())
            });
            if ok {
                return Ok(q);
            }
        }
        Err(Error::NotRational {
            slot: j,
            bound: self.rational_bound,
        })
    }
}
