//! Geometry of the cone P_n of positive-definite Hermitian matrices.
//!
//! The Riemannian structure is the invariant one, `<A,B>_H = tr(A H⁻¹ B H⁻¹)`,
//! normalised so that at the identity it is the plain trace form.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

/// Relative eigenvalue floor below which a matrix is rejected as not PD.
pub const PD_TOL: f64 = 1e-13;
/// Default bound on the condition number of a congruence factor.
pub const DEFAULT_COND_BOUND: f64 = 1e12;

/// Hermitian n×n matrix. Hermitian symmetry is exact: the lower triangle is
/// always the mirror of the upper one.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMat);

/// Hermitian positive-definite matrix, a point of P_n.
#[derive(Clone, Debug, PartialEq)]
pub struct PdMatrix(CMat);

fn check_square(m: &CMat) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Shape {
            expected: m.nrows().max(1),
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Mirror the upper triangle into the lower one and drop imaginary diagonal parts.
pub(crate) fn mirror_upper(m: &CMat) -> CMat {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            out[(j, i)] = m[(i, j)].conj();
        }
    }
    out
}

/// `(M + M*)/2`, exactly Hermitian.
pub(crate) fn hermitian_part(m: &CMat) -> CMat {
    let avg = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    mirror_upper(&avg)
}

/// Eigen-decomposition of a Hermitian matrix: eigenvalues ascending, unitary eigenvectors.
pub(crate) fn eigh(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Eigen("non-finite input".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("iteration limit reached".into()))?;
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    Ok((vals, vecs))
}

/// `V diag(f(λ)) V*` for a Hermitian matrix with eigen-pairs (λ, V).
pub(crate) fn spectral_apply(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (c, &v) in vals.iter().enumerate() {
        let s = f(v);
        for r in 0..n {
            scaled[(r, c)] *= s;
        }
    }
    mirror_upper(&(scaled * vecs.adjoint()))
}

impl HermitianMatrix {
    /// Builds from the upper triangle of `m` (the lower triangle is ignored).
    pub fn from_upper(m: &CMat) -> Result<Self> {
        check_square(m)?;
        Ok(Self(mirror_upper(m)))
    }

    /// Accepts `m` if it is Hermitian to relative tolerance `1e-10`, then symmetrises.
    pub fn new(m: CMat) -> Result<Self> {
        check_square(&m)?;
        let defect = (&m - m.adjoint()).norm();
        if defect > 1e-10 * m.norm().max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self(hermitian_part(&m)))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMat::zeros(n, n))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self(CMat::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(d[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * Complex64::new(s, 0.0))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl PdMatrix {
    /// Validates Hermitian symmetry and positivity (min eig > 1e-13 · max eig).
    pub fn new(m: CMat) -> Result<Self> {
        let h = HermitianMatrix::new(m)?;
        Self::from_hermitian(h)
    }

    pub fn from_hermitian(h: HermitianMatrix) -> Result<Self> {
        let (vals, _) = eigh(&h.0)?;
        let min = vals[0];
        let max = *vals.last().unwrap();
        if !(min > PD_TOL * max) || !(max > 0.0) {
            return Err(Error::NotPositiveDefinite { min, max });
        }
        Ok(Self(h.0))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMat::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::from_hermitian(HermitianMatrix::from_real_diagonal(d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(eigh(&self.0)?.0)
    }

    pub fn inverse(&self) -> Result<CMat> {
        self.0
            .clone()
            .try_inverse()
            .ok_or(Error::Singular(f64::INFINITY))
    }

    /// `H^p` via the spectral calculus.
    pub fn power(&self, p: f64) -> Result<PdMatrix> {
        let (vals, vecs) = eigh(&self.0)?;
        Ok(PdMatrix(spectral_apply(&vals, &vecs, |l| l.powf(p))))
    }
}

fn check_same(n: usize, m: &CMat) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Shape {
            expected: n,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Condition number via singular values.
pub fn condition_number(g: &CMat) -> f64 {
    let sv = g.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `g ∘ A = g A g*`.
pub fn congruence_act(g: &CMat, a: &PdMatrix) -> Result<PdMatrix> {
    congruence_act_bounded(g, a, DEFAULT_COND_BOUND)
}

pub fn congruence_act_bounded(g: &CMat, a: &PdMatrix, cond_bound: f64) -> Result<PdMatrix> {
    check_same(a.dim(), g)?;
    let cond = condition_number(g);
    if !(cond <= cond_bound) {
        return Err(Error::Singular(cond));
    }
    let m = g * &a.0 * g.adjoint();
    PdMatrix::from_hermitian(HermitianMatrix(hermitian_part(&m)))
}

/// `tr(A H⁻¹ B H⁻¹)`.
pub fn inner_product(h: &PdMatrix, a: &HermitianMatrix, b: &HermitianMatrix) -> Result<f64> {
    let n = h.dim();
    check_same(n, &a.0)?;
    check_same(n, &b.0)?;
    let hinv = h.inverse()?;
    Ok((&a.0 * &hinv * &b.0 * &hinv).trace().re)
}

/// `H0^{1/2} (H0^{-1/2} H1 H0^{-1/2})^t H0^{1/2}`.
pub fn geodesic(h0: &PdMatrix, h1: &PdMatrix, t: f64) -> Result<PdMatrix> {
    check_same(h0.dim(), &h1.0)?;
    let (vals, vecs) = eigh(&h0.0)?;
    let s = spectral_apply(&vals, &vecs, f64::sqrt);
    let si = spectral_apply(&vals, &vecs, |l| 1.0 / l.sqrt());
    let inner = hermitian_part(&(&si * &h1.0 * &si));
    let (iv, ie) = eigh(&inner)?;
    if iv[0] <= 0.0 {
        return Err(Error::Eigen("relative matrix not positive".into()));
    }
    let p = spectral_apply(&iv, &ie, |l| l.powf(t));
    Ok(PdMatrix(hermitian_part(&(&s * p * &s))))
}

/// Log-eigenvalues of `H0⁻¹ H1` (ascending).
pub fn relative_log_eigenvalues(h0: &PdMatrix, h1: &PdMatrix) -> Result<Vec<f64>> {
    check_same(h0.dim(), &h1.0)?;
    let (vals, vecs) = eigh(&h0.0)?;
    let si = spectral_apply(&vals, &vecs, |l| 1.0 / l.sqrt());
    let inner = hermitian_part(&(&si * &h1.0 * &si));
    let (iv, _) = eigh(&inner)?;
    if iv[0] <= 0.0 {
        return Err(Error::Eigen("relative matrix not positive".into()));
    }
    Ok(iv.iter().map(|l| l.ln()).collect())
}

/// Riemannian distance `sqrt(Σ log² λ_j(H0⁻¹H1))`.
pub fn distance(h0: &PdMatrix, h1: &PdMatrix) -> Result<f64> {
    Ok(relative_log_eigenvalues(h0, h1)?
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt())
}

pub fn pd_exp(h: &HermitianMatrix) -> PdMatrix {
    let (vals, vecs) = eigh(&h.0).expect("finite Hermitian matrix");
    PdMatrix(spectral_apply(&vals, &vecs, f64::exp))
}

pub fn pd_log(h: &PdMatrix) -> HermitianMatrix {
    let (vals, vecs) = eigh(&h.0).expect("finite PD matrix");
    HermitianMatrix(spectral_apply(&vals, &vecs, f64::ln))
}
