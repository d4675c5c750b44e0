//! Node-local energy kernels used by the relaxation.
//!
//! Two implementations share one interface: a log-diagonal kernel for fields
//! that are diagonal with diagonal transports (every value is `diag(e^x)`),
//! and a fixed-size matrix kernel for n = 2..4.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use num_complex::Complex64;

use crate::field::{Discretization, EnergyKind, MetricField, Transport};

/// Per-node adjacency in CSR form with the weights of one energy functional.
pub(crate) struct Adjacency {
    pub ptr: Vec<usize>,
    pub nb: Vec<u32>,
    pub wp: Vec<f64>,
    pub wt: Vec<f64>,
    /// Edge id and whether the neighbour is the `b` end.
    pub edge: Vec<(u32, bool)>,
}

impl Adjacency {
    /// `plain_tail`: use the plain transport on tail edges too (deliberately inconsistent).
    pub fn new(disc: &Discretization, kind: EnergyKind, plain_tail: bool) -> Self {
        let mesh = &disc.mesh;
        let mut ptr = Vec::with_capacity(mesh.num_nodes() + 1);
        let (mut nb, mut wp, mut wt, mut edge) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        ptr.push(0);
        for a in 0..mesh.num_nodes() {
            for &e in &mesh.node_edges[a] {
                let (p, t) = disc.weights(e, kind);
                let (p, t) = if plain_tail { (p + t, 0.0) } else { (p, t) };
                nb.push(mesh.other(e, a) as u32);
                wp.push(p);
                wt.push(t);
                edge.push((e as u32, mesh.edges[e].a == a));
            }
            ptr.push(nb.len());
        }
        Self {
            ptr,
            nb,
            wp,
            wt,
            edge,
        }
    }
}

pub(crate) const MAXN: usize = 4;
pub(crate) type DiagVal = [f64; MAXN];

/// Interface of a local kernel.
pub(crate) trait Local: Sync {
    type V: Copy + Send + Sync;
    /// Tension (negative half-gradient in the node frame), local energy, total weight.
    fn tension(&self, a: usize, va: &Self::V, vals: &[Self::V]) -> (Self::V, f64, f64);
    fn energy_at(&self, a: usize, va: &Self::V, vals: &[Self::V]) -> f64;
    /// Move `va` by `alpha·x` along the geodesic in the node frame.
    fn retract(&self, va: &Self::V, x: &Self::V, alpha: f64) -> Self::V;
    fn scale(&self, x: &Self::V, s: f64) -> Self::V;
    fn norm2(&self, x: &Self::V) -> f64;
    /// Local energy is exactly quadratic along the step (scalar case).
    fn quadratic(&self) -> bool;
    /// Removes gauge directions from a step at the anchor.
    fn project_gauge(&self, a: usize, va: &Self::V, x: &mut Self::V);
    /// Total energy (each edge once).
    fn total_energy(&self, vals: &[Self::V], nodes: Option<&[bool]>) -> f64;
    /// Value is finite and positive definite.
    fn valid(&self, v: &Self::V) -> bool;
    /// `h̃ = I`, i.e. K = K₀.
    fn identity(&self) -> Self::V;
    /// Geodesic distance between two node values.
    fn dist(&self, x: &Self::V, y: &Self::V) -> f64;
    /// Global minimization over the active nodes; `None` falls back to relaxation sweeps.
    /// Returns `(iterations, largest Jacobi step, converged)`.
    fn linear_solve(
        &self,
        _vals: &mut [Self::V],
        _active: &[bool],
        _tol: f64,
        _residual: Option<(&[f64], f64)>,
        _max_iter: usize,
    ) -> Option<(usize, f64, bool)> {
        None
    }
}

fn orthonormalize(vs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut v in vs {
        for _ in 0..2 {
            for q in &out {
                let c: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-10 {
            out.push(v.into_iter().map(|x| x / nrm).collect());
        }
    }
    out
}

/// Log-diagonal kernel: node value `x` with `h̃ = diag(e^{x_j})`.
pub(crate) struct DiagKernel<'a> {
    pub n: usize,
    pub adj: &'a Adjacency,
    /// Per adjacency entry: `2τ_j` of the transport into the node frame.
    pub shift: Vec<DiagVal>,
    pub anchor: Option<usize>,
    gauge: Vec<Vec<f64>>,
}

impl<'a> DiagKernel<'a> {
    pub fn new(disc: &Discretization, adj: &'a Adjacency) -> Self {
        let n = disc.n;
        let shift = adj
            .edge
            .iter()
            .map(|&(e, from_a)| {
                let t = if from_a {
                    &disc.transport[e as usize]
                } else {
                    &disc.transport_inv[e as usize]
                };
                let mut s = [0.0; MAXN];
                match t {
                    Transport::Diag(tau) => {
                        for j in 0..n {
                            s[j] = 2.0 * tau[j];
                        }
                    }
                    Transport::Full(m) => {
                        for j in 0..n {
                            s[j] = 2.0 * m[(j, j)].norm().ln();
                        }
                    }
                }
                s
            })
            .collect();
        // diagonal parts of the gauge directions Ŷ = S⁻¹ Y S (and iŶ)
        let gauge = match disc.anchor {
            Some(_) => {
                let mut vs = Vec::new();
                for y in &disc.gauge {
                    let d: Vec<Complex64> = (0..n).map(|j| y[(j, j)]).collect();
                    vs.push(d.iter().map(|c| c.re).collect());
                    vs.push(d.iter().map(|c| c.im).collect());
                }
                orthonormalize(vs)
            }
            None => Vec::new(),
        };
        Self {
            n,
            adj,
            shift,
            anchor: disc.anchor,
            gauge,
        }
    }

    pub fn load(field: &MetricField) -> Vec<DiagVal> {
        let n = field.n();
        field
            .rel
            .chunks(n * n)
            .map(|b| {
                let mut x = [0.0; MAXN];
                for j in 0..n {
                    x[j] = b[j * n + j].re.ln();
                }
                x
            })
            .collect()
    }

    pub fn store(vals: &[DiagVal], field: &mut MetricField) {
        let n = field.n();
        for (a, x) in vals.iter().enumerate() {
            let b = &mut field.rel[a * n * n..(a + 1) * n * n];
            for j in 0..n {
                b[j * n + j] = Complex64::new(x[j].exp(), 0.0);
            }
        }
    }
}

impl DiagKernel<'_> {
    fn project(&self, a: usize, x: &mut DiagVal) {
        self.project_gauge(a, &[0.0; MAXN], x);
    }

    /// Half the Hessian applied to `p` (inactive entries of `p` are zero).
    fn hess(&self, nodes: &[usize], p: &[DiagVal], out: &mut [DiagVal]) {
        let n = self.n;
        for &a in nodes {
            let mut y = [0.0; MAXN];
            let mut w = 0.0;
            for k in self.adj.ptr[a]..self.adj.ptr[a + 1] {
                let wk = self.adj.wp[k] + self.adj.wt[k];
                let pb = &p[self.adj.nb[k] as usize];
                for j in 0..n {
                    y[j] -= wk * pb[j];
                }
                w += wk;
            }
            for j in 0..n {
                y[j] += w * p[a][j];
            }
            self.project(a, &mut y);
            out[a] = y;
        }
    }
}

impl Local for DiagKernel<'_> {
    type V = DiagVal;

    #[inline]
    fn tension(&self, a: usize, va: &DiagVal, vals: &[DiagVal]) -> (DiagVal, f64, f64) {
        let n = self.n;
        let mut tau = [0.0; MAXN];
        let mut e = 0.0;
        let mut w = 0.0;
        for k in self.adj.ptr[a]..self.adj.ptr[a + 1] {
            let b = self.adj.nb[k] as usize;
            let (wp, wt) = (self.adj.wp[k], self.adj.wt[k]);
            let xb = &vals[b];
            let s = &self.shift[k];
            for j in 0..n {
                let dp = xb[j] + s[j] - va[j];
                let dt = xb[j] - va[j];
                tau[j] += wp * dp + wt * dt;
                e += wp * dp * dp + wt * dt * dt;
            }
            w += wp + wt;
        }
        (tau, e, w)
    }

    fn energy_at(&self, a: usize, va: &DiagVal, vals: &[DiagVal]) -> f64 {
        self.tension(a, va, vals).1
    }

    #[inline]
    fn retract(&self, va: &DiagVal, x: &DiagVal, alpha: f64) -> DiagVal {
        let mut out = *va;
        for j in 0..self.n {
            out[j] += alpha * x[j];
        }
        out
    }

    fn scale(&self, x: &DiagVal, s: f64) -> DiagVal {
        let mut out = *x;
        for v in out.iter_mut() {
            *v *= s;
        }
        out
    }

    fn norm2(&self, x: &DiagVal) -> f64 {
        x[..self.n].iter().map(|v| v * v).sum()
    }

    fn quadratic(&self) -> bool {
        true
    }

    fn project_gauge(&self, a: usize, _va: &DiagVal, x: &mut DiagVal) {
        if Some(a) != self.anchor {
            return;
        }
        for g in &self.gauge {
            let c: f64 = (0..self.n).map(|j| x[j] * g[j]).sum();
            for j in 0..self.n {
                x[j] -= c * g[j];
            }
        }
    }

    fn total_energy(&self, vals: &[DiagVal], nodes: Option<&[bool]>) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for a in 0..vals.len() {
            for k in self.adj.ptr[a]..self.adj.ptr[a + 1] {
                let b = self.adj.nb[k] as usize;
                if b < a {
                    continue;
                }
                if let Some(m) = nodes {
                    if !(m[a] && m[b]) {
                        continue;
                    }
                }
                let (wp, wt) = (self.adj.wp[k], self.adj.wt[k]);
                for j in 0..n {
                    let dp = vals[b][j] + self.shift[k][j] - vals[a][j];
                    let dt = vals[b][j] - vals[a][j];
                    total += wp * dp * dp + wt * dt * dt;
                }
            }
        }
        total
    }

    fn valid(&self, v: &DiagVal) -> bool {
        v[..self.n].iter().all(|x| x.is_finite())
    }

    fn identity(&self) -> DiagVal {
        [0.0; MAXN]
    }

    fn dist(&self, x: &DiagVal, y: &DiagVal) -> f64 {
        (0..self.n)
            .map(|j| (x[j] - y[j]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Jacobi-preconditioned conjugate gradients; every iterate lowers the energy.
    /// Jacobi-preconditioned CG on the quadratic energy in `x`. Stops when the
    /// largest Jacobi step is below `tol` and, if given, the area-weighted
    /// residual `sqrt(Σ|r_a|²/A_a)` is below its target (or stagnates).
    fn linear_solve(
        &self,
        vals: &mut [DiagVal],
        active: &[bool],
        tol: f64,
        residual: Option<(&[f64], f64)>,
        max_iter: usize,
    ) -> Option<(usize, f64, bool)> {
        let n = self.n;
        let nodes: Vec<usize> = (0..vals.len()).filter(|&a| active[a]).collect();
        let nn = vals.len();
        let zero = [0.0; MAXN];
        let mut r = vec![zero; nn];
        let mut z = vec![zero; nn];
        let mut p = vec![zero; nn];
        let mut hp = vec![zero; nn];
        let mut diag = vec![0.0; nn];
        let mut max_step = 0.0f64;
        for &a in &nodes {
            let (mut t, _, w) = self.tension(a, &vals[a], vals);
            self.project(a, &mut t);
            r[a] = t;
            diag[a] = w;
            for j in 0..n {
                z[a][j] = if w > 0.0 { t[j] / w } else { 0.0 };
            }
            max_step = max_step.max(self.norm2(&z[a]).sqrt());
            p[a] = z[a];
        }
        let dot = |x: &[DiagVal], y: &[DiagVal]| -> f64 {
            nodes
                .iter()
                .map(|&a| (0..n).map(|j| x[a][j] * y[a][j]).sum::<f64>())
                .sum()
        };
        let wres = |r: &[DiagVal]| -> f64 {
            residual.map_or(0.0, |(area, _)| {
                nodes
                    .iter()
                    .map(|&a| self.norm2(&r[a]) / area[a].max(f64::MIN_POSITIVE))
                    .sum::<f64>()
                    .sqrt()
            })
        };
        let target = residual.map_or(f64::INFINITY, |x| x.1);
        let (mut res, mut best, mut since_best) = (wres(&r), f64::INFINITY, 0);
        let mut rz = dot(&r, &z);
        let mut it = 0;
        while it < max_iter && (max_step >= tol || res >= target) && rz > 0.0 {
            if res < 0.5 * best {
                best = res;
                since_best = 0;
            } else {
                since_best += 1;
                if max_step < tol && since_best > 100 {
                    break;
                }
            }
            self.hess(&nodes, &p, &mut hp);
            let php = dot(&p, &hp);
            if !(php > 0.0) {
                break;
            }
            let alpha = rz / php;
            max_step = 0.0;
            for &a in &nodes {
                for j in 0..n {
                    vals[a][j] += alpha * p[a][j];
                    r[a][j] -= alpha * hp[a][j];
                    z[a][j] = if diag[a] > 0.0 {
                        r[a][j] / diag[a]
                    } else {
                        0.0
                    };
                }
                max_step = max_step.max(self.norm2(&z[a]).sqrt());
            }
            res = wres(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for &a in &nodes {
                for j in 0..n {
                    p[a][j] = z[a][j] + beta * p[a][j];
                }
            }
            it += 1;
        }
        Some((it, max_step, max_step < tol && res < target))
    }
}

pub(crate) type M<const N: usize> = SMatrix<Complex64, N, N>;

#[derive(Clone)]
pub(crate) enum TN<const N: usize> {
    Diag(SVector<f64, N>),
    Full(M<N>),
}

/// Fixed-size matrix kernel: node value is `h̃` itself; tangents are Hermitian
/// matrices in the Cholesky frame of the node value.
pub(crate) struct MatKernel<'a, const N: usize> {
    pub adj: &'a Adjacency,
    pub tr: Vec<TN<N>>,
    pub anchor: Option<usize>,
    /// `Ŷ = S⁻¹ Y S` at the anchor.
    gauge: Vec<M<N>>,
}

#[inline]
fn herm<const N: usize>(m: &M<N>) -> M<N> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

#[inline]
fn apply_t<const N: usize>(t: &TN<N>, h: &M<N>) -> M<N> {
    match t {
        TN::Diag(tau) => M::<N>::from_fn(|i, j| h[(i, j)] * (tau[i] + tau[j]).exp()),
        TN::Full(g) => g * h * g.adjoint(),
    }
}

/// Cholesky factor of a Hermitian PD matrix.
#[inline]
pub(crate) fn chol<const N: usize>(h: &M<N>) -> Option<M<N>> {
    h.cholesky().map(|c| c.l())
}

/// `L⁻¹ B L^{-*}` for lower-triangular L.
#[inline]
fn congr_inv<const N: usize>(l: &M<N>, b: &M<N>) -> M<N> {
    let y = l.solve_lower_triangular(b).expect("nonsingular factor");
    let m = l
        .solve_lower_triangular(&y.adjoint())
        .expect("nonsingular factor");
    herm(&m.adjoint())
}

/// Hermitian eigendecomposition for the supported fixed sizes.
pub(crate) trait Eigh<const N: usize> {
    fn eigh(m: &M<N>) -> (SVector<f64, N>, M<N>);
}

pub(crate) struct Sz<const N: usize>;

macro_rules! impl_eigh {
    ($($n:literal),*) => {$(
        impl Eigh<$n> for Sz<$n> {
            #[inline]
            fn eigh(m: &M<$n>) -> (SVector<f64, $n>, M<$n>) {
                let e = SymmetricEigen::new(*m);
                (e.eigenvalues, e.eigenvectors)
            }
        }
    )*};
}
impl_eigh!(1, 2, 3, 4);

/// Hermitian log and squared norm of log of a Hermitian PD matrix.
#[inline]
fn log_and_d2<const N: usize>(m: &M<N>) -> (M<N>, f64)
where
    Sz<N>: Eigh<N>,
{
    let (vals, vecs) = Sz::<N>::eigh(m);
    let mut d2 = 0.0;
    let mut v = vecs;
    for c in 0..N {
        let lv = vals[c].max(f64::MIN_POSITIVE).ln();
        d2 += lv * lv;
        for r in 0..N {
            v[(r, c)] *= lv;
        }
    }
    (herm(&(v * vecs.adjoint())), d2)
}

#[inline]
fn d2_only<const N: usize>(m: &M<N>) -> f64
where
    Sz<N>: Eigh<N>,
{
    Sz::<N>::eigh(m)
        .0
        .iter()
        .map(|l| l.max(f64::MIN_POSITIVE).ln().powi(2))
        .sum()
}

#[inline]
fn expm<const N: usize>(x: &M<N>) -> M<N>
where
    Sz<N>: Eigh<N>,
{
    let (vals, vecs) = Sz::<N>::eigh(x);
    let mut v = vecs;
    for c in 0..N {
        let e = vals[c].exp();
        for r in 0..N {
            v[(r, c)] *= e;
        }
    }
    herm(&(v * vecs.adjoint()))
}

impl<'a, const N: usize> MatKernel<'a, N>
where
    Sz<N>: Eigh<N>,
{
    pub fn new(disc: &Discretization, adj: &'a Adjacency) -> Self {
        let tr = adj
            .edge
            .iter()
            .map(|&(e, from_a)| {
                let t = if from_a {
                    &disc.transport[e as usize]
                } else {
                    &disc.transport_inv[e as usize]
                };
                match t {
                    Transport::Diag(tau) => TN::Diag(SVector::<f64, N>::from_fn(|i, _| tau[i])),
                    Transport::Full(m) => TN::Full(M::<N>::from_fn(|i, j| m[(i, j)])),
                }
            })
            .collect();
        let gauge = match disc.anchor {
            Some(an) => {
                let l = disc.l(an);
                disc.gauge
                    .iter()
                    .map(|y| M::<N>::from_fn(|i, j| y[(i, j)] * (0.5 * (l[j] - l[i])).exp()))
                    .collect()
            }
            None => Vec::new(),
        };
        Self {
            adj,
            tr,
            anchor: disc.anchor,
            gauge,
        }
    }

    pub fn load(field: &MetricField) -> Vec<M<N>> {
        field
            .rel
            .chunks(N * N)
            .map(M::<N>::from_column_slice)
            .collect()
    }

    pub fn store(vals: &[M<N>], field: &mut MetricField) {
        for (a, v) in vals.iter().enumerate() {
            field.rel[a * N * N..(a + 1) * N * N].copy_from_slice(v.as_slice());
        }
    }

    #[inline]
    fn neighbour(&self, k: usize, vals: &[M<N>]) -> (M<N>, M<N>) {
        let b = &vals[self.adj.nb[k] as usize];
        (apply_t(&self.tr[k], b), *b)
    }
}

impl<const N: usize> Local for MatKernel<'_, N>
where
    Sz<N>: Eigh<N>,
{
    type V = M<N>;

    fn tension(&self, a: usize, va: &M<N>, vals: &[M<N>]) -> (M<N>, f64, f64) {
        let l = match chol(va) {
            Some(l) => l,
            None => return (M::<N>::zeros(), f64::INFINITY, 1.0),
        };
        let mut tau = M::<N>::zeros();
        let mut e = 0.0;
        let mut w = 0.0;
        for k in self.adj.ptr[a]..self.adj.ptr[a + 1] {
            let (wp, wt) = (self.adj.wp[k], self.adj.wt[k]);
            let (bp, bt) = self.neighbour(k, vals);
            if wp != 0.0 {
                let (lg, d2) = log_and_d2(&congr_inv(&l, &bp));
                tau += lg * Complex64::new(wp, 0.0);
                e += wp * d2;
            }
            if wt != 0.0 {
                let (lg, d2) = log_and_d2(&congr_inv(&l, &bt));
                tau += lg * Complex64::new(wt, 0.0);
                e += wt * d2;
            }
            w += wp + wt;
        }
        (tau, e, w)
    }

    fn energy_at(&self, a: usize, va: &M<N>, vals: &[M<N>]) -> f64 {
        let l = match chol(va) {
            Some(l) => l,
            None => return f64::INFINITY,
        };
        let mut e = 0.0;
        for k in self.adj.ptr[a]..self.adj.ptr[a + 1] {
            let (wp, wt) = (self.adj.wp[k], self.adj.wt[k]);
            let (bp, bt) = self.neighbour(k, vals);
            if wp != 0.0 {
                e += wp * d2_only(&congr_inv(&l, &bp));
            }
            if wt != 0.0 {
                e += wt * d2_only(&congr_inv(&l, &bt));
            }
        }
        e
    }

    fn retract(&self, va: &M<N>, x: &M<N>, alpha: f64) -> M<N> {
        let l = chol(va).expect("positive definite value");
        herm(&(l * expm(&(x * Complex64::new(alpha, 0.0))) * l.adjoint()))
    }

    fn scale(&self, x: &M<N>, s: f64) -> M<N> {
        x * Complex64::new(s, 0.0)
    }

    fn norm2(&self, x: &M<N>) -> f64 {
        x.norm_squared()
    }

    fn quadratic(&self) -> bool {
        false
    }

    fn project_gauge(&self, a: usize, va: &M<N>, x: &mut M<N>) {
        if Some(a) != self.anchor {
            return;
        }
        let l = match chol(va) {
            Some(l) => l,
            None => return,
        };
        let linv = l.try_inverse().expect("nonsingular factor");
        let mut basis: Vec<M<N>> = Vec::new();
        for y in &self.gauge {
            for ph in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let t = linv * (y * ph) * l;
                let mut d = t + t.adjoint();
                for _ in 0..2 {
                    for q in &basis {
                        let c = (q * d).trace().re;
                        d -= q * Complex64::new(c, 0.0);
                    }
                }
                let nrm = d.norm();
                if nrm > 1e-10 {
                    basis.push(d / Complex64::new(nrm, 0.0));
                }
            }
        }
        for q in &basis {
            let c = (q * *x).trace().re;
            *x -= q * Complex64::new(c, 0.0);
        }
    }

    fn total_energy(&self, vals: &[M<N>], nodes: Option<&[bool]>) -> f64 {
        let mut total = 0.0;
        for a in 0..vals.len() {
            let l = match chol(&vals[a]) {
                Some(l) => l,
                None => return f64::INFINITY,
            };
            for k in self.adj.ptr[a]..self.adj.ptr[a + 1] {
                let b = self.adj.nb[k] as usize;
                if b < a {
                    continue;
                }
                if let Some(m) = nodes {
                    if !(m[a] && m[b]) {
                        continue;
                    }
                }
                let (wp, wt) = (self.adj.wp[k], self.adj.wt[k]);
                let (bp, bt) = self.neighbour(k, vals);
                if wp != 0.0 {
                    total += wp * d2_only(&congr_inv(&l, &bp));
                }
                if wt != 0.0 {
                    total += wt * d2_only(&congr_inv(&l, &bt));
                }
            }
        }
        total
    }

    fn valid(&self, v: &M<N>) -> bool {
        v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) && chol(v).is_some()
    }

    fn identity(&self) -> M<N> {
        M::<N>::identity()
    }

    fn dist(&self, x: &M<N>, y: &M<N>) -> f64 {
        match chol(x) {
            Some(l) => d2_only(&congr_inv(&l, y)).sqrt(),
            None => f64::INFINITY,
        }
    }
    /// Riemannian Newton iteration: the exact Hessian is inverted by
    /// Jacobi-preconditioned CG, followed by a backtracking line search.
    fn linear_solve(
        &self,
        vals: &mut [M<N>],
        active: &[bool],
        tol: f64,
        residual: Option<(&[f64], f64)>,
        max_iter: usize,
    ) -> Option<(usize, f64, bool)> {
        Some(self.newton(vals, active, tol, residual, max_iter))
    }
}

/// Unitary factor of the polar decomposition `P = (PP*)^{1/2} U`.
#[inline]
fn polar_unitary<const N: usize>(p: &M<N>) -> M<N>
where
    Sz<N>: Eigh<N>,
{
    let (vals, vecs) = Sz::<N>::eigh(&herm(&(p.adjoint() * p)));
    let mut v = vecs;
    for c in 0..N {
        let s = 1.0 / vals[c].max(f64::MIN_POSITIVE).sqrt();
        for r in 0..N {
            v[(r, c)] *= s;
        }
    }
    p * v * vecs.adjoint()
}

#[inline]
fn frob<const N: usize>(x: &M<N>, y: &M<N>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum()
}

/// Second-order model of one edge term at the current values. With `M = P P*`,
/// `P = L_a⁻¹ T L_b`, its polar factor `U` (parallel transport from the frame of
/// `b`), the eigenbasis `V` of `M` and `X̂ = V*X_aV`, `Ẑ = V*U X_b U*V`, the
/// Hessian of `d²` is `2 Σ_ij g_ij(|X̂_ij|² + |Ẑ_ij|²) − 2 h_ij Re(X̂_ij Ẑ_ij^*)`.
struct EdgeModel<const N: usize> {
    a: usize,
    b: usize,
    w: f64,
    v: M<N>,
    u: M<N>,
    g: SMatrix<f64, N, N>,
    h: SMatrix<f64, N, N>,
}

/// `(δ/2) coth(δ/2)` and `(δ/2) / sinh(δ/2)`.
#[inline]
fn dlog_factors(d: f64) -> (f64, f64) {
    let x = 0.5 * d;
    if x.abs() < 1e-4 {
        (1.0 + x * x / 3.0, 1.0 - x * x / 6.0)
    } else {
        (x / x.tanh(), x / x.sinh())
    }
}

struct Linearization<const N: usize> {
    edges: Vec<EdgeModel<N>>,
    /// Diagonal of the model per node (Jacobi preconditioner).
    diag: Vec<f64>,
}

impl<const N: usize> MatKernel<'_, N>
where
    Sz<N>: Eigh<N>,
{
    fn linearize(&self, vals: &[M<N>], active: &[bool]) -> Linearization<N> {
        let mut edges = Vec::new();
        let mut diag = vec![0.0; vals.len()];
        for a in 0..vals.len() {
            let mut la = None;
            for k in self.adj.ptr[a]..self.adj.ptr[a + 1] {
                let b = self.adj.nb[k] as usize;
                // each edge once, from its lower end
                if b < a || !(active[a] || active[b]) {
                    continue;
                }
                let l = *la.get_or_insert_with(|| chol(&vals[a]).expect("positive definite value"));
                let lb = chol(&vals[b]).expect("positive definite value");
                let mut term = |w: f64, t: Option<&TN<N>>| {
                    if w == 0.0 {
                        return;
                    }
                    let tl = match t {
                        Some(TN::Diag(tau)) => M::<N>::from_fn(|i, j| lb[(i, j)] * tau[i].exp()),
                        Some(TN::Full(g)) => g * lb,
                        None => lb,
                    };
                    let p = l.solve_lower_triangular(&tl).expect("nonsingular factor");
                    let (ev, v) = Sz::<N>::eigh(&herm(&(p * p.adjoint())));
                    let mu = ev.map(|x| x.max(f64::MIN_POSITIVE).ln());
                    let mut g = SMatrix::<f64, N, N>::zeros();
                    let mut h = SMatrix::<f64, N, N>::zeros();
                    for i in 0..N {
                        for j in 0..N {
                            (g[(i, j)], h[(i, j)]) = dlog_factors(mu[i] - mu[j]);
                        }
                    }
                    diag[a] += w;
                    diag[b] += w;
                    edges.push(EdgeModel {
                        a,
                        b,
                        w,
                        v,
                        u: polar_unitary(&p),
                        g,
                        h,
                    });
                };
                term(self.adj.wp[k], Some(&self.tr[k]));
                term(self.adj.wt[k], None);
            }
        }
        Linearization { edges, diag }
    }

    /// Hessian of the energy (halved) restricted to the active nodes.
    fn connection_laplacian(
        &self,
        lin: &Linearization<N>,
        nodes: &[usize],
        active: &[bool],
        x: &[M<N>],
        out: &mut [M<N>],
    ) {
        for &a in nodes {
            out[a] = M::<N>::zeros();
        }
        for e in &lin.edges {
            let xa = if active[e.a] {
                e.v.adjoint() * x[e.a] * e.v
            } else {
                M::<N>::zeros()
            };
            let zb = if active[e.b] {
                let vu = e.u.adjoint() * e.v;
                vu.adjoint() * x[e.b] * vu
            } else {
                M::<N>::zeros()
            };
            let w = Complex64::new(e.w, 0.0);
            if active[e.a] {
                let y = M::<N>::from_fn(|i, j| xa[(i, j)] * e.g[(i, j)] - zb[(i, j)] * e.h[(i, j)]);
                out[e.a] += e.v * y * e.v.adjoint() * w;
            }
            if active[e.b] {
                let y = M::<N>::from_fn(|i, j| zb[(i, j)] * e.g[(i, j)] - xa[(i, j)] * e.h[(i, j)]);
                let vu = e.u.adjoint() * e.v;
                out[e.b] += vu * y * vu.adjoint() * w;
            }
        }
        for &a in nodes {
            out[a] = herm(&out[a]);
        }
    }
}

impl<const N: usize> MatKernel<'_, N>
where
    Sz<N>: Eigh<N>,
{
    /// Projected tensions, total weights, largest Jacobi step and area-weighted residual.
    fn measure(
        &self,
        vals: &[M<N>],
        nodes: &[usize],
        area: Option<&[f64]>,
    ) -> (Vec<M<N>>, Vec<f64>, f64, f64) {
        let mut tau = vec![M::<N>::zeros(); vals.len()];
        let mut w = vec![0.0; vals.len()];
        let (mut max_step, mut res) = (0.0f64, 0.0);
        for &a in nodes {
            let (mut t, _, wa) = self.tension(a, &vals[a], vals);
            self.project_gauge(a, &vals[a], &mut t);
            if wa > 0.0 {
                max_step = max_step.max(t.norm() / wa);
            }
            if let Some(area) = area {
                res += t.norm_squared() / area[a].max(f64::MIN_POSITIVE);
            }
            tau[a] = t;
            w[a] = wa;
        }
        (tau, w, max_step, res.sqrt())
    }

    /// CG on `A x = rhs` over the active nodes; returns the iterations used.
    #[allow(clippy::too_many_arguments)]
    fn pcg(
        &self,
        lin: &Linearization<N>,
        vals: &[M<N>],
        nodes: &[usize],
        active: &[bool],
        rhs: &[M<N>],
        diag: &[f64],
        x: &mut [M<N>],
        max_iter: usize,
    ) -> usize {
        let nn = vals.len();
        let mut r = rhs.to_vec();
        let mut z = vec![M::<N>::zeros(); nn];
        let mut hp = vec![M::<N>::zeros(); nn];
        let precond = |a: usize, r: &M<N>| -> M<N> {
            let mut z = if diag[a] > 0.0 {
                r / Complex64::new(diag[a], 0.0)
            } else {
                M::<N>::zeros()
            };
            self.project_gauge(a, &vals[a], &mut z);
            z
        };
        for &a in nodes {
            x[a] = M::<N>::zeros();
            z[a] = precond(a, &r[a]);
        }
        let dot =
            |p: &[M<N>], q: &[M<N>]| -> f64 { nodes.iter().map(|&a| frob(&p[a], &q[a])).sum() };
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let stop = rz * CG_RELATIVE * CG_RELATIVE;
        let mut it = 0;
        while it < max_iter && rz > stop && rz > 0.0 {
            self.connection_laplacian(lin, nodes, active, &p, &mut hp);
            for &a in nodes {
                let mut h = hp[a];
                self.project_gauge(a, &vals[a], &mut h);
                hp[a] = h;
            }
            let php = dot(&p, &hp);
            if !(php > 0.0) {
                break;
            }
            let alpha = rz / php;
            for &a in nodes {
                x[a] += p[a] * Complex64::new(alpha, 0.0);
                r[a] -= hp[a] * Complex64::new(alpha, 0.0);
                z[a] = precond(a, &r[a]);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for &a in nodes {
                p[a] = z[a] + p[a] * Complex64::new(beta, 0.0);
            }
            it += 1;
        }
        it
    }

    fn newton(
        &self,
        vals: &mut [M<N>],
        active: &[bool],
        tol: f64,
        residual: Option<(&[f64], f64)>,
        max_iter: usize,
    ) -> (usize, f64, bool) {
        let nodes: Vec<usize> = (0..vals.len()).filter(|&a| active[a]).collect();
        let target = residual.map_or(f64::INFINITY, |x| x.1);
        let area = residual.map(|x| x.0);
        let mut x = vec![M::<N>::zeros(); vals.len()];
        let mut used = 0;
        let (mut best, mut since_best) = (f64::INFINITY, 0);
        loop {
            let (tau, _, max_step, res) = self.measure(vals, &nodes, area);
            if max_step < tol && res < target {
                return (used, max_step, true);
            }
            if res < 0.5 * best {
                best = res;
                since_best = 0;
            } else {
                since_best += 1;
                if max_step < tol && since_best > GN_STAGNATION {
                    return (used, max_step, false);
                }
            }
            if used >= max_iter {
                return (used, max_step, false);
            }
            let lin = self.linearize(vals, active);
            used += 1 + self.pcg(
                &lin,
                vals,
                &nodes,
                active,
                &tau,
                &lin.diag,
                &mut x,
                max_iter - used,
            );
            // energy falls by 2<x, τ> to first order
            let slope: f64 = nodes.iter().map(|&a| frob(&x[a], &tau[a])).sum::<f64>() * 2.0;
            let e0 = self.total_energy(vals, None);
            let noise = 1e-12 * e0.abs().max(1.0);
            let mut alpha = 1.0;
            let accepted = loop {
                let trial: Vec<M<N>> = (0..vals.len())
                    .map(|a| {
                        if active[a] {
                            self.retract(&vals[a], &x[a], alpha)
                        } else {
                            vals[a]
                        }
                    })
                    .collect();
                let e = if trial.iter().all(|v| self.valid(v)) {
                    self.total_energy(&trial, None)
                } else {
                    f64::INFINITY
                };
                if e <= e0 - 1e-4 * alpha * slope || (slope <= noise && e <= e0 + noise) {
                    break Some(trial);
                }
                alpha *= 0.5;
                if alpha < 1e-10 {
                    break None;
                }
            };
            match accepted {
                Some(trial) => vals.copy_from_slice(&trial),
                None => return (used, max_step, false),
            }
        }
    }
}

/// Relative preconditioned residual at which an inner CG solve stops.
const CG_RELATIVE: f64 = 1e-6;
/// Outer steps without halving the residual, once the step criterion holds.
const GN_STAGNATION: usize = 8;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridParams;
    use crate::pd_geometry::CMat;
    use crate::problem::Problem;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_herm(rng: &mut impl Rng, s: f64) -> M<2> {
        let m = M::<2>::from_fn(|_, _| c(rng.gen_range(-s..s), rng.gen_range(-s..s)));
        herm(&m)
    }

    fn setup() -> (
        std::sync::Arc<Discretization>,
        Vec<M<2>>,
        rand_chacha::ChaCha8Rng,
    ) {
        // upper-triangular holonomy: full transports across the period edges
        let g = CMat::from_row_slice(2, 2, &[c(1.5, 0.0), c(0.3, 0.2), c(0.0, 0.0), c(0.7, 0.0)]);
        let grid = GridParams {
            background: 12,
            angular: 16,
            rings_per_octave: 2,
            r_min: 0.05,
            ..GridParams::default()
        };
        let p = Problem::torus_second_kind(
            g.clone(),
            g,
            vec![vec![(1, 0.5)], vec![(1, -0.5)]],
            0.2,
            grid,
        );
        let disc = p.discretize().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vals = (0..disc.num_nodes())
            .map(|_| expm(&random_herm(&mut rng, 0.4)))
            .collect();
        (disc, vals, rng)
    }

    #[test]
    fn newton_hessian_is_symmetric_and_matches_second_differences() {
        let (disc, vals, mut rng) = setup();
        let adj = Adjacency::new(&disc, EnergyKind::Modified, false);
        let k = MatKernel::<2>::new(&disc, &adj);
        let active = vec![true; vals.len()];
        let nodes: Vec<usize> = (0..vals.len()).collect();
        let lin = k.linearize(&vals, &active);
        let x: Vec<M<2>> = nodes.iter().map(|_| random_herm(&mut rng, 1.0)).collect();
        let y: Vec<M<2>> = nodes.iter().map(|_| random_herm(&mut rng, 1.0)).collect();
        let (mut ax, mut ay) = (
            vec![M::<2>::zeros(); x.len()],
            vec![M::<2>::zeros(); x.len()],
        );
        k.connection_laplacian(&lin, &nodes, &active, &x, &mut ax);
        k.connection_laplacian(&lin, &nodes, &active, &y, &mut ay);
        let dot =
            |p: &[M<2>], q: &[M<2>]| -> f64 { p.iter().zip(q).map(|(a, b)| frob(a, b)).sum() };
        let (yax, xay) = (dot(&y, &ax), dot(&x, &ay));
        assert!(
            (yax - xay).abs() <= 1e-10 * yax.abs().max(1.0),
            "{yax} {xay}"
        );
        // E along the geodesic t ↦ L e^{tx} L*
        let e = |t: f64| {
            let v: Vec<M<2>> = vals
                .iter()
                .zip(&x)
                .map(|(v, x)| k.retract(v, x, t))
                .collect();
            k.total_energy(&v, None)
        };
        let t = 1e-3;
        let second = (e(t) - 2.0 * e(0.0) + e(-t)) / (t * t);
        let model = 2.0 * dot(&x, &ax);
        assert!(
            (second - model).abs() <= 1e-4 * model.abs(),
            "{second} {model}"
        );
        // and the first derivative is −2<x, τ>
        let tau: Vec<M<2>> = nodes
            .iter()
            .map(|&a| k.tension(a, &vals[a], &vals).0)
            .collect();
        let first = (e(t) - e(-t)) / (2.0 * t);
        let slope = -2.0 * dot(&x, &tau);
        assert!(
            (first - slope).abs() <= 1e-5 * slope.abs().max(1.0),
            "{first} {slope}"
        );
    }

    #[test]
    fn newton_converges_quadratically_from_a_rough_start() {
        let (disc, mut vals, _) = setup();
        let adj = Adjacency::new(&disc, EnergyKind::Modified, false);
        let k = MatKernel::<2>::new(&disc, &adj);
        let active = vec![true; vals.len()];
        let e0 = k.total_energy(&vals, None);
        let (iters, step, ok) = k
            .linear_solve(&mut vals, &active, 1e-12, None, 10_000)
            .unwrap();
        assert!(ok, "step {step} after {iters}");
        assert!(k.total_energy(&vals, None) < e0);
        for a in 0..vals.len() {
            let (mut t, _, _) = k.tension(a, &vals[a], &vals);
            k.project_gauge(a, &vals[a], &mut t);
            assert!(t.norm() < 1e-9, "node {a}: {}", t.norm());
        }
    }
}
