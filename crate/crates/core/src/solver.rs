//! Minimization of the modified energy Ê.
//!
//! The outer loop alternates (a) a Dirichlet solve on the part of the surface
//! away from the half-disks, and (b) for each puncture an annulus-exhaustion
//! solve on its unit disk. Each solve is a nodewise geodesic Gauss–Seidel
//! relaxation (multicolour, parallel within a colour) with Armijo acceptance
//! and over-relaxation, so Ê can only decrease.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, SolveError};
use crate::field::{Discretization, EnergyKind, MetricField, Region};
use crate::kernel::{Adjacency, DiagKernel, Local, MatKernel};

/// Solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Inner radii `1/k` (disk coordinate) of the exhaustion stages, strictly decreasing.
    /// Empty means: quarter each time, from 1/4 down to the grid's innermost ring.
    pub exhaustion_radii: Vec<f64>,
    /// Run the exhaustion stages in every outer iteration, not only the first.
    pub exhaustion_every_outer: bool,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Fixed over-relaxation factor; estimated from the Gauss–Seidel contraction when absent.
    pub omega: Option<f64>,
    pub omega_max: f64,
    /// Relative plateau tolerance εE on Ê (multiplied by Ê₀).
    pub tol_energy: f64,
    /// Harmonic residual tolerance εR.
    pub tol_residual: f64,
    /// Sup-distance tolerance εd between successive outer iterates.
    pub tol_step: f64,
    /// Largest node move at which an inner Dirichlet solve stops.
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_sweeps: usize,
    /// Relative slack allowed in the monotonicity assertion.
    pub monotone_tol: f64,
    /// Independent perturbed restarts used to monitor uniqueness.
    pub restarts: usize,
    pub restart_magnitude: f64,
    pub seed: u64,
    /// Deliberately minimize the plain energy on the disks (inconsistent quadrature);
    /// used as a negative control of the monotonicity check.
    pub inconsistent_quadrature: bool,
    /// Close every outer iteration with one solve over all nodes at once.
    pub joint_phase: bool,
    /// Solve each phase globally (CG for diagonal fields, Riemannian Newton otherwise)
    /// instead of iterating relaxation sweeps.
    pub global_inner: bool,
    /// Bounds a start field must satisfy.
    pub admissibility: crate::energy_forms::AdmissibilityBounds,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            exhaustion_radii: Vec::new(),
            exhaustion_every_outer: false,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            omega: None,
            omega_max: 1.95,
            tol_energy: 1e-10,
            tol_residual: 1e-6,
            tol_step: 1e-6,
            inner_tol: 1e-13,
            max_outer: 60,
            max_sweeps: 50_000,
            monotone_tol: 1e-12,
            restarts: 0,
            restart_magnitude: 0.5,
            seed: 7,
            inconsistent_quadrature: false,
            joint_phase: true,
            global_inner: true,
            admissibility: Default::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let pos = [
            ("armijo_c", self.armijo_c),
            ("tol_energy", self.tol_energy),
            ("tol_residual", self.tol_residual),
            ("tol_step", self.tol_step),
            ("inner_tol", self.inner_tol),
            ("restart_magnitude", self.restart_magnitude),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("backtrack must lie in (0, 1)".into()));
        }
        if !(self.omega_max >= 1.0 && self.omega_max < 2.0) {
            return Err(Error::Config("omega_max must lie in [1, 2)".into()));
        }
        if let Some(w) = self.omega {
            if !(w > 0.0 && w < 2.0) {
                return Err(Error::Config("omega must lie in (0, 2)".into()));
            }
        }
        if self.exhaustion_radii.windows(2).any(|w| w[1] >= w[0])
            || self
                .exhaustion_radii
                .iter()
                .any(|r| !(*r > 0.0 && *r < 1.0))
        {
            return Err(Error::Config(
                "exhaustion radii must be strictly decreasing in (0, 1)".into(),
            ));
        }
        if self.max_outer == 0 || self.max_sweeps == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }

    /// Exhaustion radii for a disk whose innermost ring sits at `r_min`.
    pub fn schedule(&self, r_min: f64) -> Vec<f64> {
        if !self.exhaustion_radii.is_empty() {
            return self
                .exhaustion_radii
                .iter()
                .copied()
                .filter(|r| *r > r_min)
                .collect();
        }
        let mut out = Vec::new();
        let mut r = 0.25;
        while r > 4.0 * r_min {
            out.push(r);
            r *= 0.25;
        }
        out
    }
}

/// Outcome of one relaxation sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    /// Sum of the accepted local energy changes (≤ 0).
    pub delta_energy: f64,
    /// Largest geodesic move of a node.
    pub max_step: f64,
    /// Root-sum-square of all moves.
    pub step_norm: f64,
    /// Nodes whose line search failed.
    pub underflows: usize,
}

/// Record of one inner solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub sweeps: usize,
    pub omega: f64,
    pub max_step: f64,
    pub converged: bool,
    pub underflows: usize,
    pub energy_after: f64,
}

/// Record of one exhaustion solve on a disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionRecord {
    pub puncture: usize,
    pub radii: Vec<f64>,
    /// Sup-distance between consecutive stage solutions on their common annulus.
    pub cauchy: Vec<f64>,
    pub cauchy_decreasing: bool,
    /// Whether each stage lowered Ê and was kept.
    pub accepted: Vec<bool>,
    pub phases: Vec<PhaseRecord>,
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub modified_energy: f64,
    /// Plain energy of the part away from the half-disks.
    pub compact_energy: f64,
    pub residual: f64,
    /// Sup-distance to the previous outer iterate.
    pub max_step: f64,
    pub phases: Vec<PhaseRecord>,
    pub exhaustion: Vec<ExhaustionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub runs: usize,
    pub magnitude: f64,
    /// Sup-distance of each restart's result to the unperturbed result.
    pub distances: Vec<f64>,
    pub tolerance: f64,
    pub agree: bool,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub kernel: String,
    pub anchor: Option<usize>,
    pub initial_energy: f64,
    pub iterations: Vec<OuterRecord>,
    pub converged: bool,
    /// Attained infimum estimate of Ê.
    pub mu: f64,
    pub flags: Vec<String>,
    pub restarts: Option<RestartReport>,
    /// Wall-clock seconds per phase label; kept out of deterministic outputs.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl SolveReport {
    /// Ê after each outer iteration, starting with the initial value.
    pub fn energies(&self) -> Vec<f64> {
        std::iter::once(self.initial_energy)
            .chain(self.iterations.iter().map(|r| r.modified_energy))
            .collect()
    }

    /// True if every step satisfies `Ê_{k+1} ≤ Ê_k (1 + tol)`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.energies()
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + tol) + f64::MIN_POSITIVE)
    }
}

/// Nodes of each colour class that belong to an active mask.
fn active_colors(disc: &Discretization, active: &[bool]) -> Vec<Vec<usize>> {
    disc.mesh
        .colors
        .iter()
        .map(|c| c.iter().copied().filter(|&a| active[a]).collect::<Vec<_>>())
        .filter(|c: &Vec<usize>| !c.is_empty())
        .collect()
}

enum NodeUpdate<V> {
    Moved { v: V, de: f64, step: f64 },
    Still,
    Underflow,
}

fn update_node<K: Local>(
    k: &K,
    a: usize,
    vals: &[K::V],
    omega: f64,
    cfg: &SolverConfig,
) -> NodeUpdate<K::V> {
    let va = vals[a];
    let (mut tau, e0, w) = k.tension(a, &va, vals);
    k.project_gauge(a, &va, &mut tau);
    let t2 = k.norm2(&tau);
    if !(t2 > 0.0) || !(w > 0.0) || !e0.is_finite() {
        return NodeUpdate::Still;
    }
    let x = k.scale(&tau, omega / w);
    let xn = k.norm2(&x).sqrt();
    if k.quadratic() {
        // the local energy is exactly e0 − 2αω t2/w + α²ω² t2/w
        let de = -(2.0 * omega - omega * omega) * t2 / w;
        return NodeUpdate::Moved {
            v: k.retract(&va, &x, 1.0),
            de,
            step: xn,
        };
    }
    let slope = -2.0 * omega * t2 / w;
    let mut alpha = 1.0;
    for _ in 0..cfg.max_backtracks {
        let v = k.retract(&va, &x, alpha);
        if k.valid(&v) {
            let e1 = k.energy_at(a, &v, vals);
            if e1 <= e0 + cfg.armijo_c * alpha * slope {
                return NodeUpdate::Moved {
                    v,
                    de: e1 - e0,
                    step: alpha * xn,
                };
            }
        }
        alpha *= cfg.backtrack;
    }
    NodeUpdate::Underflow
}

/// One multicolour Gauss–Seidel sweep over the active nodes.
fn sweep<K: Local>(
    k: &K,
    vals: &mut [K::V],
    colors: &[Vec<usize>],
    omega: f64,
    cfg: &SolverConfig,
) -> SweepStats {
    let mut st = SweepStats::default();
    let mut ss = 0.0;
    for nodes in colors {
        let snapshot: &[K::V] = vals;
        let updates: Vec<NodeUpdate<K::V>> = nodes
            .par_iter()
            .map(|&a| update_node(k, a, snapshot, omega, cfg))
            .collect();
        for (&a, u) in nodes.iter().zip(updates) {
            match u {
                NodeUpdate::Moved { v, de, step } => {
                    vals[a] = v;
                    st.delta_energy += de;
                    st.max_step = st.max_step.max(step);
                    ss += step * step;
                }
                NodeUpdate::Still => {}
                NodeUpdate::Underflow => st.underflows += 1,
            }
        }
    }
    st.step_norm = ss.sqrt();
    st
}

const WARMUP: usize = 16;

/// Relaxes the active nodes until the largest move drops below `tol`.
fn solve_nodes<K: Local>(
    k: &K,
    vals: &mut [K::V],
    disc: &Discretization,
    active: &[bool],
    cfg: &SolverConfig,
    tol: f64,
    label: &str,
) -> Result<PhaseRecord, SolveError> {
    let colors = active_colors(disc, active);
    let mut omega = cfg.omega.unwrap_or(1.0);
    let mut history: Vec<f64> = Vec::new();
    let mut since_estimate = 0usize;
    let mut rec = PhaseRecord {
        phase: label.to_string(),
        sweeps: 0,
        omega,
        max_step: 0.0,
        converged: false,
        underflows: 0,
        energy_after: f64::NAN,
    };
    if colors.is_empty() {
        rec.converged = true;
        return Ok(rec);
    }
    let global = if cfg.global_inner {
        k.linear_solve(
            vals,
            active,
            tol,
            Some((&disc.mesh.dual_area, 0.1 * cfg.tol_residual)),
            cfg.max_sweeps,
        )
    } else {
        None
    };
    if let Some((iters, step, ok)) = global {
        rec.sweeps = iters;
        rec.max_step = step;
        rec.converged = ok;
        rec.omega = 0.0;
        rec.energy_after = k.total_energy(vals, None);
        if !rec.energy_after.is_finite() {
            return Err(SolveError::NonFinite(iters));
        }
        return Ok(rec);
    }
    while rec.sweeps < cfg.max_sweeps {
        let st = sweep(k, vals, &colors, omega, cfg);
        rec.sweeps += 1;
        rec.max_step = st.max_step;
        rec.underflows += st.underflows;
        if !st.delta_energy.is_finite() {
            return Err(SolveError::NonFinite(rec.sweeps));
        }
        if st.max_step < tol {
            rec.converged = true;
            break;
        }
        history.push(st.step_norm);
        since_estimate += 1;
        if cfg.omega.is_none() {
            if omega == 1.0 && since_estimate >= WARMUP {
                // Gauss–Seidel contraction of the update norms over the last sweeps
                let h = &history[history.len() - 8..];
                let rho = (h[7] / h[0]).powf(1.0 / 7.0);
                if rho.is_finite() && rho < 1.0 {
                    omega = (2.0 / (1.0 + (1.0 - rho).sqrt())).min(cfg.omega_max);
                }
                since_estimate = 0;
            } else if omega > 1.0 && since_estimate > 64 {
                // fall back to plain Gauss–Seidel if over-relaxation stalls
                let h = &history[history.len() - 32..];
                if h[31] > h[0] {
                    omega = 1.0;
                    since_estimate = 0;
                }
            }
        }
    }
    rec.omega = omega;
    rec.energy_after = k.total_energy(vals, None);
    Ok(rec)
}

/// Disk coordinate radius of every node for puncture i.
fn disk_radii(disc: &Discretization, i: usize) -> Vec<f64> {
    (0..disc.num_nodes())
        .map(|a| disc.disk_radius_of(i, a))
        .collect()
}

/// Nodes outside every half-disk (phase a).
fn phase_a_mask(disc: &Discretization) -> Vec<bool> {
    let np = disc.model.punctures.len();
    let radii: Vec<Vec<f64>> = (0..np).map(|i| disk_radii(disc, i)).collect();
    (0..disc.num_nodes())
        .map(|a| radii.iter().all(|r| r[a] > 0.5 * (1.0 + 1e-9)))
        .collect()
}

/// Smallest disk radius of a node of puncture i.
fn innermost_radius(disc: &Discretization, i: usize) -> f64 {
    disk_radii(disc, i)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Exhaustion on the unit disk of puncture i with `kb` (the energy minimized
/// on the disk), judging acceptance with `k` (Ê).
#[allow(clippy::too_many_arguments)]
fn exhaustion<K: Local>(
    k: &K,
    kb: &K,
    vals: &mut Vec<K::V>,
    disc: &Discretization,
    i: usize,
    cfg: &SolverConfig,
    with_stages: bool,
    timings: &mut Vec<(String, f64)>,
) -> Result<ExhaustionRecord, SolveError> {
    let r = disk_radii(disc, i);
    let disk: Vec<bool> = r.iter().map(|&x| x < 1.0 - 1e-9).collect();
    let radii = if with_stages {
        cfg.schedule(innermost_radius(disc, i))
    } else {
        Vec::new()
    };
    let mut rec = ExhaustionRecord {
        puncture: i,
        radii: radii.clone(),
        cauchy: Vec::new(),
        cauchy_decreasing: true,
        accepted: Vec::new(),
        phases: Vec::new(),
    };
    let mut prev: Option<(f64, Vec<K::V>)> = None;
    let mut current = k.total_energy(vals, None);
    for &rk in &radii {
        let t0 = Instant::now();
        let mut cand = vals.clone();
        let inner: Vec<bool> = r.iter().map(|&x| x <= rk * (1.0 + 1e-9)).collect();
        for a in 0..cand.len() {
            if disk[a] && inner[a] {
                cand[a] = k.identity();
            }
        }
        let active: Vec<bool> = (0..cand.len()).map(|a| disk[a] && !inner[a]).collect();
        let mut ph = solve_nodes(
            kb,
            &mut cand,
            disc,
            &active,
            cfg,
            cfg.inner_tol,
            &format!("b{i}:r={rk:.3e}"),
        )?;
        ph.energy_after = k.total_energy(&cand, None);
        if let Some((rp, p)) = &prev {
            let d = (0..cand.len())
                .filter(|&a| disk[a] && r[a] > *rp)
                .map(|a| k.dist(&p[a], &cand[a]))
                .fold(0.0, f64::max);
            rec.cauchy.push(d);
        }
        let ok = ph.energy_after <= current * (1.0 + cfg.monotone_tol);
        if ok {
            vals.clone_from(&cand);
            current = ph.energy_after;
        }
        rec.accepted.push(ok);
        rec.phases.push(ph);
        prev = Some((rk, cand));
        timings.push((format!("exhaustion b{i}"), t0.elapsed().as_secs_f64()));
    }
    rec.cauchy_decreasing = rec.cauchy.windows(2).all(|w| w[1] <= w[0]);
    // final solve with the natural condition at the innermost ring
    let t0 = Instant::now();
    let ph = solve_nodes(
        kb,
        vals,
        disc,
        &disk,
        cfg,
        cfg.inner_tol,
        &format!("b{i}:free"),
    )?;
    timings.push((format!("phase b{i}"), t0.elapsed().as_secs_f64()));
    rec.phases.push(ph);
    Ok(rec)
}

/// `sqrt(Σ_a |τ_a|²/A_a)` over all nodes, with the gauge part removed at the anchor.
fn residual_of<K: Local>(k: &K, vals: &[K::V], disc: &Discretization) -> f64 {
    (0..vals.len())
        .into_par_iter()
        .map(|a| {
            let (mut tau, _, _) = k.tension(a, &vals[a], vals);
            k.project_gauge(a, &vals[a], &mut tau);
            k.norm2(&tau) / disc.mesh.dual_area[a].max(f64::MIN_POSITIVE)
        })
        .sum::<f64>()
        .sqrt()
}

fn sup_dist<K: Local>(k: &K, x: &[K::V], y: &[K::V]) -> f64 {
    x.par_iter()
        .zip(y.par_iter())
        .map(|(a, b)| k.dist(a, b))
        .reduce(|| 0.0, f64::max)
}

fn check_monotone(
    stage: &str,
    before: f64,
    after: f64,
    cfg: &SolverConfig,
) -> Result<(), SolveError> {
    if !after.is_finite() {
        return Err(SolveError::InfiniteEnergy(stage.to_string()));
    }
    if after > before * (1.0 + cfg.monotone_tol) + f64::MIN_POSITIVE {
        return Err(SolveError::EnergyIncrease {
            stage: stage.to_string(),
            increase: after - before,
        });
    }
    Ok(())
}

fn two_step_generic<K: Local>(
    k: &K,
    kb: &K,
    vals: &mut Vec<K::V>,
    disc: &Discretization,
    cfg: &SolverConfig,
    report: &mut SolveReport,
) -> Result<(), SolveError> {
    if let Some(an) = disc.anchor {
        vals[an] = k.identity();
    }
    let e0 = k.total_energy(vals, None);
    if !e0.is_finite() {
        return Err(SolveError::InfiniteEnergy("initial field".into()));
    }
    report.initial_energy = e0;
    let mask_a = phase_a_mask(disc);
    let mut e_prev = e0;
    for it in 1..=cfg.max_outer {
        let prev = vals.clone();
        let t0 = Instant::now();
        let ph_a = solve_nodes(k, vals, disc, &mask_a, cfg, cfg.inner_tol, "a")?;
        report
            .timings
            .push(("phase a".into(), t0.elapsed().as_secs_f64()));
        check_monotone("a", e_prev, ph_a.energy_after, cfg)?;
        let mut exh = Vec::new();
        let with_stages = it == 1 || cfg.exhaustion_every_outer;
        for i in 0..disc.model.punctures.len() {
            exh.push(exhaustion(
                k,
                kb,
                vals,
                disc,
                i,
                cfg,
                with_stages,
                &mut report.timings,
            )?);
        }
        let e_b = k.total_energy(vals, None);
        check_monotone("b", e_prev, e_b, cfg)?;
        let mut phases = vec![ph_a];
        if cfg.joint_phase {
            let t0 = Instant::now();
            let all = vec![true; vals.len()];
            let ph = solve_nodes(k, vals, disc, &all, cfg, cfg.inner_tol, "joint")?;
            report
                .timings
                .push(("joint".into(), t0.elapsed().as_secs_f64()));
            phases.push(ph);
        }
        let e = k.total_energy(vals, None);
        check_monotone("joint", e_b, e, cfg)?;
        let step = sup_dist(k, &prev, vals);
        let residual = residual_of(k, vals, disc);
        let compact_energy = k.total_energy(vals, Some(&mask_a));
        for x in &exh {
            if !x.cauchy_decreasing {
                report.flags.push(format!(
                    "iteration {it}: exhaustion differences not decreasing at puncture {}",
                    x.puncture
                ));
            }
        }
        for p in phases
            .iter()
            .chain(exh.iter().flat_map(|x| x.phases.iter()))
        {
            if !p.converged {
                report.flags.push(format!(
                    "iteration {it}: inner solve {} hit the sweep cap",
                    p.phase
                ));
            }
            if p.underflows > 0 {
                report.flags.push(format!(
                    "iteration {it}: {} step underflows in {}",
                    p.underflows, p.phase
                ));
            }
        }
        report.iterations.push(OuterRecord {
            iteration: it,
            modified_energy: e,
            compact_energy,
            residual,
            max_step: step,
            phases,
            exhaustion: exh,
        });
        let plateau = (e_prev - e).abs() <= cfg.tol_energy * e0;
        e_prev = e;
        if plateau && residual < cfg.tol_residual && step < cfg.tol_step {
            report.converged = true;
            break;
        }
    }
    report.mu = e_prev;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum KernelChoice {
    Diag,
    Mat(usize),
}

fn choose(disc: &Discretization, field: &MetricField) -> Result<KernelChoice, SolveError> {
    let n = disc.n;
    if n == 1 || (disc.diagonal_transports && field.is_diagonal()) {
        if n > crate::kernel::MAXN {
            return Err(Error::UnsupportedRank(n).into());
        }
        return Ok(KernelChoice::Diag);
    }
    match n {
        2..=4 => Ok(KernelChoice::Mat(n)),
        _ => Err(Error::UnsupportedRank(n).into()),
    }
}

/// Runs `$body` with kernels `$k` (Ê) and `$kb` (energy minimized on the disks)
/// and node values `$vals` loaded from `$field`, then stores the values back.
macro_rules! dispatch {
    ($field:expr, $adj:expr, $adjb:expr, |$k:ident, $kb:ident, $vals:ident, $name:ident| $body:block) => {{
        let field: &mut MetricField = $field;
        let disc = std::sync::Arc::clone(&field.disc);
        match choose(&disc, field)? {
            KernelChoice::Diag => {
                let $k = DiagKernel::new(&disc, $adj);
                let $kb = DiagKernel::new(&disc, $adjb);
                #[allow(unused_mut)]
                let mut $vals = DiagKernel::load(field);
                let $name = "log-diagonal";
                let out = $body;
                DiagKernel::store(&$vals, field);
                out
            }
            KernelChoice::Mat(2) => dispatch!(@mat 2, field, disc, $adj, $adjb, |$k, $kb, $vals, $name| $body),
            KernelChoice::Mat(3) => dispatch!(@mat 3, field, disc, $adj, $adjb, |$k, $kb, $vals, $name| $body),
            KernelChoice::Mat(_) => dispatch!(@mat 4, field, disc, $adj, $adjb, |$k, $kb, $vals, $name| $body),
        }
    }};
    (@mat $n:literal, $field:ident, $disc:ident, $adj:expr, $adjb:expr, |$k:ident, $kb:ident, $vals:ident, $name:ident| $body:block) => {{
        let $k = MatKernel::<$n>::new(&$disc, $adj);
        let $kb = MatKernel::<$n>::new(&$disc, $adjb);
        #[allow(unused_mut)]
        let mut $vals = MatKernel::<$n>::load($field);
        let $name = concat!("matrix-", $n);
        let out = $body;
        MatKernel::<$n>::store(&$vals, $field);
        out
    }};
}

fn interior_mask(disc: &Discretization, region: &Region) -> Vec<bool> {
    let mut mask = region.nodes.clone();
    for a in region.boundary_nodes(disc) {
        mask[a] = false;
    }
    mask
}

/// One Gauss–Seidel sweep of the given energy over the interior of a region.
pub fn relax_sweep(
    field: &mut MetricField,
    region: &Region,
    kind: EnergyKind,
    cfg: &SolverConfig,
) -> Result<SweepStats, SolveError> {
    let adj = Adjacency::new(&field.disc, kind, false);
    let mask = interior_mask(&field.disc, region);
    let colors = active_colors(&field.disc, &mask);
    let omega = cfg.omega.unwrap_or(1.0);
    dispatch!(field, &adj, &adj, |k, _kb, vals, _name| {
        Ok(sweep(&k, &mut vals, &colors, omega, cfg))
    })
}

/// Minimizes the given energy over the interior of a region, boundary values frozen.
pub fn dirichlet_solve(
    field: &mut MetricField,
    region: &Region,
    kind: EnergyKind,
    cfg: &SolverConfig,
) -> Result<PhaseRecord, SolveError> {
    let adj = Adjacency::new(&field.disc, kind, false);
    let mask = interior_mask(&field.disc, region);
    let disc = std::sync::Arc::clone(&field.disc);
    dispatch!(field, &adj, &adj, |k, _kb, vals, _name| {
        solve_nodes(&k, &mut vals, &disc, &mask, cfg, cfg.inner_tol, "dirichlet")
    })
}

/// Exhaustion solve of Ê on the unit disk of puncture i with the values on `|t_i| = 1` frozen.
pub fn annulus_exhaustion_solve(
    field: &mut MetricField,
    i: usize,
    cfg: &SolverConfig,
) -> Result<ExhaustionRecord, SolveError> {
    let adj = Adjacency::new(&field.disc, EnergyKind::Modified, false);
    let adjb = Adjacency::new(
        &field.disc,
        EnergyKind::Modified,
        cfg.inconsistent_quadrature,
    );
    let mut timings = Vec::new();
    let disc = std::sync::Arc::clone(&field.disc);
    dispatch!(field, &adj, &adjb, |k, kb, vals, _name| {
        exhaustion(&k, &kb, &mut vals, &disc, i, cfg, true, &mut timings)
    })
}

/// A start at geodesic distance `magnitude` from K₀ at every node, in random directions.
pub fn perturbed_start(
    disc: &std::sync::Arc<Discretization>,
    magnitude: f64,
    seed: u64,
) -> MetricField {
    use rand_distr::{Distribution, StandardNormal};
    let n = disc.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MetricField::from_rel(disc, |_| {
        let raw = crate::pd_geometry::CMat::from_fn(n, n, |_, _| {
            crate::Complex64::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        });
        let x = crate::pd_geometry::hermitian_part(&raw);
        let x = &x * crate::Complex64::new(magnitude / x.norm().max(1e-300), 0.0);
        crate::pd_geometry::pd_exp(&crate::pd_geometry::HermitianMatrix::new(x).expect("hermitian"))
            .into_matrix()
    })
}

fn minimize_once(
    mut field: MetricField,
    cfg: &SolverConfig,
) -> Result<(MetricField, SolveReport), SolveError> {
    cfg.validate()?;
    let adm = crate::energy_forms::admissibility_check(&field, &cfg.admissibility)?;
    if !adm.admissible {
        return Err(Error::NotAdmissible(format!(
            "max distance {:.3e}, tail integral {:.3e}",
            adm.max_distance, adm.tail_integral
        ))
        .into());
    }
    let adj = Adjacency::new(&field.disc, EnergyKind::Modified, false);
    let adjb = Adjacency::new(
        &field.disc,
        EnergyKind::Modified,
        cfg.inconsistent_quadrature,
    );
    let mut report = SolveReport {
        kernel: String::new(),
        anchor: field.disc.anchor,
        initial_energy: f64::NAN,
        iterations: Vec::new(),
        converged: false,
        mu: f64::NAN,
        flags: Vec::new(),
        restarts: None,
        timings: Vec::new(),
    };
    let disc = std::sync::Arc::clone(&field.disc);
    let res: Result<(), SolveError> = dispatch!(&mut field, &adj, &adjb, |k, kb, vals, name| {
        report.kernel = name.to_string();
        two_step_generic(&k, &kb, &mut vals, &disc, cfg, &mut report)
    });
    res?;
    if !report.converged {
        report
            .flags
            .push(format!("outer iteration cap {} reached", cfg.max_outer));
    }
    Ok((field, report))
}

/// Minimizes Ê from `start` by the alternating two-step scheme, then runs the
/// configured perturbed restarts to monitor uniqueness.
pub fn two_step_minimize(
    start: MetricField,
    cfg: &SolverConfig,
) -> Result<(MetricField, SolveReport), SolveError> {
    let (field, mut report) = minimize_once(start, cfg)?;
    if cfg.restarts > 0 {
        report.restarts = Some(restart_monitor(&field, cfg));
    }
    Ok((field, report))
}

/// Solves from `cfg.restarts` perturbed starts and compares with `reference`.
/// Failures are recorded, never propagated.
pub fn restart_monitor(reference: &MetricField, cfg: &SolverConfig) -> RestartReport {
    let tolerance = 10.0 * cfg.tol_step;
    let mut out = RestartReport {
        runs: cfg.restarts,
        magnitude: cfg.restart_magnitude,
        distances: Vec::new(),
        tolerance,
        agree: true,
        failures: Vec::new(),
    };
    let sub = SolverConfig {
        restarts: 0,
        ..cfg.clone()
    };
    for s in 0..cfg.restarts {
        let start = perturbed_start(
            &reference.disc,
            cfg.restart_magnitude,
            cfg.seed.wrapping_add(s as u64 + 1),
        );
        match minimize_once(start, &sub) {
            Ok((f, _)) => match f.sup_distance(reference) {
                Ok(d) => out.distances.push(d),
                Err(e) => out.failures.push(format!("restart {s}: {e}")),
            },
            Err(e) => out.failures.push(format!("restart {s}: {e}")),
        }
    }
    out.agree = out.failures.is_empty() && out.distances.iter().all(|d| *d <= tolerance);
    if !out.agree {
        log::warn!(
            "restarts disagree: {:?} (tolerance {tolerance})",
            out.distances
        );
    }
    out
}
