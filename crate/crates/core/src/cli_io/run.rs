//! Orchestration: validate → assemble K₀ → minimize → analyse, with artifacts
//! written to an output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{DumpFormat, RunConfig};
use super::io::{write_json, FieldDump};
use super::plot::emit_plots;
use crate::analysis::{
    differential, holomorphy_residual, holomorphy_residuals, laurent_extract, max_principle_check,
    oracle_differential, oracle_field, oracle_scalar, verify_asymptotics, AsymptoticsReport,
    LaurentTable, MaxPrincipleReport, ScalarOracle,
};
use crate::energy_forms::{admissibility_check, AdmissibilityBounds, AdmissibilityReport};
use crate::error::{Error, SolveError};
use crate::field::{Discretization, MetricField, Region};
use crate::flat_bundle::SurfaceMode;
use crate::grid::{Patch, PatchKind};
use crate::solver::{two_step_minimize, SolveReport};

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitCode {
    Ok = 0,
    ConfigError = 2,
    NonConvergence = 3,
    VerificationFailure = 4,
}

/// Failure of a run, mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[source] Error),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[source] Error),
}

impl RunError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            RunError::Config(_) | RunError::Io(_) => ExitCode::ConfigError,
            RunError::NonConvergence(_) => ExitCode::NonConvergence,
            RunError::Verification(_) => ExitCode::VerificationFailure,
        }
    }
}

impl From<SolveError> for RunError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Setup(e) => RunError::Config(e),
            other => RunError::NonConvergence(other.to_string()),
        }
    }
}

fn io_err(e: impl Into<Error>) -> RunError {
    RunError::Io(e.into())
}

/// Summary printed by `validate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub rank: usize,
    pub punctures: usize,
    pub nodes: usize,
    pub triangles: usize,
    pub negative_edges: usize,
}

pub fn validate(config: &RunConfig) -> Result<(ValidationSummary, Arc<Discretization>), RunError> {
    let problem = config.problem().map_err(RunError::Config)?;
    let disc = problem.discretize().map_err(RunError::Config)?;
    let s = ValidationSummary {
        rank: disc.n,
        punctures: disc.model.punctures.len(),
        nodes: disc.num_nodes(),
        triangles: disc.mesh.triangles.len(),
        negative_edges: disc.negative_edges(),
    };
    Ok((s, disc))
}

fn dump_path(out: &Path, format: DumpFormat) -> PathBuf {
    match format {
        DumpFormat::Text => out.join("field.txt"),
        DumpFormat::Binary => out.join("field.bin"),
    }
}

/// Minimizes from the model and writes the field dump, `solve_report.json`
/// and `timings.json`. Non-convergence is reported after the artifacts exist.
pub fn solve(config: &RunConfig, out: &Path) -> Result<(MetricField, SolveReport), RunError> {
    let (_, disc) = validate(config)?;
    std::fs::create_dir_all(out).map_err(io_err)?;
    let (field, report) = two_step_minimize(MetricField::model(&disc), &config.solver_config())?;
    let dump = FieldDump::from_field(&field);
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(dump_path(out, config.output.field_format)).map_err(io_err)?,
    );
    match config.output.field_format {
        DumpFormat::Text => dump.write_text(&mut f),
        DumpFormat::Binary => dump.write_binary(&mut f),
    }
    .map_err(RunError::Io)?;
    write_json(&out.join("solve_report.json"), &report).map_err(RunError::Io)?;
    write_json(&out.join("timings.json"), &report.timings).map_err(RunError::Io)?;
    Ok((field, report))
}

/// Everything the analysis layer checks on a solved field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub holomorphy_residual: f64,
    /// `‖∂̄φ‖ / ‖∂φ‖`; the absolute value scales with the pole strength.
    pub holomorphy_relative: f64,
    pub tables: Vec<LaurentTable>,
    pub asymptotics: AsymptoticsReport,
    pub max_principle: Vec<MaxPrincipleReport>,
    pub admissibility: AdmissibilityReport,
    pub pass: bool,
}

pub fn verify_field(
    config: &RunConfig,
    field: &MetricField,
) -> Result<VerificationReport, RunError> {
    let disc = &field.disc;
    let a = &config.analysis;
    let phi = differential(field).map_err(RunError::Config)?;
    let (holo, holo_rel) = holomorphy_residuals(disc, &phi, None).map_err(RunError::Config)?;
    let np = disc.model.punctures.len();
    let tables = (0..np)
        .map(|i| laurent_extract(disc, &phi, i, a.m_max, a.contour_radius))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(RunError::Config)?;
    let data = config.problem().map_err(RunError::Config)?.data;
    let asymptotics =
        verify_asymptotics(&tables, &data, &a.tolerances()).map_err(RunError::Config)?;
    let model = MetricField::model(disc);
    let max_principle = (0..np)
        .map(|i| max_principle_check(field, &model, i, a.constant_tol))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(RunError::Config)?;
    let admissibility =
        admissibility_check(field, &AdmissibilityBounds::default()).map_err(RunError::Config)?;
    let pass = asymptotics.pass
        && max_principle.iter().all(|m| m.pass)
        && admissibility.admissible
        && holo.is_finite();
    Ok(VerificationReport {
        holomorphy_residual: holo,
        holomorphy_relative: holo_rel,
        tables,
        asymptotics,
        max_principle,
        admissibility,
        pass,
    })
}

/// Loads the field dump written by [`solve`].
pub fn load_field(config: &RunConfig, out: &Path) -> Result<MetricField, RunError> {
    let (_, disc) = validate(config)?;
    let path = [DumpFormat::Text, DumpFormat::Binary]
        .into_iter()
        .map(|f| dump_path(out, f))
        .find(|p| p.exists())
        .ok_or_else(|| {
            RunError::Io(Error::Config(format!("no field dump in {}", out.display())))
        })?;
    FieldDump::read_path(&path)
        .and_then(|d| d.into_field(&disc))
        .map_err(RunError::Io)
}

/// Verifies a stored field and writes `verification.json`.
pub fn verify(config: &RunConfig, out: &Path) -> Result<VerificationReport, RunError> {
    let field = load_field(config, out)?;
    let rep = verify_field(config, &field)?;
    write_json(&out.join("verification.json"), &rep).map_err(RunError::Io)?;
    if !rep.pass {
        return Err(RunError::Verification(failure_summary(&rep)));
    }
    Ok(rep)
}

fn failure_summary(rep: &VerificationReport) -> String {
    let mut parts = Vec::new();
    let bad = rep.asymptotics.checks.iter().filter(|c| !c.pass).count();
    if bad > 0 {
        parts.push(format!(
            "{bad} Laurent coefficients off (max error {:.3e})",
            rep.asymptotics.max_error()
        ));
    }
    if let Some(s) = rep
        .asymptotics
        .residue_sums
        .iter()
        .copied()
        .reduce(f64::max)
    {
        parts.push(format!("residue sum {s:.3e}"));
    }
    for m in rep.max_principle.iter().filter(|m| !m.pass) {
        parts.push(format!(
            "maximum of d(K, K0) at puncture {} on ring {} of {}",
            m.puncture, m.ring, m.outer_ring
        ));
    }
    if !rep.admissibility.admissible {
        parts.push("field not admissible".into());
    }
    parts.join("; ")
}

/// Writes the SVG heatmaps of a stored field.
pub fn plot(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    let field = load_field(config, out)?;
    let phi = differential(&field).map_err(RunError::Config)?;
    let mut paths = Vec::new();
    for (name, svg) in emit_plots(&field, &phi, config.output.plot_size) {
        let p = out.join(name);
        std::fs::write(&p, svg).map_err(io_err)?;
        paths.push(p);
    }
    Ok(paths)
}

/// `validate → solve → verify (→ plot)`.
pub fn run(config: &RunConfig, out: &Path) -> Result<VerificationReport, RunError> {
    let (field, report) = solve(config, out)?;
    let rep = verify_field(config, &field)?;
    write_json(&out.join("verification.json"), &rep).map_err(RunError::Io)?;
    if config.output.plots {
        let phi = differential(&field).map_err(RunError::Config)?;
        for (name, svg) in emit_plots(&field, &phi, config.output.plot_size) {
            std::fs::write(out.join(name), svg).map_err(io_err)?;
        }
    }
    if !report.converged {
        return Err(RunError::NonConvergence(format!(
            "{} outer iterations, final residual {:.3e}",
            report.iterations.len(),
            report.iterations.last().map_or(f64::NAN, |r| r.residual)
        )));
    }
    if !rep.pass {
        return Err(RunError::Verification(failure_summary(&rep)));
    }
    Ok(rep)
}

/// Oracle comparison at one grid level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleLevel {
    pub nodes: usize,
    pub converged: bool,
    /// Sup over nodes of `|u − u_oracle|` (all slots) per patch kind.
    pub sup_error_by_patch: Vec<(String, f64)>,
    pub sup_error: f64,
    pub holomorphy_residual: f64,
    /// Largest `|C_m − C_m^oracle|` over punctures, slots and `m < 0`.
    pub laurent_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub name: String,
    pub levels: Vec<OracleLevel>,
    /// Observed orders `log2(e_coarse / e_fine)` of the sup error and of the
    /// holomorphy residual.
    pub sup_error_order: f64,
    pub holomorphy_order: f64,
    pub pass: bool,
}

impl OracleComparison {
    pub fn line(&self) -> String {
        let fine = self.levels.last();
        format!(
            "{} {}: laurent diff {:.3e}, sup error {:.3e}, holomorphy order {:.2}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            fine.map_or(f64::NAN, |l| l.laurent_diff),
            fine.map_or(f64::NAN, |l| l.sup_error),
            self.holomorphy_order
        )
    }
}

fn patch_kind_label(disc: &Discretization, a: usize) -> String {
    match &disc.mesh.patches[disc.mesh.nodes[a].patch] {
        Patch::Polar(p) => match p.kind {
            PatchKind::Puncture(i) => format!("puncture {i}"),
            PatchKind::Circle => "interface circle".into(),
            PatchKind::Far => "far field".into(),
            PatchKind::Lattice => "lattice".into(),
        },
        Patch::Lattice(_) => "lattice".into(),
    }
}

fn oracle_level(
    config: &RunConfig,
    grid: crate::grid::GridParams,
) -> Result<OracleLevel, RunError> {
    let mut cfg = config.clone();
    cfg.grid = grid;
    let (_, disc) = validate(&cfg)?;
    if disc.mesh.mode != SurfaceMode::SphereChart {
        return Err(RunError::Config(Error::Config(
            "oracle comparison needs the sphere chart".into(),
        )));
    }
    let oracles: Vec<ScalarOracle> = (0..disc.n)
        .map(|j| oracle_scalar(&disc, j, true))
        .collect::<crate::Result<_>>()
        .map_err(RunError::Config)?;
    let start = MetricField::model(&disc);
    if !start.is_diagonal() {
        return Err(RunError::Config(Error::Config(
            "oracle comparison needs diagonal data".into(),
        )));
    }
    let (field, report) = two_step_minimize(start, &cfg.solver_config())?;
    let exact = oracle_field(&disc, &oracles);
    let mut by_patch: Vec<(String, f64)> = Vec::new();
    for a in 0..disc.num_nodes() {
        let h = field.rel_at(a);
        let o = exact.rel_at(a);
        let e = (0..disc.n)
            .map(|j| (h[(j, j)].re.ln() - o[(j, j)].re.ln()).abs())
            .fold(0.0, f64::max);
        let label = patch_kind_label(&disc, a);
        match by_patch.iter_mut().find(|(l, _)| *l == label) {
            Some(x) => x.1 = x.1.max(e),
            None => by_patch.push((label, e)),
        }
    }
    let sup_error = by_patch.iter().map(|x| x.1).fold(0.0, f64::max);
    let phi = differential(&field).map_err(RunError::Config)?;
    let phi_exact = oracle_differential(&disc, &oracles);
    let region = Region::all(&disc);
    let holo = holomorphy_residual(&disc, &phi, Some(&region)).map_err(RunError::Config)?;
    let a = &config.analysis;
    let mut diff = 0.0f64;
    for i in 0..disc.model.punctures.len() {
        let t =
            laurent_extract(&disc, &phi, i, a.m_max, a.contour_radius).map_err(RunError::Config)?;
        let te = laurent_extract(&disc, &phi_exact, i, a.m_max, a.contour_radius)
            .map_err(RunError::Config)?;
        for m in 1..=a.m_max {
            for j in 0..disc.n {
                diff = diff.max((t.coeff(j, j, -m) - te.coeff(j, j, -m)).norm());
            }
        }
    }
    Ok(OracleLevel {
        nodes: disc.num_nodes(),
        converged: report.converged,
        sup_error_by_patch: by_patch,
        sup_error,
        holomorphy_residual: holo,
        laurent_diff: diff,
    })
}

/// Solves at the configured grid and at its 2× refinement and compares both
/// with the closed-form oracle.
pub fn oracle_compare(config: &RunConfig, name: &str) -> Result<OracleComparison, RunError> {
    let coarse = oracle_level(config, config.grid.clone())?;
    let fine = oracle_level(config, config.grid.refined())?;
    let order = |x: f64, y: f64| (x / y).log2();
    let sup_error_order = order(coarse.sup_error, fine.sup_error);
    let holomorphy_order = order(coarse.holomorphy_residual, fine.holomorphy_residual);
    let tol = config.analysis.coefficient_tol;
    let pass = fine.converged
        && fine.laurent_diff <= tol
        && fine.holomorphy_residual * 1.8 <= coarse.holomorphy_residual;
    Ok(OracleComparison {
        name: name.to_string(),
        levels: vec![coarse, fine],
        sup_error_order,
        holomorphy_order,
        pass,
    })
}
