//! TOML run configuration.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::VerifyTolerances;
use crate::error::{Error, Result};
use crate::flat_bundle::{PunctureData, Representation, SingularData, SurfaceMode, SurfaceSpec};
use crate::grid::GridParams;
use crate::model_metric::ModelParams;
use crate::problem::Problem;
use crate::solver::SolverConfig;

/// A complex number written as `[re, im]`.
pub type C2 = [f64; 2];

fn c(x: C2) -> Complex64 {
    Complex64::new(x[0], x[1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceBlock {
    pub mode: SurfaceMode,
    pub punctures: Vec<C2>,
    pub disk_radius: f64,
    #[serde(default)]
    pub chart_radius: f64,
    /// Rank of the bundle; defaults to the size of the generators, else 1.
    #[serde(default)]
    pub rank: Option<usize>,
    /// Torus generators `a`, `b` as row-major matrices of `[re, im]` entries.
    #[serde(default)]
    pub generator_a: Option<Vec<Vec<C2>>>,
    #[serde(default)]
    pub generator_b: Option<Vec<Vec<C2>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SingularBlock {
    /// Per slot, pairs `[k, a_k]`.
    Second {
        slots: Vec<Vec<(u32, f64)>>,
    },
    Third {
        residues: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisBlock {
    pub m_max: i32,
    pub contour_radius: f64,
    pub coefficient_tol: f64,
    pub residue_sum_tol: f64,
    /// Relative bound used by the maximum-principle check for "constant distance".
    pub constant_tol: f64,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        let v = VerifyTolerances::default();
        Self {
            m_max: 4,
            contour_radius: 0.25,
            coefficient_tol: v.coefficient,
            residue_sum_tol: v.residue_sum,
            constant_tol: 1e-9,
        }
    }
}

impl AnalysisBlock {
    pub fn tolerances(&self) -> VerifyTolerances {
        VerifyTolerances {
            coefficient: self.coefficient_tol,
            residue_sum: self.residue_sum_tol,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub field_format: DumpFormat,
    pub plots: bool,
    /// Pixel width of the square heatmaps.
    pub plot_size: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            field_format: DumpFormat::Text,
            plots: true,
            plot_size: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceBlock,
    #[serde(default)]
    pub singular: Vec<SingularBlock>,
    #[serde(default = "default_rational_bound")]
    pub rational_bound: u32,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub output: OutputBlock,
    /// Overrides `solver.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_rational_bound() -> u32 {
    64
}

fn matrix(rows: &[Vec<C2>], name: &str) -> Result<DMatrix<Complex64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!(
            "generator {name} must be a square matrix"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| c(rows[i][j])))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut s = self.solver.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }

    fn representation(&self) -> Result<Representation> {
        let s = &self.surface;
        match (&s.generator_a, &s.generator_b) {
            (Some(a), Some(b)) => {
                let rep = Representation::torus(matrix(a, "a")?, matrix(b, "b")?);
                if s.rank.is_some_and(|r| r != rep.n) {
                    return Err(Error::Config("rank differs from generator size".into()));
                }
                Ok(rep)
            }
            (None, None) => {
                let n = s.rank.unwrap_or(1);
                Ok(match s.mode {
                    SurfaceMode::Torus => {
                        Representation::torus(DMatrix::identity(n, n), DMatrix::identity(n, n))
                    }
                    SurfaceMode::SphereChart => Representation::trivial(n),
                })
            }
            _ => Err(Error::Config(
                "give both generator_a and generator_b, or neither".into(),
            )),
        }
    }

    /// The problem described by the configuration, validated.
    pub fn problem(&self) -> Result<Problem> {
        let s = &self.surface;
        let rep = self.representation()?;
        let data = SingularData {
            punctures: self
                .singular
                .iter()
                .map(|b| match b {
                    SingularBlock::Second { slots } => PunctureData::Second {
                        slots: slots.clone(),
                    },
                    SingularBlock::Third { residues } => PunctureData::Third {
                        residues: residues.clone(),
                    },
                })
                .collect(),
            rational_bound: self.rational_bound,
        };
        let p = Problem {
            surface: SurfaceSpec {
                mode: s.mode,
                punctures: s.punctures.iter().copied().map(c).collect(),
                disk_radius: s.disk_radius,
                chart_radius: s.chart_radius,
            },
            rep,
            data,
            model: self.model.clone(),
            grid: self.grid.clone(),
        };
        p.validate()?;
        self.solver_config().validate()?;
        Ok(p)
    }
}
