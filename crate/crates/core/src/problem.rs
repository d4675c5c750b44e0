//! A complete problem description: surface, representation, singular data,
//! model parameters and grid.

use std::sync::Arc;

use crate::error::Result;
use crate::field::Discretization;
use crate::flat_bundle::{PunctureData, Representation, SingularData, SurfaceMode, SurfaceSpec};
use crate::grid::GridParams;
use crate::model_metric::{ModelMetric, ModelParams};
use crate::pd_geometry::CMat;
use crate::Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub surface: SurfaceSpec,
    pub rep: Representation,
    pub data: SingularData,
    pub model: ModelParams,
    pub grid: GridParams,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        self.rep.validate(self.surface.mode)?;
        self.data
            .validate(self.rep.n, self.surface.punctures.len())?;
        self.grid.validate()?;
        ModelMetric::assemble(&self.surface, self.rep.n, &self.data, &self.model)?;
        Ok(())
    }

    pub fn model_metric(&self) -> Result<ModelMetric> {
        ModelMetric::assemble(&self.surface, self.rep.n, &self.data, &self.model)
    }

    pub fn discretize(&self) -> Result<Arc<Discretization>> {
        self.validate()?;
        Discretization::new(
            self.surface.clone(),
            self.rep.clone(),
            self.model_metric()?,
            self.grid.clone(),
        )
    }

    pub fn with_grid(&self, grid: GridParams) -> Self {
        Self {
            grid,
            ..self.clone()
        }
    }

    /// Rank one, one puncture at the origin of the sphere chart, `u ~ 2a Re(t^{-k})`.
    pub fn sphere_second_kind(
        k: u32,
        a: f64,
        disk_radius: f64,
        chart_radius: f64,
        grid: GridParams,
    ) -> Self {
        Self {
            surface: SurfaceSpec {
                mode: SurfaceMode::SphereChart,
                punctures: vec![Complex64::new(0.0, 0.0)],
                disk_radius,
                chart_radius,
            },
            rep: Representation::trivial(1),
            data: SingularData {
                punctures: vec![PunctureData::Second {
                    slots: vec![vec![(k, a)]],
                }],
                rational_bound: 64,
            },
            model: ModelParams::default(),
            grid,
        }
    }

    /// Rank one on the sphere chart with simple poles of residues ±r at `p0`, `p1`.
    pub fn sphere_third_kind(
        p0: Complex64,
        p1: Complex64,
        r: f64,
        disk_radius: f64,
        chart_radius: f64,
        grid: GridParams,
    ) -> Self {
        Self {
            surface: SurfaceSpec {
                mode: SurfaceMode::SphereChart,
                punctures: vec![p0, p1],
                disk_radius,
                chart_radius,
            },
            rep: Representation::trivial(1),
            data: SingularData {
                punctures: vec![
                    PunctureData::Third { residues: vec![r] },
                    PunctureData::Third { residues: vec![-r] },
                ],
                rational_bound: 64,
            },
            model: ModelParams::default(),
            grid,
        }
    }

    /// Torus with commuting ρ(a), ρ(b) and one second-kind puncture at the centre.
    pub fn torus_second_kind(
        a: CMat,
        b: CMat,
        slots: Vec<Vec<(u32, f64)>>,
        disk_radius: f64,
        grid: GridParams,
    ) -> Self {
        let n = a.nrows();
        Self {
            surface: SurfaceSpec {
                mode: SurfaceMode::Torus,
                punctures: vec![Complex64::new(0.5, 0.5)],
                disk_radius,
                chart_radius: 0.0,
            },
            rep: Representation {
                n,
                ..Representation::torus(a, b)
            },
            data: SingularData {
                punctures: vec![PunctureData::Second { slots }],
                rational_bound: 64,
            },
            model: ModelParams::default(),
            grid,
        }
    }
}
