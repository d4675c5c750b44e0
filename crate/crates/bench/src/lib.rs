//! Problem fixtures shared by the benchmarks.

use std::sync::Arc;

use twistmetric::field::{Discretization, MetricField};
use twistmetric::grid::GridParams;
use twistmetric::pd_geometry::CMat;
use twistmetric::problem::Problem;
use twistmetric::solver::{two_step_minimize, SolverConfig};
use twistmetric::Complex64;

/// Grid with `background²` lattice nodes and proportionally refined patches.
pub fn grid(background: usize) -> GridParams {
    GridParams {
        background,
        angular: 2 * background,
        rings_per_octave: 4,
        r_min: 1e-3,
        ..GridParams::default()
    }
}

/// Scalar second-kind pole on the sphere chart.
pub fn sphere_k1(background: usize) -> Arc<Discretization> {
    Problem::sphere_second_kind(1, 1.0, 1.0, 2.5, grid(background))
        .discretize()
        .expect("valid fixture")
}

/// Rank two on the torus with holonomy diag(2, 1/2) and opposite poles.
pub fn twisted_torus(background: usize) -> Arc<Discretization> {
    let g = CMat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) => Complex64::new(2.0, 0.0),
        (1, 1) => Complex64::new(0.5, 0.0),
        _ => Complex64::new(0.0, 0.0),
    });
    Problem::torus_second_kind(
        g.clone(),
        g,
        vec![vec![(1, 1.0)], vec![(1, -1.0)]],
        0.25,
        grid(background),
    )
    .discretize()
    .expect("valid fixture")
}

/// Converged field of a fixture.
pub fn solved(disc: &Arc<Discretization>) -> MetricField {
    two_step_minimize(MetricField::model(disc), &SolverConfig::default())
        .expect("fixture converges")
        .0
}
