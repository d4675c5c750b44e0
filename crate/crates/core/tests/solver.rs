use nalgebra::DMatrix;
use twistmetric::field::MetricField;
use twistmetric::grid::GridParams;
use twistmetric::problem::Problem;
use twistmetric::solver::{perturbed_start, two_step_minimize, SolverConfig};
use twistmetric::{Complex64, Error, SolveError};

type CMat = DMatrix<Complex64>;

fn small_grid() -> GridParams {
    GridParams {
        background: 24,
        angular: 48,
        rings_per_octave: 3,
        r_min: 1e-2,
        ..GridParams::default()
    }
}

fn twisted(n: usize) -> Problem {
    let g = match n {
        1 => CMat::from_element(1, 1, Complex64::new(2.0, 0.0)),
        _ => CMat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => Complex64::new(2.0, 0.0),
            (1, 1) => Complex64::new(0.5, 0.0),
            _ => Complex64::new(0.0, 0.0),
        }),
    };
    let slots = [vec![(1, 1.0)], vec![(1, -1.0)]][..n].to_vec();
    Problem::torus_second_kind(g.clone(), g, slots, 0.25, small_grid())
}

#[test]
fn modified_energy_decreases_monotonically() {
    let disc = twisted(2).discretize().unwrap();
    let (_, rep) = two_step_minimize(MetricField::model(&disc), &SolverConfig::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.is_monotone(1e-12), "{:?}", rep.energies());
    assert!(rep.mu <= rep.initial_energy);
}

#[test]
fn inconsistent_quadrature_is_caught() {
    let disc = twisted(1).discretize().unwrap();
    let cfg = SolverConfig {
        inconsistent_quadrature: true,
        ..SolverConfig::default()
    };
    match two_step_minimize(MetricField::model(&disc), &cfg) {
        Err(SolveError::EnergyIncrease { .. }) => {}
        Ok((_, rep)) => assert!(!rep.is_monotone(1e-12), "{:?}", rep.energies()),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn full_matrix_start_reaches_the_diagonal_minimizer() {
    let disc = twisted(2).discretize().unwrap();
    let cfg = SolverConfig::default();
    let (reference, _) = two_step_minimize(MetricField::model(&disc), &cfg).unwrap();
    let (f, rep) = two_step_minimize(perturbed_start(&disc, 0.5, 3), &cfg).unwrap();
    assert!(rep.kernel.starts_with("matrix"), "{}", rep.kernel);
    assert!(rep.converged);
    let d = f.sup_distance(&reference).unwrap();
    assert!(d < 10.0 * cfg.tol_step, "{d}");
}

#[test]
fn relaxation_sweeps_agree_with_global_solves() {
    let disc = twisted(1).discretize().unwrap();
    let global = SolverConfig::default();
    let sweeps = SolverConfig {
        global_inner: false,
        inner_tol: 1e-11,
        max_sweeps: 200_000,
        ..SolverConfig::default()
    };
    let (a, _) = two_step_minimize(MetricField::model(&disc), &global).unwrap();
    let (b, rep) = two_step_minimize(MetricField::model(&disc), &sweeps).unwrap();
    assert!(rep.converged);
    let d = a.sup_distance(&b).unwrap();
    assert!(d < 1e-6, "{d}");
}

#[test]
fn inadmissible_start_is_refused() {
    let disc = twisted(1).discretize().unwrap();
    let start = MetricField::from_rel(&disc, |_| {
        CMat::from_element(1, 1, Complex64::new(1e30, 0.0))
    });
    match two_step_minimize(start, &SolverConfig::default()) {
        Err(SolveError::Setup(Error::NotAdmissible(_))) => {}
        other => panic!(
            "expected NotAdmissible, got {:?}",
            other.map(|r| r.1.converged)
        ),
    }
}
