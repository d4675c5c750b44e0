//! Acceptance criteria. Every test prints one `PASS`/`FAIL` line.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use twistmetric::analysis::{
    differential, holomorphy_residual, laurent_extract, max_principle_check, oracle_scalar,
    oracle_sup_error, subharmonicity_check, verify_asymptotics, VerifyTolerances,
};
use twistmetric::cli_io::RunConfig;
use twistmetric::energy_forms::{
    admissibility_check, endomorphism_from_frame, energy, first_variation, perturb,
    theta_bar_transformed, theta_pointwise, AdmissibilityBounds,
};
use twistmetric::field::{Discretization, EnergyKind, MetricField, Region};
use twistmetric::flat_bundle::{semisimplicity_check, Representation, Semisimplicity};
use twistmetric::grid::GridParams;
use twistmetric::problem::Problem;
use twistmetric::solver::{
    dirichlet_solve, restart_monitor, two_step_minimize, SolveReport, SolverConfig,
};
use twistmetric::{Complex64, SolveError};

type CMat = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn verdict(id: u32, pass: bool, detail: &str) {
    println!(
        "{} criterion {id}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn solve(disc: &Arc<Discretization>, cfg: &SolverConfig) -> (MetricField, SolveReport) {
    two_step_minimize(MetricField::model(disc), cfg).expect("solve")
}

const SHIPPED: [&str; 5] = [
    "trivial",
    "second_kind_k1",
    "second_kind_k2",
    "third_kind_pm1",
    "torus_twisted",
];

fn shipped(name: &str) -> RunConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"));
    RunConfig::load(&p).unwrap()
}

fn shipped_solves() -> Vec<(String, MetricField, SolveReport)> {
    SHIPPED
        .iter()
        .map(|name| {
            let cfg = shipped(name);
            let disc = cfg.problem().unwrap().discretize().unwrap();
            let (f, r) = solve(&disc, &cfg.solver_config());
            (name.to_string(), f, r)
        })
        .collect()
}

fn criterion1_grid() -> GridParams {
    // 15 rings per octave from 1e-4 to 1: 200 rings of 256 nodes
    GridParams {
        background: 128,
        angular: 256,
        rings_per_octave: 15,
        r_min: 1e-4,
        far_angular: 128,
        far_factor: 50.0,
    }
}

#[test]
fn criterion_01_scalar_second_kind_oracle() {
    let cfg = SolverConfig::default();
    let p = Problem::sphere_second_kind(1, 1.0, 1.0, 2.5, criterion1_grid());
    let t0 = Instant::now();
    let disc = p.discretize().unwrap();
    let (f, rep) = solve(&disc, &cfg);
    let runtime = t0.elapsed().as_secs_f64();
    let phi = differential(&f).unwrap();
    let tab = laurent_extract(&disc, &phi, 0, 4, 0.25).unwrap();
    let c2 = tab.coeff(0, 0, -2);
    let rel = (c2 + 1.0).norm();
    let r1 = holomorphy_residual(&disc, &phi, None).unwrap();
    let fine = p
        .with_grid(criterion1_grid().refined())
        .discretize()
        .unwrap();
    let (ff, rep_f) = solve(&fine, &cfg);
    let r2 = holomorphy_residual(&fine, &differential(&ff).unwrap(), None).unwrap();
    let pass =
        rep.converged && rep_f.converged && rel <= 1e-3 && r1 >= 1.8 * r2 && runtime <= 120.0;
    verdict(
        1,
        pass,
        &format!(
            "C_-2 = {:.8} (rel err {rel:.2e}), holomorphy residual {r1:.3e} -> {r2:.3e} (x{:.2}), \
             {} rings x {} angular, runtime {runtime:.1}s",
            c2.re,
            r1 / r2,
            disc.mesh.puncture_patch(0).unwrap().radii.len(),
            disc.mesh.puncture_patch(0).unwrap().angular,
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_scalar_third_kind_oracle() {
    let p = Problem::sphere_third_kind(
        c(0.0, 0.0),
        c(0.6, 0.0),
        1.0,
        0.25,
        3.0,
        GridParams::default(),
    );
    let disc = p.discretize().unwrap();
    let (f, rep) = solve(&disc, &SolverConfig::default());
    let phi = differential(&f).unwrap();
    let tabs: Vec<_> = (0..2)
        .map(|i| laurent_extract(&disc, &phi, i, 4, 0.25).unwrap())
        .collect();
    let res = [tabs[0].coeff(0, 0, -1), tabs[1].coeff(0, 0, -1)];
    let res_err = (res[0] - 1.0).norm().max((res[1] + 1.0).norm());
    let sum = (res[0] + res[1]).norm();
    let oracle = oracle_scalar(&disc, 0, true).unwrap();
    let sup = oracle_sup_error(&f, &[oracle], 0.0)[0];
    let v = verify_asymptotics(&tabs, &p.data, &VerifyTolerances::default()).unwrap();
    let pass = rep.converged && res_err <= 1e-3 && sum <= 1e-6 && sup <= 5e-3 && v.pass;
    verdict(
        2,
        pass,
        &format!(
            "residues {:.9}, {:.9} (err {res_err:.2e}), sum {sum:.2e}, sup field error {sup:.2e}",
            res[0].re, res[1].re
        ),
    );
    assert!(pass);
}

fn torus_problem(a: CMat, slots: Vec<Vec<(u32, f64)>>) -> Problem {
    let g = GridParams {
        background: 64,
        angular: 128,
        rings_per_octave: 6,
        r_min: 1e-3,
        ..GridParams::default()
    };
    Problem::torus_second_kind(a.clone(), a, slots, 0.25, g)
}

fn diag(d: &[f64]) -> CMat {
    CMat::from_fn(d.len(), d.len(), |i, j| {
        if i == j {
            c(d[i], 0.0)
        } else {
            c(0.0, 0.0)
        }
    })
}

#[test]
fn criterion_03_twisted_decoupling() {
    let cfg = SolverConfig::default();
    let p = torus_problem(diag(&[2.0, 0.5]), vec![vec![(1, 1.0)], vec![(1, -1.0)]]);
    let disc = p.discretize().unwrap();
    let (f, rep) = solve(&disc, &cfg);
    let mut worst = 0.0f64;
    let mut off = 0.0f64;
    for (j, (g, a)) in [(2.0, 1.0), (0.5, -1.0)].into_iter().enumerate() {
        let ps = torus_problem(diag(&[g]), vec![vec![(1, a)]]);
        let ds = ps.discretize().unwrap();
        let (fs, _) = solve(&ds, &cfg);
        for x in 0..disc.num_nodes() {
            let (h, hs) = (f.rel_at(x), fs.rel_at(x));
            // d(diag(e^x), diag(e^y)) slotwise = |x - y|
            worst = worst.max((h[(j, j)].re.ln() - hs[(0, 0)].re.ln()).abs());
            off = off.max(h[(0, 1)].norm());
        }
    }
    let ss = semisimplicity_check(&p.rep);
    let pass = rep.converged
        && worst <= 1e-8
        && off <= 1e-12
        && ss.verdict == Semisimplicity::Semisimple
        && ss.radical_dim == 0;
    verdict(
        3,
        pass,
        &format!(
            "slotwise sup distance {worst:.2e}, off-diagonal {off:.1e}, {:?} with radical_dim {}",
            ss.verdict, ss.radical_dim
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_modified_energy_monotone() {
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    let mut all_ok = true;
    for (name, _, rep) in shipped_solves() {
        let ok = rep.is_monotone(1e-12);
        all_ok &= ok;
        for w in rep.energies().windows(2) {
            worst = worst.max((w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE));
            steps += 1;
        }
        if !ok {
            println!("  {name}: energies {:?}", rep.energies());
        }
    }
    // negative control: minimizing an inconsistent quadrature on the disks
    let mut cfg = shipped("second_kind_k1");
    cfg.solver.inconsistent_quadrature = true;
    let disc = cfg.problem().unwrap().discretize().unwrap();
    let control = two_step_minimize(MetricField::model(&disc), &cfg.solver_config());
    let caught = match &control {
        Err(SolveError::EnergyIncrease { .. }) => true,
        Ok((_, r)) => !r.is_monotone(1e-12),
        Err(_) => false,
    };
    let pass = all_ok && caught;
    verdict(
        4,
        pass,
        &format!(
            "{steps} recorded steps over {} shipped configs, largest relative change {worst:.2e}; \
             negative control detected: {caught}",
            SHIPPED.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_maximum_principle() {
    let (mut total, mut passed) = (0, 0);
    for (name, f, rep) in shipped_solves() {
        assert!(rep.converged, "{name}");
        let model = MetricField::model(&f.disc);
        for i in 0..f.disc.model.punctures.len() {
            let m = max_principle_check(&f, &model, i, 1e-9).unwrap();
            total += 1;
            if m.pass {
                passed += 1;
            } else {
                println!(
                    "  {name} puncture {i}: max on ring {} of {}",
                    m.ring, m.outer_ring
                );
            }
        }
    }
    let pass = total > 0 && passed == total;
    verdict(
        5,
        pass,
        &format!("{passed}/{total} puncture solves attain the max on the outer ring"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_subharmonicity() {
    let cfg = SolverConfig::default();
    let mut worst = f64::INFINITY;
    let mut pairs = 0;
    let mut max_sep = 0.0f64;
    for (name, f, _) in shipped_solves() {
        let disc = Arc::clone(&f.disc);
        for i in 0..disc.model.punctures.len() {
            // second harmonic output on the disk: same solve with tilted boundary data
            let region = Region::disk(&disc, i, 1.0);
            let mut g = f.clone();
            for a in region.boundary_nodes(&disc) {
                let t = disc.model.disk_coordinate(i, disc.mesh.nodes[a].z);
                let tilt = CMat::from_fn(disc.n, disc.n, |j, k| {
                    if j == k {
                        c((0.2 * (t.arg() + j as f64).cos()).exp(), 0.0)
                    } else {
                        c(0.0, 0.0)
                    }
                });
                let h = f.rel_at(a);
                g.set_rel(a, &(&tilt * h * &tilt));
            }
            dirichlet_solve(&mut g, &region, EnergyKind::Modified, &cfg).unwrap();
            let s = subharmonicity_check(&f, &g, Some(&region)).unwrap();
            let sep = f.distance_to(&g).unwrap().into_iter().fold(0.0, f64::max);
            pairs += 1;
            max_sep = max_sep.max(sep);
            if s.min_laplacian < worst {
                worst = s.min_laplacian;
            }
            if s.min_laplacian < -1e-5 {
                println!("  {name} puncture {i}: min {:.3e}", s.min_laplacian);
            }
        }
    }
    let pass = pairs > 0 && max_sep > 1e-3 && worst >= -1e-5;
    verdict(
        6,
        pass,
        &format!(
            "{pairs} harmonic pairs (max separation {max_sep:.2e}), min discrete Laplacian of d^2 = {worst:.3e}"
        ),
    );
    assert!(pass);
}

fn hermitian(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

fn random_matrix(n: usize, rng: &mut impl rand::Rng, scale: f64) -> CMat {
    CMat::from_fn(n, n, |_, _| {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
    })
}

fn fd_problem(n: usize) -> Problem {
    let g = match n {
        1 => CMat::from_element(1, 1, c(2.0, 0.0)),
        2 => CMat::from_row_slice(2, 2, &[c(1.5, 0.0), c(0.3, 0.2), c(0.0, 0.0), c(0.7, 0.0)]),
        _ => CMat::from_row_slice(
            3,
            3,
            &[
                c(2.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(1.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.5, 0.0),
            ],
        ),
    };
    // mild poles keep the model's cutoff band well conditioned on this coarse grid
    let slots = (0..n).map(|j| vec![(1, 0.3 * (1.0 - j as f64))]).collect();
    let grid = GridParams {
        background: 20,
        angular: 32,
        rings_per_octave: 3,
        r_min: 0.02,
        ..GridParams::default()
    };
    Problem::torus_second_kind(g.clone(), g, slots, 0.2, grid)
}

#[test]
fn criterion_07_first_variation_and_two_routes() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let discs: Vec<_> = (1..=3)
        .map(|n| fd_problem(n).discretize().unwrap())
        .collect();
    let eps = 1e-4;
    let mut worst_fd = 0.0f64;
    for trial in 0..50 {
        let disc = &discs[trial % 3];
        let n = disc.n;
        let modes: Vec<(CMat, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    hermitian(&random_matrix(n, &mut rng, 0.3)),
                    rng.gen_range(-2.0f64..2.0).round(),
                    rng.gen_range(-2.0f64..2.0).round(),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let dir = hermitian(&random_matrix(n, &mut rng, 0.1));
        let smooth = |z: Complex64, m: &[(CMat, f64, f64, f64)]| -> CMat {
            m.iter().fold(CMat::zeros(n, n), |acc, (x, p, q, ph)| {
                acc + x * c((2.0 * PI * (p * z.re + q * z.im) + ph).sin(), 0.0)
            })
        };
        let f = MetricField::from_rel(disc, |a| {
            let x = smooth(disc.mesh.nodes[a].z, &modes);
            let e = x.symmetric_eigen();
            let d = e.eigenvalues.map(|v| c(v.exp(), 0.0));
            &e.eigenvectors * CMat::from_diagonal(&d) * e.eigenvectors.adjoint()
        });
        let h: Vec<CMat> = (0..disc.num_nodes())
            .map(|a| {
                let z = disc.mesh.nodes[a].z;
                let x = &dir * c((2.0 * PI * z.im).cos(), 0.0) + &dir.adjoint() * c(0.5, 0.0);
                endomorphism_from_frame(disc, a, &f.rel_at(a), &hermitian(&x)).unwrap()
            })
            .collect();
        let compact = Region::compact(disc);
        let (kind, region) = if trial % 2 == 0 {
            (EnergyKind::Modified, None)
        } else {
            (EnergyKind::Plain, Some(&compact))
        };
        let ep = energy(&perturb(&f, &h, eps).unwrap(), region, kind).unwrap();
        let em = energy(&perturb(&f, &h, -eps).unwrap(), region, kind).unwrap();
        let fd = (ep - em) / (2.0 * eps);
        let an = first_variation(&f, &h, region, kind).unwrap();
        let rel = (fd - an).abs() / an.abs().max(fd.abs());
        if rel > 1e-6 {
            println!("  trial {trial} n {n} {kind:?}: fd {fd:.6e} an {an:.6e} rel {rel:.2e}");
        }
        worst_fd = worst_fd.max(rel);
    }
    // θ̄_{K1} directly and through h = K1 K0⁻¹, on polynomial metrics with exact derivatives
    let mut worst_theta = 0.0f64;
    for trial in 0..50 {
        let n = 1 + trial % 3;
        let shift = CMat::identity(n, n) * c(3.0, 0.0);
        let z = c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let mut frame = || {
            let (p, m, q) = (
                random_matrix(n, &mut rng, 1.0) + &shift,
                random_matrix(n, &mut rng, 1.0),
                random_matrix(n, &mut rng, 1.0),
            );
            let a = &p + &m * z + &q * z.conj();
            let k = &a * a.adjoint();
            let dbar = &q * a.adjoint() + &a * m.adjoint();
            (k, dbar)
        };
        let ((k0, db0), (k1, db1)) = (frame(), frame());
        let k0i = k0.clone().try_inverse().unwrap();
        let h = &k1 * &k0i;
        let dbar_h = &db1 * &k0i - &h * &db0 * &k0i;
        let (_, t0b) = theta_pointwise(&k0, &k0, &db0).unwrap();
        let (_, t1b) = theta_pointwise(&k1, &k1, &db1).unwrap();
        let via = theta_bar_transformed(&h, &dbar_h, &t0b).unwrap();
        worst_theta = worst_theta.max((&via - &t1b).norm() / (1.0 + t1b.norm()));
    }
    let pass = worst_fd <= 1e-6 && worst_theta <= 1e-8;
    verdict(
        7,
        pass,
        &format!(
            "first variation vs central FD (eps {eps:e}) on 50 fields, n <= 3: max rel err {worst_fd:.2e}; \
             two-route theta-bar max err {worst_theta:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_semisimplicity_classifier() {
    let d = diag(&[2.0, 0.5]);
    let u = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    let s = semisimplicity_check(&Representation::torus(d.clone(), d));
    let t = semisimplicity_check(&Representation::torus(u.clone(), u));
    let pass = s.verdict == Semisimplicity::Semisimple
        && s.radical_dim == 0
        && t.verdict == Semisimplicity::NotSemisimple
        && t.radical_dim >= 1;
    verdict(
        8,
        pass,
        &format!(
            "diag(2,1/2): {:?} (radical {}), unipotent: {:?} (radical {})",
            s.verdict, s.radical_dim, t.verdict, t.radical_dim
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_restart_consistency() {
    let p = torus_problem(diag(&[2.0, 0.5]), vec![vec![(1, 1.0)], vec![(1, -1.0)]]);
    let disc = p.discretize().unwrap();
    let mut cfg = SolverConfig::default();
    let (f, _) = solve(&disc, &cfg);
    cfg.restarts = 5;
    cfg.restart_magnitude = 0.5;
    let t0 = Instant::now();
    let r = restart_monitor(&f, &cfg);
    let pass = r.agree;
    // disagreement is reported, not fatal
    verdict(
        9,
        pass,
        &format!(
            "{} restarts (magnitude {}), sup distances {:?} vs tolerance {:.1e}, failures {:?}, {:.1}s",
            r.runs,
            r.magnitude,
            r.distances.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>(),
            r.tolerance,
            r.failures,
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_10_admissibility_guard() {
    let bounds = AdmissibilityBounds::default();
    let mut tails = Vec::new();
    let mut rejected = Vec::new();
    for r_min in [1e-2, 5e-3, 2.5e-3] {
        let grid = GridParams {
            background: 48,
            angular: 96,
            rings_per_octave: 6,
            r_min,
            far_angular: 48,
            far_factor: 20.0,
        };
        // model carries only t^-2; the start adds an unmodeled Re(1/t) term near the pole
        let p = Problem::sphere_second_kind(2, 1.0, 1.0, 2.5, grid);
        let disc = p.discretize().unwrap();
        let start = MetricField::from_rel(&disc, |a| {
            let t = disc.model.disk_coordinate(0, disc.mesh.nodes[a].z);
            let cut = if t.norm() < 0.5 { 1.0 } else { 0.0 };
            CMat::from_element(1, 1, c((cut * t.inv().re).exp(), 0.0))
        });
        let rep = admissibility_check(&start, &bounds).unwrap();
        tails.push(rep.tail_integral);
        let refused = matches!(
            two_step_minimize(start, &SolverConfig::default()),
            Err(SolveError::Setup(twistmetric::Error::NotAdmissible(_)))
        );
        rejected.push(!rep.admissible && refused);
    }
    let monotone = tails.windows(2).all(|w| w[1] > w[0]);
    let pass = monotone && rejected.iter().all(|&x| x);
    verdict(
        10,
        pass,
        &format!(
            "tail integrals {:?} (bound {:.0e}), rejected {rejected:?}",
            tails.iter().map(|t| format!("{t:.3e}")).collect::<Vec<_>>(),
            bounds.tail_integral
        ),
    );
    assert!(pass);
}
