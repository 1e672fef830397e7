//! Worked examples for each operation, checked against oracles computed here.

use teugels_control::bsde_solver::{
    check_comparison, solve_backward, solve_linear_closed_form, BsdeConfig, BsdeSpec, Ensemble, LinearDriver,
};
use teugels_control::catalog;
use teugels_control::control_value::{
    dpp_residual, forward_simulate, regularity_diagnostics, semigroup_step, value_dp, Lattice, McConfig,
};
use teugels_control::grid::{GridFunction, SpatialGrid};
use teugels_control::hjb_solver::{self, hamiltonian, HjbConfig, HjbContext};
use teugels_control::levy_model::{JumpMeasure, LevyModel};
use teugels_control::path_sim::{bracket_matrix, simulate_indexed, teugels_increments, TimeGrid};
use teugels_control::problem::{ControlDriver, ControlProblem, Forward, Terminal};
use teugels_control::stats::MeanStderr;
use teugels_control::teugels_basis::OrthoBasis;

const SEED: u64 = 0x5eed_0001;

fn two_sided() -> JumpMeasure {
    JumpMeasure::TwoSidedExponential {
        lambda: 1.0,
        p: 0.5,
        alpha: 2.0,
        beta: 3.0,
    }
}

/// Composite Simpson rule for `∫ x^i ν(dx)` of the two-sided exponential law.
fn simpson_moment(i: i32) -> f64 {
    let density = |x: f64| {
        if x > 0.0 {
            0.5 * 2.0 * (-2.0 * x).exp()
        } else {
            0.5 * 3.0 * (3.0 * x).exp()
        }
    };
    let (a, b, n) = (-40.0, 40.0, 400_000);
    let h = (b - a) / n as f64;
    let f = |x: f64| x.powi(i) * density(x);
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let x = a + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

#[test]
fn two_sided_exponential_moments_match_quadrature() {
    let m = LevyModel::with_truncation(0.0, 1.0, two_sided(), 3).unwrap();
    assert!((m.moment(2).unwrap() - (0.5 * 2.0 / 4.0 + 0.5 * 2.0 / 9.0)).abs() < 1e-12);
    for i in 2..=8 {
        let oracle = simpson_moment(i);
        let got = m.moment(i as usize).unwrap();
        assert!((got - oracle).abs() <= 1e-8 * oracle.abs(), "m_{i}: {got} vs {oracle}");
    }
    assert!(m.validate().is_empty());
}

#[test]
fn mixed_basis_matches_hand_gram_schmidt() {
    let m = LevyModel::with_truncation(0.0, 1.0, JumpMeasure::PointMasses(vec![(1.0, 1.0)]), 2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    // G = [[2, 1], [1, 1]]: q0 = 1/√2, q1 ∝ x − 1/2 normalized under the second row
    let g = [[2.0f64, 1.0], [1.0, 1.0]];
    let a11 = 1.0 / g[0][0].sqrt();
    let proj = g[0][1] / g[0][0];
    let norm = (g[1][1] - 2.0 * proj * g[0][1] + proj * proj * g[0][0]).sqrt();
    let (a21, a22) = (-proj / norm, 1.0 / norm);
    assert!((b.a11() - a11).abs() < 1e-12);
    assert!((b.coeff(2, 1) - a21).abs() < 1e-12);
    assert!((b.coeff(2, 2) - a22).abs() < 1e-12);
    assert!((b.eval_q(2, 0.0).unwrap() + 2f64.sqrt() / 2.0).abs() < 1e-12);
    assert!(b.eval_q(2, 0.5).unwrap().abs() < 1e-12);
    assert!((b.eval_p(2, 1.0).unwrap() - 2f64.sqrt() / 2.0).abs() < 1e-12);
    assert!(b.verify_orthonormal(&m).unwrap() <= 1e-12);

    let exp = LevyModel::with_truncation(0.0, 1.0, two_sided(), 4).unwrap();
    let b4 = OrthoBasis::build(&exp, 4).unwrap();
    assert_eq!(b4.rank(), 4);
    assert!(b4.verify_orthonormal(&exp).unwrap() <= 1e-8);
}

#[test]
fn poisson_jump_count_mean() {
    let m = LevyModel::with_truncation(0.0, 0.0, JumpMeasure::PointMasses(vec![(1.0, 2.0)]), 1).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
    let n = 100_000u64;
    let counts: Vec<f64> = (0..n)
        .map(|i| simulate_indexed(&m, &grid, SEED, i).step_jumps(0).len() as f64)
        .collect();
    let mean = MeanStderr::from_samples(&counts).mean;
    assert!((mean - 2.0).abs() <= 3.0 * (2.0 / n as f64).sqrt(), "{mean}");
}

#[test]
fn brownian_increments_are_the_brownian_steps() {
    let m = catalog::brownian(4).unwrap();
    let b = OrthoBasis::build(&m, 1).unwrap();
    assert_eq!(b.rank(), 1);
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let path = simulate_indexed(&m, &grid, SEED, 3);
    let incr = teugels_increments(&path, &b, &m).unwrap();
    for (s, d) in path.increments().iter().enumerate() {
        assert!((incr.dh(s, 1) - d).abs() < 1e-15);
    }
}

#[test]
fn brackets_follow_strong_orthogonality() {
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let bm = catalog::brownian(1).unwrap();
    let bb = OrthoBasis::build(&bm, 1).unwrap();
    let e = bracket_matrix(&bm, &bb, &grid, 100_000, SEED).unwrap().get(1, 1);
    assert!((e.mean - 1.0).abs() <= 5.0 * e.stderr);

    let m = catalog::brownian_point_mass(2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    let bk = bracket_matrix(&m, &b, &grid, 100_000, SEED).unwrap();
    let (off, diag) = (bk.get(1, 2), bk.get(2, 2));
    assert!(off.mean.abs() <= 5.0 * off.stderr);
    assert!((diag.mean - 1.0).abs() <= 5.0 * diag.stderr);
}

fn ensemble(n: usize, steps: usize) -> (LevyModel, Ensemble) {
    let m = catalog::brownian_point_mass(2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
    let ens = Ensemble::levy(&m, &b, &grid, 0.0, n, SEED).unwrap();
    (m, ens)
}

#[test]
fn backward_solver_examples() {
    let (_, ens) = ensemble(20_000, 50);
    let zero = |_: f64| 0.0;
    let unit = LinearDriver::constant(1.0);
    let sol = solve_backward(
        BsdeSpec {
            terminal: &zero,
            driver: &unit,
        },
        &ens,
        &BsdeConfig::default(),
    )
    .unwrap();
    assert!((sol.y0.mean - 1.0).abs() < 1e-10);

    let two = |_: f64| 2.0;
    let discount = LinearDriver::discount(0.5);
    let sol = solve_backward(
        BsdeSpec {
            terminal: &two,
            driver: &discount,
        },
        &ens,
        &BsdeConfig::default(),
    )
    .unwrap();
    let oracle = solve_linear_closed_form(&|_| 0.0, &|_| -0.5, 2.0, 1.0, &[0.0])[0];
    assert!((oracle - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
    assert!((sol.y0.mean - oracle).abs() < 2e-3);
    // terminal consistency
    assert!(sol.y[50 * sol.n..].iter().all(|y| *y == 2.0));
}

#[test]
fn closed_form_time_integral() {
    let y = solve_linear_closed_form(&|s| s, &|_| 0.0, 0.0, 1.0, &[0.0, 0.5, 1.0]);
    assert!((y[0] - 0.5).abs() < 1e-12);
    assert!((y[1] - 0.375).abs() < 1e-12);
    assert_eq!(y[2], 0.0);
}

#[test]
fn driver_shift_gap_is_the_time_integral() {
    let (_, ens) = ensemble(5_000, 20);
    let phi = |x: f64| x;
    let (low, high) = (LinearDriver::zero(), LinearDriver::constant(0.1));
    let r = check_comparison(
        BsdeSpec {
            terminal: &phi,
            driver: &low,
        },
        BsdeSpec {
            terminal: &phi,
            driver: &high,
        },
        &ens,
        &BsdeConfig::default(),
    )
    .unwrap();
    assert_eq!(r.violations, 0);
    assert!((r.gap0 - 0.1).abs() < 1e-10);
}

#[test]
fn additive_forward_follows_the_driver() {
    let m = catalog::brownian(1).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
    let path = simulate_indexed(&m, &grid, SEED, 11);
    let p = ControlProblem::new(
        Forward::Constant(1.0),
        ControlDriver::zero(),
        Terminal::Constant(0.0),
        vec![0.0],
        1.0,
        (1.0, 0.0, 0.0),
    )
    .unwrap();
    let xs = forward_simulate(&p, &[0.0; 8], 0.3, &path).unwrap();
    assert!((xs[8] - (0.3 + path.terminal_value())).abs() < 1e-12);
}

#[test]
fn two_control_quadratic_near_the_horizon() {
    // min_u E[(uΔL)²] = δ(σ² + m₂) + (m₁δ)² for the Brownian-plus-unit-jump model
    let m = catalog::brownian_point_mass(2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    let p = catalog::two_control_quadratic().unwrap();
    let delta = 0.1;
    let oracle = delta * (m.sigma2() + m.moment(2).unwrap()) + (m.m1() * delta).powi(2);
    let grid = SpatialGrid::new(-4.0, 4.0, 81).unwrap();
    let lattice = Lattice::new(1.0 - delta, 1.0, 1, grid).unwrap();
    let cfg = McConfig {
        paths: 20_000,
        substeps: 2,
        bsde: BsdeConfig::default(),
        seed: SEED,
    };
    let est = value_dp(&p, &m, &b, &lattice, &cfg).unwrap();
    let w = est.value_at(0, 0.0).unwrap();
    let se = est.stderr_at(0, 0.0).unwrap();
    // piecewise-linear interpolation of x² overstates it by at most h²/4
    let interp = grid.h().powi(2) / 4.0;
    assert!((w - oracle).abs() <= 3.0 * se + interp, "{w} vs {oracle} ± {se}");
}

#[test]
fn semigroup_of_a_unit_running_cost() {
    let m = catalog::brownian_point_mass(2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    let p = ControlProblem::new(
        Forward::Constant(1.0),
        ControlDriver {
            constant: 1.0,
            ..ControlDriver::zero()
        },
        Terminal::Constant(0.0),
        vec![0.0],
        1.0,
        (1.0, 0.0, 0.0),
    )
    .unwrap();
    let cfg = McConfig {
        paths: 2_000,
        substeps: 4,
        bsde: BsdeConfig::default(),
        seed: SEED,
    };
    let zero = |_: f64| 0.0;
    let out = semigroup_step(&p, &m, &b, 0.0, &zero, 0.0, 0.1, &[-1.0, 0.0, 2.0], &cfg).unwrap();
    for v in out {
        assert!((v.mean - 0.1).abs() < 1e-12);
    }
}

#[test]
fn linear_benchmark_dpp_and_regularity() {
    let m = catalog::benchmark_model(2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    let p = catalog::linear_benchmark().unwrap();
    let lattice = Lattice::new(0.0, 1.0, 4, SpatialGrid::new(0.0, 3.0, 7).unwrap()).unwrap();
    let cfg = McConfig {
        paths: 5_000,
        substeps: 2,
        bsde: BsdeConfig::default(),
        seed: SEED,
    };
    let est = value_dp(&p, &m, &b, &lattice, &cfg).unwrap();
    let coarse = Lattice::new(0.0, 1.0, 2, lattice.grid).unwrap();
    let half = value_dp(&p, &m, &b, &coarse, &cfg).unwrap();
    let r = dpp_residual(&p, &m, &b, &half, 0, 1.0, 4).unwrap();
    assert!(r.residual <= 0.02 * r.lhs.abs(), "{r:?}");

    let report = regularity_diagnostics(&est).unwrap();
    for (j, c) in report.c_x_per_slice.iter().enumerate() {
        let oracle = (m.m1() * (1.0 - lattice.times[j])).exp();
        assert!((c / oracle - 1.0).abs() < 0.02, "slice {j}: {c} vs {oracle}");
    }
}

#[test]
fn hamiltonian_of_a_linear_function() {
    let m = catalog::benchmark_model(2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    let p = ControlProblem::new(
        Forward::Constant(1.0),
        ControlDriver::zero(),
        Terminal::Constant(0.0),
        vec![0.0],
        1.0,
        (1.0, 0.0, 0.0),
    )
    .unwrap();
    let ctx = HjbContext::new(&p, &m, &b, None).unwrap();
    let grid = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
    let v = GridFunction::from_fn(grid, |x| x, 1.0).unwrap();
    for i in 0..grid.n_nodes {
        assert!((hamiltonian(&ctx, &v, i, 0.0, 0.0).unwrap() - 0.2).abs() < 1e-12);
    }
}

#[test]
fn two_control_surface_is_symmetric() {
    let m = catalog::brownian_point_mass(2).unwrap();
    let b = OrthoBasis::build(&m, 2).unwrap();
    let p = catalog::two_control_quadratic().unwrap();
    let grid = SpatialGrid::new(-3.0, 3.0, 61).unwrap();
    let sol = hjb_solver::solve(&p, &m, &b, &grid, &HjbConfig::default()).unwrap();
    let n = grid.n_nodes;
    for row in &sol.values {
        for i in 0..n {
            assert!((row[i] - row[n - 1 - i]).abs() <= 1e-8);
        }
    }
}
