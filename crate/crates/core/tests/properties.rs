use proptest::prelude::*;

use teugels_control::control_value::{value_dp, Lattice, McConfig};
use teugels_control::grid::{GridFunction, SpatialGrid};
use teugels_control::hjb_solver::{cfl_bound, generator_lu, operator_luk, step_backward, HjbConfig, HjbContext};
use teugels_control::levy_model::{JumpMeasure, LevyModel, LevyTriplet};
use teugels_control::output::real;
use teugels_control::path_sim::{reconstruct_l, simulate_indexed, teugels_increments, TimeGrid};
use teugels_control::problem::{ControlDriver, ControlProblem, Forward, Terminal};
use teugels_control::teugels_basis::{gram_matrix, OrthoBasis};

/// Distinct atom locations away from zero with positive intensities.
fn atoms(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::btree_set(-20i32..=20, 1..=max).prop_flat_map(|set| {
        let locs: Vec<f64> = set.into_iter().filter(|&c| c != 0).map(|c| c as f64 * 0.1).collect();
        let n = locs.len();
        (Just(locs), prop::collection::vec(0.2f64..3.0, n))
            .prop_map(|(l, w)| l.into_iter().zip(w).collect::<Vec<_>>())
    })
}

fn point_mass_model(b: f64, sigma2: f64, atoms: Vec<(f64, f64)>, i_max: usize) -> Option<LevyModel> {
    LevyModel::new(LevyTriplet {
        b,
        sigma2,
        nu: if atoms.is_empty() {
            JumpMeasure::None
        } else {
            JumpMeasure::PointMasses(atoms)
        },
        i_max,
    })
    .ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn even_moments_nonnegative_and_inner_symmetric(
        b in -1.0f64..1.0, sigma2 in 0.0f64..2.0, atoms in atoms(4),
    ) {
        let Some(m) = point_mass_model(b, sigma2, atoms.clone(), 8) else { return Ok(()) };
        for k in 1..=4 {
            prop_assert!(m.moment(2 * k).unwrap() >= 0.0);
        }
        for i in 0..4 {
            for j in 0..4 {
                prop_assert_eq!(m.mu_inner(i, j).unwrap().to_bits(), m.mu_inner(j, i).unwrap().to_bits());
            }
        }
        // direct summation of Σ w·x^i for i ≥ 2
        for i in 2..=8 {
            let direct: f64 = atoms.iter().map(|(x, w)| w * x.powi(i as i32)).sum();
            let got = m.moment(i).unwrap();
            prop_assert!((got - direct).abs() <= 1e-13 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn basis_is_orthonormal_with_rank_law(
        with_diffusion in any::<bool>(), atoms in atoms(4), k_req in 1usize..=4,
    ) {
        let sigma2 = if with_diffusion { 0.7 } else { 0.0 };
        let r = atoms.len() + usize::from(with_diffusion);
        let Some(m) = point_mass_model(0.0, sigma2, atoms, 2 * k_req + 2) else { return Ok(()) };
        let basis = OrthoBasis::build(&m, k_req).unwrap();
        prop_assert_eq!(basis.rank(), k_req.min(r));
        prop_assert!(basis.verify_orthonormal(&m).unwrap() <= 1e-8);
        for n in 1..=basis.rank() {
            prop_assert!(basis.coeff(n, n) > 0.0);
        }
        let g = gram_matrix(&m, 1).unwrap();
        prop_assert!((basis.a11() - 1.0 / g[0].sqrt()).abs() <= 1e-12);
        prop_assert!((basis.a11() - 1.0 / (m.moment(2).unwrap() + sigma2).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn increments_round_trip_and_are_linear(
        seed in any::<u64>(), index in 0u64..1000, atoms in atoms(3), steps in 1usize..40,
    ) {
        let Some(m) = point_mass_model(0.1, 0.5, atoms, 6) else { return Ok(()) };
        let basis = OrthoBasis::build(&m, 2).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let path = simulate_indexed(&m, &grid, seed, index);
        prop_assert_eq!(&path, &simulate_indexed(&m, &grid, seed, index));
        let incr = teugels_increments(&path, &basis, &m).unwrap();
        let back = reconstruct_l(&incr, &basis, &m).unwrap();
        for (a, b) in back.iter().zip(path.increments()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for s in 0..steps {
            for k in 1..=basis.rank() {
                let combo: f64 = (1..=k).map(|j| basis.coeff(k, j) * incr.dy(s, j)).sum();
                prop_assert_eq!(combo.to_bits(), incr.dh(s, k).to_bits());
            }
        }
    }

    #[test]
    fn operators_exact_on_linear_functions(
        p in -3.0f64..3.0, f in 0.2f64..2.0, node in 100usize..300,
    ) {
        let m = LevyModel::with_truncation(0.1, 0.5, JumpMeasure::PointMasses(vec![(1.0, 1.0), (-0.5, 2.0)]), 3).unwrap();
        let basis = OrthoBasis::build(&m, 3).unwrap();
        let problem = ControlProblem::new(
            Forward::Constant(f), ControlDriver::zero(), Terminal::Constant(0.0), vec![0.0], 1.0, (1.0, 0.0, 0.0),
        ).unwrap();
        let ctx = HjbContext::new(&problem, &m, &basis, None).unwrap();
        let grid = SpatialGrid::new(-5.0, 5.0, 401).unwrap();
        let v = GridFunction::from_fn(grid, |x| p * x, p.abs()).unwrap();
        prop_assert!((generator_lu(&ctx, &v, node, 0.0, 0.0) - m.m1() * f * p).abs() <= 1e-10);
        let k1 = operator_luk(&ctx, &v, node, 0.0, 1, 0.0).unwrap();
        prop_assert!((k1 - f * p / basis.a11()).abs() <= 1e-10);
        for k in 2..=basis.rank() {
            prop_assert!(operator_luk(&ctx, &v, node, 0.0, k, 0.0).unwrap().abs() <= 1e-10);
        }
    }

    #[test]
    fn explicit_step_is_monotone(
        base in prop::collection::vec(-1.0f64..1.0, 41),
        bump in prop::collection::vec(0.0f64..0.5, 41),
    ) {
        let m = LevyModel::with_truncation(0.2, 0.3, JumpMeasure::PointMasses(vec![(0.3, 1.0)]), 2).unwrap();
        let basis = OrthoBasis::build(&m, 2).unwrap();
        let problem = ControlProblem::new(
            Forward::AffineControl { c0: 0.0, cx: 0.0, cu: 1.0 },
            ControlDriver::zero(),
            Terminal::Constant(0.0),
            vec![-1.0, 1.0],
            1.0,
            (1.0, 0.0, 0.0),
        ).unwrap();
        let ctx = HjbContext::new(&problem, &m, &basis, None).unwrap();
        let grid = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
        let config = HjbConfig { slope_bound: Some(25.0), ..HjbConfig::default() };
        let dt = cfl_bound(&ctx, &grid, 1.0, 0.9);
        let low = GridFunction::new(grid, base.clone(), 25.0).unwrap();
        let high_vals: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let high = GridFunction::new(grid, high_vals, 25.0).unwrap();
        let (a, _) = step_backward(&ctx, &low, 1.0 - dt, dt, &config).unwrap();
        let (b, _) = step_backward(&ctx, &high, 1.0 - dt, dt, &config).unwrap();
        // nodes whose stencil and jump targets (±0.3) stay on the grid; the
        // linear extension beyond the ends extrapolates and is not monotone
        for i in 4..=36 {
            prop_assert!(b.values[i] >= a.values[i] - 1e-12);
        }
    }

    #[test]
    fn reals_round_trip_through_csv_format(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(real(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn grid_functions_interpolate_and_extend_within_bound(
        vals in prop::collection::vec(-2.0f64..2.0, 11), x in -10.0f64..10.0,
    ) {
        let grid = SpatialGrid::new(-1.0, 1.0, 11).unwrap();
        let f = GridFunction::with_fitted_bound(grid, vals.clone()).unwrap();
        for (i, v) in vals.iter().enumerate() {
            prop_assert!((f.eval(grid.x(i)) - v).abs() <= 1e-12);
        }
        let nearest = x.clamp(-1.0, 1.0);
        let gap = (x - nearest).abs();
        prop_assert!((f.eval(x) - f.eval(nearest)).abs() <= f.lipschitz() * gap + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn terminal_slice_is_phi_and_constants_persist(seed in any::<u64>(), c in -3.0f64..3.0) {
        let m = LevyModel::with_truncation(0.0, 1.0, JumpMeasure::PointMasses(vec![(1.0, 1.0)]), 2).unwrap();
        let basis = OrthoBasis::build(&m, 2).unwrap();
        let lattice = Lattice::new(0.0, 1.0, 2, SpatialGrid::new(-1.0, 1.0, 5).unwrap()).unwrap();
        let config = McConfig { paths: 200, substeps: 1, bsde: Default::default(), seed };
        let quad = ControlProblem::new(
            Forward::Constant(1.0), ControlDriver::zero(), Terminal::Quadratic { a: 1.0, b: 0.0, c },
            vec![0.0], 1.0, (4.0, 0.0, 0.0),
        ).unwrap();
        let est = value_dp(&quad, &m, &basis, &lattice, &config).unwrap();
        for (i, x) in lattice.grid.nodes().into_iter().enumerate() {
            prop_assert_eq!(est.w[2][i], x * x + c);
        }
        let flat = ControlProblem { terminal: Terminal::Constant(c), ..quad };
        let est = value_dp(&flat, &m, &basis, &lattice, &config).unwrap();
        prop_assert!(est.w.iter().flatten().all(|w| *w == c));
    }
}
