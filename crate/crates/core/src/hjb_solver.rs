//! Explicit finite-difference and quadrature scheme for the nonlocal HJB equation
//!
//! ```text
//! ∂_t W + min_u { 𝓛ᵘW + f(t, x, W, (𝓛^{u,(k)}W)_k, u) } = 0,   W(T, ·) = φ.
//! ```
//!
//! The stepping form of the generator moves the compensator into the drift,
//! `b̃F·D_x + ½σ²F²D²_x + Σ_q w_q [v(x + Fζ_q) − v(x)]` with `b̃ = m₁ − Σ_q w_q ζ_q`,
//! and upwinds the drift wherever central differences would lose monotonicity.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpatialGrid};
use crate::levy_model::LevyModel;
use crate::problem::ControlProblem;
use crate::quadrature::QuadratureRule;
use crate::teugels_basis::OrthoBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Differencing {
    /// Central first differences everywhere.
    Central,
    /// Central where the cell Péclet condition holds, upwind elsewhere.
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbConfig {
    /// `None` picks the smallest count that satisfies the CFL bound.
    pub time_steps: Option<usize>,
    /// Safety factor in `(0, 1]`.
    pub cfl_safety: f64,
    /// `None` uses [`QuadratureRule::default_order`].
    pub quadrature_order: Option<usize>,
    /// Clamp for the off-grid extension slope; `None` uses each slice's own Lipschitz constant.
    pub slope_bound: Option<f64>,
    pub differencing: Differencing,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            time_steps: None,
            cfl_safety: 0.9,
            quadrature_order: None,
            slope_bound: None,
            differencing: Differencing::Monotone,
        }
    }
}

/// Everything the pointwise operators need.
pub struct HjbContext<'a> {
    pub problem: &'a ControlProblem,
    pub model: &'a LevyModel,
    pub basis: &'a OrthoBasis,
    pub quad: QuadratureRule,
    /// `b̃ = m₁ − Σ w_q ζ_q`.
    drift: f64,
    /// `p_k(ζ_q)` for each `k` and node `q`.
    p_at_nodes: Vec<Vec<f64>>,
}

impl<'a> HjbContext<'a> {
    pub fn new(
        problem: &'a ControlProblem,
        model: &'a LevyModel,
        basis: &'a OrthoBasis,
        quadrature_order: Option<usize>,
    ) -> Result<Self> {
        basis.check_model(model)?;
        let order = quadrature_order.unwrap_or_else(|| QuadratureRule::default_order(model));
        let quad = QuadratureRule::for_measure(model.nu(), order)?;
        let drift = model.m1() - quad.moment(1);
        let p_at_nodes = (1..=basis.rank())
            .map(|k| quad.nodes.iter().map(|&z| basis.eval_p(k, z)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem,
            model,
            basis,
            quad,
            drift,
            p_at_nodes,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// Per-node rate bounding `1/Δt`: diffusion, drift, jump intensity and the driver's `y` slope.
    fn rate(&self, x: f64, u: f64, t: f64, h: f64) -> f64 {
        let f = self.problem.f_coeff(t, x, u);
        let diff = self.model.sigma2() * f * f / (h * h);
        let adv = (self.drift * f).abs() / h;
        diff + adv + self.quad.total_mass() + self.problem.driver.y.abs()
    }
}

/// `Σ_q w_q g_q [v(x + Fζ_q) − v(x) − D_x v·Fζ_q]` with `g ≡ 1` when `weights` is `None`.
fn compensated_integral(ctx: &HjbContext<'_>, v: &GridFunction, i: usize, f: f64, weights: Option<&[f64]>) -> f64 {
    let x = v.grid.x(i);
    let vi = v.values[i];
    let dx = v.d1(i);
    let mut acc = 0.0;
    for (q, (&z, &w)) in ctx.quad.nodes.iter().zip(&ctx.quad.weights).enumerate() {
        let g = weights.map_or(1.0, |p| p[q]);
        acc += w * g * (v.eval(x + f * z) - vi - dx * f * z);
    }
    acc
}

/// Lévy-type generator `m₁F·D_x v + ½σ²F²D²_x v + ∫[v(x + Fζ) − v − D_x v·Fζ] ν(dζ)` at node `i`.
pub fn generator_lu(ctx: &HjbContext<'_>, v: &GridFunction, i: usize, u: f64, t: f64) -> f64 {
    let x = v.grid.x(i);
    let f = ctx.problem.f_coeff(t, x, u);
    ctx.model.m1() * f * v.d1(i) + 0.5 * ctx.model.sigma2() * f * f * v.d2(i) + compensated_integral(ctx, v, i, f, None)
}

/// `δ_{k1} F·D_x v / a₁₁ + ∫[v(x + Fζ) − v − D_x v·Fζ] p_k(ζ) ν(dζ)` at node `i`, `k` one-based.
pub fn operator_luk(ctx: &HjbContext<'_>, v: &GridFunction, i: usize, u: f64, k: usize, t: f64) -> Result<f64> {
    if k == 0 || k > ctx.rank() {
        return Err(Error::BasisIndex {
            index: k,
            rank: ctx.rank(),
        });
    }
    let x = v.grid.x(i);
    let f = ctx.problem.f_coeff(t, x, u);
    let gradient = if k == 1 { f * v.d1(i) / ctx.basis.a11() } else { 0.0 };
    Ok(gradient + compensated_integral(ctx, v, i, f, Some(&ctx.p_at_nodes[k - 1])))
}

fn z_vector(ctx: &HjbContext<'_>, v: &GridFunction, i: usize, u: f64, t: f64) -> Result<Vec<f64>> {
    if !ctx.problem.driver.uses_z() {
        return Ok(vec![0.0; ctx.rank()]);
    }
    (1..=ctx.rank()).map(|k| operator_luk(ctx, v, i, u, k, t)).collect()
}

/// `𝓛ᵘv + f(t, x, v, (𝓛^{u,(k)}v)_{k ≤ K}, u)` at node `i`.
pub fn hamiltonian(ctx: &HjbContext<'_>, v: &GridFunction, i: usize, u: f64, t: f64) -> Result<f64> {
    let x = v.grid.x(i);
    let z = z_vector(ctx, v, i, u, t)?;
    Ok(generator_lu(ctx, v, i, u, t) + ctx.problem.driver_value(t, x, v.values[i], &z, u))
}

/// Hamiltonian in stepping form.
fn stepping_hamiltonian(
    ctx: &HjbContext<'_>,
    v: &GridFunction,
    i: usize,
    u: f64,
    t: f64,
    differencing: Differencing,
) -> Result<f64> {
    let x = v.grid.x(i);
    let h = v.grid.h();
    let f = ctx.problem.f_coeff(t, x, u);
    let (left, right) = v.neighbours(i);
    let vi = v.values[i];
    let a = ctx.drift * f;
    let diff = ctx.model.sigma2() * f * f;
    let d1 = match differencing {
        Differencing::Monotone if diff < a.abs() * h => {
            if a > 0.0 {
                (right - vi) / h
            } else {
                (vi - left) / h
            }
        }
        _ => (right - left) / (2.0 * h),
    };
    let d2 = (right - 2.0 * vi + left) / (h * h);
    let jumps: f64 = ctx
        .quad
        .nodes
        .iter()
        .zip(&ctx.quad.weights)
        .map(|(&z, &w)| w * (v.eval(x + f * z) - vi))
        .sum();
    let z = z_vector(ctx, v, i, u, t)?;
    Ok(a * d1 + 0.5 * diff * d2 + jumps + ctx.problem.driver_value(t, x, vi, &z, u))
}

/// Largest stable time step on `grid` at time `t`.
pub fn cfl_bound(ctx: &HjbContext<'_>, grid: &SpatialGrid, t: f64, safety: f64) -> f64 {
    let h = grid.h();
    let worst = grid
        .nodes()
        .iter()
        .flat_map(|&x| ctx.problem.controls.iter().map(move |&u| (x, u)))
        .map(|(x, u)| ctx.rate(x, u, t, h))
        .fold(0.0, f64::max);
    if worst == 0.0 {
        f64::INFINITY
    } else {
        safety / worst
    }
}

fn slice_function(grid: SpatialGrid, values: Vec<f64>, config: &HjbConfig) -> Result<GridFunction> {
    match config.slope_bound {
        Some(b) => GridFunction::new(grid, values, b),
        None => GridFunction::with_fitted_bound(grid, values),
    }
}

/// `v(t) = v(t + Δt) + Δt · min_u H(t + Δt, x, v(t + Δt), …, u)` with the
/// minimizing control index per node (lowest index on ties).
pub fn step_backward(
    ctx: &HjbContext<'_>,
    v_next: &GridFunction,
    t: f64,
    dt: f64,
    config: &HjbConfig,
) -> Result<(GridFunction, Vec<usize>)> {
    let t_next = t + dt;
    let bound = cfl_bound(ctx, &v_next.grid, t_next, config.cfl_safety.min(1.0));
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound });
    }
    let controls = &ctx.problem.controls;
    let rows = (0..v_next.grid.n_nodes)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for (ui, &u) in controls.iter().enumerate() {
                let h = stepping_hamiltonian(ctx, v_next, i, u, t_next, config.differencing)?;
                if h < best.0 {
                    best = (h, ui);
                }
            }
            let value = v_next.values[i] + dt * best.0;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("HJB value at node {i}, t = {t}")));
            }
            Ok((value, best.1))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, policy): (Vec<f64>, Vec<usize>) = rows.into_iter().unzip();
    Ok((slice_function(v_next.grid, values, config)?, policy))
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub times: Vec<f64>,
    pub grid: SpatialGrid,
    /// `values[n][i]` at `(times[n], x_i)`; the last row is `φ`.
    pub values: Vec<Vec<f64>>,
    /// Minimizing control index for each step `n` (row `n` covers `[t_n, t_{n+1}]`).
    pub policy: Vec<Vec<usize>>,
}

impl HjbSolution {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Linear interpolation in time and space.
    pub fn value_at(&self, t: f64, x: f64) -> Result<f64> {
        let n = self.times.len() - 1;
        let t0 = self.times[0];
        let pos = ((t - t0) / self.dt()).clamp(0.0, n as f64);
        let a = (pos.floor() as usize).min(n.saturating_sub(1));
        let w = pos - a as f64;
        let fa = GridFunction::with_fitted_bound(self.grid, self.values[a].clone())?.eval(x);
        if w == 0.0 {
            return Ok(fa);
        }
        let fb = GridFunction::with_fitted_bound(self.grid, self.values[a + 1].clone())?.eval(x);
        Ok((1.0 - w) * fa + w * fb)
    }
}

/// Time steps needed on `grid` under `config`.
pub fn time_steps_for(ctx: &HjbContext<'_>, grid: &SpatialGrid, config: &HjbConfig) -> usize {
    if let Some(n) = config.time_steps {
        return n.max(1);
    }
    let horizon = ctx.problem.horizon;
    let bound = cfl_bound(ctx, grid, horizon, config.cfl_safety.min(1.0));
    if bound.is_infinite() {
        1
    } else {
        ((horizon / bound) * (1.0 + 1e-9)).ceil().max(1.0) as usize
    }
}

/// March from `φ` at the horizon down to time zero.
pub fn solve(
    problem: &ControlProblem,
    model: &LevyModel,
    basis: &OrthoBasis,
    grid: &SpatialGrid,
    config: &HjbConfig,
) -> Result<HjbSolution> {
    if !(config.cfl_safety > 0.0 && config.cfl_safety <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "CFL safety factor must lie in (0, 1] (got {})",
            config.cfl_safety
        )));
    }
    let ctx = HjbContext::new(problem, model, basis, config.quadrature_order)?;
    let steps = time_steps_for(&ctx, grid, config);
    let dt = problem.horizon / steps as f64;
    let times: Vec<f64> = (0..=steps)
        .map(|n| if n == steps { problem.horizon } else { n as f64 * dt })
        .collect();
    let terminal: Vec<f64> = grid.nodes().iter().map(|&x| problem.phi(x)).collect();
    let mut v = slice_function(*grid, terminal.clone(), config)?;
    let mut values = vec![Vec::new(); steps + 1];
    let mut policy = vec![Vec::new(); steps];
    values[steps] = terminal;
    for n in (0..steps).rev() {
        let (next, pol) = step_backward(&ctx, &v, times[n], times[n + 1] - times[n], config)?;
        values[n] = next.values.clone();
        policy[n] = pol;
        v = next;
    }
    Ok(HjbSolution {
        times,
        grid: *grid,
        values,
        policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub dt: f64,
    pub error: f64,
}

/// Successive grid halvings with CFL-coupled time steps; the error is the
/// largest deviation from `oracle(x)` at time zero over nodes in `[a, b]`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    problem: &ControlProblem,
    model: &LevyModel,
    basis: &OrthoBasis,
    grid: &SpatialGrid,
    config: &HjbConfig,
    levels: usize,
    oracle: &dyn Fn(f64) -> f64,
    interior: (f64, f64),
) -> Result<Vec<ConvergenceRow>> {
    let ctx = HjbContext::new(problem, model, basis, config.quadrature_order)?;
    let mut rows = Vec::with_capacity(levels);
    let mut g = *grid;
    let mut steps = time_steps_for(&ctx, &g, config);
    for level in 0..levels {
        if level > 0 {
            g = g.refined();
            let auto = time_steps_for(&ctx, &g, &HjbConfig {
                time_steps: None,
                ..*config
            });
            steps = (2 * steps).max(auto);
        }
        let sol = solve(problem, model, basis, &g, &HjbConfig {
            time_steps: Some(steps),
            ..*config
        })?;
        let error = g
            .nodes()
            .iter()
            .zip(&sol.values[0])
            .filter(|(x, _)| **x >= interior.0 - 1e-12 && **x <= interior.1 + 1e-12)
            .map(|(&x, &w)| (w - oracle(x)).abs())
            .fold(0.0, f64::max);
        rows.push(ConvergenceRow {
            h: g.h(),
            dt: sol.dt(),
            error,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::JumpMeasure;
    use crate::problem::{ControlDriver, Forward, Terminal};

    fn mixed() -> (LevyModel, OrthoBasis) {
        let m = LevyModel::with_truncation(0.0, 1.0, JumpMeasure::PointMasses(vec![(1.0, 1.0)]), 2).unwrap();
        let b = OrthoBasis::build(&m, 2).unwrap();
        (m, b)
    }

    fn unit_problem(driver: ControlDriver, controls: Vec<f64>) -> ControlProblem {
        ControlProblem::new(
            Forward::Constant(1.0),
            driver,
            Terminal::Constant(0.0),
            controls,
            1.0,
            (1.0, 1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn operators_on_polynomials() {
        let (m, b) = mixed();
        let p = unit_problem(ControlDriver::zero(), vec![0.0]);
        let ctx = HjbContext::new(&p, &m, &b, None).unwrap();
        let g = SpatialGrid::new(-5.0, 5.0, 101).unwrap();
        let c = GridFunction::from_fn(g, |_| 2.0, 0.0).unwrap();
        let lin = GridFunction::from_fn(g, |x| 3.0 * x, 3.0).unwrap();
        let sq = GridFunction::from_fn(g, |x| x * x, 10.0).unwrap();
        let m2 = m.moment(2).unwrap();
        for i in [10, 50, 73] {
            let x = g.x(i);
            assert_eq!(generator_lu(&ctx, &c, i, 0.0, 0.0), 0.0);
            assert!((generator_lu(&ctx, &lin, i, 0.0, 0.0) - 3.0 * m.m1()).abs() < 1e-10);
            assert!((operator_luk(&ctx, &lin, i, 0.0, 1, 0.0).unwrap() - 3.0 / b.a11()).abs() < 1e-10);
            assert!(operator_luk(&ctx, &lin, i, 0.0, 2, 0.0).unwrap().abs() < 1e-10);
            let want = 2.0 * m.m1() * x + m.sigma2() + m2;
            assert!((generator_lu(&ctx, &sq, i, 0.0, 0.0) - want).abs() < 1e-6);
            let oracle = 2.0 * x / b.a11() + b.eval_p(1, 1.0).unwrap();
            assert!((operator_luk(&ctx, &sq, i, 0.0, 1, 0.0).unwrap() - oracle).abs() < 1e-6);
        }
        assert!(matches!(operator_luk(&ctx, &lin, 5, 0.0, 3, 0.0), Err(Error::BasisIndex { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let (m, b) = mixed();
        let g = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
        let c = GridFunction::from_fn(g, |_| 2.0, 0.0).unwrap();
        let p = unit_problem(ControlDriver::zero(), vec![0.0]);
        let ctx = HjbContext::new(&p, &m, &b, None).unwrap();
        assert_eq!(hamiltonian(&ctx, &c, 7, 0.0, 0.0).unwrap(), 0.0);
        let p = unit_problem(
            ControlDriver {
                y: -0.5,
                ..ControlDriver::zero()
            },
            vec![0.0],
        );
        let ctx = HjbContext::new(&p, &m, &b, None).unwrap();
        assert!((hamiltonian(&ctx, &c, 7, 0.0, 0.0).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constants_are_steady_and_ties_pick_first() {
        let (m, b) = mixed();
        let p = unit_problem(ControlDriver::zero(), vec![0.5, -0.5]);
        let p = ControlProblem {
            forward: Forward::AffineControl {
                c0: 1.0,
                cx: 0.0,
                cu: 0.0,
            },
            terminal: Terminal::Constant(1.5),
            ..p
        };
        let g = SpatialGrid::new(-3.0, 3.0, 31).unwrap();
        let sol = solve(&p, &m, &b, &g, &HjbConfig::default()).unwrap();
        assert!(sol.values.iter().flatten().all(|&v| (v - 1.5).abs() < 1e-14));
        assert!(sol.policy.iter().flatten().all(|&i| i == 0));
    }

    #[test]
    fn refuses_unstable_steps() {
        let (m, b) = mixed();
        let p = unit_problem(ControlDriver::zero(), vec![0.0]);
        let g = SpatialGrid::new(-3.0, 3.0, 301).unwrap();
        let cfg = HjbConfig {
            time_steps: Some(2),
            ..HjbConfig::default()
        };
        assert!(matches!(solve(&p, &m, &b, &g, &cfg), Err(Error::Cfl { .. })));
    }

    #[test]
    fn one_step_linear_expansion() {
        let m = LevyModel::with_truncation(
            0.2,
            0.01,
            JumpMeasure::PointMasses(vec![(0.1, 1.0), (-0.1, 1.0)]),
            2,
        )
        .unwrap();
        let b = OrthoBasis::build(&m, 2).unwrap();
        let p = ControlProblem::new(
            Forward::Linear(1.0),
            ControlDriver::zero(),
            Terminal::Linear {
                slope: 1.0,
                intercept: 0.0,
            },
            vec![0.0],
            1.0,
            (1.0, 0.0, 0.0),
        )
        .unwrap();
        let g = SpatialGrid::new(0.0, 4.0, 81).unwrap();
        let ctx = HjbContext::new(&p, &m, &b, None).unwrap();
        let v = GridFunction::from_fn(g, |x| x, 1.0).unwrap();
        let dt = 0.5 * cfl_bound(&ctx, &g, 1.0, 1.0);
        let (next, _) = step_backward(&ctx, &v, 1.0 - dt, dt, &HjbConfig::default()).unwrap();
        for (i, x) in g.nodes().iter().enumerate() {
            assert!((next.values[i] - x * (1.0 + 0.2 * dt)).abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_step_is_monotone() {
        let (m, b) = mixed();
        let p = ControlProblem::new(
            Forward::AffineControl {
                c0: 0.0,
                cx: 0.0,
                cu: 1.0,
            },
            ControlDriver {
                y: -0.3,
                ..ControlDriver::zero()
            },
            Terminal::Quadratic { a: 1.0, b: 0.0, c: 0.0 },
            vec![-1.0, 1.0],
            1.0,
            (8.0, 0.3, 0.0),
        )
        .unwrap();
        let g = SpatialGrid::new(-4.0, 4.0, 81).unwrap();
        let ctx = HjbContext::new(&p, &m, &b, None).unwrap();
        let cfg = HjbConfig::default();
        let base = GridFunction::from_fn(g, |x| x * x, 100.0).unwrap();
        let dt = cfl_bound(&ctx, &g, 1.0, 0.9);
        let (a, _) = step_backward(&ctx, &base, 1.0 - dt, dt, &cfg).unwrap();
        for seed in 0..5u64 {
            let bumped: Vec<f64> = base
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.01 * (((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 1000.0))
                .collect();
            let bumped = GridFunction::new(g, bumped, 100.0).unwrap();
            let (c, _) = step_backward(&ctx, &bumped, 1.0 - dt, dt, &cfg).unwrap();
            // interior nodes whose jump targets stay on the grid
            for i in 11..70 {
                assert!(c.values[i] >= a.values[i] - 1e-12, "node {i}");
            }
        }
    }
}
