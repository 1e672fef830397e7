//! Value function of the controlled system by Monte Carlo dynamic programming.
//!
//! Time is cut into slices. On each slice and for each control the backward
//! semigroup is evaluated by a short BSDE solve whose terminal value is the
//! next slice's estimate; the value at a lattice node is the minimum over the
//! controls. All nodes and controls of a slice share one set of Lévy paths.

use rayon::prelude::*;

use crate::bsde_solver::{solve_backward, BsdeConfig, BsdeSpec, Ensemble};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpatialGrid};
use crate::levy_model::LevyModel;
use crate::path_sim::{simulate_indexed, teugels_increments, LevyPath, TimeGrid};
use crate::problem::ControlProblem;
use crate::rng::{self, label};
use crate::stats::MeanStderr;
use crate::teugels_basis::OrthoBasis;

/// Time slices `t_0 < … < t_J` crossed with a uniform state grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub times: Vec<f64>,
    pub grid: SpatialGrid,
}

impl Lattice {
    pub fn new(t_start: f64, t_end: f64, slices: usize, grid: SpatialGrid) -> Result<Self> {
        let tg = TimeGrid::new(t_start, t_end, slices)?;
        Ok(Self {
            times: tg.times(),
            grid,
        })
    }

    pub fn slices(&self) -> usize {
        self.times.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub paths: usize,
    /// BSDE steps inside one slice.
    pub substeps: usize,
    pub bsde: BsdeConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ValueEstimate {
    pub lattice: Lattice,
    pub config: McConfig,
    /// `w[j][i]` at `(t_j, x_i)`.
    pub w: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// Index into `U` of the minimizing control on slice `j` (one row per slice).
    pub policy: Vec<Vec<usize>>,
}

impl ValueEstimate {
    pub fn slice_function(&self, j: usize) -> Result<GridFunction> {
        GridFunction::with_fitted_bound(self.lattice.grid, self.w[j].clone())
    }

    pub fn value_at(&self, j: usize, x: f64) -> Result<f64> {
        Ok(self.slice_function(j)?.eval(x))
    }

    pub fn stderr_at(&self, j: usize, x: f64) -> Result<f64> {
        Ok(GridFunction::with_fitted_bound(self.lattice.grid, self.stderr[j].clone())?.eval(x))
    }
}

/// Euler scheme `X_{s+1} = X_s + F(t_s, X_s, u_s)·ΔL_s`, coefficient frozen at
/// the pre-jump state within each step.
pub fn forward_simulate(problem: &ControlProblem, policy: &[f64], x0: f64, path: &LevyPath) -> Result<Vec<f64>> {
    if policy.len() != path.steps() {
        return Err(Error::InvalidArgument(format!(
            "policy has {} entries for {} steps",
            policy.len(),
            path.steps()
        )));
    }
    let mut xs = Vec::with_capacity(path.steps() + 1);
    let mut x = x0;
    xs.push(x);
    for (s, &u) in policy.iter().enumerate() {
        x += problem.f_coeff(path.times[s], x, u) * path.increment(s);
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("forward state at step {s}")));
        }
        xs.push(x);
    }
    Ok(xs)
}

/// Lévy increments and Teugels increments of one slice's paths.
#[derive(Debug, Clone)]
pub struct SliceNoise {
    pub times: Vec<f64>,
    pub n: usize,
    pub k: usize,
    /// `dl[i][s]`.
    pub dl: Vec<Vec<f64>>,
    /// `dh[i][s * k + kk]`.
    pub dh: Vec<Vec<f64>>,
}

impl SliceNoise {
    /// Paths on `[t0, t1]` with `substeps` steps from the stream `seed`. A
    /// `refine` factor above one splits every step of the same paths by
    /// Brownian bridge, so coarse increments are sums of fine ones.
    #[allow(clippy::too_many_arguments)]
    pub fn simulate(
        model: &LevyModel,
        basis: &OrthoBasis,
        t0: f64,
        t1: f64,
        substeps: usize,
        n: usize,
        seed: u64,
        refine: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one path".into()));
        }
        basis.check_model(model)?;
        let grid = TimeGrid::new(t0, t1, substeps)?;
        let rows = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let coarse = simulate_indexed(model, &grid, seed, i);
                let path = if refine > 1 {
                    let mut r = rng::stream(seed, label::REFINE, i);
                    coarse.refine(refine, model.sigma2(), &mut r)
                } else {
                    coarse
                };
                let incr = teugels_increments(&path, basis, model)?;
                Ok((path.increments(), incr.dh, path.times))
            })
            .collect::<Result<Vec<_>>>()?;
        let times = rows[0].2.clone();
        let (dl, dh) = rows.into_iter().map(|(a, b, _)| (a, b)).unzip();
        Ok(Self {
            times,
            n,
            k: basis.rank(),
            dl,
            dh,
        })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Controlled states from `x0` under the constant control `u`, with the Teugels increments.
    pub fn ensemble(&self, problem: &ControlProblem, u: f64, x0: f64) -> Result<Ensemble> {
        let m = self.steps();
        let rows = self
            .dl
            .iter()
            .zip(&self.dh)
            .map(|(dl, dh)| {
                let mut xs = Vec::with_capacity(m + 1);
                let mut x = x0;
                xs.push(x);
                for (s, d) in dl.iter().enumerate() {
                    x += problem.f_coeff(self.times[s], x, u) * d;
                    xs.push(x);
                }
                if !x.is_finite() {
                    return Err(Error::NonFinite("controlled state".into()));
                }
                Ok((xs, dh.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::from_rows(self.times.clone(), self.k, rows)
    }
}

/// Backward semigroup `G_{t,t+δ}[ψ(X_{t+δ})]` from `x0` under control `u`,
/// plus the mean of `extra` over the terminal states.
fn semigroup_on(
    problem: &ControlProblem,
    u: f64,
    noise: &SliceNoise,
    psi: &(dyn Fn(f64) -> f64 + Sync),
    extra: Option<&GridFunction>,
    x0: f64,
    bsde: &BsdeConfig,
) -> Result<(MeanStderr, f64)> {
    let ens = noise.ensemble(problem, u, x0)?;
    let driver = problem.fixed(u);
    let sol = solve_backward(
        BsdeSpec {
            terminal: psi,
            driver: &driver,
        },
        &ens,
        bsde,
    )?;
    let carried = match extra {
        Some(g) => {
            let xs = ens.state_slice(ens.steps);
            xs.iter().map(|&x| g.eval(x)).sum::<f64>() / xs.len() as f64
        }
        None => 0.0,
    };
    Ok((sol.y0, carried))
}

/// One backward-semigroup step on `[t, t + δ]` under the constant control `u`,
/// evaluated from every point of `starts`.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_step(
    problem: &ControlProblem,
    model: &LevyModel,
    basis: &OrthoBasis,
    u: f64,
    value_next: &(dyn Fn(f64) -> f64 + Sync),
    t: f64,
    delta: f64,
    starts: &[f64],
    config: &McConfig,
) -> Result<Vec<MeanStderr>> {
    let noise = SliceNoise::simulate(model, basis, t, t + delta, config.substeps, config.paths, config.seed, 1)?;
    starts
        .par_iter()
        .map(|&x| semigroup_on(problem, u, &noise, value_next, None, x, &config.bsde).map(|r| r.0))
        .collect()
}

fn slice_seed(config: &McConfig, j: usize) -> u64 {
    rng::derive_seed(config.seed, label::SLICE, j as u64)
}

/// Minimum over controls of the semigroup applied to slice `j + 1`, at every
/// node, with the next slice's standard error carried along.
fn slice_minimum(
    problem: &ControlProblem,
    noise: &SliceNoise,
    next: &GridFunction,
    next_se: &GridFunction,
    starts: &[f64],
    bsde: &BsdeConfig,
) -> Result<Vec<(f64, f64, usize)>> {
    let nu = problem.controls.len();
    let psi = |x: f64| next.eval(x);
    let cells = (0..starts.len() * nu)
        .into_par_iter()
        .map(|c| {
            let (i, ui) = (c / nu, c % nu);
            let (y, carried) = semigroup_on(problem, problem.controls[ui], noise, &psi, Some(next_se), starts[i], bsde)?;
            Ok((y.mean, (y.stderr.powi(2) + carried.powi(2)).sqrt()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..starts.len())
        .map(|i| {
            let row = &cells[i * nu..(i + 1) * nu];
            let mut best = 0;
            for (ui, cell) in row.iter().enumerate().skip(1) {
                if cell.0 < row[best].0 {
                    best = ui;
                }
            }
            (row[best].0, row[best].1, best)
        })
        .collect())
}

/// Backward induction over the lattice slices.
pub fn value_dp(
    problem: &ControlProblem,
    model: &LevyModel,
    basis: &OrthoBasis,
    lattice: &Lattice,
    config: &McConfig,
) -> Result<ValueEstimate> {
    basis.check_model(model)?;
    let slices = lattice.slices();
    let nodes = lattice.grid.nodes();
    let mut w = vec![Vec::new(); slices + 1];
    let mut se = vec![Vec::new(); slices + 1];
    let mut policy = vec![Vec::new(); slices];
    w[slices] = nodes.iter().map(|&x| problem.phi(x)).collect();
    se[slices] = vec![0.0; nodes.len()];
    for j in (0..slices).rev() {
        let next = GridFunction::with_fitted_bound(lattice.grid, w[j + 1].clone())?;
        let next_se = GridFunction::with_fitted_bound(lattice.grid, se[j + 1].clone())?;
        let noise = SliceNoise::simulate(
            model,
            basis,
            lattice.times[j],
            lattice.times[j + 1],
            config.substeps,
            config.paths,
            slice_seed(config, j),
            1,
        )?;
        let cells = slice_minimum(problem, &noise, &next, &next_se, &nodes, &config.bsde)?;
        w[j] = cells.iter().map(|c| c.0).collect();
        se[j] = cells.iter().map(|c| c.1).collect();
        policy[j] = cells.iter().map(|c| c.2).collect();
        if se[j].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("standard errors on slice {j}")));
        }
    }
    Ok(ValueEstimate {
        lattice: lattice.clone(),
        config: *config,
        w,
        stderr: se,
        policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DppResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub stderr: f64,
    pub delta: f64,
}

/// `|W(t_j, x) − min_u G_{t_j, t_{j+1}}[W(t_{j+1}, X)]|`. The right side reuses
/// the paths behind slice `j` of `estimate`, refined by `refine`, so the two
/// sides share their Monte Carlo noise.
pub fn dpp_residual(
    problem: &ControlProblem,
    model: &LevyModel,
    basis: &OrthoBasis,
    estimate: &ValueEstimate,
    j: usize,
    x: f64,
    refine: usize,
) -> Result<DppResidual> {
    let lat = &estimate.lattice;
    if j >= lat.slices() {
        return Err(Error::InvalidArgument(format!(
            "slice {j} has no successor in a lattice of {} slices",
            lat.slices()
        )));
    }
    let cfg = &estimate.config;
    let lhs = estimate.value_at(j, x)?;
    let lhs_se = estimate.stderr_at(j, x)?;
    let next = estimate.slice_function(j + 1)?;
    let next_se = GridFunction::with_fitted_bound(lat.grid, estimate.stderr[j + 1].clone())?;
    let noise = SliceNoise::simulate(
        model,
        basis,
        lat.times[j],
        lat.times[j + 1],
        cfg.substeps,
        cfg.paths,
        slice_seed(cfg, j),
        refine.max(1),
    )?;
    let (rhs, rhs_se, _) = slice_minimum(problem, &noise, &next, &next_se, &[x], &cfg.bsde)?[0];
    Ok(DppResidual {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        stderr: (lhs_se * lhs_se + rhs_se * rhs_se).sqrt(),
        delta: lat.times[j + 1] - lat.times[j],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    /// `max |ΔW/Δx|` on each slice.
    pub c_x_per_slice: Vec<f64>,
    pub c_x: f64,
    /// `max |ΔW| / ((1 + |x|)·|Δt|^{1/2})` over node pairs in time.
    pub c_t: f64,
}

impl RegularityReport {
    pub fn is_finite(&self) -> bool {
        self.c_x.is_finite() && self.c_t.is_finite()
    }
}

pub fn regularity_diagnostics(estimate: &ValueEstimate) -> Result<RegularityReport> {
    let lat = &estimate.lattice;
    if lat.grid.n_nodes < 5 || lat.times.len() < 5 {
        return Err(Error::InvalidArgument(
            "regularity diagnostics need at least 5 nodes per axis".into(),
        ));
    }
    let h = lat.grid.h();
    let c_x_per_slice: Vec<f64> = estimate
        .w
        .iter()
        .map(|row| row.windows(2).map(|p| ((p[1] - p[0]) / h).abs()).fold(0.0, f64::max))
        .collect();
    let c_x = c_x_per_slice.iter().copied().fold(0.0, f64::max);
    let mut c_t: f64 = 0.0;
    let nodes = lat.grid.nodes();
    for a in 0..lat.times.len() {
        for b in a + 1..lat.times.len() {
            let dt = (lat.times[b] - lat.times[a]).sqrt();
            for (i, x) in nodes.iter().enumerate() {
                c_t = c_t.max((estimate.w[b][i] - estimate.w[a][i]).abs() / ((1.0 + x.abs()) * dt));
            }
        }
    }
    Ok(RegularityReport {
        c_x_per_slice,
        c_x,
        c_t,
    })
}
