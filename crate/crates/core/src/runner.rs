//! Subcommand orchestration: each run writes its CSVs and a `manifest.json`.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::acceptance::{self, discrepancy_table, Settings};
use crate::bsde_solver::{solve_backward, BsdeSpec, Ensemble};
use crate::control_value::value_dp;
use crate::error::{Error, Result};
use crate::hjb_solver;
use crate::output::{real, RunManifest, Table};
use crate::path_sim::{bracket_matrix, simulate_indexed, teugels_increments, TimeGrid};
use crate::scenario::Scenario;
use crate::stats::MeanStderr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Basis,
    Simulate,
    Bsde,
    ValueMc,
    Hjb,
    Compare,
    Accept,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Basis => "basis",
            Subcommand::Simulate => "simulate",
            Subcommand::Bsde => "bsde",
            Subcommand::ValueMc => "value-mc",
            Subcommand::Hjb => "hjb",
            Subcommand::Compare => "compare",
            Subcommand::Accept => "accept",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: RunManifest,
    /// False when a comparison or acceptance check failed.
    pub passed: bool,
    /// Human-readable lines for the terminal.
    pub lines: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    manifest: RunManifest,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, table: &Table) -> Result<()> {
        let digest = table.write(&self.dir.join(name))?;
        self.manifest.outputs.insert(name.to_string(), digest);
        Ok(())
    }
}

pub fn run(sub: Subcommand, scenario: &Scenario, out: &Path) -> Result<RunReport> {
    scenario.require(sub.name())?;
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let mut w = Writer {
        dir: out,
        manifest: RunManifest::new(sub.name(), scenario.digest.clone()),
    };
    let (passed, lines) = match sub {
        Subcommand::Basis => basis(scenario, &mut w)?,
        Subcommand::Simulate => simulate(scenario, &mut w)?,
        Subcommand::Bsde => bsde(scenario, &mut w)?,
        Subcommand::ValueMc => value_mc(scenario, &mut w)?,
        Subcommand::Hjb => hjb(scenario, &mut w)?,
        Subcommand::Compare => compare(scenario, &mut w)?,
        Subcommand::Accept => accept(scenario, &mut w)?,
    };
    w.manifest.duration_seconds = start.elapsed().as_secs_f64();
    w.manifest.write(&out.join("manifest.json"))?;
    Ok(RunReport {
        manifest: w.manifest,
        passed,
        lines,
    })
}

type Outcome = (bool, Vec<String>);

fn basis(sc: &Scenario, w: &mut Writer<'_>) -> Result<Outcome> {
    let b = &sc.basis;
    let mut coeffs = Table::new(&["n", "j", "a_nj"]);
    for n in 1..=b.rank() {
        for j in 1..=n {
            coeffs.push(vec![n.to_string(), j.to_string(), real(b.coeff(n, j))]);
        }
    }
    w.put("basis.csv", &coeffs)?;
    let defect = b.verify_orthonormal(&sc.model)?;
    let mut check = Table::new(&["quantity", "value"]);
    check.push(vec!["rank".into(), b.rank().to_string()]);
    check.push(vec!["a11".into(), real(b.a11())]);
    check.push(vec!["orthonormal_defect".into(), real(defect)]);
    check.push(vec!["m1".into(), real(sc.model.m1())]);
    w.put("basis_check.csv", &check)?;
    Ok((
        true,
        vec![format!("rank {}, orthonormality defect {defect:.3e}", b.rank())],
    ))
}

fn simulate(sc: &Scenario, w: &mut Writer<'_>) -> Result<Outcome> {
    let p = sc.paths;
    let grid = TimeGrid::new(0.0, p.horizon, p.steps)?;
    let times = grid.times();
    // cumulative L at every grid time, per path
    let levels: Vec<Vec<f64>> = (0..p.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = simulate_indexed(&sc.model, &grid, p.seed, i);
            let mut acc = 0.0;
            std::iter::once(0.0)
                .chain(path.increments().into_iter().map(|d| {
                    acc += d;
                    acc
                }))
                .collect()
        })
        .collect();

    let mut summary = Table::new(&["step", "t", "mean_l", "stderr", "m1_t"]);
    for (s, &t) in times.iter().enumerate() {
        let col: Vec<f64> = levels.iter().map(|l| l[s]).collect();
        let ms = MeanStderr::from_samples(&col);
        summary.push(vec![
            s.to_string(),
            real(t),
            real(ms.mean),
            real(ms.stderr),
            real(sc.model.m1() * t),
        ]);
    }
    w.put("paths_summary.csv", &summary)?;

    let k = sc.basis.rank();
    let mut header = vec!["path".to_string(), "step".into(), "t".into(), "l".into()];
    header.extend((1..=k).map(|kk| format!("dh{kk}")));
    let mut sample = Table {
        header,
        rows: Vec::new(),
    };
    for i in 0..p.sample.min(p.paths) {
        let path = simulate_indexed(&sc.model, &grid, p.seed, i as u64);
        let incr = teugels_increments(&path, &sc.basis, &sc.model)?;
        for (s, &t) in times.iter().enumerate() {
            let mut row = vec![i.to_string(), s.to_string(), real(t), real(levels[i][s])];
            row.extend((1..=k).map(|kk| if s == 0 { String::new() } else { real(incr.dh(s - 1, kk)) }));
            sample.push(row);
        }
    }
    w.put("paths_sample.csv", &sample)?;

    let mut lines = vec![format!(
        "{} paths of {} steps; mean L_T {:.6} against m1 T {:.6}",
        p.paths,
        p.steps,
        MeanStderr::from_samples(&levels.iter().map(|l| l[p.steps]).collect::<Vec<_>>()).mean,
        sc.model.m1() * p.horizon
    )];
    if p.paths >= 100 {
        let bm = bracket_matrix(&sc.model, &sc.basis, &grid, p.paths, p.seed)?;
        let mut t = Table::new(&["i", "j", "bracket_over_t", "stderr"]);
        for i in 1..=k {
            for j in 1..=k {
                let e = bm.get(i, j);
                t.push(vec![i.to_string(), j.to_string(), real(e.mean), real(e.stderr)]);
            }
        }
        w.put("bracket.csv", &t)?;
        lines.push(format!("bracket matrix over {k} Teugels martingales written"));
    }
    Ok((true, lines))
}

fn bsde(sc: &Scenario, w: &mut Writer<'_>) -> Result<Outcome> {
    let cfg = sc.bsde.as_ref().expect("checked by require");
    let p = sc.paths;
    let grid = TimeGrid::new(0.0, p.horizon, p.steps)?;
    let ens = Ensemble::levy(&sc.model, &sc.basis, &grid, cfg.x0, p.paths, p.seed)?;
    let phi = |x: f64| cfg.terminal.eval(x);
    let sol = solve_backward(
        BsdeSpec {
            terminal: &phi,
            driver: &cfg.driver,
        },
        &ens,
        &cfg.config,
    )?;
    let mut t = Table::new(&["step", "t", "y_mean", "y_stderr"]);
    for (s, &time) in sol.times.iter().enumerate() {
        let slice = &sol.y[s * sol.n..(s + 1) * sol.n];
        let mean = slice.iter().sum::<f64>() / sol.n as f64;
        let se = if s == 0 { sol.y0.stderr } else { sol.y_stderr[s] };
        t.push(vec![s.to_string(), real(time), real(mean), real(se)]);
    }
    w.put("bsde.csv", &t)?;
    let mut z = Table::new(&["k", "z0", "stderr"]);
    for (kk, v) in sol.z0.iter().enumerate() {
        z.push(vec![(kk + 1).to_string(), real(v.mean), real(v.stderr)]);
    }
    w.put("bsde_z0.csv", &z)?;
    Ok((
        true,
        vec![format!("Y0 = {:.6} ± {:.2e}", sol.y0.mean, sol.y0.stderr)],
    ))
}

fn value_table(est: &crate::control_value::ValueEstimate, controls: &[f64]) -> Table {
    let mut t = Table::new(&["t", "x", "w", "stderr", "argmin_u"]);
    let nodes = est.lattice.grid.nodes();
    for (j, &time) in est.lattice.times.iter().enumerate() {
        for (i, &x) in nodes.iter().enumerate() {
            let u = est.policy.get(j).map_or(String::new(), |p| real(controls[p[i]]));
            t.push(vec![real(time), real(x), real(est.w[j][i]), real(est.stderr[j][i]), u]);
        }
    }
    t
}

fn estimate(sc: &Scenario) -> Result<crate::control_value::ValueEstimate> {
    let problem = sc.problem.as_ref().expect("checked by require");
    let lattice = sc.lattice.as_ref().expect("checked by require");
    let mc = sc.mc.expect("checked by require");
    value_dp(problem, &sc.model, &sc.basis, lattice, &mc)
}

fn value_mc(sc: &Scenario, w: &mut Writer<'_>) -> Result<Outcome> {
    let problem = sc.problem.as_ref().expect("checked by require");
    let est = estimate(sc)?;
    w.put("value_mc.csv", &value_table(&est, &problem.controls))?;
    Ok((
        true,
        vec![format!(
            "{} slices × {} nodes estimated",
            est.lattice.slices(),
            est.lattice.grid.n_nodes
        )],
    ))
}

/// Rows are thinned to about a hundred time levels.
fn hjb_table(sol: &hjb_solver::HjbSolution, controls: &[f64]) -> Table {
    let mut t = Table::new(&["t", "x", "w", "argmin_u"]);
    let last = sol.times.len() - 1;
    let stride = last.div_ceil(100).max(1);
    let nodes = sol.grid.nodes();
    for n in (0..=last).filter(|n| n % stride == 0 || *n == last) {
        for (i, &x) in nodes.iter().enumerate() {
            let u = sol.policy.get(n).map_or(String::new(), |p| real(controls[p[i]]));
            t.push(vec![real(sol.times[n]), real(x), real(sol.values[n][i]), u]);
        }
    }
    t
}

fn pde(sc: &Scenario) -> Result<hjb_solver::HjbSolution> {
    let problem = sc.problem.as_ref().expect("checked by require");
    let grid = sc.grid.as_ref().expect("checked by require");
    hjb_solver::solve(problem, &sc.model, &sc.basis, grid, &sc.hjb)
}

fn hjb(sc: &Scenario, w: &mut Writer<'_>) -> Result<Outcome> {
    let problem = sc.problem.as_ref().expect("checked by require");
    let sol = pde(sc)?;
    w.put("hjb.csv", &hjb_table(&sol, &problem.controls))?;
    Ok((
        true,
        vec![format!(
            "{} time steps of {:.3e} on {} nodes",
            sol.times.len() - 1,
            sol.dt(),
            sol.grid.n_nodes
        )],
    ))
}

fn compare(sc: &Scenario, w: &mut Writer<'_>) -> Result<Outcome> {
    let problem = sc.problem.as_ref().expect("checked by require");
    let est = estimate(sc)?;
    let sol = pde(sc)?;
    if est.lattice.times[0] != 0.0 {
        return Err(Error::InvalidArgument("compare needs the lattice to start at t = 0".into()));
    }
    w.put("value_mc.csv", &value_table(&est, &problem.controls))?;
    w.put("hjb.csv", &hjb_table(&sol, &problem.controls))?;
    let (table, ok, worst) = discrepancy_table(&est, &sol, None, &|_| true)?;
    w.put("compare.csv", &table)?;
    Ok((
        ok,
        vec![format!(
            "max |W_mc - W_pde| = {worst:.3e}; every node within 1% + 3 stderr: {ok}"
        )],
    ))
}

fn accept(sc: &Scenario, w: &mut Writer<'_>) -> Result<Outcome> {
    let settings = Settings::with_seed(sc.paths.seed);
    let first = w.dir.join("criteria");
    let second = w.dir.join("rerun");
    let mut outcomes = acceptance::run_suite(&settings, Some(&first))?;
    acceptance::run_suite(&settings, Some(&second))?;
    outcomes.push(acceptance::determinism(&first, &second)?);
    for o in outcomes.iter().filter(|o| o.id <= 11) {
        w.put(&format!("criteria/{}", o.file), &o.table)?;
    }
    let det = outcomes.last().expect("determinism outcome");
    w.put(&format!("criteria/{}", det.file), &det.table)?;
    w.put("summary.csv", &acceptance::summary_table(&outcomes))?;
    let passed = outcomes.iter().all(|o| o.passed);
    let lines = outcomes
        .iter()
        .map(|o| {
            format!(
                "[{}] {:>2} {} ({:.1}s): {}",
                if o.passed { "PASS" } else { "FAIL" },
                o.id,
                o.title,
                o.seconds,
                o.detail
            )
        })
        .collect();
    Ok((passed, lines))
}
