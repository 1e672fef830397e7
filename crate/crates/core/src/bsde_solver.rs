//! Backward induction for BSDEs driven by a truncated Teugels family,
//!
//! ```text
//! Y_t = η + ∫_t^T f(s, X_s, Y_s, Z_s) ds − Σ_k ∫_t^T Z_s^(k) dH_s^(k),
//! ```
//!
//! with conditional expectations estimated by least-squares regression on
//! polynomials of the forward state.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy_model::LevyModel;
use crate::path_sim::{simulate_indexed, teugels_increments, TimeGrid};
use crate::regression::{MartingaleRegression, StateRegression};
use crate::stats::MeanStderr;
use crate::teugels_basis::OrthoBasis;

/// Generator `f(t, x, y, z)` of a BSDE.
pub trait Driver: Sync {
    fn eval(&self, t: f64, x: f64, y: f64, z: &[f64]) -> f64;

    /// `γ(t)` when the driver decomposes as `f¹(t, x, y) + Σ_k γ_k(t) z_k`.
    fn z_weights(&self, _t: f64) -> Option<Vec<f64>> {
        None
    }

    /// Declared Lipschitz constants `(L_y, L_z)`.
    fn lipschitz(&self) -> (f64, f64);
}

/// `f = c + c_t·t + c_x·x + c_y·y + Σ γ_k z_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearDriver {
    pub constant: f64,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub z: Vec<f64>,
}

impl LinearDriver {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    pub fn discount(r: f64) -> Self {
        Self {
            y: -r,
            ..Self::default()
        }
    }
}

impl Driver for LinearDriver {
    fn eval(&self, t: f64, x: f64, y: f64, z: &[f64]) -> f64 {
        let zz: f64 = self.z.iter().zip(z).map(|(g, v)| g * v).sum();
        self.constant + self.time * t + self.x * x + self.y * y + zz
    }

    fn z_weights(&self, _t: f64) -> Option<Vec<f64>> {
        Some(self.z.clone())
    }

    fn lipschitz(&self) -> (f64, f64) {
        let lz = self.z.iter().map(|g| g * g).sum::<f64>().sqrt();
        (self.y.abs(), lz)
    }
}

/// Terminal functional and generator.
#[derive(Clone, Copy)]
pub struct BsdeSpec<'a> {
    pub terminal: &'a (dyn Fn(f64) -> f64 + Sync),
    pub driver: &'a dyn Driver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `Y_s = E[Y_{s+1} + Δt f(t_s, X_s, Y_{s+1}, Z_s) | X_s]`.
    Euler,
    /// Explicit trapezoidal predictor–corrector in the driver.
    Heun,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "heun" => Ok(Scheme::Heun),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeConfig {
    pub degree: usize,
    pub scheme: Scheme,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            scheme: Scheme::Heun,
        }
    }
}

/// Forward states and Teugels increments of `n` paths, stored time-major.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub n: usize,
    pub steps: usize,
    pub k: usize,
    pub times: Vec<f64>,
    /// `states[s * n + i]`.
    pub states: Vec<f64>,
    /// `dh[(s * n + i) * k + kk]`.
    pub dh: Vec<f64>,
}

impl Ensemble {
    /// Assemble from per-path `(states, dh)` rows, where `states` has
    /// `steps + 1` entries and `dh` is `steps × k` row-major.
    pub fn from_rows(times: Vec<f64>, k: usize, rows: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let n = rows.len();
        let steps = times.len() - 1;
        if n == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one path".into()));
        }
        let mut states = vec![0.0; n * (steps + 1)];
        let mut dh = vec![0.0; n * steps * k];
        for (i, (xs, h)) in rows.iter().enumerate() {
            if xs.len() != steps + 1 || h.len() != steps * k {
                return Err(Error::InvalidArgument("ragged ensemble rows".into()));
            }
            for s in 0..=steps {
                states[s * n + i] = xs[s];
            }
            for s in 0..steps {
                let dst = (s * n + i) * k;
                dh[dst..dst + k].copy_from_slice(&h[s * k..(s + 1) * k]);
            }
        }
        Ok(Self {
            n,
            steps,
            k,
            times,
            states,
            dh,
        })
    }

    /// Paths with forward state `X_t = x0 + L_t − L_{t_start}`.
    pub fn levy(
        model: &LevyModel,
        basis: &OrthoBasis,
        grid: &TimeGrid,
        x0: f64,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        basis.check_model(model)?;
        let rows = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let path = simulate_indexed(model, grid, seed, i);
                let incr = teugels_increments(&path, basis, model)?;
                let mut xs = Vec::with_capacity(grid.steps + 1);
                let mut x = x0;
                xs.push(x);
                for d in path.increments() {
                    x += d;
                    xs.push(x);
                }
                Ok((xs, incr.dh))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(grid.times(), basis.rank(), rows)
    }

    pub fn state_slice(&self, s: usize) -> &[f64] {
        &self.states[s * self.n..(s + 1) * self.n]
    }

    pub fn dh(&self, s: usize, i: usize, kk: usize) -> f64 {
        self.dh[(s * self.n + i) * self.k + kk]
    }

    pub fn dh_row(&self, s: usize, i: usize) -> &[f64] {
        let at = (s * self.n + i) * self.k;
        &self.dh[at..at + self.k]
    }
}

/// Polynomial in the standardized state, detached from its design matrix.
#[derive(Debug, Clone)]
pub struct StatePolynomial {
    center: f64,
    scale: f64,
    coeffs: Vec<f64>,
}

impl StatePolynomial {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub times: Vec<f64>,
    pub n: usize,
    pub k: usize,
    /// `y[s * n + i]`; the last slice is the terminal functional.
    pub y: Vec<f64>,
    /// `z[s][k]` as a function of `X_s`.
    pub z: Vec<Vec<StatePolynomial>>,
    /// Standard error of the fitted `Y_s` (zero at the terminal time).
    pub y_stderr: Vec<f64>,
    pub y0: MeanStderr,
    /// Mean and standard error of `Z_0^(k)`.
    pub z0: Vec<MeanStderr>,
}

impl BsdeSolution {
    pub fn y_slice(&self, s: usize) -> &[f64] {
        &self.y[s * self.n..(s + 1) * self.n]
    }

    /// Per time: mean of Y, its stderr, and mean of ‖Z‖ (zero at the terminal time).
    pub fn summary(&self, ensemble: &Ensemble) -> Vec<(f64, f64, f64, f64)> {
        let steps = self.times.len() - 1;
        (0..=steps)
            .map(|s| {
                let ys = MeanStderr::from_samples(self.y_slice(s));
                let znorm = if s < steps {
                    let xs = ensemble.state_slice(s);
                    xs.iter()
                        .map(|&x| {
                            self.z[s]
                                .iter()
                                .map(|p| p.eval(x).powi(2))
                                .sum::<f64>()
                                .sqrt()
                        })
                        .sum::<f64>()
                        / self.n as f64
                } else {
                    0.0
                };
                let stderr = if s == 0 { self.y0.stderr } else { self.y_stderr[s] };
                (self.times[s], ys.mean, stderr, znorm)
            })
            .collect()
    }
}

/// Explicit backward scheme with regression-estimated conditional expectations.
pub fn solve_backward(spec: BsdeSpec<'_>, ens: &Ensemble, config: &BsdeConfig) -> Result<BsdeSolution> {
    let n = ens.n;
    let m = ens.steps;
    let k = ens.k;
    let mut y = vec![0.0; n * (m + 1)];
    for (slot, &x) in y[m * n..].iter_mut().zip(ens.state_slice(m)) {
        *slot = (spec.terminal)(x);
    }
    if y[m * n..].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("terminal values".into()));
    }
    let mut z_field = vec![Vec::new(); m];
    let mut y_stderr = vec![0.0; m + 1];
    let mut y0 = MeanStderr {
        mean: f64::NAN,
        stderr: f64::NAN,
        n,
    };
    let mut z0 = Vec::new();
    // Pathwise Y_T + Σ f Δt − Σ Z·ΔH; its spread gives an honest error for Y₀.
    let mut pathwise = y[m * n..].to_vec();

    for s in (0..m).rev() {
        let dt = ens.times[s + 1] - ens.times[s];
        let (t_s, t_next) = (ens.times[s], ens.times[s + 1]);
        let xs = ens.state_slice(s);
        let xs_next = ens.state_slice(s + 1);
        let reg = StateRegression::new(xs, config.degree)?;
        let (done, rest) = y.split_at_mut((s + 1) * n);
        let y_now = &mut done[s * n..];
        let y_next = &rest[..n];

        let dh = &ens.dh[s * n * k..(s + 1) * n * k];
        let mreg = MartingaleRegression::new(&reg, dh, k, dt)?;
        let (center, scale) = reg.standardization();
        let poly = |coeffs: Vec<f64>| StatePolynomial { center, scale, coeffs };

        let next_fit = mreg.fit(y_next)?;
        let z_coeffs = mreg.z_coeffs(&next_fit, dt);
        let mut z = vec![0.0; n * k];
        for (kk, c) in z_coeffs.iter().enumerate() {
            let p = poly(c.clone());
            for i in 0..n {
                z[i * k + kk] = p.eval(xs[i]);
            }
        }
        if s == 0 {
            let (_, se) = mreg.intercept_stderrs(&next_fit, y_next, dt);
            z0 = (0..k)
                .map(|kk| MeanStderr {
                    mean: (0..n).map(|i| z[i * k + kk]).sum::<f64>() / n as f64,
                    stderr: se[kk],
                    n,
                })
                .collect();
        }
        z_field[s] = z_coeffs.into_iter().map(poly).collect();
        let zi = |i: usize| &z[i * k..(i + 1) * k];

        // `final` is the fit whose intercept carries the uncertainty of `Y_s`
        let (final_fit, final_targets) = match config.scheme {
            Scheme::Euler => {
                let targets: Vec<f64> = (0..n)
                    .map(|i| y_next[i] + dt * spec.driver.eval(t_s, xs[i], y_next[i], zi(i)))
                    .collect();
                let fit = mreg.fit(&targets)?;
                for i in 0..n {
                    y_now[i] = mreg.conditional(&fit, i);
                }
                (fit, targets)
            }
            Scheme::Heun => {
                let f_next: Vec<f64> = (0..n)
                    .map(|i| spec.driver.eval(t_next, xs_next[i], y_next[i], zi(i)))
                    .collect();
                let pred_t: Vec<f64> = (0..n).map(|i| y_next[i] + dt * f_next[i]).collect();
                let pred_fit = mreg.fit(&pred_t)?;
                let half_t: Vec<f64> = (0..n).map(|i| y_next[i] + 0.5 * dt * f_next[i]).collect();
                let half_fit = mreg.fit(&half_t)?;
                for i in 0..n {
                    let pred = mreg.conditional(&pred_fit, i);
                    let corr = 0.5 * dt * spec.driver.eval(t_s, xs[i], pred, zi(i));
                    y_now[i] = mreg.conditional(&half_fit, i) + corr;
                }
                // the corrector depends on X_s only, so it adds no sampling noise
                (half_fit, half_t)
            }
        };
        y_stderr[s] = final_fit.stderr;
        if y_now.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Y at step {s}")));
        }
        for (i, w) in pathwise.iter_mut().enumerate() {
            let zdh: f64 = zi(i).iter().zip(ens.dh_row(s, i)).map(|(a, b)| a * b).sum();
            *w += dt * spec.driver.eval(t_s, xs[i], y_now[i], zi(i)) - zdh;
        }
        if s == 0 {
            let (se, _) = mreg.intercept_stderrs(&final_fit, &final_targets, dt);
            y0 = MeanStderr {
                mean: MeanStderr::from_samples(y_now).mean,
                stderr: se.max(MeanStderr::from_samples(&pathwise).stderr),
                n,
            };
        }
    }
    Ok(BsdeSolution {
        times: ens.times.clone(),
        n,
        k,
        y,
        z: z_field,
        y_stderr,
        y0,
        z0,
    })
}

/// Reference solution of `Y' = −(a(t) + b(t) Y)`, `Y_T = η`, by classical
/// Runge–Kutta on a fine grid; values are returned at `times`.
pub fn solve_linear_closed_form(
    a: &dyn Fn(f64) -> f64,
    b: &dyn Fn(f64) -> f64,
    eta: f64,
    horizon: f64,
    times: &[f64],
) -> Vec<f64> {
    let rhs = |t: f64, y: f64| -(a(t) + b(t) * y);
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&i, &j| times[j].total_cmp(&times[i]));
    let mut out = vec![0.0; times.len()];
    let (mut t, mut y) = (horizon, eta);
    for idx in order {
        let target = times[idx];
        let span = t - target;
        let sub = ((span * 2000.0).ceil() as usize).max(1);
        let h = -span / sub as f64;
        for _ in 0..sub {
            let k1 = rhs(t, y);
            let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
            let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
            let k4 = rhs(t + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        t = target;
        out[idx] = y;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub violations: usize,
    pub total: usize,
    pub fraction: f64,
    /// Largest `Y − Y'` observed (negative when the ordering holds everywhere).
    pub max_excess: f64,
    /// `Y'_0 − Y_0`.
    pub gap0: f64,
}

/// Count `Σ_k γ_k(t_s) ΔH^(k)_s ≤ −1` over the ensemble.
pub fn jump_condition_failures(driver: &dyn Driver, ens: &Ensemble) -> Result<usize> {
    let mut bad = 0;
    for s in 0..ens.steps {
        let gamma = driver.z_weights(ens.times[s]).ok_or_else(|| {
            Error::InvalidArgument("comparison requires drivers linear in z".into())
        })?;
        for i in 0..ens.n {
            let v: f64 = gamma.iter().zip(ens.dh_row(s, i)).map(|(g, h)| g * h).sum();
            if v <= -1.0 {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Solve both BSDEs on one ensemble and report where `Y` exceeds `Y'` by more
/// than three combined regression standard errors.
pub fn check_comparison(
    low: BsdeSpec<'_>,
    high: BsdeSpec<'_>,
    ens: &Ensemble,
    config: &BsdeConfig,
) -> Result<ComparisonReport> {
    let total_steps = ens.n * ens.steps;
    for spec in [&low, &high] {
        let bad = jump_condition_failures(spec.driver, ens)?;
        if bad > 0 {
            return Err(Error::JumpCondition {
                count: bad,
                total: total_steps,
            });
        }
    }
    let terminal_bad = ens
        .state_slice(ens.steps)
        .iter()
        .filter(|&&x| (low.terminal)(x) > (high.terminal)(x))
        .count();
    if terminal_bad > 0 {
        return Err(Error::InvalidArgument(format!(
            "terminal values are not ordered on {terminal_bad} paths"
        )));
    }
    let a = solve_backward(low, ens, config)?;
    let b = solve_backward(high, ens, config)?;
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for s in 0..=ens.steps {
        let (sa, sb) = if s == 0 {
            (a.y0.stderr, b.y0.stderr)
        } else {
            (a.y_stderr[s], b.y_stderr[s])
        };
        let tau = 3.0 * (sa * sa + sb * sb).sqrt();
        for (ya, yb) in a.y_slice(s).iter().zip(b.y_slice(s)) {
            let excess = ya - yb;
            max_excess = max_excess.max(excess);
            if excess > tau {
                violations += 1;
            }
        }
    }
    let total = ens.n * (ens.steps + 1);
    Ok(ComparisonReport {
        violations,
        total,
        fraction: violations as f64 / total as f64,
        max_excess,
        gap0: b.y0.mean - a.y0.mean,
    })
}

/// Ratio of `sup_t E|Y_t|² + E∫‖Z‖²dt` to `E|η|² + E∫|f(s,X_s,0,0)|²ds`.
/// Reported as a diagnostic of the L² a priori estimate, never asserted.
pub fn apriori_ratio(spec: BsdeSpec<'_>, sol: &BsdeSolution, ens: &Ensemble) -> f64 {
    let m = ens.steps;
    let sup_y2 = (0..=m)
        .map(|s| sol.y_slice(s).iter().map(|v| v * v).sum::<f64>() / ens.n as f64)
        .fold(0.0, f64::max);
    let zero = vec![0.0; ens.k];
    let mut z2 = 0.0;
    let mut f2 = 0.0;
    for s in 0..m {
        let dt = ens.times[s + 1] - ens.times[s];
        for &x in ens.state_slice(s) {
            z2 += sol.z[s].iter().map(|p| p.eval(x).powi(2)).sum::<f64>() * dt;
            f2 += spec.driver.eval(ens.times[s], x, 0.0, &zero).powi(2) * dt;
        }
    }
    let eta2 = ens
        .state_slice(m)
        .iter()
        .map(|&x| (spec.terminal)(x).powi(2))
        .sum::<f64>();
    let n = ens.n as f64;
    let denom = (eta2 + f2) / n;
    if denom == 0.0 {
        return 0.0;
    }
    (sup_y2 + z2 / n) / denom
}
