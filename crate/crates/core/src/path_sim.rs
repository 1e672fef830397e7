//! Exact simulation of finite-activity Lévy paths with explicit jump records,
//! and the power-jump / Teugels increments derived from them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy_model::LevyModel;
use crate::rng::{self, label};
use crate::stats::MeanStderr;
use crate::teugels_basis::OrthoBasis;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// One discretized path of `L` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyPath {
    pub times: Vec<f64>,
    /// Per-step `σ ΔW`.
    pub diffusion: Vec<f64>,
    /// Sorted jumps in `(t_start, T]`.
    pub jumps: Vec<Jump>,
    /// `jumps[offsets[s]..offsets[s + 1]]` fall in step `s`.
    pub offsets: Vec<usize>,
    pub drift_rate: f64,
}

impl LevyPath {
    pub fn steps(&self) -> usize {
        self.diffusion.len()
    }

    pub fn dt(&self, s: usize) -> f64 {
        self.times[s + 1] - self.times[s]
    }

    pub fn step_jumps(&self, s: usize) -> &[Jump] {
        &self.jumps[self.offsets[s]..self.offsets[s + 1]]
    }

    /// ΔL per step: drift + diffusion + jump sum.
    pub fn increments(&self) -> Vec<f64> {
        (0..self.steps()).map(|s| self.increment(s)).collect()
    }

    pub fn increment(&self, s: usize) -> f64 {
        let jumps: f64 = self.step_jumps(s).iter().map(|j| j.size).sum();
        self.drift_rate * self.dt(s) + self.diffusion[s] + jumps
    }

    /// `L_T − L_{t_start}`.
    pub fn terminal_value(&self) -> f64 {
        self.increments().iter().sum()
    }

    /// The same path on a grid `factor` times finer. Diffusion increments are
    /// split by Brownian bridge sampling; drift and jumps are unchanged, so the
    /// coarse increments are sums of the fine ones.
    pub fn refine(&self, factor: usize, sigma2: f64, rng: &mut ChaCha8Rng) -> LevyPath {
        let factor = factor.max(1);
        let m = self.steps();
        let mut times = Vec::with_capacity(m * factor + 1);
        let mut diffusion = Vec::with_capacity(m * factor);
        times.push(self.times[0]);
        for s in 0..m {
            let t0 = self.times[s];
            let dt = self.dt(s);
            let sub = dt / factor as f64;
            let mut remaining = self.diffusion[s];
            for r in 0..factor {
                let left = dt - r as f64 * sub;
                let piece = if r + 1 == factor {
                    remaining
                } else {
                    let mean = remaining * sub / left;
                    let var = sigma2 * sub * (left - sub) / left;
                    let z: f64 = StandardNormal.sample(rng);
                    mean + var.max(0.0).sqrt() * z
                };
                remaining -= piece;
                diffusion.push(piece);
                times.push(if r + 1 == factor {
                    self.times[s + 1]
                } else {
                    t0 + (r + 1) as f64 * sub
                });
            }
        }
        let offsets = bucket_jumps(&self.jumps, &times);
        LevyPath {
            times,
            diffusion,
            jumps: self.jumps.clone(),
            offsets,
            drift_rate: self.drift_rate,
        }
    }
}

fn bucket_jumps(jumps: &[Jump], times: &[f64]) -> Vec<usize> {
    let steps = times.len() - 1;
    let mut offsets = vec![0; steps + 1];
    let mut idx = 0;
    for s in 0..steps {
        offsets[s] = idx;
        while idx < jumps.len() && (jumps[idx].time <= times[s + 1] || s + 1 == steps) {
            idx += 1;
        }
    }
    offsets[steps] = jumps.len();
    offsets
}

/// Uniform time grid `t_start = t_0 < … < t_M = t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > t_start) || steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs t_end > t_start and steps >= 1 (got [{t_start}, {t_end}], {steps})"
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            steps,
        })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut t: Vec<f64> = (0..=self.steps).map(|i| self.t_start + i as f64 * dt).collect();
        t[self.steps] = self.t_end;
        t
    }
}

/// Simulate one path from its own random stream.
pub fn simulate_with(model: &LevyModel, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> LevyPath {
    let times = grid.times();
    let sigma = model.sigma2().sqrt();
    let mass = model.nu().total_mass();
    let poisson = (mass > 0.0).then(|| Poisson::new(mass * grid.dt()).expect("positive rate"));
    let mut diffusion = Vec::with_capacity(grid.steps);
    let mut jumps = Vec::new();
    let mut offsets = Vec::with_capacity(grid.steps + 1);
    for s in 0..grid.steps {
        offsets.push(jumps.len());
        let dt = times[s + 1] - times[s];
        let z: f64 = StandardNormal.sample(rng);
        diffusion.push(sigma * dt.sqrt() * z);
        if let Some(p) = &poisson {
            let count = p.sample(rng) as usize;
            let start = jumps.len();
            for _ in 0..count {
                // (t_s, t_{s+1}]
                let u: f64 = 1.0 - rng.random::<f64>();
                jumps.push(Jump {
                    time: times[s] + u * dt,
                    size: model.nu().sample_jump(rng),
                });
            }
            jumps[start..].sort_by(|a, b| a.time.total_cmp(&b.time));
        }
    }
    offsets.push(jumps.len());
    LevyPath {
        times,
        diffusion,
        jumps,
        offsets,
        drift_rate: model.drift_rate(),
    }
}

/// Path number `index` of the ensemble keyed by `seed`.
pub fn simulate_indexed(model: &LevyModel, grid: &TimeGrid, seed: u64, index: u64) -> LevyPath {
    let mut r = rng::stream(seed, label::LEVY_PATH, index);
    simulate_with(model, grid, &mut r)
}

/// Single path; identical to path 0 of the ensemble with the same seed.
pub fn simulate(model: &LevyModel, t_start: f64, t_end: f64, steps: usize, seed: u64) -> Result<LevyPath> {
    let grid = TimeGrid::new(t_start, t_end, steps)?;
    Ok(simulate_indexed(model, &grid, seed, 0))
}

pub fn simulate_ensemble(model: &LevyModel, grid: &TimeGrid, n: usize, seed: u64) -> Vec<LevyPath> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_indexed(model, grid, seed, i))
        .collect()
}

/// Compensated power-jump and Teugels increments of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct TeugelsIncrements {
    pub dt: Vec<f64>,
    /// `steps × i_max`, column `i − 1` holds ΔY^(i).
    pub dy: Vec<f64>,
    /// `steps × K`, column `k − 1` holds ΔH^(k).
    pub dh: Vec<f64>,
    /// `K × K` realized covariation `[H^(i), H^(j)]` over the whole path.
    pub realized: Vec<f64>,
    pub i_max: usize,
    pub k: usize,
    pub horizon: f64,
    model_id: u64,
}

impl TeugelsIncrements {
    pub fn steps(&self) -> usize {
        self.dt.len()
    }

    pub fn dy(&self, s: usize, i: usize) -> f64 {
        self.dy[s * self.i_max + i - 1]
    }

    pub fn dh(&self, s: usize, k: usize) -> f64 {
        self.dh[s * self.k + k - 1]
    }

    pub fn realized(&self, i: usize, j: usize) -> f64 {
        self.realized[(i - 1) * self.k + j - 1]
    }
}

/// ΔY^(1) = ΔL − m₁Δt, ΔY^(i) = Σ(ΔL)^i − m_iΔt over jumps, ΔH^(k) = Σ a_kj ΔY^(j).
pub fn teugels_increments(
    path: &LevyPath,
    basis: &OrthoBasis,
    model: &LevyModel,
) -> Result<TeugelsIncrements> {
    basis.check_model(model)?;
    let steps = path.steps();
    let i_max = model.i_max();
    let k = basis.rank();
    let moments: Vec<f64> = (1..=i_max).map(|i| model.moment(i)).collect::<Result<_>>()?;
    let mut dy = vec![0.0; steps * i_max];
    let mut dh = vec![0.0; steps * k];
    let mut dt_v = Vec::with_capacity(steps);
    for s in 0..steps {
        let dt = path.dt(s);
        dt_v.push(dt);
        let row = &mut dy[s * i_max..(s + 1) * i_max];
        row[0] = path.increment(s) - moments[0] * dt;
        for (i, slot) in row.iter_mut().enumerate().skip(1) {
            let power = (i + 1) as i32;
            let sum: f64 = path.step_jumps(s).iter().map(|j| j.size.powi(power)).sum();
            *slot = sum - moments[i] * dt;
        }
        for kk in 1..=k {
            dh[s * k + kk - 1] = basis
                .row(kk)
                .iter()
                .zip(row.iter())
                .map(|(a, y)| a * y)
                .sum();
        }
    }
    let horizon = path.times[steps] - path.times[0];
    let realized = realized_covariation(path, basis, model.sigma2(), horizon);
    Ok(TeugelsIncrements {
        dt: dt_v,
        dy,
        dh,
        realized,
        i_max,
        k,
        horizon,
        model_id: model.id(),
    })
}

/// Σ_jumps p_i(ΔL) p_j(ΔL) + a_i1 a_j1 σ² (T − t_start).
fn realized_covariation(path: &LevyPath, basis: &OrthoBasis, sigma2: f64, horizon: f64) -> Vec<f64> {
    let k = basis.rank();
    let mut out = vec![0.0; k * k];
    let mut p = vec![0.0; k];
    for jump in &path.jumps {
        for (n, slot) in p.iter_mut().enumerate() {
            *slot = basis.p_unchecked(n + 1, jump.size);
        }
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] += p[i] * p[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] += basis.coeff(i + 1, 1) * basis.coeff(j + 1, 1) * sigma2 * horizon;
        }
    }
    out
}

/// Invert the `i = 1` relation: ΔL = ΔH^(1)/a₁₁ + m₁Δt.
pub fn reconstruct_l(incr: &TeugelsIncrements, basis: &OrthoBasis, model: &LevyModel) -> Result<Vec<f64>> {
    basis.check_model(model)?;
    if incr.model_id != model.id() {
        return Err(Error::BasisModelMismatch);
    }
    let a11 = basis.a11();
    let m1 = model.m1();
    Ok((0..incr.steps())
        .map(|s| incr.dh(s, 1) / a11 + m1 * incr.dt[s])
        .collect())
}

/// Monte Carlo estimate of `[H^(i), H^(j)]_T / T`, whose expectation is δ_ij.
pub fn empirical_bracket(ensemble: &[TeugelsIncrements], i: usize, j: usize) -> Result<MeanStderr> {
    if ensemble.len() < 100 {
        return Err(Error::InvalidArgument(format!(
            "bracket estimate needs at least 100 paths, got {}",
            ensemble.len()
        )));
    }
    let k = ensemble[0].k;
    if i == 0 || j == 0 || i > k || j > k {
        return Err(Error::BasisIndex {
            index: i.max(j),
            rank: k,
        });
    }
    let samples: Vec<f64> = ensemble.iter().map(|e| e.realized(i, j) / e.horizon).collect();
    Ok(MeanStderr::from_samples(&samples))
}

/// Bracket matrix estimated over `n` fresh paths without keeping them.
#[derive(Debug, Clone)]
pub struct BracketMatrix {
    pub k: usize,
    pub entries: Vec<MeanStderr>,
}

impl BracketMatrix {
    pub fn get(&self, i: usize, j: usize) -> MeanStderr {
        self.entries[(i - 1) * self.k + j - 1]
    }
}

pub fn bracket_matrix(
    model: &LevyModel,
    basis: &OrthoBasis,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<BracketMatrix> {
    basis.check_model(model)?;
    if n < 100 {
        return Err(Error::InvalidArgument(format!(
            "bracket estimate needs at least 100 paths, got {n}"
        )));
    }
    let k = basis.rank();
    let per_path: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let path = simulate_indexed(model, grid, seed, i);
            realized_covariation(&path, basis, model.sigma2(), grid.horizon())
        })
        .collect();
    let mut entries = Vec::with_capacity(k * k);
    for idx in 0..k * k {
        let samples: Vec<f64> = per_path.iter().map(|r| r[idx] / grid.horizon()).collect();
        entries.push(MeanStderr::from_samples(&samples));
    }
    Ok(BracketMatrix { k, entries })
}

/// Sample mean of `L_T − L_{t_start}` over `n` paths.
pub fn terminal_mean(model: &LevyModel, grid: &TimeGrid, n: usize, seed: u64) -> MeanStderr {
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_indexed(model, grid, seed, i).terminal_value())
        .collect();
    MeanStderr::from_samples(&values)
}
