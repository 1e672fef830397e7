//! Square-integrable Lévy processes described by their triplet `(b, σ², ν)`.
//!
//! Only finite-activity jump measures are supported, so that paths can be
//! simulated exactly as a compound Poisson process plus drift and diffusion.
//! All moment quantities are computed once at construction and cached.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

/// Finite-activity jump measure ν.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpMeasure {
    None,
    /// Atoms `(location, intensity)`.
    PointMasses(Vec<(f64, f64)>),
    /// Total intensity `lambda`; with probability `p` a jump is `Exp(alpha)`
    /// upwards, otherwise `Exp(beta)` downwards.
    TwoSidedExponential {
        lambda: f64,
        p: f64,
        alpha: f64,
        beta: f64,
    },
}

impl JumpMeasure {
    pub fn kind(&self) -> &'static str {
        match self {
            JumpMeasure::None => "none",
            JumpMeasure::PointMasses(_) => "point_masses",
            JumpMeasure::TwoSidedExponential { .. } => "two_sided_exponential",
        }
    }

    /// ν(ℝ \ {0}).
    pub fn total_mass(&self) -> f64 {
        match self {
            JumpMeasure::None => 0.0,
            JumpMeasure::PointMasses(atoms) => atoms.iter().map(|&(_, l)| l).sum(),
            JumpMeasure::TwoSidedExponential { lambda, .. } => *lambda,
        }
    }

    /// ∫ x^i ν(dx) for `i >= 1`, in closed form.
    pub fn raw_moment(&self, i: usize) -> f64 {
        match self {
            JumpMeasure::None => 0.0,
            JumpMeasure::PointMasses(atoms) => {
                atoms.iter().map(|&(c, l)| l * c.powi(i as i32)).sum()
            }
            JumpMeasure::TwoSidedExponential {
                lambda,
                p,
                alpha,
                beta,
            } => {
                let fact = factorial(i);
                let sign = if i.is_multiple_of(2) { 1.0 } else { -1.0 };
                lambda
                    * (p * fact / alpha.powi(i as i32)
                        + (1.0 - p) * sign * fact / beta.powi(i as i32))
            }
        }
    }

    /// ∫_{|x|≥1} x ν(dx).
    pub fn large_jump_mean(&self) -> f64 {
        match self {
            JumpMeasure::None => 0.0,
            JumpMeasure::PointMasses(atoms) => atoms
                .iter()
                .filter(|(c, _)| c.abs() >= 1.0)
                .map(|&(c, l)| l * c)
                .sum(),
            JumpMeasure::TwoSidedExponential {
                lambda,
                p,
                alpha,
                beta,
            } => {
                // ∫_1^∞ x a e^{-a x} dx = e^{-a}(1 + 1/a)
                let up = (-alpha).exp() * (1.0 + 1.0 / alpha);
                let down = (-beta).exp() * (1.0 + 1.0 / beta);
                lambda * (p * up - (1.0 - p) * down)
            }
        }
    }

    /// Draw one jump size from the normalized measure ν / ν(ℝ).
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            JumpMeasure::None => 0.0,
            JumpMeasure::PointMasses(atoms) => {
                let total = self.total_mass();
                let mut u = rng.random::<f64>() * total;
                for &(c, l) in atoms {
                    if u < l {
                        return c;
                    }
                    u -= l;
                }
                atoms.last().map(|&(c, _)| c).unwrap_or(0.0)
            }
            JumpMeasure::TwoSidedExponential { p, alpha, beta, .. } => {
                if rng.random::<f64>() < *p {
                    Exp::new(*alpha).expect("alpha > 0").sample(rng)
                } else {
                    -Exp::new(*beta).expect("beta > 0").sample(rng)
                }
            }
        }
    }

    /// Number of distinct atoms of x²ν (zero for continuous laws is never
    /// reported; `None` means infinitely many).
    pub fn atom_count(&self) -> Option<usize> {
        match self {
            JumpMeasure::None => Some(0),
            JumpMeasure::PointMasses(atoms) => {
                let mut locs: Vec<f64> = atoms.iter().map(|&(c, _)| c).collect();
                locs.sort_by(f64::total_cmp);
                locs.dedup();
                Some(locs.len())
            }
            JumpMeasure::TwoSidedExponential { .. } => None,
        }
    }
}

fn factorial(i: usize) -> f64 {
    (1..=i).map(|k| k as f64).product()
}

/// Raw triplet as supplied by a user, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriplet {
    pub b: f64,
    pub sigma2: f64,
    pub nu: JumpMeasure,
    pub i_max: usize,
}

/// Structured finding from [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    NegativeVariance(f64),
    DegenerateProcess,
    IMaxTooSmall(usize),
    InvalidJumpParameter(String),
    NonFiniteMoment(usize),
    NegativeEvenMoment(usize),
    CauchySchwarz { i: usize, j: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NegativeVariance(s) => write!(f, "sigma2 = {s} is negative"),
            Diagnostic::DegenerateProcess => {
                write!(f, "sigma2 = 0 with no jumps is a deterministic process")
            }
            Diagnostic::IMaxTooSmall(i) => write!(f, "i_max = {i} is below 2"),
            Diagnostic::InvalidJumpParameter(s) => write!(f, "jump measure: {s}"),
            Diagnostic::NonFiniteMoment(i) => write!(f, "moment m_{i} is not finite"),
            Diagnostic::NegativeEvenMoment(i) => write!(f, "even moment m_{i} is negative"),
            Diagnostic::CauchySchwarz { i, j } => {
                write!(f, "m_{{{i}+{j}}}^2 exceeds m_{{2*{i}}} m_{{2*{j}}}")
            }
        }
    }
}

/// Check the triplet against the model invariants. Empty when valid.
pub fn validate(t: &LevyTriplet) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if !(t.sigma2 >= 0.0) || !t.sigma2.is_finite() {
        out.push(Diagnostic::NegativeVariance(t.sigma2));
    }
    if t.i_max < 2 {
        out.push(Diagnostic::IMaxTooSmall(t.i_max));
    }
    if !t.b.is_finite() {
        out.push(Diagnostic::InvalidJumpParameter("drift b is not finite".into()));
    }
    match &t.nu {
        JumpMeasure::None => {}
        JumpMeasure::PointMasses(atoms) => {
            if atoms.is_empty() {
                out.push(Diagnostic::InvalidJumpParameter(
                    "point_masses needs at least one atom".into(),
                ));
            }
            for &(c, l) in atoms {
                if c == 0.0 || !c.is_finite() {
                    out.push(Diagnostic::InvalidJumpParameter(format!(
                        "atom location {c} must be finite and nonzero"
                    )));
                }
                if !(l > 0.0) || !l.is_finite() {
                    out.push(Diagnostic::InvalidJumpParameter(format!(
                        "atom intensity {l} must be positive"
                    )));
                }
            }
        }
        JumpMeasure::TwoSidedExponential {
            lambda,
            p,
            alpha,
            beta,
        } => {
            if !(*lambda > 0.0) || !lambda.is_finite() {
                out.push(Diagnostic::InvalidJumpParameter(format!(
                    "lambda = {lambda} must be positive"
                )));
            }
            if !(0.0..=1.0).contains(p) {
                out.push(Diagnostic::InvalidJumpParameter(format!(
                    "p = {p} must lie in [0, 1]"
                )));
            }
            if !(*alpha > 0.0) || !(*beta > 0.0) {
                out.push(Diagnostic::InvalidJumpParameter(format!(
                    "decay rates alpha = {alpha}, beta = {beta} must be positive"
                )));
            }
        }
    }
    let no_jumps = t.nu.total_mass() == 0.0;
    if t.sigma2 == 0.0 && no_jumps {
        out.push(Diagnostic::DegenerateProcess);
    }
    if !out.is_empty() {
        return out;
    }

    let m = moment_table(t);
    for (i, v) in m.iter().enumerate().skip(1) {
        if !v.is_finite() {
            out.push(Diagnostic::NonFiniteMoment(i));
        } else if i % 2 == 0 && *v < 0.0 {
            out.push(Diagnostic::NegativeEvenMoment(i));
        }
    }
    if !out.is_empty() {
        return out;
    }
    let half = t.i_max / 2;
    for i in 1..=half {
        for j in i..=half {
            let lhs = m[i + j] * m[i + j];
            let rhs = m[2 * i] * m[2 * j];
            if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
                out.push(Diagnostic::CauchySchwarz { i, j });
            }
        }
    }
    out
}

/// `m[0]` is unused (0); `m[1]` is the drift-adjusted mean rate.
fn moment_table(t: &LevyTriplet) -> Vec<f64> {
    let mut m = vec![0.0; t.i_max + 1];
    if t.i_max >= 1 {
        m[1] = t.b + t.nu.large_jump_mean();
    }
    for (i, slot) in m.iter_mut().enumerate().skip(2) {
        *slot = t.nu.raw_moment(i);
    }
    m
}

/// Validated, immutable Lévy model with its cached moment table.
#[derive(Debug, Clone)]
pub struct LevyModel {
    triplet: LevyTriplet,
    moments: Vec<f64>,
    drift_rate: f64,
    id: u64,
}

impl LevyModel {
    pub fn new(triplet: LevyTriplet) -> Result<Self> {
        let diags = validate(&triplet);
        if !diags.is_empty() {
            let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            return Err(Error::InvalidModel(msg.join("; ")));
        }
        let moments = moment_table(&triplet);
        // Small jumps are compensated, so the simulated drift absorbs
        // -∫_{|x|<1} x ν(dx); overall the mean rate is exactly m₁.
        let drift_rate = moments[1] - triplet.nu.raw_moment(1);
        let mut h = DefaultHasher::new();
        triplet.b.to_bits().hash(&mut h);
        triplet.sigma2.to_bits().hash(&mut h);
        triplet.i_max.hash(&mut h);
        format!("{:?}", triplet.nu).hash(&mut h);
        Ok(Self {
            triplet,
            moments,
            drift_rate,
            id: h.finish(),
        })
    }

    /// Convenience constructor with `i_max = 2k + 2`.
    pub fn with_truncation(b: f64, sigma2: f64, nu: JumpMeasure, k: usize) -> Result<Self> {
        Self::new(LevyTriplet {
            b,
            sigma2,
            nu,
            i_max: 2 * k + 2,
        })
    }

    pub fn b(&self) -> f64 {
        self.triplet.b
    }

    pub fn sigma2(&self) -> f64 {
        self.triplet.sigma2
    }

    pub fn nu(&self) -> &JumpMeasure {
        &self.triplet.nu
    }

    pub fn i_max(&self) -> usize {
        self.triplet.i_max
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    /// Identity used to tie bases and increments back to this model.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Deterministic drift used in simulation, `m₁ − ∫ x ν(dx)`.
    pub fn drift_rate(&self) -> f64 {
        self.drift_rate
    }

    /// m₁ for `i = 1`, otherwise ∫ x^i ν(dx).
    pub fn moment(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.triplet.i_max {
            return Err(Error::MomentOrder {
                order: i,
                i_max: self.triplet.i_max,
            });
        }
        let v = self.moments[i];
        if !v.is_finite() {
            return Err(Error::NonFiniteMoment(i));
        }
        Ok(v)
    }

    pub fn m1(&self) -> f64 {
        self.moments[1]
    }

    /// ⟨x^i, x^j⟩₁ = m_{i+j+2} + σ²·[i = j = 0].
    pub fn mu_inner(&self, i: usize, j: usize) -> Result<f64> {
        let order = i + j + 2;
        if order > self.triplet.i_max {
            return Err(Error::MomentOrder {
                order,
                i_max: self.triplet.i_max,
            });
        }
        let atom = if i == 0 && j == 0 {
            self.triplet.sigma2
        } else {
            0.0
        };
        Ok(self.moments[order] + atom)
    }

    /// Always empty for a constructed model.
    pub fn validate(&self) -> Vec<Diagnostic> {
        validate(&self.triplet)
    }

    /// Number of atoms of μ = x²ν + σ²δ₀, or `None` when μ has infinite support.
    pub fn mu_atom_count(&self) -> Option<usize> {
        let extra = usize::from(self.triplet.sigma2 > 0.0);
        self.triplet.nu.atom_count().map(|n| n + extra)
    }
}
