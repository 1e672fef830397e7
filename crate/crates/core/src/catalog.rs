//! Shipped models and reference control problems.

use crate::error::Result;
use crate::levy_model::{JumpMeasure, LevyModel};
use crate::problem::{ControlDriver, ControlProblem, Forward, Terminal};

/// Standard Brownian motion.
pub fn brownian(k: usize) -> Result<LevyModel> {
    LevyModel::with_truncation(0.0, 1.0, JumpMeasure::None, k)
}

/// Brownian motion plus a unit jump at rate one.
pub fn brownian_point_mass(k: usize) -> Result<LevyModel> {
    LevyModel::with_truncation(0.0, 1.0, JumpMeasure::PointMasses(vec![(1.0, 1.0)]), k)
}

/// Brownian motion plus two-sided exponential jumps (λ = 1, p = ½, α = 2, β = 3).
pub fn brownian_two_sided_exp(k: usize) -> Result<LevyModel> {
    LevyModel::with_truncation(
        0.0,
        1.0,
        JumpMeasure::TwoSidedExponential {
            lambda: 1.0,
            p: 0.5,
            alpha: 2.0,
            beta: 3.0,
        },
        k,
    )
}

/// Low-variance model with mean rate `m₁ = 0.2`: `σ² = 0.01` and jumps of ±0.1 at rate one each.
pub fn benchmark_model(k: usize) -> Result<LevyModel> {
    LevyModel::with_truncation(
        0.2,
        0.01,
        JumpMeasure::PointMasses(vec![(0.1, 1.0), (-0.1, 1.0)]),
        k,
    )
}

/// `F(x) = x`, `f = 0`, `φ(x) = x`, one control, `T = 1`; value `x·e^{m₁(T−t)}`.
pub fn linear_benchmark() -> Result<ControlProblem> {
    ControlProblem::new(
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
}

/// `F(x, u) = u` with `u ∈ {−1, 1}`, `f = 0`, `φ(x) = x²`, `T = 1`.
/// The quadratic cost is Lipschitz only on bounded sets; `L₁` is declared for `|x| ≤ 4`.
pub fn two_control_quadratic() -> Result<ControlProblem> {
    ControlProblem::new(
        Forward::AffineControl {
            c0: 0.0,
            cx: 0.0,
            cu: 1.0,
        },
        ControlDriver::zero(),
        Terminal::Quadratic { a: 1.0, b: 0.0, c: 0.0 },
        vec![-1.0, 1.0],
        1.0,
        (8.0, 0.0, 0.0),
    )
}
