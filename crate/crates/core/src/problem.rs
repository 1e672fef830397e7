//! Controlled forward–backward problems built from a small coefficient registry.
//!
//! The forward state solves `dX = F(s, X_{s-}, u) dL`, the cost is the BSDE
//! with driver `f(s, x, y, z, u)` and terminal value `φ(X_T)`, and the control
//! ranges over a finite set `U`.

use crate::bsde_solver::Driver;
use crate::error::{Error, Result};

/// Forward coefficient `F(s, x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Forward {
    Constant(f64),
    /// `a·x`.
    Linear(f64),
    /// `c0 + cx·x + cu·u`.
    AffineControl { c0: f64, cx: f64, cu: f64 },
}

impl Forward {
    pub fn eval(&self, x: f64, u: f64) -> f64 {
        match *self {
            Forward::Constant(c) => c,
            Forward::Linear(a) => a * x,
            Forward::AffineControl { c0, cx, cu } => c0 + cx * x + cu * u,
        }
    }

    pub fn x_slope(&self) -> f64 {
        match *self {
            Forward::Constant(_) => 0.0,
            Forward::Linear(a) => a,
            Forward::AffineControl { cx, .. } => cx,
        }
    }
}

/// `f = c + c_t·t + c_x·x + c_y·y + c_u·u + c_uu·u² + Σ_k (γ_k + γ^u_k·u)·z_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlDriver {
    pub constant: f64,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub u2: f64,
    pub z: Vec<f64>,
    pub zu: Vec<f64>,
}

impl ControlDriver {
    pub fn zero() -> Self {
        Self::default()
    }

    fn gamma(&self, k: usize, u: f64) -> f64 {
        self.z.get(k).copied().unwrap_or(0.0) + self.zu.get(k).copied().unwrap_or(0.0) * u
    }

    pub fn eval(&self, t: f64, x: f64, y: f64, z: &[f64], u: f64) -> f64 {
        let zz: f64 = z.iter().enumerate().map(|(k, v)| self.gamma(k, u) * v).sum();
        self.constant + self.time * t + self.x * x + self.y * y + self.u * u + self.u2 * u * u + zz
    }

    /// Whether the driver ever looks at `z`.
    pub fn uses_z(&self) -> bool {
        self.z.iter().chain(&self.zu).any(|g| *g != 0.0)
    }
}

/// Terminal cost `φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    Constant(f64),
    Linear { slope: f64, intercept: f64 },
    /// `a·x² + b·x + c`.
    Quadratic { a: f64, b: f64, c: f64 },
}

impl Terminal {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Terminal::Constant(c) => c,
            Terminal::Linear { slope, intercept } => slope * x + intercept,
            Terminal::Quadratic { a, b, c } => (a * x + b) * x + c,
        }
    }

    /// Same functional shifted up by `eps`.
    pub fn shifted(&self, eps: f64) -> Terminal {
        match *self {
            Terminal::Constant(c) => Terminal::Constant(c + eps),
            Terminal::Linear { slope, intercept } => Terminal::Linear {
                slope,
                intercept: intercept + eps,
            },
            Terminal::Quadratic { a, b, c } => Terminal::Quadratic { a, b, c: c + eps },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub forward: Forward,
    pub driver: ControlDriver,
    pub terminal: Terminal,
    pub controls: Vec<f64>,
    pub horizon: f64,
    /// Declared `(L₁, L₂, L₃)`.
    pub lipschitz: (f64, f64, f64),
}

impl ControlProblem {
    pub fn new(
        forward: Forward,
        driver: ControlDriver,
        terminal: Terminal,
        controls: Vec<f64>,
        horizon: f64,
        lipschitz: (f64, f64, f64),
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::InvalidArgument("control set is empty".into()));
        }
        if controls.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidArgument("control values must be finite".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive (got {horizon})")));
        }
        let (l1, l2, l3) = lipschitz;
        if !(l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0) {
            return Err(Error::InvalidArgument("Lipschitz constants must be nonnegative".into()));
        }
        Ok(Self {
            forward,
            driver,
            terminal,
            controls,
            horizon,
            lipschitz,
        })
    }

    pub fn f_coeff(&self, _t: f64, x: f64, u: f64) -> f64 {
        self.forward.eval(x, u)
    }

    pub fn driver_value(&self, t: f64, x: f64, y: f64, z: &[f64], u: f64) -> f64 {
        self.driver.eval(t, x, y, z, u)
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.terminal.eval(x)
    }

    /// The driver with the control frozen at `u`.
    pub fn fixed(&self, u: f64) -> FixedControl<'_> {
        FixedControl { problem: self, u }
    }

    /// Copy with the terminal cost raised by `eps`.
    pub fn with_terminal_shift(&self, eps: f64) -> Self {
        Self {
            terminal: self.terminal.shifted(eps),
            ..self.clone()
        }
    }

    /// Sample finite-difference Lipschitz ratios and the linear-growth ratio
    /// over `xs × ys × zs × U`.
    pub fn check_assumptions(&self, xs: &[f64], ys: &[f64], zs: &[Vec<f64>]) -> AssumptionReport {
        let mut r = AssumptionReport::default();
        let t = 0.5 * self.horizon;
        let zero_z: Vec<f64> = zs.first().map(|z| vec![0.0; z.len()]).unwrap_or_default();
        for &u in &self.controls {
            for (a, &x1) in xs.iter().enumerate() {
                for &x2 in &xs[a + 1..] {
                    let dx = (x1 - x2).abs();
                    if dx == 0.0 {
                        continue;
                    }
                    let fx = (self.forward.eval(x1, u) - self.forward.eval(x2, u)).abs() / dx;
                    let gx = (self.driver.eval(t, x1, 0.0, &zero_z, u) - self.driver.eval(t, x2, 0.0, &zero_z, u))
                        .abs()
                        / dx;
                    let px = (self.phi(x1) - self.phi(x2)).abs() / dx;
                    r.forward_x = r.forward_x.max(fx);
                    r.driver_x = r.driver_x.max(gx);
                    r.terminal_x = r.terminal_x.max(px);
                }
            }
            for (a, &y1) in ys.iter().enumerate() {
                for &y2 in &ys[a + 1..] {
                    let dy = (y1 - y2).abs();
                    if dy == 0.0 {
                        continue;
                    }
                    let g = (self.driver.eval(t, 0.0, y1, &zero_z, u) - self.driver.eval(t, 0.0, y2, &zero_z, u))
                        .abs()
                        / dy;
                    r.driver_y = r.driver_y.max(g);
                }
            }
            for (a, z1) in zs.iter().enumerate() {
                for z2 in &zs[a + 1..] {
                    let dz = z1.iter().zip(z2).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                    if dz == 0.0 {
                        continue;
                    }
                    let g = (self.driver.eval(t, 0.0, 0.0, z1, u) - self.driver.eval(t, 0.0, 0.0, z2, u)).abs() / dz;
                    r.driver_z = r.driver_z.max(g);
                }
            }
            for &x in xs {
                for &y in ys {
                    for z in zs.iter().chain(std::iter::once(&zero_z)) {
                        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let lhs = self.forward.eval(x, u).abs()
                            + self.driver.eval(t, x, y, z, u).abs()
                            + self.phi(x).abs();
                        r.growth = r.growth.max(lhs / (1.0 + x.abs() + y.abs() + zn));
                    }
                }
            }
        }
        let (l1, l2, l3) = self.lipschitz;
        let slack = 1e-9;
        for (name, got, declared) in [
            ("F in x", r.forward_x, l1),
            ("f in x", r.driver_x, l1),
            ("phi in x", r.terminal_x, l1),
            ("f in y", r.driver_y, l2),
            ("f in z", r.driver_z, l3),
        ] {
            if got > declared * (1.0 + slack) + slack {
                r.violations
                    .push(format!("{name}: sampled ratio {got:.6} exceeds declared {declared:.6}"));
            }
        }
        r
    }
}

/// Largest sampled ratios; `violations` lists declared constants that were exceeded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    pub forward_x: f64,
    pub driver_x: f64,
    pub terminal_x: f64,
    pub driver_y: f64,
    pub driver_z: f64,
    /// Smallest `L` with `|F| + |f| + |φ| ≤ L(1 + |x| + |y| + ‖z‖)` on the samples.
    pub growth: f64,
    pub violations: Vec<String>,
}

/// [`Driver`] view of a control problem at a fixed control value.
#[derive(Clone, Copy)]
pub struct FixedControl<'a> {
    problem: &'a ControlProblem,
    u: f64,
}

impl Driver for FixedControl<'_> {
    fn eval(&self, t: f64, x: f64, y: f64, z: &[f64]) -> f64 {
        self.problem.driver.eval(t, x, y, z, self.u)
    }

    fn z_weights(&self, _t: f64) -> Option<Vec<f64>> {
        let d = &self.problem.driver;
        let k = d.z.len().max(d.zu.len());
        Some((0..k).map(|i| d.gamma(i, self.u)).collect())
    }

    fn lipschitz(&self) -> (f64, f64) {
        (self.problem.lipschitz.1, self.problem.lipschitz.2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> ControlProblem {
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
        .unwrap()
    }

    #[test]
    fn registry_evaluation() {
        assert_eq!(Forward::Linear(2.0).eval(3.0, 9.0), 6.0);
        assert_eq!(
            Forward::AffineControl {
                c0: 1.0,
                cx: 2.0,
                cu: 3.0
            }
            .eval(1.0, -1.0),
            0.0
        );
        assert_eq!(Terminal::Quadratic { a: 1.0, b: 2.0, c: 3.0 }.eval(2.0), 11.0);
        let d = ControlDriver {
            y: -0.5,
            u2: 1.0,
            z: vec![0.1],
            zu: vec![0.2],
            ..ControlDriver::zero()
        };
        assert!((d.eval(0.0, 0.0, 2.0, &[1.0], 1.0) - (-1.0 + 1.0 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty_controls() {
        assert!(ControlProblem::new(
            Forward::Constant(1.0),
            ControlDriver::zero(),
            Terminal::Constant(0.0),
            vec![],
            1.0,
            (1.0, 1.0, 1.0)
        )
        .is_err());
    }

    #[test]
    fn assumption_sampling() {
        let p = quadratic();
        let xs: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.5).collect();
        let r = p.check_assumptions(&xs, &[0.0, 1.0], &[vec![0.0], vec![1.0]]);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert!((r.terminal_x - 3.5).abs() < 1e-12);
        let tight = ControlProblem {
            lipschitz: (1.0, 0.0, 0.0),
            ..p
        };
        assert_eq!(tight.check_assumptions(&xs, &[0.0], &[]).violations.len(), 1);
    }

    #[test]
    fn fixed_control_driver() {
        let p = ControlProblem {
            driver: ControlDriver {
                z: vec![0.1, 0.2],
                zu: vec![1.0],
                ..ControlDriver::zero()
            },
            ..quadratic()
        };
        let d = p.fixed(-1.0);
        assert_eq!(d.z_weights(0.0).unwrap(), vec![-0.9, 0.2]);
    }
}
