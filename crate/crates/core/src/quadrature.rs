//! Quadrature rules for integrals against the jump measure ν.
//!
//! Point masses are integrated exactly with their atoms as nodes. For the
//! two-sided exponential law each tail gets a Gauss–Laguerre rule scaled to
//! its decay rate, which reproduces the moments `m_i` for `i ≤ 2·order − 1`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::levy_model::{JumpMeasure, LevyModel};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Nodes and weights of the `n`-point rule for `∫_0^∞ g(s) e^{-s} ds`
/// (Golub–Welsch, followed by Newton polishing of each node).
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = (2 * i + 1) as f64;
        if i + 1 < n {
            jacobi[(i, i + 1)] = (i + 1) as f64;
            jacobi[(i + 1, i)] = (i + 1) as f64;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (l, dl, _) = laguerre(n, *x);
            *x -= l / dl;
        }
        // w = x / ((n+1)² L_{n+1}(x)²)
        let (_, _, next) = laguerre(n, *x);
        let np1 = (n + 1) as f64;
        weights.push(*x / (np1 * np1 * next * next));
    }
    (nodes, weights)
}

/// `(L_n(x), L_n'(x), L_{n+1}(x))` by the three-term recurrence.
fn laguerre(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 1.0;
    let mut cur = 1.0 - x;
    if n == 0 {
        return (1.0, 0.0, cur);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    let nf = n as f64;
    let deriv = nf * (cur - prev) / x;
    let next = ((2.0 * nf + 1.0 - x) * cur - nf * prev) / (nf + 1.0);
    (cur, deriv, next)
}

impl QuadratureRule {
    pub fn for_measure(nu: &JumpMeasure, order: usize) -> Result<Self> {
        match nu {
            JumpMeasure::None => Ok(Self {
                nodes: vec![],
                weights: vec![],
            }),
            JumpMeasure::PointMasses(atoms) => Ok(Self {
                nodes: atoms.iter().map(|&(c, _)| c).collect(),
                weights: atoms.iter().map(|&(_, l)| l).collect(),
            }),
            JumpMeasure::TwoSidedExponential {
                lambda,
                p,
                alpha,
                beta,
            } => {
                if order == 0 {
                    return Err(Error::InvalidArgument("quadrature order must be positive".into()));
                }
                let (s, w) = gauss_laguerre(order);
                let mut nodes = Vec::with_capacity(2 * order);
                let mut weights = Vec::with_capacity(2 * order);
                for (si, wi) in s.iter().zip(&w).rev() {
                    nodes.push(-si / beta);
                    weights.push(lambda * (1.0 - p) * wi);
                }
                for (si, wi) in s.iter().zip(&w) {
                    nodes.push(si / alpha);
                    weights.push(lambda * p * wi);
                }
                Ok(Self { nodes, weights })
            }
        }
    }

    /// Smallest order that integrates `x^{i_max}` exactly for the exponential tails.
    pub fn default_order(model: &LevyModel) -> usize {
        (model.i_max() / 2 + 1).max(8)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn moment(&self, i: usize) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * z.powi(i as i32))
            .sum()
    }

    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, w)| w * g(z)).sum()
    }

    /// Largest relative moment defect over `2 ≤ i ≤ i_max`, and the mass defect.
    pub fn moment_defect(&self, model: &LevyModel) -> Result<(f64, f64)> {
        let mass = (self.total_mass() - model.nu().total_mass()).abs();
        let mut worst: f64 = 0.0;
        for i in 2..=model.i_max() {
            let exact = model.moment(i)?;
            let rel = (self.moment(i) - exact).abs() / exact.abs().max(1e-300);
            worst = worst.max(if exact == 0.0 { self.moment(i).abs() } else { rel });
        }
        Ok((worst, mass))
    }
}
