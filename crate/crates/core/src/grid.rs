//! Uniform spatial grids and piecewise-linear functions on them with a
//! globally Lipschitz extension beyond the end nodes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid needs finite x_min < x_max (got {x_min}, {x_max})"
            )));
        }
        if n_nodes < 3 {
            return Err(Error::InvalidArgument(format!("grid needs at least 3 nodes (got {n_nodes})")));
        }
        Ok(Self { x_min, x_max, n_nodes })
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_nodes - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.x_max
        } else {
            self.x_min + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.x(i)).collect()
    }

    /// Same interval with the spacing halved.
    pub fn refined(&self) -> Self {
        Self {
            n_nodes: 2 * self.n_nodes - 1,
            ..*self
        }
    }
}

/// Nodal values of one time slice. Off the grid the function continues
/// linearly with the end-cell slope clamped to `slope_bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
    pub slope_bound: f64,
}

impl GridFunction {
    pub fn new(grid: SpatialGrid, values: Vec<f64>, slope_bound: f64) -> Result<Self> {
        if values.len() != grid.n_nodes {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} nodes",
                values.len(),
                grid.n_nodes
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function values".into()));
        }
        if !(slope_bound >= 0.0) {
            return Err(Error::InvalidArgument("slope bound must be nonnegative".into()));
        }
        Ok(Self {
            grid,
            values,
            slope_bound,
        })
    }

    /// Extension clamped at the function's own finite-difference Lipschitz constant.
    pub fn with_fitted_bound(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        let h = grid.h();
        let c = values
            .windows(2)
            .map(|w| ((w[1] - w[0]) / h).abs())
            .fold(0.0, f64::max);
        Self::new(grid, values, c)
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> f64, slope_bound: f64) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::new(grid, values, slope_bound)
    }

    /// Largest `|Δv / h|` over neighbouring nodes.
    pub fn lipschitz(&self) -> f64 {
        let h = self.grid.h();
        self.values
            .windows(2)
            .map(|w| ((w[1] - w[0]) / h).abs())
            .fold(0.0, f64::max)
    }

    fn left_slope(&self) -> f64 {
        let s = (self.values[1] - self.values[0]) / self.grid.h();
        s.clamp(-self.slope_bound, self.slope_bound)
    }

    fn right_slope(&self) -> f64 {
        let n = self.values.len();
        let s = (self.values[n - 1] - self.values[n - 2]) / self.grid.h();
        s.clamp(-self.slope_bound, self.slope_bound)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        let n = self.values.len();
        if x <= g.x_min {
            return self.values[0] + self.left_slope() * (x - g.x_min);
        }
        if x >= g.x_max {
            return self.values[n - 1] + self.right_slope() * (x - g.x_max);
        }
        let h = g.h();
        let pos = (x - g.x_min) / h;
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        if w == 0.0 {
            return self.values[i];
        }
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// `(v(x_i − h), v(x_i + h))`, using the extension at the end nodes.
    pub fn neighbours(&self, i: usize) -> (f64, f64) {
        let h = self.grid.h();
        let n = self.values.len();
        let left = if i == 0 {
            self.values[0] - self.left_slope() * h
        } else {
            self.values[i - 1]
        };
        let right = if i + 1 == n {
            self.values[n - 1] + self.right_slope() * h
        } else {
            self.values[i + 1]
        };
        (left, right)
    }

    /// Central first difference at node `i`.
    pub fn d1(&self, i: usize) -> f64 {
        let (l, r) = self.neighbours(i);
        (r - l) / (2.0 * self.grid.h())
    }

    /// Central second difference at node `i`.
    pub fn d2(&self, i: usize) -> f64 {
        let (l, r) = self.neighbours(i);
        let h = self.grid.h();
        (r - 2.0 * self.values[i] + l) / (h * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(SpatialGrid::new(1.0, 0.0, 5).is_err());
        assert!(SpatialGrid::new(0.0, 1.0, 2).is_err());
        let g = SpatialGrid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g.refined().n_nodes, 9);
    }

    #[test]
    fn interpolation_and_extension() {
        let g = SpatialGrid::new(0.0, 2.0, 3).unwrap();
        let f = GridFunction::new(g, vec![0.0, 1.0, 4.0], 2.0).unwrap();
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(1.5), 2.5);
        assert_eq!(f.eval(1.0), 1.0);
        // right slope 3 clamped to 2
        assert_eq!(f.eval(3.0), 6.0);
        assert_eq!(f.eval(-1.0), -1.0);
        assert_eq!(f.lipschitz(), 3.0);
    }

    #[test]
    fn differences_of_quadratic() {
        let g = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
        let f = GridFunction::from_fn(g, |x| x * x, 100.0).unwrap();
        for i in 1..40 {
            let x = g.x(i);
            assert!((f.d1(i) - 2.0 * x).abs() < 1e-12);
            assert!((f.d2(i) - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_function_is_globally_exact() {
        let g = SpatialGrid::new(-1.0, 1.0, 11).unwrap();
        let f = GridFunction::with_fitted_bound(g, g.nodes().iter().map(|x| 3.0 * x + 1.0).collect()).unwrap();
        for x in [-5.0, -1.0, -0.33, 0.0, 0.71, 1.0, 4.0] {
            assert!((f.eval(x) - (3.0 * x + 1.0)).abs() < 1e-12);
        }
        assert!((f.d1(0) - 3.0).abs() < 1e-12);
        assert!(f.d2(10).abs() < 1e-9);
    }
}
