//! Least-squares conditional expectations on polynomials of a scalar state,
//! optionally augmented by martingale increments as control variates.

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 6;

/// Relative pivot threshold below which a feature is treated as collinear.
const PIVOT_TOLERANCE: f64 = 1e-11;

/// Row-major feature matrix with a Cholesky factor of its Gram matrix.
/// Columns whose pivot collapses are dropped and get a zero coefficient.
#[derive(Debug, Clone)]
struct Design {
    n: usize,
    p: usize,
    features: Vec<f64>,
    chol: Vec<f64>,
    active: Vec<bool>,
}

impl Design {
    fn new(features: Vec<f64>, n: usize, p: usize) -> Self {
        let mut gram = vec![0.0; p * p];
        for row in features.chunks_exact(p) {
            for i in 0..p {
                let ri = row[i];
                for j in 0..=i {
                    gram[i * p + j] += ri * row[j];
                }
            }
        }
        let mut chol = vec![0.0; p * p];
        let mut active = vec![false; p];
        for c in 0..p {
            let mut d = gram[c * p + c];
            for j in 0..c {
                d -= chol[c * p + j] * chol[c * p + j];
            }
            if d <= PIVOT_TOLERANCE * gram[c * p + c] || d <= 0.0 {
                continue;
            }
            active[c] = true;
            let dd = d.sqrt();
            chol[c * p + c] = dd;
            for r in c + 1..p {
                let mut v = gram[r * p + c];
                for j in 0..c {
                    v -= chol[r * p + j] * chol[c * p + j];
                }
                chol[r * p + c] = v / dd;
            }
        }
        Self {
            n,
            p,
            features,
            chol,
            active,
        }
    }

    fn rank(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    /// `(XᵀX)⁻¹ rhs` on the active columns.
    fn solve_normal(&self, rhs: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut w = vec![0.0; p];
        for i in 0..p {
            if !self.active[i] {
                continue;
            }
            let mut v = rhs[i];
            for j in 0..i {
                v -= self.chol[i * p + j] * w[j];
            }
            w[i] = v / self.chol[i * p + i];
        }
        let mut out = vec![0.0; p];
        for i in (0..p).rev() {
            if !self.active[i] {
                continue;
            }
            let mut v = w[i];
            for j in i + 1..p {
                v -= self.chol[j * p + i] * out[j];
            }
            out[i] = v / self.chol[i * p + i];
        }
        out
    }

    fn fitted(&self, coeffs: &[f64], i: usize) -> f64 {
        self.row(i).iter().zip(coeffs).map(|(f, c)| f * c).sum()
    }

    fn fit(&self, targets: &[f64]) -> Result<Fit> {
        if targets.len() != self.n {
            return Err(Error::Regression(format!(
                "{} targets for {} states",
                targets.len(),
                self.n
            )));
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("regression targets".into()));
        }
        // Fit deviations from a shifted mean so constant targets are reproduced exactly.
        // Column 0 is always the intercept.
        let shift = targets[0];
        let mean = shift + targets.iter().map(|y| y - shift).sum::<f64>() / self.n as f64;
        let mut rhs = vec![0.0; self.p];
        for (row, y) in self.features.chunks_exact(self.p).zip(targets) {
            let dev = y - mean;
            for (r, f) in rhs.iter_mut().zip(row) {
                *r += f * dev;
            }
        }
        let mut coeffs = self.solve_normal(&rhs);
        coeffs[0] += mean;
        let mut ss = 0.0;
        for (i, y) in targets.iter().enumerate() {
            ss += (y - self.fitted(&coeffs, i)).powi(2);
        }
        let dim = self.rank();
        let dof = self.n.saturating_sub(dim).max(1);
        let residual_sd = (ss / dof as f64).sqrt();
        let stderr = residual_sd * (dim as f64 / self.n as f64).sqrt();
        Ok(Fit {
            coeffs,
            residual_sd,
            stderr,
        })
    }

    /// Leverage-adjusted sandwich standard errors of the coefficients in `js`.
    /// Residuals are inflated by `1/(1 − h_ii)`, which keeps the estimate honest
    /// when a few rare, large observations dominate the design.
    fn robust_stderrs(&self, fit: &Fit, targets: &[f64], js: &[usize]) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = js
            .iter()
            .map(|&j| {
                let mut e = vec![0.0; self.p];
                e[j] = 1.0;
                self.solve_normal(&e)
            })
            .collect();
        let mut acc = vec![0.0; js.len()];
        for (i, y) in targets.iter().enumerate() {
            let x = self.row(i);
            let r = y - self.fitted(&fit.coeffs, i);
            let h: f64 = x.iter().zip(self.solve_normal(x)).map(|(a, b)| a * b).sum();
            let r = r / (1.0 - h.min(0.999_999));
            for (a, v) in acc.iter_mut().zip(&rows) {
                let w: f64 = x.iter().zip(v).map(|(f, c)| f * c).sum();
                *a += (r * w).powi(2);
            }
        }
        acc.iter().zip(js).map(|(a, &j)| if self.active[j] { a.sqrt() } else { 0.0 }).collect()
    }
}

/// Factorized design for one cross-section of states; reused for many targets.
#[derive(Debug, Clone)]
pub struct StateRegression {
    center: f64,
    scale: f64,
    design: Design,
}

/// Coefficients for one target plus its residual spread.
#[derive(Debug, Clone)]
pub struct Fit {
    pub coeffs: Vec<f64>,
    /// Residual standard deviation.
    pub residual_sd: f64,
    /// Standard error of a fitted value, `residual_sd · sqrt(p / n)`.
    pub stderr: f64,
}

impl StateRegression {
    pub fn new(states: &[f64], max_degree: usize) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::Regression("empty design".into()));
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("regression states".into()));
        }
        let max_degree = max_degree.min(MAX_DEGREE);
        let center = states.iter().sum::<f64>() / n as f64;
        let var = states.iter().map(|x| (x - center).powi(2)).sum::<f64>() / n as f64;
        let scale = var.sqrt();
        let degree = if scale <= 1e-14 * (1.0 + center.abs()) {
            0
        } else {
            max_degree.min(distinct_values(states, max_degree + 1, scale) - 1)
        };
        let p = degree + 1;
        let scale = if degree == 0 { 1.0 } else { scale };

        let mut features = vec![0.0; n * p];
        for (row, &x) in features.chunks_exact_mut(p).zip(states) {
            fill_features((x - center) / scale, row);
        }
        let design = Design::new(features, n, p);
        if !design.active[0] {
            return Err(Error::Regression("intercept column is degenerate".into()));
        }
        Ok(Self { center, scale, design })
    }

    /// Effective number of basis functions.
    pub fn dim(&self) -> usize {
        self.design.rank()
    }

    /// Number of polynomial features, including dropped ones.
    pub fn width(&self) -> usize {
        self.design.p
    }

    /// `(center, scale)` mapping a state `x` to the feature variable `(x − center) / scale`.
    pub fn standardization(&self) -> (f64, f64) {
        (self.center, self.scale)
    }

    pub fn len(&self) -> usize {
        self.design.n
    }

    pub fn is_empty(&self) -> bool {
        self.design.n == 0
    }

    pub fn fit(&self, targets: &[f64]) -> Result<Fit> {
        self.design.fit(targets)
    }

    /// Fitted value on the design row `i`.
    pub fn fitted(&self, fit: &Fit, i: usize) -> f64 {
        self.design.fitted(&fit.coeffs, i)
    }

    pub fn predict(&self, fit: &Fit, x: f64) -> f64 {
        let p = self.design.p;
        let mut row = [0.0; MAX_DEGREE + 1];
        fill_features((x - self.center) / self.scale, &mut row[..p]);
        row[..p].iter().zip(&fit.coeffs).map(|(f, c)| f * c).sum()
    }
}

/// Joint regression of a target on `φ(X_s)` and `φ(X_s)·ΔH^(k)_s`.
///
/// Since the increments are centred and independent of `X_s`, the `φ` block
/// estimates `E[Y | X_s]` while the `φ·ΔH^(k)` block estimates
/// `E[Y ΔH^(k) | X_s] / Δt`; each block acts as a control variate for the other.
#[derive(Debug, Clone)]
pub struct MartingaleRegression {
    p: usize,
    k: usize,
    design: Design,
}

impl MartingaleRegression {
    /// `dh` is `n × k` row-major and must have unit variance per unit time.
    pub fn new(state: &StateRegression, dh: &[f64], k: usize, dt: f64) -> Result<Self> {
        let n = state.len();
        if dh.len() != n * k {
            return Err(Error::Regression(format!("{} increments for {n} × {k}", dh.len())));
        }
        if !(dt > 0.0) {
            return Err(Error::Regression("time step must be positive".into()));
        }
        let p = state.design.p;
        let width = p * (1 + k);
        let inv_sd = 1.0 / dt.sqrt();
        let mut features = vec![0.0; n * width];
        for (i, row) in features.chunks_exact_mut(width).enumerate() {
            let base = state.design.row(i);
            row[..p].copy_from_slice(base);
            for kk in 0..k {
                // scaled to unit variance so pivots are comparable
                let h = dh[i * k + kk] * inv_sd;
                for (slot, b) in row[p * (1 + kk)..p * (2 + kk)].iter_mut().zip(base) {
                    *slot = b * h;
                }
            }
        }
        let design = Design::new(features, n, width);
        if !design.active[0] {
            return Err(Error::Regression("intercept column is degenerate".into()));
        }
        Ok(Self { p, k, design })
    }

    pub fn fit(&self, targets: &[f64]) -> Result<Fit> {
        self.design.fit(targets)
    }

    /// Coefficients of `E[Y | X = x]` in the standardized state.
    pub fn conditional_coeffs<'a>(&self, fit: &'a Fit) -> &'a [f64] {
        &fit.coeffs[..self.p]
    }

    /// Coefficients of `Z^(kk)` (zero-based `kk`) in the standardized state,
    /// before the `1/√Δt` rescaling.
    fn raw_z_coeffs<'a>(&self, fit: &'a Fit, kk: usize) -> &'a [f64] {
        &fit.coeffs[self.p * (1 + kk)..self.p * (2 + kk)]
    }

    /// `E[Y | X_s]` on design row `i`.
    pub fn conditional(&self, fit: &Fit, i: usize) -> f64 {
        let row = self.design.row(i);
        row[..self.p].iter().zip(self.conditional_coeffs(fit)).map(|(f, c)| f * c).sum()
    }

    /// Number of martingale directions.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Coefficient vectors of every `Z^(k)`, scaled by `1/√Δt`.
    pub fn z_coeffs(&self, fit: &Fit, dt: f64) -> Vec<Vec<f64>> {
        let s = 1.0 / dt.sqrt();
        (0..self.k)
            .map(|kk| self.raw_z_coeffs(fit, kk).iter().map(|c| c * s).collect())
            .collect()
    }

    /// Robust standard errors of the intercept and of each `Z^(k)` intercept.
    pub fn intercept_stderrs(&self, fit: &Fit, targets: &[f64], dt: f64) -> (f64, Vec<f64>) {
        let s = 1.0 / dt.sqrt();
        let js: Vec<usize> = (0..=self.k).map(|kk| self.p * kk).collect();
        let se = self.design.robust_stderrs(fit, targets, &js);
        (se[0], se[1..].iter().map(|v| v * s).collect())
    }
}

fn fill_features(z: f64, row: &mut [f64]) {
    let mut v = 1.0;
    for slot in row.iter_mut() {
        *slot = v;
        v *= z;
    }
}

/// Number of distinct states, counted up to `cap`.
fn distinct_values(xs: &[f64], cap: usize, scale: f64) -> usize {
    let tol = 1e-12 * scale;
    let mut seen: Vec<f64> = Vec::with_capacity(cap);
    for &x in xs {
        if !seen.iter().any(|s| (s - x).abs() <= tol) {
            seen.push(x);
            if seen.len() == cap {
                break;
            }
        }
    }
    seen.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cubic_exactly() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x * x).collect();
        let reg = StateRegression::new(&xs, 3).unwrap();
        let fit = reg.fit(&ys).unwrap();
        for (i, y) in ys.iter().enumerate() {
            assert!((reg.fitted(&fit, i) - y).abs() < 1e-10);
        }
        assert!((reg.predict(&fit, 0.33) - (1.0 - 0.66 + 0.5 * 0.33f64.powi(3))).abs() < 1e-10);
    }

    #[test]
    fn constant_state_falls_back_to_mean() {
        let xs = vec![1.5; 10];
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let reg = StateRegression::new(&xs, 3).unwrap();
        assert_eq!(reg.dim(), 1);
        let fit = reg.fit(&ys).unwrap();
        assert!((reg.fitted(&fit, 0) - 4.5).abs() < 1e-14);
    }

    #[test]
    fn constant_target_is_exact() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let reg = StateRegression::new(&xs, 3).unwrap();
        let fit = reg.fit(&vec![0.3; 100]).unwrap();
        for i in 0..100 {
            assert_eq!(reg.fitted(&fit, i), 0.3);
        }
    }

    #[test]
    fn few_distinct_states_cap_degree() {
        let xs: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
        let reg = StateRegression::new(&xs, 3).unwrap();
        assert_eq!(reg.dim(), 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(StateRegression::new(&[], 2).is_err());
        assert!(StateRegression::new(&[f64::NAN, 1.0], 2).is_err());
        let reg = StateRegression::new(&[0.0, 1.0], 1).unwrap();
        assert!(reg.fit(&[1.0]).is_err());
        assert!(reg.fit(&[1.0, f64::INFINITY]).is_err());
        assert!(MartingaleRegression::new(&reg, &[0.0], 1, 0.1).is_err());
    }

    #[test]
    fn martingale_blocks_separate() {
        // Y = 1 + 2x + (3 − x)·ΔH / √dt·√dt with ΔH of unit variance per unit time
        let dt = 0.25;
        let n = 400;
        let xs: Vec<f64> = (0..n).map(|i| (i % 20) as f64 * 0.1).collect();
        let dh: Vec<f64> = (0..n).map(|i| if (i / 20) % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let ys: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * xs[i] + (3.0 - xs[i]) * dh[i]).collect();
        let reg = StateRegression::new(&xs, 2).unwrap();
        let m = MartingaleRegression::new(&reg, &dh, 1, dt).unwrap();
        let fit = m.fit(&ys).unwrap();
        for i in 0..n {
            assert!((m.conditional(&fit, i) - (1.0 + 2.0 * xs[i])).abs() < 1e-10);
        }
        let (c, s) = reg.standardization();
        let z = &m.z_coeffs(&fit, dt)[0];
        // E[Y ΔH | x] / dt = (3 − x)·E[ΔH²]/dt = 3 − x
        for x in [0.0, 0.7, 1.9] {
            let u = (x - c) / s;
            let v = z[0] + z[1] * u + z[2] * u * u;
            assert!((v - (3.0 - x)).abs() < 1e-9, "{v}");
        }
    }
}
