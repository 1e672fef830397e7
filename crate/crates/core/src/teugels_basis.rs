//! Orthonormal polynomials for ⟨f, g⟩₁ = ∫ f g x²ν(dx) + σ² f(0) g(0).
//!
//! The coefficients `a[n][j]` of `q_{n-1}(x) = Σ_{j≤n} a[n][j] x^{j-1}` are the
//! rows of `A = L⁻¹`, where `G = L Lᵀ` is the Cholesky factorization of the
//! monomial Gram matrix. Then `A G Aᵀ = I` and every leading coefficient is
//! positive. The jump polynomials are `p_n(x) = x q_{n-1}(x)`; the Teugels
//! martingale `H^(n)` compensates `Σ_s p_n(ΔL_s)`.

use crate::error::{Error, Result};
use crate::levy_model::LevyModel;

/// Largest supported truncation level.
pub const MAX_RANK: usize = 8;

/// A Cholesky pivot below this fraction of the largest Gram diagonal counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Pivots more negative than this fraction signal inconsistent moments.
const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OrthoBasis {
    /// Row-major lower-triangular `K × K` coefficient matrix.
    coeffs: Vec<f64>,
    rank: usize,
    model_id: u64,
}

/// Double-double accumulator (error-free transformations) for short dot products.
#[derive(Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn add(self, x: f64) -> Self {
        let s = self.hi + x;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (x - bb);
        let lo = self.lo + err;
        let hi = s + lo;
        Self {
            hi,
            lo: lo - (hi - s),
        }
    }

    fn add_prod(self, a: f64, b: f64) -> Self {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p).add(e)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

impl OrthoBasis {
    /// Gram–Schmidt (as Cholesky) on `1, x, x², …` with rank detection.
    pub fn build(model: &LevyModel, k_requested: usize) -> Result<Self> {
        if k_requested == 0 || k_requested > MAX_RANK {
            return Err(Error::InvalidArgument(format!(
                "requested rank {k_requested} outside 1..={MAX_RANK}"
            )));
        }
        if model.i_max() < 2 * k_requested + 2 {
            return Err(Error::InvalidArgument(format!(
                "i_max = {} is below 2K + 2 = {}",
                model.i_max(),
                2 * k_requested + 2
            )));
        }
        let n = k_requested;
        let gram = gram_matrix(model, n)?;
        let max_diag = (0..n).map(|i| gram[i * n + i]).fold(0.0, f64::max);

        let mut chol = vec![0.0; n * n];
        let mut rank = 0;
        for col in 0..n {
            let mut acc = Dd::new(gram[col * n + col]);
            for j in 0..col {
                acc = acc.add_prod(-chol[col * n + j], chol[col * n + j]);
            }
            let pivot = acc.value();
            if pivot < -PSD_TOLERANCE * max_diag {
                return Err(Error::GramNotPsd {
                    pivot: col + 1,
                    value: pivot,
                });
            }
            if pivot <= RANK_TOLERANCE * max_diag {
                break;
            }
            let d = pivot.sqrt();
            chol[col * n + col] = d;
            for row in col + 1..n {
                let mut acc = Dd::new(gram[row * n + col]);
                for j in 0..col {
                    acc = acc.add_prod(-chol[row * n + j], chol[col * n + j]);
                }
                chol[row * n + col] = acc.value() / d;
            }
            rank += 1;
        }
        if rank == 0 {
            return Err(Error::Internal("orthonormal basis collapsed to rank 0".into()));
        }

        // A = L⁻¹ restricted to the leading rank × rank block.
        let k = rank;
        let mut a = vec![0.0; k * k];
        for i in 0..k {
            a[i * k + i] = 1.0 / chol[i * n + i];
            for j in (0..i).rev() {
                let mut acc = Dd::default();
                for m in j..i {
                    acc = acc.add_prod(chol[i * n + m], a[m * k + j]);
                }
                a[i * k + j] = -acc.value() / chol[i * n + i];
            }
        }
        Ok(Self {
            coeffs: a,
            rank: k,
            model_id: model.id(),
        })
    }

    /// Effective rank K.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    /// `a_{nj}` with 1-based indices.
    pub fn coeff(&self, n: usize, j: usize) -> f64 {
        assert!(1 <= j && j <= n && n <= self.rank, "a[{n}][{j}] out of range");
        self.coeffs[(n - 1) * self.rank + (j - 1)]
    }

    pub fn a11(&self) -> f64 {
        self.coeffs[0]
    }

    /// Row `n` of A: coefficients of `q_{n-1}` from the constant term upward.
    pub fn row(&self, n: usize) -> &[f64] {
        let start = (n - 1) * self.rank;
        &self.coeffs[start..start + n]
    }

    fn check_index(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.rank {
            return Err(Error::BasisIndex {
                index: n,
                rank: self.rank,
            });
        }
        Ok(())
    }

    /// `q_{n-1}(x)` by Horner's rule.
    pub fn eval_q(&self, n: usize, x: f64) -> Result<f64> {
        self.check_index(n)?;
        Ok(self.q_unchecked(n, x))
    }

    /// `p_n(x) = x q_{n-1}(x)`.
    pub fn eval_p(&self, n: usize, x: f64) -> Result<f64> {
        self.check_index(n)?;
        Ok(x * self.q_unchecked(n, x))
    }

    pub(crate) fn q_unchecked(&self, n: usize, x: f64) -> f64 {
        self.row(n).iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub(crate) fn p_unchecked(&self, n: usize, x: f64) -> f64 {
        x * self.q_unchecked(n, x)
    }

    pub fn check_model(&self, model: &LevyModel) -> Result<()> {
        if self.model_id != model.id() {
            return Err(Error::BasisModelMismatch);
        }
        Ok(())
    }

    /// `‖A G Aᵀ − I‖` in max norm.
    pub fn verify_orthonormal(&self, model: &LevyModel) -> Result<f64> {
        self.check_model(model)?;
        let k = self.rank;
        let gram = gram_matrix(model, k)?;
        let mut ag = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                ag[i * k + j] = (0..=i).map(|m| self.coeffs[i * k + m] * gram[m * k + j]).sum();
            }
        }
        let mut defect: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let v: f64 = (0..=j).map(|m| ag[i * k + m] * self.coeffs[j * k + m]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((v - target).abs());
            }
        }
        Ok(defect)
    }
}

/// Monomial Gram matrix `G_{ij} = ⟨x^{i-1}, x^{j-1}⟩₁`, row-major `n × n`.
pub fn gram_matrix(model: &LevyModel, n: usize) -> Result<Vec<f64>> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = model.mu_inner(i, j)?;
        }
    }
    Ok(g)
}
