//! Cubic B-spline bases, difference penalties and the sum-to-zero
//! reparametrization used for smooth terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEGREE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("covariate values must be finite")]
    NonFinite,
    #[error("covariate has no spread (all values equal)")]
    NoSpread,
    #[error("basis size k = {k} needs at least {needed} distinct values, found {found}; use a smaller k")]
    TooFewDistinct { k: usize, needed: usize, found: usize },
    #[error("basis size k = {k} is too small (minimum {min})")]
    TooSmallK { k: usize, min: usize },
    #[error("penalty order {order} must be between 1 and k - 1 = {max}")]
    PenaltyOrder { order: usize, max: usize },
}

/// A cubic B-spline basis of `k` functions on `[lo, hi]`.
///
/// Non-cyclic bases are clamped (boundary knots repeated four times) with
/// interior knots at quantiles of the distinct training values. Cyclic
/// bases use `k` equally spaced periodic functions with `f(lo) = f(hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub k: usize,
    pub cyclic: bool,
    pub lo: f64,
    pub hi: f64,
    /// Full knot vector (length `k + 4`) for non-cyclic bases, the `k + 1`
    /// period breakpoints for cyclic ones.
    pub knots: Vec<f64>,
}

fn distinct_sorted(values: &[f64]) -> Result<Vec<f64>, BasisError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BasisError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    Ok(v)
}

fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SplineBasis {
    pub fn new(values: &[f64], k: usize, cyclic: bool) -> Result<Self, BasisError> {
        let distinct = distinct_sorted(values)?;
        if distinct.len() < 2 {
            return Err(BasisError::NoSpread);
        }
        let min_k = if cyclic { 3 } else { DEGREE + 1 };
        if k < min_k {
            return Err(BasisError::TooSmallK { k, min: min_k });
        }
        if distinct.len() < k {
            return Err(BasisError::TooFewDistinct {
                k,
                needed: k,
                found: distinct.len(),
            });
        }
        let lo = distinct[0];
        let hi = distinct[distinct.len() - 1];
        let knots = if cyclic {
            let h = (hi - lo) / k as f64;
            (0..=k).map(|i| lo + i as f64 * h).collect()
        } else {
            let interior = k - DEGREE - 1;
            let mut t = vec![lo; DEGREE + 1];
            t.extend((1..=interior).map(|i| quantile(&distinct, i as f64 / (interior + 1) as f64)));
            t.extend(std::iter::repeat(hi).take(DEGREE + 1));
            t
        };
        Ok(Self {
            k,
            cyclic,
            lo,
            hi,
            knots,
        })
    }

    /// Basis row at `x`, clamped to `[lo, hi]`. Entries sum to one.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let x = x.clamp(self.lo, self.hi);
        if self.cyclic {
            self.eval_cyclic(x)
        } else {
            self.eval_clamped(x)
        }
    }

    fn eval_clamped(&self, x: f64) -> Vec<f64> {
        let t = &self.knots;
        // knot span mu with t[mu] <= x < t[mu + 1], restricted to [DEGREE, k - 1]
        let mu = (DEGREE..self.k)
            .rev()
            .find(|&i| t[i] <= x)
            .unwrap_or(DEGREE);
        // de Boor's triangular scheme for the DEGREE + 1 nonzero functions
        let mut n = [0.0f64; DEGREE + 1];
        let mut left = [0.0f64; DEGREE + 1];
        let mut right = [0.0f64; DEGREE + 1];
        n[0] = 1.0;
        for d in 1..=DEGREE {
            left[d] = x - t[mu + 1 - d];
            right[d] = t[mu + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            n[d] = saved;
        }
        let mut row = vec![0.0; self.k];
        for (r, v) in n.iter().enumerate() {
            row[mu - DEGREE + r] = *v;
        }
        row
    }

    fn eval_cyclic(&self, x: f64) -> Vec<f64> {
        let k = self.k;
        let h = (self.hi - self.lo) / k as f64;
        let u = (x - self.lo) / h;
        let cell = (u.floor() as usize).min(k - 1);
        let s = u - cell as f64;
        let vals = [
            (1.0 - s).powi(3) / 6.0,
            (3.0 * s.powi(3) - 6.0 * s * s + 4.0) / 6.0,
            (-3.0 * s.powi(3) + 3.0 * s * s + 3.0 * s + 1.0) / 6.0,
            s.powi(3) / 6.0,
        ];
        let mut row = vec![0.0; k];
        for (offset, v) in vals.iter().enumerate() {
            let idx = (cell + k * 3 + offset - 3) % k;
            row[idx] += v;
        }
        row
    }

    /// Raw (uncentered) design block, one row per value.
    pub fn design(&self, values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(values.len(), self.k);
        for (r, &x) in values.iter().enumerate() {
            for (c, v) in self.eval(x).into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// Greville abscissae: the coefficient vector that reproduces `f(x) = x`.
    pub fn greville(&self) -> Vec<f64> {
        if self.cyclic {
            let h = (self.hi - self.lo) / self.k as f64;
            return (0..self.k).map(|j| self.lo + (j as f64 + 0.5) * h).collect();
        }
        (0..self.k)
            .map(|j| self.knots[j + 1..=j + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }

    /// Difference operator `D` of the given order; the penalty is `DᵀD`.
    ///
    /// Non-cyclic bases use divided differences over the Greville abscissae,
    /// so an order-2 penalty vanishes exactly on affine functions even with
    /// unevenly spaced knots. Cyclic bases use plain circular differences.
    pub fn difference_matrix(&self, order: usize) -> Result<DMatrix<f64>, BasisError> {
        let k = self.k;
        if order == 0 || order >= k {
            return Err(BasisError::PenaltyOrder {
                order,
                max: k.saturating_sub(1),
            });
        }
        if self.cyclic {
            let mut d = DMatrix::identity(k, k);
            for _ in 0..order {
                let mut step = DMatrix::zeros(k, k);
                for i in 0..k {
                    step[(i, i)] = -1.0;
                    step[(i, (i + 1) % k)] = 1.0;
                }
                d = step * d;
            }
            return Ok(d);
        }
        let g = self.greville();
        let mean_spacing = (self.hi - self.lo) / (k - 1) as f64;
        let mut d = DMatrix::identity(k, k);
        for level in 1..=order {
            let rows = k - level;
            let mut step = DMatrix::zeros(rows, rows + 1);
            for i in 0..rows {
                let w = mean_spacing * level as f64 / (g[i + level] - g[i]);
                step[(i, i)] = -w;
                step[(i, i + 1)] = w;
            }
            d = step * d;
        }
        Ok(d)
    }
}

/// Orthonormal basis `Z` (k × (k − 1)) of the complement of `c`, from a
/// Householder reflection. Columns of `B Z` have zero sum whenever `Bᵀ1 ∝ c`.
pub fn sum_to_zero_constraint(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vv = v.dot(&v);
    let h = if vv > 0.0 {
        DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv)
    } else {
        DMatrix::identity(k, k)
    };
    h.columns(1, k - 1).into_owned()
}

/// A smooth's basis together with its identifiability constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedBasis {
    pub spline: SplineBasis,
    pub constraint: DMatrix<f64>,
}

impl ConstrainedBasis {
    /// Builds the basis on training values and absorbs the constraint that
    /// the smooth sums to zero over those values.
    pub fn new(values: &[f64], k: usize, cyclic: bool) -> Result<Self, BasisError> {
        let spline = SplineBasis::new(values, k, cyclic)?;
        let raw = spline.design(values);
        let col_means = DVector::from_iterator(
            k,
            raw.column_iter().map(|c| c.sum() / values.len() as f64),
        );
        Ok(Self {
            constraint: sum_to_zero_constraint(&col_means),
            spline,
        })
    }

    pub fn ncols(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn design(&self, values: &[f64]) -> DMatrix<f64> {
        self.spline.design(values) * &self.constraint
    }

    pub fn row(&self, x: f64) -> DVector<f64> {
        let raw = DVector::from_vec(self.spline.eval(x));
        self.constraint.transpose() * raw
    }

    /// Penalty in the constrained parametrization, `Zᵀ DᵀD Z`.
    pub fn penalty(&self, order: usize) -> Result<DMatrix<f64>, BasisError> {
        let d = self.spline.difference_matrix(order)? * &self.constraint;
        Ok(d.transpose() * d)
    }
}

/// Evaluates the basis on `values` and returns the constrained design block
/// (columns sum to zero over `values`) along with the basis itself.
pub fn bspline_basis(
    values: &[f64],
    k: usize,
) -> Result<(ConstrainedBasis, DMatrix<f64>), BasisError> {
    let basis = ConstrainedBasis::new(values, k, false)?;
    let block = basis.design(values);
    Ok((basis, block))
}
