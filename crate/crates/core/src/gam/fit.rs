//! Penalized iteratively reweighted least squares.
//!
//! Both supported families have unit Fisher weights (Gamma with log link,
//! Gaussian with identity link), so the expected information `XᵀX + S` is
//! formed once per design and drives EDF, GCV and the covariance. Steps use
//! the observed information `Xᵀdiag(y/μ)X + S`, which is exact Newton for the
//! Gamma deviance and keeps convergence quadratic when shifted zeros leave
//! `y/μ` far from one; the scoring step is the fallback.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::GamError;

/// Largest magnitude allowed for a log-scale linear predictor.
const ETA_LIMIT: f64 = 700.0;
const MAX_HALVINGS: usize = 40;
/// Relative size of the full step below which coefficients are settled.
const STEP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Gamma response with log link.
    Gamma,
    /// Gaussian response with identity link (penalized least squares).
    Gaussian,
}

impl Family {
    pub fn inverse_link(&self, eta: f64) -> f64 {
        match self {
            Family::Gamma => eta.clamp(-ETA_LIMIT, ETA_LIMIT).exp(),
            Family::Gaussian => eta,
        }
    }

    pub fn deviance(&self, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        match self {
            Family::Gamma => y
                .iter()
                .zip(mu.iter())
                .map(|(&y, &m)| 2.0 * (-(y / m).ln() + (y - m) / m))
                .sum(),
            Family::Gaussian => y.iter().zip(mu.iter()).map(|(&y, &m)| (y - m).powi(2)).sum(),
        }
    }

    /// Working response `z = η + (y − μ) g'(μ)`.
    fn working_response(&self, y: f64, eta: f64, mu: f64) -> f64 {
        match self {
            Family::Gamma => eta + (y - mu) / mu,
            Family::Gaussian => y,
        }
    }

    /// Pearson residual scaled by `sqrt(V(μ))`.
    pub fn pearson(&self, y: f64, mu: f64) -> f64 {
        match self {
            Family::Gamma => (y - mu) / mu,
            Family::Gaussian => y - mu,
        }
    }

    pub fn initial_eta(&self, y: &DVector<f64>) -> f64 {
        let mean = y.mean();
        match self {
            Family::Gamma => mean.ln(),
            Family::Gaussian => mean,
        }
    }
}

/// Everything needed to evaluate and minimize `D(β) + βᵀSβ`.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub family: Family,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub xtx: DMatrix<f64>,
    /// Combined penalty `Σ λ_j S_j`, embedded in the full coefficient space.
    pub penalty: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PirlsResult {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub deviance: f64,
    pub penalized_deviance: f64,
    /// Penalized deviance after every accepted step, starting point first.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Cholesky factor of `XᵀX + S` at the solution.
    pub hessian: Cholesky<f64, Dyn>,
}

impl PenalizedProblem {
    pub fn new(family: Family, x: DMatrix<f64>, y: DVector<f64>, penalty: DMatrix<f64>) -> Self {
        let xtx = x.transpose() * &x;
        Self {
            family,
            x,
            y,
            xtx,
            penalty,
        }
    }

    pub fn with_penalty(&self, penalty: DMatrix<f64>) -> Self {
        Self {
            family: self.family,
            x: self.x.clone(),
            y: self.y.clone(),
            xtx: self.xtx.clone(),
            penalty,
        }
    }

    pub fn mean(&self, beta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let eta = &self.x * beta;
        let mu = eta.map(|e| self.family.inverse_link(e));
        (eta, mu)
    }

    /// Penalized deviance `D(β) + βᵀSβ`.
    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let (_, mu) = self.mean(beta);
        self.family.deviance(&self.y, &mu) + beta.dot(&(&self.penalty * beta))
    }

    /// Analytic gradient of [`objective`](Self::objective).
    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let (_, mu) = self.mean(beta);
        let r = DVector::from_iterator(
            self.y.len(),
            self.y.iter().zip(mu.iter()).map(|(&y, &m)| self.family.pearson(y, m)),
        );
        (self.x.transpose() * r) * -2.0 + (&self.penalty * beta) * 2.0
    }

    fn factor(&self) -> Result<Cholesky<f64, Dyn>, GamError> {
        Cholesky::new(&self.xtx + &self.penalty).ok_or_else(|| {
            GamError::RankDeficient("penalized normal equations are singular".into())
        })
    }

    /// Newton direction from `beta`, or the scoring direction when the
    /// observed information cannot be factored.
    fn direction(&self, chol: &Cholesky<f64, Dyn>, beta: &DVector<f64>, eta: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        if self.family == Family::Gamma {
            let mut xw = self.x.clone();
            for (i, mut row) in xw.row_iter_mut().enumerate() {
                row *= (self.y[i] / mu[i]).sqrt();
            }
            let info = xw.transpose() * &xw + &self.penalty;
            if let Some(c) = Cholesky::new(info) {
                let r = DVector::from_iterator(mu.len(), (0..mu.len()).map(|i| self.family.pearson(self.y[i], mu[i])));
                let d = c.solve(&(self.x.transpose() * r - &self.penalty * beta));
                if d.iter().all(|v| v.is_finite()) {
                    return d;
                }
            }
        }
        let z = DVector::from_iterator(
            eta.len(),
            (0..eta.len()).map(|i| self.family.working_response(self.y[i], eta[i], mu[i])),
        );
        chol.solve(&(self.x.transpose() * z)) - beta
    }

    /// Runs PIRLS from `start` (or the family's default start) until the
    /// relative change of the penalized deviance drops below `tol` and the
    /// step has become negligible.
    pub fn solve(
        &self,
        start: Option<&DVector<f64>>,
        max_iter: usize,
        tol: f64,
    ) -> Result<PirlsResult, GamError> {
        let p = self.x.ncols();
        let chol = self.factor()?;
        let mut beta = match start {
            Some(b) => b.clone(),
            None => {
                // intercept-only start: least-squares projection of a constant predictor
                let eta0 = DVector::from_element(self.y.len(), self.family.initial_eta(&self.y));
                chol.solve(&(self.x.transpose() * eta0))
            }
        };
        if beta.len() != p {
            return Err(GamError::Fit(format!("start has {} coefficients, expected {p}", beta.len())));
        }
        let mut q = self.objective(&beta);
        let mut trace = vec![q];

        for iter in 1..=max_iter {
            let (eta, mu) = self.mean(&beta);
            let mut step = self.direction(&chol, &beta, &eta, &mu);
            let step_size = step.amax() / (1.0 + beta.amax());
            let mut candidate = &beta + &step;
            let mut q_new = self.objective(&candidate);
            let mut halvings = 0;
            while !(q_new.is_finite() && q_new <= q) && halvings < MAX_HALVINGS {
                step *= 0.5;
                candidate = &beta + &step;
                q_new = self.objective(&candidate);
                halvings += 1;
            }
            if !(q_new.is_finite() && q_new <= q) {
                // no descent available along the step direction: at the optimum
                return Ok(self.finish(beta, q, trace, iter, chol));
            }
            let change = (q - q_new).abs() / (q_new.abs() + 0.1);
            let at_rounding_floor = q - q_new <= 8.0 * f64::EPSILON * q.abs();
            beta = candidate;
            q = q_new;
            trace.push(q);
            if change < tol && (step_size < STEP_TOL || at_rounding_floor) {
                return Ok(self.finish(beta, q, trace, iter, chol));
            }
        }
        Err(GamError::NotConverged { trace })
    }

    fn finish(
        &self,
        beta: DVector<f64>,
        q: f64,
        trace: Vec<f64>,
        iterations: usize,
        hessian: Cholesky<f64, Dyn>,
    ) -> PirlsResult {
        let (eta, mu) = self.mean(&beta);
        let deviance = self.family.deviance(&self.y, &mu);
        PirlsResult {
            beta,
            eta,
            mu,
            deviance,
            penalized_deviance: q,
            trace,
            iterations,
            hessian,
        }
    }

    /// Influence `F = (XᵀX + S)⁻¹ XᵀX`; its diagonal gives per-coefficient EDF.
    pub fn influence(&self, hessian: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
        hessian.solve(&self.xtx)
    }

    /// Generalized cross-validation score `n·D / (n − τ)²`.
    pub fn gcv(&self, fit: &PirlsResult) -> f64 {
        let n = self.y.len() as f64;
        let tau = self.influence(&fit.hessian).trace();
        let denom = (n - tau).max(1e-8);
        n * fit.deviance / (denom * denom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem() -> PenalizedProblem {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 1.5, 2.6, 4.1, 6.9]);
        PenalizedProblem::new(Family::Gamma, x, y, DMatrix::zeros(2, 2))
    }

    #[test]
    fn gamma_log_regression_converges() {
        let p = problem();
        let fit = p.solve(None, 200, 1e-10).unwrap();
        assert!(p.gradient(&fit.beta).amax() < 1e-6);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iteration_cap_reports_trace() {
        let p = problem();
        match p.solve(None, 1, 1e-30) {
            Err(GamError::NotConverged { trace }) => assert_eq!(trace.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
