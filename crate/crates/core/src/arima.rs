//! Non-seasonal ARIMA(p, d, q) with conditional-sum-of-squares estimation.
//!
//! After differencing `d` times the series `w` follows
//! `w_t − μ = Σ φ_i (w_{t−i} − μ) + e_t − Σ θ_j e_{t−j}`.

use std::io::Write;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Complex, DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_INTERPOLATED_GAP: usize = 6;
pub const SUMMARY_HEADER: [&str; 7] = ["user_id", "p", "d", "q", "mu", "sigma2", "aicc"];
pub const FORECAST_HEADER: [&str; 3] = ["user_id", "window_index", "forecast"];

const MAX_SIMPLEX_ITERS: u64 = 4000;
const SIGMA2_FLOOR: f64 = 1e-12;
/// Largest allowed companion eigenvalue modulus inside the optimizer.
const ROOT_LIMIT: f64 = 0.999;
const PACF_LIMIT: f64 = 1.0 - 1e-8;
/// Cost of parameters outside the stationary/invertible region; finite so
/// simplex arithmetic stays finite.
const INFEASIBLE: f64 = 1e100;

#[derive(Debug, Error)]
pub enum ArimaError {
    #[error("series of length {len} is too short for order {order} (need {needed})")]
    TooShort {
        len: usize,
        order: ArimaOrder,
        needed: usize,
    },
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("no usable observations after removing missing values")]
    NoData,
    #[error("optimizer failed for order {order}: {reason}")]
    Optimizer { order: ArimaOrder, reason: String },
    #[error("root reflection failed for order {order}: {reason}")]
    Roots { order: ArimaOrder, reason: String },
    #[error("every candidate order failed: {}", .0.join("; "))]
    AllFailed(Vec<String>),
    #[error("forecast horizon must be at least 1")]
    Horizon,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    /// Free parameters: mean, AR and MA coefficients.
    pub fn n_params(&self) -> usize {
        self.p + self.q + 1
    }
}

impl Default for ArimaOrder {
    /// Caps used by [`auto_select`].
    fn default() -> Self {
        Self::new(3, 2, 3)
    }
}

impl std::fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    pub mu: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub n_train: usize,
    /// Residuals scored by the objective.
    pub n_eff: usize,
    pub css: f64,
    pub aicc: f64,
    pub bic: f64,
    /// Last value of each differencing level `Δ^0 y … Δ^{d−1} y`.
    pub levels: Vec<f64>,
    /// Last `p` values of the differenced series, most recent last.
    pub w_tail: Vec<f64>,
    /// Last `q` residuals, most recent last.
    pub e_tail: Vec<f64>,
}

/// Applies the difference operator `d` times.
pub fn difference(series: &[f64], d: usize) -> Result<Vec<f64>, ArimaError> {
    if series.len() <= d {
        return Err(ArimaError::TooShort {
            len: series.len(),
            order: ArimaOrder::new(0, d, 0),
            needed: d + 1,
        });
    }
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Inverse of [`difference`] given the first value of every level
/// (`initial[ℓ]` is the first element of `Δ^ℓ y`).
pub fn integrate(diffed: &[f64], initial: &[f64]) -> Vec<f64> {
    let mut out = diffed.to_vec();
    for &start in initial.iter().rev() {
        let mut level = Vec::with_capacity(out.len() + 1);
        level.push(start);
        for v in &out {
            let last = *level.last().unwrap();
            level.push(last + v);
        }
        out = level;
    }
    out
}

/// CSS residuals. `e_t` is zero for `t < p`; the sum runs over `t ≥ score_from`.
fn residuals(w: &[f64], p: usize, q: usize, mu: f64, phi: &[f64], theta: &[f64], score_from: usize) -> (Vec<f64>, f64) {
    let mut e = vec![0.0; w.len()];
    let mut css = 0.0;
    for t in p..w.len() {
        let mut v = w[t] - mu;
        for i in 0..p {
            v -= phi[i] * (w[t - i - 1] - mu);
        }
        for j in 0..q.min(t) {
            v += theta[j] * e[t - j - 1];
        }
        e[t] = v;
        if t >= score_from {
            css += v * v;
        }
    }
    (e, css)
}

/// Eigenvalues of the companion matrix of `x^n − c_1 x^{n−1} − … − c_n`.
fn companion_roots(c: &[f64]) -> Option<Vec<Complex<f64>>> {
    let n = c.len();
    if n == 0 {
        return Some(vec![]);
    }
    let mut m = DMatrix::zeros(n, n);
    for (j, v) in c.iter().enumerate() {
        m[(0, j)] = *v;
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    Schur::try_new(m, f64::EPSILON, 10_000).map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// Step-down (reverse Levinson) recursion: the lag polynomial is stationary
/// iff every partial autocorrelation lies strictly inside (−1, 1).
fn partial_autocorrelations_inside(c: &[f64], bound: f64) -> bool {
    let mut a = c.to_vec();
    while let Some(&k) = a.last() {
        if !(k.abs() < bound) {
            return false;
        }
        let m = a.len() - 1;
        let denom = 1.0 - k * k;
        a = (0..m).map(|j| (a[j] + k * a[m - 1 - j]) / denom).collect();
    }
    true
}

#[cfg(test)]
fn max_root_modulus(c: &[f64]) -> f64 {
    companion_roots(c).unwrap().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Moves every companion eigenvalue outside the unit disc to its reciprocal
/// conjugate and rebuilds the coefficients.
fn reflect(c: &[f64], order: ArimaOrder) -> Result<Vec<f64>, ArimaError> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::Roots {
            order,
            reason: format!("non-finite coefficients {c:?}"),
        });
    }
    if partial_autocorrelations_inside(c, 1.0) {
        return Ok(c.to_vec());
    }
    let roots = companion_roots(c).ok_or_else(|| ArimaError::Roots {
        order,
        reason: format!("eigenvalue iteration did not converge for {c:?}"),
    })?;
    let mut poly = vec![Complex::new(1.0, 0.0)];
    for z in roots {
        let z = if z.norm() >= 1.0 {
            if z.norm() == 0.0 || !z.norm().is_finite() {
                return Err(ArimaError::Roots {
                    order,
                    reason: format!("degenerate root {z}"),
                });
            }
            let r = z.conj().inv();
            // keep a hair inside the disc so the reflected model is strictly stationary
            r * (ROOT_LIMIT.min(r.norm()) / r.norm())
        } else {
            z
        };
        let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
        for (k, a) in poly.iter().enumerate() {
            next[k] += a;
            next[k + 1] -= a * z;
        }
        poly = next;
    }
    let out: Vec<f64> = poly[1..].iter().map(|a| -a.re).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::Roots {
            order,
            reason: "non-finite coefficients after reflection".into(),
        });
    }
    Ok(out)
}

fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Some(vec![]);
    }
    let x = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    xtx.cholesky().map(|c| c.solve(&xty).iter().copied().collect())
}

/// Hannan–Rissanen start: long autoregression for residual proxies, then a
/// regression of `w` on its own lags and lagged proxies.
fn hannan_rissanen(w: &[f64], p: usize, q: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let mu = w.iter().sum::<f64>() / w.len() as f64;
    let c: Vec<f64> = w.iter().map(|v| v - mu).collect();
    if p == 0 && q == 0 {
        return (mu, vec![], vec![]);
    }
    let n = c.len();
    let long = if q > 0 { (p + q + 4).min(n / 4).max(1) } else { 0 };
    let mut ehat = vec![0.0; n];
    if q > 0 {
        let rows: Vec<Vec<f64>> = (long..n).map(|t| (1..=long).map(|i| c[t - i]).collect()).collect();
        let y: Vec<f64> = (long..n).map(|t| c[t]).collect();
        if let Some(a) = least_squares(&rows, &y) {
            for t in long..n {
                ehat[t] = c[t] - (1..=long).map(|i| a[i - 1] * c[t - i]).sum::<f64>();
            }
        }
    }
    let start = long + p.max(q);
    let rows: Vec<Vec<f64>> = (start..n)
        .map(|t| {
            (1..=p)
                .map(|i| c[t - i])
                .chain((1..=q).map(|j| ehat[t - j]))
                .collect()
        })
        .collect();
    let y: Vec<f64> = (start..n).map(|t| c[t]).collect();
    match least_squares(&rows, &y) {
        Some(b) => (mu, b[..p].to_vec(), b[p..].iter().map(|v| -v).collect()),
        None => (mu, vec![0.0; p], vec![0.0; q]),
    }
}

struct CssCost<'a> {
    w: &'a [f64],
    p: usize,
    q: usize,
    score_from: usize,
}

impl CssCost<'_> {
    fn eval(&self, params: &[f64]) -> f64 {
        let (mu, rest) = params.split_first().expect("mean parameter");
        let (phi, theta) = rest.split_at(self.p);
        if !mu.is_finite()
            || !partial_autocorrelations_inside(phi, PACF_LIMIT)
            || !partial_autocorrelations_inside(theta, PACF_LIMIT)
        {
            return INFEASIBLE;
        }
        let css = residuals(self.w, self.p, self.q, *mu, phi, theta, self.score_from).1;
        if css.is_finite() {
            css.min(INFEASIBLE)
        } else {
            INFEASIBLE
        }
    }
}

impl CostFunction for CssCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, params: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok(self.eval(params))
    }
}

fn simplex_search(cost: CssCost<'_>, start: Vec<f64>, scale: f64, order: ArimaOrder) -> Result<Vec<f64>, ArimaError> {
    let mut simplex = vec![start.clone()];
    for i in 0..start.len() {
        let mut v = start.clone();
        v[i] += if i == 0 { 0.1 * scale.max(1e-3) } else { 0.1 };
        simplex.push(v);
    }
    let fail = |e: argmin::core::Error| ArimaError::Optimizer {
        order,
        reason: e.to_string(),
    };
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10).map_err(fail)?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(MAX_SIMPLEX_ITERS))
        .run()
        .map_err(fail)?;
    res.state
        .best_param
        .ok_or_else(|| ArimaError::Optimizer {
            order,
            reason: "no parameters returned".into(),
        })
}

fn aicc(n_eff: usize, sigma2: f64, k: usize) -> f64 {
    let n = n_eff as f64;
    let k = k as f64;
    if n - k - 1.0 <= 0.0 {
        return f64::INFINITY;
    }
    n * sigma2.ln() + 2.0 * k * n / (n - k - 1.0)
}

fn bic(n_eff: usize, sigma2: f64, k: usize) -> f64 {
    let n = n_eff as f64;
    n * sigma2.ln() + k as f64 * n.ln()
}

fn validate(series: &[f64]) -> Result<(), ArimaError> {
    if series.is_empty() {
        return Err(ArimaError::NoData);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::NonFinite);
    }
    Ok(())
}

/// Hannan–Rissanen starting parameters `[μ, φ…, θ…]`, made stationary and invertible.
pub fn hannan_rissanen_start(series: &[f64], order: ArimaOrder) -> Result<Vec<f64>, ArimaError> {
    validate(series)?;
    let w = difference(series, order.d)?;
    let (mu, phi, theta) = hannan_rissanen(&w, order.p, order.q);
    Ok(std::iter::once(mu)
        .chain(reflect(&phi, order)?)
        .chain(reflect(&theta, order)?)
        .collect())
}

/// CSS objective of `[μ, φ…, θ…]` under the conditioning used by [`fit_css`].
pub fn css_objective(series: &[f64], order: ArimaOrder, params: &[f64]) -> Result<f64, ArimaError> {
    validate(series)?;
    let w = difference(series, order.d)?;
    if params.len() != order.n_params() {
        return Err(ArimaError::Optimizer {
            order,
            reason: format!("expected {} parameters, got {}", order.n_params(), params.len()),
        });
    }
    let (phi, theta) = params[1..].split_at(order.p);
    Ok(residuals(&w, order.p, order.q, params[0], phi, theta, order.p).1)
}

/// Fits `order` by CSS, conditioning on the first `d + p` observations.
pub fn fit_css(series: &[f64], order: ArimaOrder) -> Result<ArimaModel, ArimaError> {
    fit_conditioned(series, order, order.d + order.p)
}

/// Fits with the objective summed over original time indices `t ≥ skip`.
fn fit_conditioned(series: &[f64], order: ArimaOrder, skip: usize) -> Result<ArimaModel, ArimaError> {
    validate(series)?;
    let ArimaOrder { p, d, q } = order;
    let needed = (p + q + d + 2).max(skip + order.n_params() + 2);
    if series.len() < needed {
        return Err(ArimaError::TooShort {
            len: series.len(),
            order,
            needed,
        });
    }
    let w = difference(series, d)?;
    let score_from = skip - d;
    let n_eff = w.len() - score_from;

    let (mu0, phi0, theta0) = hannan_rissanen(&w, p, q);
    let phi0 = reflect(&phi0, order)?;
    let theta0 = reflect(&theta0, order)?;
    let start: Vec<f64> = std::iter::once(mu0).chain(phi0).chain(theta0).collect();
    let cost = CssCost { w: &w, p, q, score_from };
    let start_css = cost.eval(&start);

    let best = if p == 0 && q == 0 {
        let scored = &w[score_from..];
        vec![scored.iter().sum::<f64>() / scored.len() as f64]
    } else {
        let sd = (w.iter().map(|v| (v - mu0).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let first = simplex_search(CssCost { w: &w, p, q, score_from }, start.clone(), sd, order)?;
        // one restart from the first optimum shakes off premature simplex collapse
        let second = simplex_search(CssCost { w: &w, p, q, score_from }, first.clone(), sd, order)?;
        let mut best = if cost.eval(&second) <= cost.eval(&first) { second } else { first };
        if cost.eval(&best) > start_css {
            best = start;
        }
        best
    };

    let mu = best[0];
    let phi = reflect(&best[1..=p], order)?;
    let theta = reflect(&best[p + 1..], order)?;
    let (e, css) = residuals(&w, p, q, mu, &phi, &theta, score_from);
    let sigma2 = (css / n_eff as f64).max(SIGMA2_FLOOR);

    let mut levels = Vec::with_capacity(d);
    for l in 0..d {
        levels.push(*difference(series, l)?.last().unwrap());
    }
    Ok(ArimaModel {
        order,
        mu,
        sigma2,
        n_train: series.len(),
        n_eff,
        css,
        aicc: aicc(n_eff, sigma2, order.n_params()),
        bic: bic(n_eff, sigma2, order.n_params()),
        levels,
        w_tail: w[w.len() - p..].to_vec(),
        e_tail: e[e.len() - q..].to_vec(),
        phi,
        theta,
    })
}

/// KPSS level-stationarity critical value at the 1% level.
pub const KPSS_CRITICAL_1PCT: f64 = 0.739;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OrderCriterion {
    Aicc,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DifferencingRule {
    /// Difference while the KPSS statistic exceeds `critical`.
    Kpss { critical: f64 },
    /// Choose `d` jointly with `(p, q)` by the order criterion.
    Criterion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub differencing: DifferencingRule,
    pub criterion: OrderCriterion,
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self {
            differencing: DifferencingRule::Kpss {
                critical: KPSS_CRITICAL_1PCT,
            },
            criterion: OrderCriterion::Bic,
        }
    }
}

impl SelectionRule {
    /// AICc over the whole `(p, d, q)` grid.
    pub fn aicc_only() -> Self {
        Self {
            differencing: DifferencingRule::Criterion,
            criterion: OrderCriterion::Aicc,
        }
    }
}

/// KPSS statistic for level stationarity with Bartlett weights and
/// `⌊4 (n/100)^{1/4}⌋` lags. A constant series scores 0.
pub fn kpss_statistic(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let mut partial = 0.0;
    let mut eta = 0.0;
    for v in &e {
        partial += v;
        eta += partial * partial;
    }
    let nf = n as f64;
    eta /= nf * nf;
    let lags = ((4.0 * (nf / 100.0).powf(0.25)).floor() as usize).min(n - 1);
    let gamma = |l: usize| e[l..].iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / nf;
    let mut lrv = gamma(0);
    for l in 1..=lags {
        lrv += 2.0 * (1.0 - l as f64 / (lags as f64 + 1.0)) * gamma(l);
    }
    if lrv <= 0.0 {
        0.0
    } else {
        eta / lrv
    }
}

/// Differencing order chosen by repeated KPSS tests, at most `max_d`.
pub fn kpss_order(series: &[f64], max_d: usize, critical: f64) -> usize {
    let mut w = series.to_vec();
    for d in 0..max_d {
        if w.len() < 3 || kpss_statistic(&w) <= critical {
            return d;
        }
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    max_d
}

/// Order search with the default rule: `d` by KPSS, then `(p, q)` by BIC.
pub fn auto_select(series: &[f64], caps: ArimaOrder) -> Result<ArimaModel, ArimaError> {
    auto_select_with(series, caps, &SelectionRule::default())
}

/// Exhaustive search over `p ≤ caps.p`, `q ≤ caps.q` (and `d ≤ caps.d`
/// unless fixed by a unit-root test). Every candidate is scored on the same
/// original time indices so criteria are comparable.
pub fn auto_select_with(series: &[f64], caps: ArimaOrder, rule: &SelectionRule) -> Result<ArimaModel, ArimaError> {
    validate(series)?;
    let ds: Vec<usize> = match rule.differencing {
        DifferencingRule::Kpss { critical } => vec![kpss_order(series, caps.d, critical)],
        DifferencingRule::Criterion => (0..=caps.d).collect(),
    };
    let skip = ds.iter().max().unwrap() + caps.p;
    let score = |m: &ArimaModel| match rule.criterion {
        OrderCriterion::Aicc => m.aicc,
        OrderCriterion::Bic => m.bic,
    };
    let mut best: Option<(f64, ArimaModel)> = None;
    let mut failures = Vec::new();
    for &d in &ds {
        for p in 0..=caps.p {
            for q in 0..=caps.q {
                let order = ArimaOrder::new(p, d, q);
                match fit_conditioned(series, order, skip) {
                    Ok(m) if score(&m).is_finite() => {
                        let sm = score(&m);
                        if best.as_ref().is_none_or(|(sb, b)| better(sm, &m.order, *sb, &b.order)) {
                            best = Some((sm, m));
                        }
                    }
                    Ok(_) => failures.push(format!("{order}: non-finite criterion")),
                    Err(e) => failures.push(e.to_string()),
                }
            }
        }
    }
    let (_, best) = best.ok_or(ArimaError::AllFailed(failures))?;
    // report the winner under its own conditioning
    fit_css(series, best.order).or(Ok(best))
}

const SCORE_TIE: f64 = 1e-9;

fn better(sa: f64, a: &ArimaOrder, sb: f64, b: &ArimaOrder) -> bool {
    if (sa - sb).abs() > SCORE_TIE * (1.0 + sb.abs()) {
        return sa < sb;
    }
    let (na, nb) = (a.p + a.q, b.p + b.q);
    if na != nb {
        return na < nb;
    }
    if a.q != b.q {
        return a.q < b.q;
    }
    a.d < b.d
}

impl ArimaModel {
    /// Unclamped `h`-step forecasts on the original scale.
    pub fn forecast_raw(&self, h: usize) -> Vec<f64> {
        let (p, q) = (self.order.p, self.order.q);
        let mut w = self.w_tail.clone();
        let mut e = self.e_tail.clone();
        let mut out = Vec::with_capacity(h);
        for _ in 0..h {
            let mut v = self.mu;
            for i in 0..p {
                v += self.phi[i] * (w[w.len() - 1 - i] - self.mu);
            }
            for j in 0..q {
                v -= self.theta[j] * e[e.len() - 1 - j];
            }
            w.push(v);
            e.push(0.0);
            out.push(v);
        }
        for &last in self.levels.iter().rev() {
            let mut acc = last;
            for v in out.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        out
    }

    /// Forecasts clamped to the entropy range `[0, 100]`.
    pub fn forecast(&self, h: usize) -> Result<Vec<f64>, ArimaError> {
        if h == 0 {
            return Err(ArimaError::Horizon);
        }
        Ok(self.forecast_raw(h).into_iter().map(|v| v.clamp(0.0, 100.0)).collect())
    }
}

/// Equispaced series extracted from samples with missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    /// Position of `values[0]` in the input.
    pub start: usize,
    pub values: Vec<f64>,
    pub interpolated: usize,
}

impl PreparedSeries {
    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }
}

/// Linearly interpolates interior gaps of at most `max_gap` missing values.
/// Longer gaps split the series and the longest piece is kept (the latest
/// one on ties). Leading and trailing missing values are dropped.
pub fn fill_missing(samples: &[Option<f64>], max_gap: usize) -> Result<PreparedSeries, ArimaError> {
    let present: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].is_some()).collect();
    if present.is_empty() {
        return Err(ArimaError::NoData);
    }
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut seg_start = present[0];
    for pair in present.windows(2) {
        if pair[1] - pair[0] - 1 > max_gap {
            segments.push((seg_start, pair[0] + 1));
            seg_start = pair[1];
        }
    }
    segments.push((seg_start, present[present.len() - 1] + 1));
    let (start, end) = segments
        .iter()
        .copied()
        .fold(None::<(usize, usize)>, |acc, s| match acc {
            Some(a) if a.1 - a.0 > s.1 - s.0 => Some(a),
            _ => Some(s),
        })
        .unwrap();

    let mut values = Vec::with_capacity(end - start);
    let mut interpolated = 0;
    let mut last_known = start;
    for i in start..end {
        match samples[i] {
            Some(v) => {
                if !v.is_finite() {
                    return Err(ArimaError::NonFinite);
                }
                values.push(v);
                last_known = i;
            }
            None => {
                let next = (i + 1..end).find(|&j| samples[j].is_some()).unwrap();
                let (a, b) = (samples[last_known].unwrap(), samples[next].unwrap());
                let frac = (i - last_known) as f64 / (next - last_known) as f64;
                values.push(a + (b - a) * frac);
                interpolated += 1;
            }
        }
    }
    Ok(PreparedSeries {
        start,
        values,
        interpolated,
    })
}

pub fn write_summary_csv<W: Write>(writer: W, rows: &[(String, ArimaModel)]) -> Result<(), ArimaError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SUMMARY_HEADER)?;
    for (user, m) in rows {
        wtr.write_record([
            user.clone(),
            m.order.p.to_string(),
            m.order.d.to_string(),
            m.order.q.to_string(),
            format!("{:.6}", m.mu),
            format!("{:.6}", m.sigma2),
            format!("{:.6}", m.aicc),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Rows of `(user, window index, forecast)`.
pub fn write_forecast_csv<W: Write>(writer: W, rows: &[(String, usize, f64)]) -> Result<(), ArimaError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(FORECAST_HEADER)?;
    for (user, k, v) in rows {
        wtr.write_record([user.clone(), k.to_string(), format!("{v:.6}")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(order: ArimaOrder, mu: f64, phi: Vec<f64>, theta: Vec<f64>, levels: Vec<f64>, w_tail: Vec<f64>) -> ArimaModel {
        ArimaModel {
            order,
            mu,
            e_tail: vec![0.0; theta.len()],
            phi,
            theta,
            sigma2: 1.0,
            n_train: 100,
            n_eff: 100,
            css: 100.0,
            aicc: 0.0,
            bic: 0.0,
            levels,
            w_tail,
        }
    }

    #[test]
    fn difference_examples() {
        assert_eq!(difference(&[1.0, 2.0, 3.0, 4.0], 1).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(difference(&[1.0, 3.0, 6.0, 10.0], 2).unwrap(), vec![1.0, 1.0]);
        assert_eq!(difference(&[5.0, -1.0], 0).unwrap(), vec![5.0, -1.0]);
        assert!(difference(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn integrate_inverts_difference() {
        let y = [3.0, 1.5, 4.0, 4.0, 9.25, -2.0];
        for d in 0..=3 {
            let init: Vec<f64> = (0..d).map(|l| difference(&y, l).unwrap()[0]).collect();
            let back = integrate(&difference(&y, d).unwrap(), &init);
            for (a, b) in back.iter().zip(&y) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn white_noise_order_zero_matches_moments() {
        let y: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let m = fit_css(&y, ArimaOrder::new(0, 0, 0)).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        assert!((m.mu - mean).abs() < 1e-12);
        assert!((m.sigma2 / var - 1.0).abs() < 0.05);
        assert!(m.forecast(5).unwrap().iter().all(|f| (f - mean).abs() < 1e-12));
    }

    #[test]
    fn ar1_forecast_is_geometric() {
        let m = model(ArimaOrder::new(1, 0, 0), 0.0, vec![0.6], vec![], vec![], vec![50.0]);
        for (i, f) in m.forecast_raw(6).iter().enumerate() {
            assert!((f - 50.0 * 0.6f64.powi(i as i32 + 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_walk_forecast_is_flat() {
        let m = model(ArimaOrder::new(0, 1, 0), 0.0, vec![], vec![], vec![42.5], vec![]);
        assert_eq!(m.forecast(4).unwrap(), vec![42.5; 4]);
    }

    #[test]
    fn forecasts_are_clamped() {
        let m = model(ArimaOrder::new(0, 1, 0), 10.0, vec![], vec![], vec![95.0], vec![]);
        let f = m.forecast(3).unwrap();
        assert_eq!(f, vec![100.0; 3]);
        assert!(m.forecast(0).is_err());
    }

    #[test]
    fn reflection_makes_roots_stationary() {
        let order = ArimaOrder::new(2, 0, 0);
        let phi = reflect(&[2.5, -1.0], order).unwrap();
        assert!(max_root_modulus(&phi) < 1.0);
        let keep = reflect(&[0.5, 0.3], order).unwrap();
        assert_eq!(keep, vec![0.5, 0.3]);
    }

    #[test]
    fn pacf_check_agrees_with_roots() {
        for phi in [vec![0.5, 0.3], vec![1.2, -0.5], vec![0.5, 0.6], vec![-0.2, 0.1, 0.9], vec![0.3, 0.2, 0.1]] {
            let roots = max_root_modulus(&phi) < 1.0;
            assert_eq!(partial_autocorrelations_inside(&phi, 1.0), roots, "{phi:?}");
        }
    }

    #[test]
    fn kpss_separates_level_from_trend() {
        let flat: Vec<f64> = (0..300).map(|i| ((i * 7919) % 13) as f64).collect();
        assert!(kpss_statistic(&flat) < KPSS_CRITICAL_1PCT);
        let ramp: Vec<f64> = (0..300).map(|i| i as f64).collect();
        assert!(kpss_statistic(&ramp) > KPSS_CRITICAL_1PCT);
        assert_eq!(kpss_statistic(&[2.0; 10]), 0.0);
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(matches!(
            fit_css(&[1.0, 2.0, 3.0], ArimaOrder::new(1, 1, 1)),
            Err(ArimaError::TooShort { .. })
        ));
    }

    #[test]
    fn interpolation_fills_short_gaps() {
        let s = [None, Some(1.0), None, None, Some(4.0), Some(5.0), None];
        let p = fill_missing(&s, 6).unwrap();
        assert_eq!(p.start, 1);
        assert_eq!(p.values, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p.interpolated, 2);
    }

    #[test]
    fn long_gap_keeps_longest_segment() {
        let mut s: Vec<Option<f64>> = vec![Some(1.0); 3];
        s.extend(vec![None; 7]);
        s.extend(vec![Some(2.0); 5]);
        let p = fill_missing(&s, 6).unwrap();
        assert_eq!((p.start, p.values.len()), (10, 5));
        assert!(matches!(fill_missing(&[None, None], 6), Err(ArimaError::NoData)));
    }
}
