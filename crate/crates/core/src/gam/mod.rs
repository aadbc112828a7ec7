//! Generalized additive models with Gamma response and log link.
//!
//! Smooth terms are cubic B-splines with a difference penalty whose weight is
//! chosen by generalized cross-validation; factor terms use treatment
//! contrasts against a reference level; linear terms enter as-is.

pub mod basis;
pub mod fit;

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use basis::{BasisError, ConstrainedBasis};
pub use fit::{Family, PenalizedProblem, PirlsResult};

/// Penalty weights searched by GCV: 10^-4 … 10^4 in half decades.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..17).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

pub const DEFAULT_RESPONSE_SHIFT: f64 = 0.01;
pub const INTERCEPT: &str = "(Intercept)";
pub const CURVE_HEADER: [&str; 4] = ["term", "x", "fit", "se"];
pub const COEFFICIENT_HEADER: [&str; 6] = ["model", "term", "estimate", "std_error", "z", "p"];
pub const SMOOTH_HEADER: [&str; 4] = ["model", "term", "edf", "lambda"];

#[derive(Debug, Error)]
pub enum GamError {
    #[error("smooth `{term}`: {source}")]
    Basis { term: String, source: BasisError },
    #[error("unknown column `{0}`")]
    MissingColumn(String),
    #[error("column `{name}` has {found} rows, expected {expected}")]
    ColumnLength {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid model specification: {0}")]
    Spec(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("factor `{term}` has fewer than two levels in the training data")]
    SingleLevel { term: String },
    #[error("factor `{term}` has unseen level(s) {levels:?}")]
    UnseenLevel { term: String, levels: Vec<i64> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("rank deficient design: {0}")]
    RankDeficient(String),
    #[error("rank deficient design: term `{term}` is collinear with {with:?}")]
    Collinear { term: String, with: Vec<String> },
    #[error("PIRLS did not converge; penalized deviance trace: {trace:?}")]
    NotConverged { trace: Vec<f64> },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("`{0}` is not a smooth term of this model")]
    UnknownTerm(String),
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    columns: BTreeMap<String, Vec<f64>>,
    len: usize,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self, GamError> {
        self.insert(name, values)?;
        Ok(self)
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<(), GamError> {
        if !self.columns.is_empty() && values.len() != self.len {
            return Err(GamError::ColumnLength {
                name: name.to_string(),
                expected: self.len,
                found: values.len(),
            });
        }
        self.len = values.len();
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&[f64], GamError> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| GamError::MissingColumn(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Table {
        Table {
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r]).collect()))
                .collect(),
            len: rows.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTermSpec {
    pub name: String,
    pub k: usize,
    pub penalty_order: usize,
    pub cyclic: bool,
}

impl SmoothTermSpec {
    pub fn new(name: &str, k: usize) -> Self {
        Self {
            name: name.to_string(),
            k,
            penalty_order: 2,
            cyclic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTermSpec {
    pub name: String,
    /// Admissible codes; empty means "levels seen in the training data".
    pub levels: Vec<i64>,
    /// Reference level; defaults to the lowest code.
    pub reference: Option<i64>,
}

impl FactorTermSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            levels: vec![],
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub smooths: Vec<SmoothTermSpec>,
    pub factors: Vec<FactorTermSpec>,
    pub linear: Vec<String>,
}

impl ModelSpec {
    pub fn gamma() -> Self {
        Self {
            family: Family::Gamma,
            smooths: vec![],
            factors: vec![],
            linear: vec![],
        }
    }

    pub fn smooth(mut self, name: &str, k: usize) -> Self {
        self.smooths.push(SmoothTermSpec::new(name, k));
        self
    }

    pub fn factor(mut self, name: &str) -> Self {
        self.factors.push(FactorTermSpec::new(name));
        self
    }

    pub fn linear(mut self, name: &str) -> Self {
        self.linear.push(name.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), GamError> {
        let mut seen = std::collections::HashSet::new();
        let names = self
            .smooths
            .iter()
            .map(|s| s.name.as_str())
            .chain(self.factors.iter().map(|f| f.name.as_str()))
            .chain(self.linear.iter().map(String::as_str));
        for name in names {
            if !seen.insert(name) {
                return Err(GamError::Spec(format!("covariate `{name}` appears in more than one term")));
            }
        }
        for s in &self.smooths {
            if s.k < 3 {
                return Err(GamError::Spec(format!("smooth `{}` needs k >= 3", s.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaSelection {
    /// Coordinate-wise GCV search over the given grid.
    Gcv(Vec<f64>),
    /// One fixed weight per smooth, in spec order.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: LambdaSelection,
    pub max_iter: usize,
    pub tol: f64,
    /// Shift added to every response when the training data contain zeros.
    pub response_shift: f64,
    /// Upper bound on GCV coordinate sweeps.
    pub max_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda: LambdaSelection::Gcv(default_lambda_grid()),
            max_iter: 200,
            tol: 1e-8,
            response_shift: DEFAULT_RESPONSE_SHIFT,
            max_sweeps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermKind {
    Intercept,
    Smooth {
        basis: ConstrainedBasis,
        penalty_order: usize,
        /// Multiplier normalizing the raw penalty to the data scale.
        penalty_scale: f64,
    },
    Factor {
        levels: Vec<i64>,
        reference: i64,
    },
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub kind: TermKind,
    pub cols: Range<usize>,
}

impl Term {
    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, TermKind::Smooth { .. })
    }

    /// Coefficient labels, one per column.
    pub fn labels(&self) -> Vec<String> {
        match &self.kind {
            TermKind::Intercept => vec![INTERCEPT.to_string()],
            TermKind::Smooth { .. } => self.cols.clone().map(|c| format!("s({}).{}", self.name, c - self.cols.start + 1)).collect(),
            TermKind::Factor { levels, reference } => levels
                .iter()
                .filter(|l| *l != reference)
                .map(|l| format!("{}[{}]", self.name, l))
                .collect(),
            TermKind::Linear => vec![self.name.clone()],
        }
    }
}

/// Column layout of a model and the recipe to rebuild its design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub terms: Vec<Term>,
    pub p: usize,
}

/// Scales a raw penalty so that its weakest penalized direction is as stiff
/// as the strongest direction of the data block at `λ = 1`.
fn penalty_scale(gram: &DMatrix<f64>, raw: &DMatrix<f64>) -> f64 {
    let eig = raw.clone().symmetric_eigenvalues();
    let top = eig.amax();
    let weakest = eig
        .iter()
        .copied()
        .filter(|&v| v > 1e-9 * top)
        .fold(f64::INFINITY, f64::min);
    if !weakest.is_finite() || weakest <= 0.0 {
        return 1.0;
    }
    gram.clone().symmetric_eigenvalues().amax() / weakest
}

fn factor_code(v: f64, term: &str) -> Result<i64, GamError> {
    if !v.is_finite() || v.fract() != 0.0 {
        return Err(GamError::Data(format!("factor `{term}` has non-integer code {v}")));
    }
    Ok(v as i64)
}

impl Design {
    pub fn build(spec: &ModelSpec, data: &Table) -> Result<Self, GamError> {
        spec.validate()?;
        let mut terms = vec![Term {
            name: INTERCEPT.to_string(),
            kind: TermKind::Intercept,
            cols: 0..1,
        }];
        let mut p = 1;
        for s in &spec.smooths {
            let values = data.column(&s.name)?;
            let basis = ConstrainedBasis::new(values, s.k, s.cyclic).map_err(|source| GamError::Basis {
                term: s.name.clone(),
                source,
            })?;
            let raw = basis.penalty(s.penalty_order).map_err(|source| GamError::Basis {
                term: s.name.clone(),
                source,
            })?;
            let block = basis.design(values);
            let gram = block.transpose() * &block;
            let scale = penalty_scale(&gram, &raw);
            let width = basis.ncols();
            terms.push(Term {
                name: s.name.clone(),
                kind: TermKind::Smooth {
                    basis,
                    penalty_order: s.penalty_order,
                    penalty_scale: scale,
                },
                cols: p..p + width,
            });
            p += width;
        }
        for f in &spec.factors {
            let values = data.column(&f.name)?;
            let mut seen: Vec<i64> = values
                .iter()
                .map(|&v| factor_code(v, &f.name))
                .collect::<Result<_, _>>()?;
            seen.sort_unstable();
            seen.dedup();
            if !f.levels.is_empty() {
                let unknown: Vec<i64> = seen.iter().copied().filter(|l| !f.levels.contains(l)).collect();
                if !unknown.is_empty() {
                    return Err(GamError::UnseenLevel {
                        term: f.name.clone(),
                        levels: unknown,
                    });
                }
            }
            if seen.len() < 2 {
                return Err(GamError::SingleLevel { term: f.name.clone() });
            }
            let reference = f.reference.unwrap_or(seen[0]);
            if !seen.contains(&reference) {
                return Err(GamError::Spec(format!(
                    "reference level {reference} of `{}` is absent from the training data",
                    f.name
                )));
            }
            let width = seen.len() - 1;
            terms.push(Term {
                name: f.name.clone(),
                kind: TermKind::Factor {
                    levels: seen,
                    reference,
                },
                cols: p..p + width,
            });
            p += width;
        }
        for name in &spec.linear {
            data.column(name)?;
            terms.push(Term {
                name: name.clone(),
                kind: TermKind::Linear,
                cols: p..p + 1,
            });
            p += 1;
        }
        Ok(Self { terms, p })
    }

    /// Design matrix for `data`. Smooth covariates are clamped to the
    /// training range; unseen factor levels are an error.
    pub fn matrix(&self, data: &Table) -> Result<DMatrix<f64>, GamError> {
        let n = data.len();
        let mut x = DMatrix::zeros(n, self.p);
        for term in &self.terms {
            match &term.kind {
                TermKind::Intercept => x.column_mut(0).fill(1.0),
                TermKind::Smooth { basis, .. } => {
                    let values = data.column(&term.name)?;
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(GamError::Data(format!("smooth `{}` has non-finite values", term.name)));
                    }
                    let block = basis.design(values);
                    x.columns_mut(term.cols.start, term.cols.len()).copy_from(&block);
                }
                TermKind::Factor { levels, reference } => {
                    let values = data.column(&term.name)?;
                    let dummies: Vec<i64> = levels.iter().copied().filter(|l| l != reference).collect();
                    let mut unseen = Vec::new();
                    for (r, &v) in values.iter().enumerate() {
                        let code = factor_code(v, &term.name)?;
                        if code == *reference {
                            continue;
                        }
                        match dummies.iter().position(|&l| l == code) {
                            Some(c) => x[(r, term.cols.start + c)] = 1.0,
                            None => unseen.push(code),
                        }
                    }
                    if !unseen.is_empty() {
                        unseen.sort_unstable();
                        unseen.dedup();
                        return Err(GamError::UnseenLevel {
                            term: term.name.clone(),
                            levels: unseen,
                        });
                    }
                }
                TermKind::Linear => {
                    let values = data.column(&term.name)?;
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(GamError::Data(format!("linear term `{}` has non-finite values", term.name)));
                    }
                    for (r, &v) in values.iter().enumerate() {
                        x[(r, term.cols.start)] = v;
                    }
                }
            }
        }
        Ok(x)
    }

    pub fn smooth_terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter().filter(|t| t.is_smooth())
    }

    /// Per-smooth penalty matrices embedded in the full coefficient space.
    pub fn penalties(&self) -> Result<Vec<DMatrix<f64>>, GamError> {
        self.smooth_terms()
            .map(|t| match &t.kind {
                TermKind::Smooth {
                    basis,
                    penalty_order,
                    penalty_scale,
                } => {
                    let s = basis.penalty(*penalty_order).map_err(|source| GamError::Basis {
                        term: t.name.clone(),
                        source,
                    })? * *penalty_scale;
                    let mut full = DMatrix::zeros(self.p, self.p);
                    full.view_mut((t.cols.start, t.cols.start), (t.cols.len(), t.cols.len()))
                        .copy_from(&s);
                    Ok(full)
                }
                _ => unreachable!("smooth_terms yields smooths only"),
            })
            .collect()
    }

    /// Fails naming the first term whose columns are linearly dependent on
    /// the intercept and the terms before it.
    pub fn check_rank(&self, x: &DMatrix<f64>) -> Result<(), GamError> {
        let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
        if let Some(c) = norms.iter().position(|&v| v == 0.0) {
            let term = self.terms.iter().find(|t| t.cols.contains(&c)).map(|t| t.name.clone());
            return Err(GamError::RankDeficient(format!(
                "term `{}` has an all-zero column",
                term.unwrap_or_default()
            )));
        }
        let scaled = DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] / norms[c]);
        let gram = scaled.transpose() * scaled;
        for (idx, term) in self.terms.iter().enumerate() {
            let upto = term.cols.end;
            let sub = gram.view((0, 0), (upto, upto)).into_owned();
            let eig = sub.symmetric_eigenvalues();
            let max = eig.max();
            if eig.min() <= 1e-10 * max.max(1.0) {
                return Err(GamError::Collinear {
                    term: term.name.clone(),
                    with: self.terms[..idx].iter().map(|t| t.name.clone()).collect(),
                });
            }
        }
        Ok(())
    }
}

/// A fitted model. Immutable once built; serializable with exact round-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedAdditiveModel {
    pub spec: ModelSpec,
    pub design: Design,
    pub coefficients: Vec<f64>,
    /// Penalty weight per smooth, in spec order.
    pub lambdas: Vec<f64>,
    /// Effective degrees of freedom per smooth, in spec order.
    pub edf: Vec<f64>,
    pub deviance: f64,
    pub dispersion: f64,
    /// Bayesian posterior covariance of the coefficients.
    pub covariance: DMatrix<f64>,
    pub response_shift: f64,
    pub fitted: Vec<f64>,
    pub n_obs: usize,
    pub iterations: usize,
    pub gcv_score: f64,
    /// Penalized deviance after each accepted PIRLS step of the final fit.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub fit: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
}

fn combined_penalty(penalties: &[DMatrix<f64>], lambdas: &[f64], p: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p, p);
    for (pen, &l) in penalties.iter().zip(lambdas) {
        s += pen * l;
    }
    s
}

fn edf_per_smooth(design: &Design, influence: &DMatrix<f64>) -> Vec<f64> {
    design
        .smooth_terms()
        .map(|t| t.cols.clone().map(|c| influence[(c, c)]).sum())
        .collect()
}

/// Fits `spec` to `data` and `response` by PIRLS with GCV-selected penalties.
pub fn fit(
    spec: &ModelSpec,
    data: &Table,
    response: &[f64],
    options: &FitOptions,
) -> Result<FittedAdditiveModel, GamError> {
    if response.len() != data.len() {
        return Err(GamError::Data(format!(
            "{} responses for {} rows",
            response.len(),
            data.len()
        )));
    }
    if response.is_empty() {
        return Err(GamError::Data("no observations".into()));
    }
    if response.iter().any(|y| !y.is_finite()) {
        return Err(GamError::Data("responses must be finite".into()));
    }
    let shift = match spec.family {
        Family::Gamma => {
            if response.iter().any(|&y| y < 0.0) {
                return Err(GamError::Data("Gamma responses must be non-negative".into()));
            }
            if response.iter().any(|&y| y == 0.0) {
                if options.response_shift <= 0.0 {
                    return Err(GamError::Data("zero responses need a positive shift".into()));
                }
                options.response_shift
            } else {
                0.0
            }
        }
        Family::Gaussian => 0.0,
    };

    let design = Design::build(spec, data)?;
    let x = design.matrix(data)?;
    design.check_rank(&x)?;
    let penalties = design.penalties()?;
    let y = DVector::from_iterator(response.len(), response.iter().map(|v| v + shift));
    let n_smooth = penalties.len();
    let base = PenalizedProblem::new(spec.family, x, y, DMatrix::zeros(design.p, design.p));

    let (lambdas, result, problem) = match &options.lambda {
        LambdaSelection::Fixed(l) => {
            if l.len() != n_smooth || l.iter().any(|v| !(*v >= 0.0)) {
                return Err(GamError::Spec(format!(
                    "expected {n_smooth} non-negative lambdas, got {l:?}"
                )));
            }
            let problem = base.with_penalty(combined_penalty(&penalties, l, design.p));
            let r = problem.solve(None, options.max_iter, options.tol)?;
            (l.clone(), r, problem)
        }
        LambdaSelection::Gcv(grid) => {
            if grid.is_empty() || grid.iter().any(|v| !(*v >= 0.0)) {
                return Err(GamError::Spec("lambda grid must be non-empty and non-negative".into()));
            }
            gcv_search(&base, &penalties, grid, options)?
        }
    };

    let influence = problem.influence(&result.hessian);
    let tau = influence.trace();
    let n = response.len();
    let resid_df = (n as f64 - tau).max(1.0);
    let pearson: f64 = result
        .mu
        .iter()
        .zip(problem.y.iter())
        .map(|(&m, &y)| spec.family.pearson(y, m).powi(2))
        .sum();
    let dispersion = pearson / resid_df;
    let covariance = result.hessian.inverse() * dispersion;
    let gcv_score = problem.gcv(&result);
    let fitted = result.eta.iter().map(|&e| response_scale(spec.family, e, shift)).collect();

    Ok(FittedAdditiveModel {
        spec: spec.clone(),
        edf: edf_per_smooth(&design, &influence),
        design,
        coefficients: result.beta.iter().copied().collect(),
        lambdas,
        deviance: result.deviance,
        dispersion,
        covariance,
        response_shift: shift,
        fitted,
        n_obs: n,
        iterations: result.iterations,
        gcv_score,
        trace: result.trace,
    })
}

fn gcv_search(
    base: &PenalizedProblem,
    penalties: &[DMatrix<f64>],
    grid: &[f64],
    options: &FitOptions,
) -> Result<(Vec<f64>, PirlsResult, PenalizedProblem), GamError> {
    let p = base.x.ncols();
    let mid = grid[grid.len() / 2];
    let mut lambdas = vec![mid; penalties.len()];
    let mut problem = base.with_penalty(combined_penalty(penalties, &lambdas, p));
    let mut best = problem.solve(None, options.max_iter, options.tol)?;
    if penalties.is_empty() {
        return Ok((lambdas, best, problem));
    }
    let mut best_score = problem.gcv(&best);

    for _ in 0..options.max_sweeps.max(1) {
        let mut changed = false;
        for j in 0..penalties.len() {
            for &candidate in grid {
                if candidate == lambdas[j] {
                    continue;
                }
                let mut trial = lambdas.clone();
                trial[j] = candidate;
                let trial_problem = base.with_penalty(combined_penalty(penalties, &trial, p));
                let r = match trial_problem.solve(Some(&best.beta), options.max_iter, options.tol) {
                    Ok(r) => r,
                    Err(GamError::NotConverged { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let score = trial_problem.gcv(&r);
                if score < best_score * (1.0 - 1e-12) {
                    best_score = score;
                    lambdas = trial;
                    best = r;
                    problem = trial_problem;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // refit from the default start so the result does not depend on search order
    let final_fit = problem.solve(None, options.max_iter, options.tol)?;
    Ok((lambdas, final_fit, problem))
}

fn response_scale(family: Family, eta: f64, shift: f64) -> f64 {
    match family {
        Family::Gamma => (family.inverse_link(eta) - shift).max(0.0),
        Family::Gaussian => eta,
    }
}

impl FittedAdditiveModel {
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn linear_predictor(&self, data: &Table) -> Result<Vec<f64>, GamError> {
        let x = self.design.matrix(data)?;
        Ok((x * self.beta()).iter().copied().collect())
    }

    /// Predictions on the response scale, shift removed and floored at zero.
    pub fn predict(&self, data: &Table) -> Result<Vec<f64>, GamError> {
        Ok(self
            .linear_predictor(data)?
            .into_iter()
            .map(|e| response_scale(self.spec.family, e, self.response_shift))
            .collect())
    }

    pub fn term(&self, name: &str) -> Option<&Term> {
        self.design.terms.iter().find(|t| t.name == name)
    }

    pub fn smooth_names(&self) -> Vec<String> {
        self.design.smooth_terms().map(|t| t.name.clone()).collect()
    }

    /// Smooth contribution on `points` evenly spaced values over the
    /// training range, centered to mean zero over those values, with
    /// pointwise standard errors.
    pub fn smooth_curve(&self, name: &str, points: usize) -> Result<Vec<CurvePoint>, GamError> {
        let term = self
            .design
            .smooth_terms()
            .find(|t| t.name == name)
            .ok_or_else(|| GamError::UnknownTerm(name.to_string()))?;
        let basis = match &term.kind {
            TermKind::Smooth { basis, .. } => basis,
            _ => unreachable!(),
        };
        let points = points.max(2);
        let (lo, hi) = (basis.spline.lo, basis.spline.hi);
        let xs: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect();
        let width = term.cols.len();
        let rows: Vec<DVector<f64>> = xs.iter().map(|&x| basis.row(x)).collect();
        let mean_row = rows.iter().fold(DVector::zeros(width), |acc, r| acc + r) / points as f64;
        let beta = self.beta().rows(term.cols.start, width).into_owned();
        let cov = self
            .covariance
            .view((term.cols.start, term.cols.start), (width, width))
            .into_owned();
        Ok(xs
            .into_iter()
            .zip(rows)
            .map(|(x, row)| {
                let centered = row - &mean_row;
                let fit = centered.dot(&beta);
                let var = centered.dot(&(&cov * &centered)).max(0.0);
                CurvePoint { x, fit, se: var.sqrt() }
            })
            .collect())
    }

    /// Parametric coefficients with Wald z statistics and two-sided normal p-values.
    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        let mut rows = Vec::new();
        for term in self.design.terms.iter().filter(|t| !t.is_smooth()) {
            for (c, name) in term.cols.clone().zip(term.labels()) {
                let estimate = self.coefficients[c];
                let std_error = self.covariance[(c, c)].max(0.0).sqrt();
                let z = if std_error > 0.0 { estimate / std_error } else { f64::INFINITY.copysign(estimate) };
                let p = erfc(z.abs() / std::f64::consts::SQRT_2);
                rows.push(CoefficientRow {
                    name,
                    estimate,
                    std_error,
                    z,
                    p,
                });
            }
        }
        rows
    }
}

pub fn write_curve_csv<W: Write>(writer: W, term: &str, points: &[CurvePoint]) -> Result<(), GamError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CURVE_HEADER)?;
    for p in points {
        wtr.write_record([term.to_string(), p.x.to_string(), p.fit.to_string(), p.se.to_string()])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parametric coefficient rows of several labelled models.
pub fn write_coefficient_csv<W: Write>(writer: W, models: &[(String, &FittedAdditiveModel)]) -> Result<(), GamError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(COEFFICIENT_HEADER)?;
    for (label, m) in models {
        for r in m.coefficient_table() {
            wtr.write_record([
                label.clone(),
                r.name,
                r.estimate.to_string(),
                r.std_error.to_string(),
                r.z.to_string(),
                r.p.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Effective degrees of freedom and penalty weight per smooth.
pub fn write_smooth_csv<W: Write>(writer: W, models: &[(String, &FittedAdditiveModel)]) -> Result<(), GamError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SMOOTH_HEADER)?;
    for (label, m) in models {
        for ((name, edf), lambda) in m.smooth_names().into_iter().zip(&m.edf).zip(&m.lambdas) {
            wtr.write_record([label.clone(), name.to_string(), edf.to_string(), lambda.to_string()])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
