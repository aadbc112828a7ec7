//! Chronological train/test protocol comparing a pooled GAM, per-user GAMs
//! and per-user ARIMA forecasts.

use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arima::{self, ArimaError, ArimaModel, ArimaOrder, PreparedSeries, SelectionRule};
use crate::covariates::{self, CampusRegion, CovariateError, StaticProfile, WindowFeatures};
use crate::entropy::{self, EntropyError, EntropySequence};
use crate::grid::GridSpec;
use crate::trace::TraceDataset;
use crate::gam::{self, FactorTermSpec, FitOptions, FittedAdditiveModel, GamError, ModelSpec, SmoothTermSpec, Table};

pub const REPORT_HEADER: [&str; 6] = ["user_id", "model", "mae", "rmse", "n_test", "status"];
pub const AVERAGE_LABEL: &str = "AVERAGE";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.6;
pub const DEFAULT_K_HOUR: usize = 10;
pub const DEFAULT_K_DAY: usize = 5;

/// Profile factors of the pooled model.
pub const DEFAULT_PROFILE_FACTORS: [&str; 4] = ["job", "gender", "bike_week", "walking_week"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("user {user}: {reason}")]
    Split { user: String, reason: String },
    #[error("prediction and actual lengths differ ({pred} vs {actual})")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("no values to score")]
    Empty,
    #[error("no users to evaluate")]
    NoUsers,
    #[error("user {user}: {features} feature rows for {windows} entropy windows")]
    Misaligned {
        user: String,
        features: usize,
        windows: usize,
    },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("no profile for user {0}")]
    MissingProfile(String),
    #[error("no training rows")]
    NoTrainingRows,
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Covariate(#[from] CovariateError),
    #[error(transparent)]
    Gam(#[from] GamError),
    #[error(transparent)]
    Arima(#[from] ArimaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self, EvalError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(EvalError::Fraction(train_fraction));
        }
        Ok(Self { train_fraction })
    }

    /// Number of leading windows assigned to training: `ceil(f·T)`.
    pub fn train_len(&self, t: usize) -> usize {
        ((self.train_fraction * t as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Splits `samples` into leading training and trailing test windows. Both
/// parts must contain at least one non-missing value.
pub fn chronological_split(
    user: &str,
    samples: &[Option<f64>],
    spec: &SplitSpec,
) -> Result<(Range<usize>, Range<usize>), EvalError> {
    SplitSpec::new(spec.train_fraction)?;
    let t = samples.len();
    let n_train = spec.train_len(t);
    let fail = |reason: String| EvalError::Split {
        user: user.to_string(),
        reason,
    };
    if n_train == 0 || n_train >= t {
        return Err(fail(format!("split of {t} windows at fraction {} leaves an empty part", spec.train_fraction)));
    }
    if samples[..n_train].iter().all(Option::is_none) {
        return Err(fail("training part has no observed windows".into()));
    }
    if samples[n_train..].iter().all(Option::is_none) {
        return Err(fail("test part has no observed windows".into()));
    }
    Ok((0..n_train, n_train..t))
}

fn check_lengths(pred: &[f64], actual: &[f64]) -> Result<(), EvalError> {
    if pred.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, actual)?;
    Ok((pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// One user's entropy sequence and aligned window features.
#[derive(Debug, Clone, PartialEq)]
pub struct UserData {
    pub user_id: String,
    pub entropy: EntropySequence,
    pub features: Vec<WindowFeatures>,
}

impl UserData {
    pub fn new(entropy: EntropySequence, features: Vec<WindowFeatures>) -> Result<Self, EvalError> {
        if entropy.samples.len() != features.len() {
            return Err(EvalError::Misaligned {
                user: entropy.user_id.clone(),
                features: features.len(),
                windows: entropy.samples.len(),
            });
        }
        Ok(Self {
            user_id: entropy.user_id.clone(),
            entropy,
            features,
        })
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.entropy.values()
    }
}

/// Entropy sequences and window features for each dataset over a shared grid.
pub fn prepare_users(
    datasets: &[TraceDataset],
    grid: &GridSpec,
    campus: &CampusRegion,
    duration: i64,
    utc_offset: i64,
) -> Result<Vec<UserData>, EvalError> {
    datasets
        .par_iter()
        .map(|ds| {
            let seq = entropy::entropy_sequence(ds, grid, duration, utc_offset)?;
            let feats = covariates::dataset_features(ds, campus, utc_offset, duration)?;
            UserData::new(seq, feats)
        })
        .collect()
}

/// Seasonal per-user model: hour and day smooths plus the campus flag.
pub fn default_individual_spec() -> ModelSpec {
    ModelSpec::gamma()
        .smooth("hourNb", DEFAULT_K_HOUR)
        .smooth("dayNb", DEFAULT_K_DAY)
        .factor("campus")
}

/// Pooled model: the individual terms plus demographic and transport factors.
pub fn default_global_spec() -> ModelSpec {
    DEFAULT_PROFILE_FACTORS
        .iter()
        .fold(default_individual_spec(), |spec, f| spec.factor(f))
}

fn covariate_names(spec: &ModelSpec) -> Vec<String> {
    spec.smooths
        .iter()
        .map(|s| s.name.clone())
        .chain(spec.factors.iter().map(|f| f.name.clone()))
        .chain(spec.linear.iter().cloned())
        .collect()
}

fn covariate(name: &str, f: &WindowFeatures, profile: Option<&StaticProfile>) -> Result<Option<f64>, EvalError> {
    if WindowFeatures::names().contains(&name) {
        return Ok(f.get(name));
    }
    if StaticProfile::field_index(name).is_some() {
        return Ok(profile.and_then(|p| p.get(name)).map(f64::from));
    }
    Err(EvalError::UnknownCovariate(name.to_string()))
}

/// Observed windows of `range` with every covariate of `spec` present.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRows {
    pub table: Table,
    pub response: Vec<f64>,
    pub windows: Vec<usize>,
}

pub fn model_rows(
    user: &UserData,
    range: Range<usize>,
    spec: &ModelSpec,
    profile: Option<&StaticProfile>,
) -> Result<ModelRows, EvalError> {
    let names = covariate_names(spec);
    for n in &names {
        if StaticProfile::field_index(n).is_some() && profile.is_none() {
            return Err(EvalError::MissingProfile(user.user_id.clone()));
        }
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut response = Vec::new();
    let mut windows = Vec::new();
    'rows: for i in range {
        let Some(y) = user.entropy.samples[i].value else { continue };
        let mut row = Vec::with_capacity(names.len());
        for n in &names {
            match covariate(n, &user.features[i], profile)? {
                Some(v) => row.push(v),
                None => continue 'rows,
            }
        }
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
        response.push(y);
        windows.push(i);
    }
    let mut table = Table::new();
    for (n, c) in names.iter().zip(cols) {
        table.insert(n, c)?;
    }
    Ok(ModelRows {
        table,
        response,
        windows,
    })
}

fn concat_rows(parts: Vec<ModelRows>, names: &[String]) -> Result<ModelRows, EvalError> {
    let mut table = Table::new();
    for n in names {
        let mut col = Vec::new();
        for p in &parts {
            col.extend_from_slice(p.table.column(n)?);
        }
        table.insert(n, col)?;
    }
    Ok(ModelRows {
        table,
        response: parts.iter().flat_map(|p| p.response.iter().copied()).collect(),
        windows: parts.iter().flat_map(|p| p.windows.iter().copied()).collect(),
    })
}

/// Drops factors with fewer than two observed levels and shrinks smooth
/// bases to the number of distinct covariate values; smooths with too few
/// distinct values are dropped.
pub fn adapt_spec(spec: &ModelSpec, table: &Table) -> Result<(ModelSpec, Vec<String>), EvalError> {
    let distinct = |name: &str| -> Result<usize, EvalError> {
        let set: BTreeSet<u64> = table.column(name)?.iter().map(|v| v.to_bits()).collect();
        Ok(set.len())
    };
    let mut out = spec.clone();
    let mut notes = Vec::new();
    out.smooths.clear();
    for s in &spec.smooths {
        let n = distinct(&s.name)?;
        let min_k = if s.cyclic { 3 } else { 4 };
        if n < min_k {
            notes.push(format!("dropped s({}): {n} distinct values", s.name));
        } else if n < s.k {
            notes.push(format!("s({}) k reduced from {} to {n}", s.name, s.k));
            out.smooths.push(SmoothTermSpec { k: n, ..s.clone() });
        } else {
            out.smooths.push(s.clone());
        }
    }
    out.factors = spec
        .factors
        .iter()
        .filter_map(|f| match distinct(&f.name) {
            Ok(n) if n >= 2 => Some(Ok(f.clone())),
            Ok(_) => {
                notes.push(format!("dropped factor {}: single level", f.name));
                None
            }
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<Vec<FactorTermSpec>, _>>()?;
    Ok((out, notes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub split: SplitSpec,
    pub individual: ModelSpec,
    pub global: ModelSpec,
    pub gam: FitOptions,
    pub arima_caps: ArimaOrder,
    pub arima_rule: SelectionRule,
    pub max_interpolated_gap: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            individual: default_individual_spec(),
            global: default_global_spec(),
            gam: FitOptions::default(),
            arima_caps: ArimaOrder::default(),
            arima_rule: SelectionRule::default(),
            max_interpolated_gap: arima::DEFAULT_MAX_INTERPOLATED_GAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    GlobalGam,
    IndividualGam,
    Arima,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::GlobalGam, ModelKind::IndividualGam, ModelKind::Arima];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::GlobalGam => "global_gam",
            ModelKind::IndividualGam => "individual_gam",
            ModelKind::Arima => "arima",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s || k.as_str().replace('_', "-") == s)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub user_id: String,
    pub model: ModelKind,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub n_test: usize,
    /// `None` on success, otherwise the failure reason.
    pub failure: Option<String>,
}

impl ReportRow {
    fn failed(user_id: &str, model: ModelKind, reason: String) -> Self {
        Self {
            user_id: user_id.to_string(),
            model,
            mae: None,
            rmse: None,
            n_test: 0,
            failure: Some(reason),
        }
    }

    fn scored(user_id: &str, model: ModelKind, pred: &[f64], actual: &[f64]) -> Self {
        match (mae(pred, actual), rmse(pred, actual)) {
            (Ok(m), Ok(r)) => Self {
                user_id: user_id.to_string(),
                model,
                mae: Some(m),
                rmse: Some(r),
                n_test: actual.len(),
                failure: None,
            },
            (Err(e), _) | (_, Err(e)) => Self::failed(user_id, model, e.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelAverage {
    pub model: ModelKind,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub n_users: usize,
    pub n_failed: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub averages: Vec<ModelAverage>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let averages = ModelKind::ALL
            .iter()
            .map(|&model| {
                let of_kind: Vec<&ReportRow> = rows.iter().filter(|r| r.model == model).collect();
                let ok: Vec<&&ReportRow> = of_kind.iter().filter(|r| r.is_ok()).collect();
                let mean = |f: fn(&ReportRow) -> Option<f64>| {
                    (!ok.is_empty()).then(|| ok.iter().filter_map(|r| f(r)).sum::<f64>() / ok.len() as f64)
                };
                ModelAverage {
                    model,
                    mae: mean(|r| r.mae),
                    rmse: mean(|r| r.rmse),
                    n_users: ok.len(),
                    n_failed: of_kind.len() - ok.len(),
                    n_test: ok.iter().map(|r| r.n_test).sum(),
                }
            })
            .collect();
        Self { rows, averages }
    }

    pub fn average(&self, model: ModelKind) -> Option<&ModelAverage> {
        self.averages.iter().find(|a| a.model == model)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            let status = match &r.failure {
                None => "ok".to_string(),
                Some(reason) => format!("failed: {reason}"),
            };
            wtr.write_record([
                r.user_id.clone(),
                r.model.to_string(),
                num(r.mae),
                num(r.rmse),
                r.n_test.to_string(),
                status,
            ])?;
        }
        for a in &self.averages {
            wtr.write_record([
                AVERAGE_LABEL.to_string(),
                a.model.to_string(),
                num(a.mae),
                num(a.rmse),
                a.n_test.to_string(),
                format!("users={} failed={}", a.n_users, a.n_failed),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Pooled GAM over the `range`-selected windows of every user.
pub fn fit_global(
    users: &[(&UserData, Range<usize>)],
    profiles: &[StaticProfile],
    spec: &ModelSpec,
    options: &FitOptions,
) -> Result<(FittedAdditiveModel, Vec<String>), EvalError> {
    let names = covariate_names(spec);
    let parts = users
        .iter()
        .map(|(u, r)| {
            let profile = profiles.iter().find(|p| p.user_id == u.user_id);
            model_rows(u, r.clone(), spec, profile)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows = concat_rows(parts, &names)?;
    if rows.response.is_empty() {
        return Err(EvalError::NoTrainingRows);
    }
    fit_adapted(spec, &rows, options)
}

/// Fits after [`adapt_spec`], dropping factors aliased with earlier terms.
fn fit_adapted(spec: &ModelSpec, rows: &ModelRows, options: &FitOptions) -> Result<(FittedAdditiveModel, Vec<String>), EvalError> {
    let (mut spec, mut notes) = adapt_spec(spec, &rows.table)?;
    loop {
        match gam::fit(&spec, &rows.table, &rows.response, options) {
            Err(GamError::Collinear { term, .. }) if spec.factors.iter().any(|f| f.name == term) => {
                notes.push(format!("dropped factor {term}: collinear with earlier terms"));
                spec.factors.retain(|f| f.name != term);
            }
            other => return Ok((other?, notes)),
        }
    }
}

/// Per-user GAM on the `range`-selected windows.
pub fn fit_individual(
    user: &UserData,
    range: Range<usize>,
    spec: &ModelSpec,
    options: &FitOptions,
) -> Result<(FittedAdditiveModel, Vec<String>), EvalError> {
    let rows = model_rows(user, range, spec, None)?;
    if rows.response.is_empty() {
        return Err(EvalError::NoTrainingRows);
    }
    fit_adapted(spec, &rows, options)
}

/// Auto-selected ARIMA on the `range`-selected windows after gap handling.
pub fn fit_arima(
    user: &UserData,
    range: Range<usize>,
    cfg: &ComparisonConfig,
) -> Result<(ArimaModel, PreparedSeries), EvalError> {
    let offset = range.start;
    let mut prepared = arima::fill_missing(&user.values()[range], cfg.max_interpolated_gap)?;
    prepared.start += offset;
    let model = arima::auto_select_with(&prepared.values, cfg.arima_caps, &cfg.arima_rule)?;
    Ok((model, prepared))
}

/// Predictions are scored on the entropy scale, like clamped forecasts.
fn clamp_entropy(v: f64) -> f64 {
    v.clamp(0.0, 100.0)
}

fn score_gam(model: &FittedAdditiveModel, user: &UserData, test: Range<usize>, profile: Option<&StaticProfile>, kind: ModelKind) -> ReportRow {
    let attempt = || -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        let rows = model_rows(user, test, &model.spec, profile)?;
        let pred = model.predict(&rows.table)?;
        Ok((pred.into_iter().map(clamp_entropy).collect(), rows.response))
    };
    match attempt() {
        Ok((pred, actual)) => ReportRow::scored(&user.user_id, kind, &pred, &actual),
        Err(e) => ReportRow::failed(&user.user_id, kind, e.to_string()),
    }
}

fn score_arima(model: &ArimaModel, prepared: &PreparedSeries, user: &UserData, test: Range<usize>) -> ReportRow {
    let values = user.values();
    let lead = test.start - prepared.end();
    let h = lead + test.len();
    match model.forecast(h) {
        Ok(f) => {
            let (pred, actual): (Vec<f64>, Vec<f64>) = test
                .clone()
                .zip(&f[lead..])
                .filter_map(|(i, p)| values[i].map(|a| (*p, a)))
                .unzip();
            ReportRow::scored(&user.user_id, ModelKind::Arima, &pred, &actual)
        }
        Err(e) => ReportRow::failed(&user.user_id, ModelKind::Arima, e.to_string()),
    }
}

/// Everything produced by [`run_comparison`].
#[derive(Debug)]
pub struct ComparisonOutcome {
    pub report: EvalReport,
    pub global: Result<FittedAdditiveModel, String>,
    pub global_notes: Vec<String>,
    pub individual: Vec<(String, Result<FittedAdditiveModel, String>)>,
    pub arima: Vec<(String, Result<ArimaModel, String>)>,
}

/// Trains the pooled GAM, per-user GAMs and per-user ARIMA models on each
/// user's leading windows and scores them on the trailing windows.
pub fn run_comparison(
    users: &[UserData],
    profiles: &[StaticProfile],
    cfg: &ComparisonConfig,
) -> Result<ComparisonOutcome, EvalError> {
    if users.is_empty() {
        return Err(EvalError::NoUsers);
    }
    SplitSpec::new(cfg.split.train_fraction)?;
    let splits: Vec<Result<(Range<usize>, Range<usize>), String>> = users
        .iter()
        .map(|u| chronological_split(&u.user_id, &u.values(), &cfg.split).map_err(|e| e.to_string()))
        .collect();

    let with_profile = |u: &UserData| profiles.iter().find(|p| p.user_id == u.user_id);
    let global_inputs: Vec<(&UserData, Range<usize>)> = users
        .iter()
        .zip(&splits)
        .filter_map(|(u, s)| match s {
            Ok((train, _)) if with_profile(u).is_some() => Some((u, train.clone())),
            _ => None,
        })
        .collect();
    let (global, global_notes) = match fit_global(&global_inputs, profiles, &cfg.global, &cfg.gam) {
        Ok((m, notes)) => (Ok(m), notes),
        Err(e) => (Err(e.to_string()), vec![]),
    };

    let per_user: Vec<(Vec<ReportRow>, Result<FittedAdditiveModel, String>, Result<ArimaModel, String>)> = users
        .par_iter()
        .zip(splits.par_iter())
        .map(|(u, split)| {
            let (train, test) = match split {
                Ok(s) => s.clone(),
                Err(e) => {
                    let rows = ModelKind::ALL
                        .iter()
                        .map(|&k| ReportRow::failed(&u.user_id, k, e.clone()))
                        .collect();
                    return (rows, Err(e.clone()), Err(e.clone()));
                }
            };
            let profile = with_profile(u);
            let global_row = match (&global, profile) {
                (Ok(m), Some(p)) => score_gam(m, u, test.clone(), Some(p), ModelKind::GlobalGam),
                (Ok(_), None) => ReportRow::failed(&u.user_id, ModelKind::GlobalGam, EvalError::MissingProfile(u.user_id.clone()).to_string()),
                (Err(e), _) => ReportRow::failed(&u.user_id, ModelKind::GlobalGam, format!("global model: {e}")),
            };
            let individual = fit_individual(u, train.clone(), &cfg.individual, &cfg.gam).map(|(m, _)| m);
            let individual_row = match &individual {
                Ok(m) => score_gam(m, u, test.clone(), None, ModelKind::IndividualGam),
                Err(e) => ReportRow::failed(&u.user_id, ModelKind::IndividualGam, e.to_string()),
            };
            let arima = fit_arima(u, train, cfg);
            let arima_row = match &arima {
                Ok((m, prepared)) => score_arima(m, prepared, u, test),
                Err(e) => ReportRow::failed(&u.user_id, ModelKind::Arima, e.to_string()),
            };
            (
                vec![global_row, individual_row, arima_row],
                individual.map_err(|e| e.to_string()),
                arima.map(|(m, _)| m).map_err(|e| e.to_string()),
            )
        })
        .collect();

    let mut rows = Vec::new();
    let mut individual = Vec::new();
    let mut arima = Vec::new();
    for (u, (r, ind, ar)) in users.iter().zip(per_user) {
        rows.extend(r);
        individual.push((u.user_id.clone(), ind));
        arima.push((u.user_id.clone(), ar));
    }
    Ok(ComparisonOutcome {
        report: EvalReport::from_rows(rows),
        global,
        global_notes,
        individual,
        arima,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let spec = SplitSpec::default();
        let ten = vec![Some(1.0); 10];
        assert_eq!(chronological_split("u", &ten, &spec).unwrap(), (0..6, 6..10));
        let five = vec![Some(1.0); 5];
        assert_eq!(chronological_split("u", &five, &spec).unwrap(), (0..3, 3..5));
        let greedy = SplitSpec { train_fraction: 0.999 };
        assert!(chronological_split("u", &ten, &greedy).is_err());
        assert!(SplitSpec::new(1.0).is_err());
    }

    #[test]
    fn split_needs_observed_windows_on_both_sides() {
        let mut s = vec![Some(2.0); 6];
        s.extend([None; 4]);
        assert!(matches!(
            chronological_split("u", &s, &SplitSpec::default()),
            Err(EvalError::Split { .. })
        ));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(mae(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert!((rmse(&[1.0, 3.0], &[0.0, 0.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn averages_skip_failures() {
        let ok = |u: &str, m: f64| ReportRow {
            user_id: u.into(),
            model: ModelKind::Arima,
            mae: Some(m),
            rmse: Some(m + 1.0),
            n_test: 4,
            failure: None,
        };
        let rows = vec![ok("a", 1.0), ok("b", 3.0), ReportRow::failed("c", ModelKind::Arima, "boom".into())];
        let report = EvalReport::from_rows(rows);
        let avg = report.average(ModelKind::Arima).unwrap();
        assert_eq!(avg.mae, Some(2.0));
        assert_eq!(avg.rmse, Some(3.0));
        assert_eq!((avg.n_users, avg.n_failed), (2, 1));
        assert_eq!(report.average(ModelKind::GlobalGam).unwrap().mae, None);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("user_id,model,mae,rmse,n_test,status\n"));
        assert!(text.contains("c,arima,,,0,failed: boom"));
        assert!(text.contains("AVERAGE,arima,2.000000,3.000000,8,users=2 failed=1"));
    }

    #[test]
    fn model_kind_names() {
        assert_eq!(ModelKind::parse("global-gam"), Some(ModelKind::GlobalGam));
        assert_eq!(ModelKind::parse("arima"), Some(ModelKind::Arima));
        assert_eq!(ModelKind::parse("x"), None);
    }

    #[test]
    fn global_spec_extends_individual() {
        let g = default_global_spec();
        let i = default_individual_spec();
        assert_eq!(g.smooths, i.smooths);
        assert!(g.factors.iter().any(|f| f.name == "job"));
        assert!(!i.factors.iter().any(|f| f.name == "job"));
    }
}
