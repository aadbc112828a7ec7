//! Flat `key = value` run configuration. Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use entrhythm_core::arima::{ArimaOrder, DEFAULT_MAX_INTERPOLATED_GAP};
use entrhythm_core::covariates::CampusRegion;
use entrhythm_core::entropy::DEFAULT_WINDOW_SECONDS;
use entrhythm_core::eval::{default_global_spec, default_individual_spec, ComparisonConfig, SplitSpec};
use entrhythm_core::gam::{Family, FitOptions, ModelSpec, SmoothTermSpec};
use entrhythm_core::grid::DEFAULT_CELL_DEGREES;
use entrhythm_core::trace::{SelectionCriteria, DEFAULT_UTC_OFFSET};

use crate::CliError;

pub const KEYS: &[&str] = &[
    "locations",
    "profiles",
    "data_dir",
    "out",
    "seed",
    "window_seconds",
    "cell_degrees",
    "grid_padding",
    "split",
    "max_gap_days",
    "min_days",
    "utc_offset_seconds",
    "campus.min_lat",
    "campus.max_lat",
    "campus.min_lon",
    "campus.max_lon",
    "individual.smooths",
    "individual.factors",
    "global.smooths",
    "global.factors",
    "arima.max_p",
    "arima.max_d",
    "arima.max_q",
    "arima.max_interpolated_gap",
];

/// Raw key/value pairs, later entries overriding earlier ones.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("config line {}: expected `key = value`", i + 1)))?;
            raw.set(k.trim(), v.trim())
                .map_err(|e| CliError::Input(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::Input(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Input(format!("invalid value `{v}` for `{key}`"))),
        }
    }
}

/// Fully resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub locations: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub window_seconds: i64,
    pub cell_degrees: f64,
    pub grid_padding: usize,
    pub split: f64,
    pub selection: SelectionCriteria,
    pub utc_offset: i64,
    pub campus: Option<CampusRegion>,
    pub individual: ModelSpec,
    pub global: ModelSpec,
    pub arima_caps: ArimaOrder,
    pub max_interpolated_gap: usize,
}

fn parse_smooths(text: &str) -> Result<Vec<SmoothTermSpec>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let mut parts = item.split(':');
            let name = parts.next().unwrap_or_default().trim();
            let k = parts
                .next()
                .ok_or_else(|| CliError::Input(format!("smooth `{item}` needs `name:k`")))?
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("smooth `{item}`: k must be an integer")))?;
            let mut spec = SmoothTermSpec::new(name, k);
            match parts.next().map(str::trim) {
                None => {}
                Some("cyclic") => spec.cyclic = true,
                Some(other) => return Err(CliError::Input(format!("smooth `{item}`: unknown option `{other}`"))),
            }
            Ok(spec)
        })
        .collect()
}

fn model_spec(raw: &RawConfig, prefix: &str, default: ModelSpec) -> Result<ModelSpec, CliError> {
    let mut spec = default;
    spec.family = Family::Gamma;
    if let Some(s) = raw.get(&format!("{prefix}.smooths")) {
        spec.smooths = parse_smooths(s)?;
    }
    if let Some(f) = raw.get(&format!("{prefix}.factors")) {
        let mut rebuilt = ModelSpec::gamma();
        rebuilt.smooths = spec.smooths;
        for name in f.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            rebuilt = rebuilt.factor(name);
        }
        spec = rebuilt;
    }
    spec.validate()
        .map_err(|e| CliError::Input(format!("{prefix} model terms: {e}")))?;
    Ok(spec)
}

impl RunConfig {
    pub fn resolve(raw: &RawConfig) -> Result<Self, CliError> {
        let out = PathBuf::from(raw.get("out").unwrap_or("."));
        let data_dir = raw.get("data_dir").map(PathBuf::from).unwrap_or_else(|| out.clone());
        let utc_offset = raw.parsed("utc_offset_seconds", DEFAULT_UTC_OFFSET)?;
        let campus_keys = ["campus.min_lat", "campus.max_lat", "campus.min_lon", "campus.max_lon"];
        let present = campus_keys.iter().filter(|k| raw.get(k).is_some()).count();
        let campus = match present {
            0 => None,
            4 => {
                let v = campus_keys
                    .iter()
                    .map(|k| raw.parsed::<f64>(k, 0.0))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(CampusRegion::new(v[0], v[1], v[2], v[3]).map_err(|e| CliError::Input(e.to_string()))?)
            }
            _ => return Err(CliError::Input(format!("campus box needs all of {}", campus_keys.join(", ")))),
        };
        let window_seconds = raw.parsed("window_seconds", DEFAULT_WINDOW_SECONDS)?;
        if window_seconds <= 0 {
            return Err(CliError::Input("window_seconds must be positive".into()));
        }
        let cell_degrees = raw.parsed("cell_degrees", DEFAULT_CELL_DEGREES)?;
        if !(cell_degrees > 0.0) {
            return Err(CliError::Input("cell_degrees must be positive".into()));
        }
        let split = raw.parsed("split", SplitSpec::default().train_fraction)?;
        SplitSpec::new(split).map_err(|e| CliError::Input(e.to_string()))?;
        let caps = ArimaOrder::default();
        Ok(Self {
            locations: raw.get("locations").map(PathBuf::from),
            profiles: raw.get("profiles").map(PathBuf::from),
            data_dir,
            out,
            seed: raw.parsed("seed", 0)?,
            window_seconds,
            cell_degrees,
            grid_padding: raw.parsed("grid_padding", 1)?,
            split,
            selection: SelectionCriteria {
                min_days: raw.parsed("min_days", SelectionCriteria::default().min_days)?,
                max_gap_days: raw.parsed("max_gap_days", SelectionCriteria::default().max_gap_days)?,
                utc_offset,
            },
            utc_offset,
            campus,
            individual: model_spec(raw, "individual", default_individual_spec())?,
            global: model_spec(raw, "global", default_global_spec())?,
            arima_caps: ArimaOrder::new(
                raw.parsed("arima.max_p", caps.p)?,
                raw.parsed("arima.max_d", caps.d)?,
                raw.parsed("arima.max_q", caps.q)?,
            ),
            max_interpolated_gap: raw.parsed("arima.max_interpolated_gap", DEFAULT_MAX_INTERPOLATED_GAP)?,
        })
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            split: SplitSpec { train_fraction: self.split },
            individual: self.individual.clone(),
            global: self.global.clone(),
            gam: FitOptions::default(),
            arima_caps: self.arima_caps,
            max_interpolated_gap: self.max_interpolated_gap,
            ..ComparisonConfig::default()
        }
    }

    pub fn require_locations(&self) -> Result<&Path, CliError> {
        self.locations
            .as_deref()
            .ok_or_else(|| CliError::Input("no locations file given (`--locations` or `locations =`)".into()))
    }

    pub fn require_campus(&self) -> Result<&CampusRegion, CliError> {
        self.campus.as_ref().ok_or_else(|| {
            CliError::Input("campus box not configured (campus.min_lat, campus.max_lat, campus.min_lon, campus.max_lon)".into())
        })
    }
}
