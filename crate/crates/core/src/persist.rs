//! Versioned JSON envelopes for fitted models.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arima::ArimaModel;
use crate::gam::FittedAdditiveModel;

pub const FORMAT: &str = "entrhythm-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("not a model file: format `{0}`")]
    Format(String),
    #[error("unsupported model file version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which population a GAM was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum GamScope {
    Global { users: Vec<String> },
    Individual { user_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Gam {
        trained_on: GamScope,
        model: Box<FittedAdditiveModel>,
    },
    Arima {
        user_id: String,
        model: ArimaModel,
    },
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Gam { .. } => "gam",
            SavedModel::Arima { .. } => "arima",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn save_model<W: Write>(model: &SavedModel, writer: W) -> Result<(), PersistError> {
    let env = Envelope {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        model,
    };
    serde_json::to_writer_pretty(writer, &env)?;
    Ok(())
}

pub fn load_model<R: Read>(reader: R) -> Result<SavedModel, PersistError> {
    let value: serde_json::Value = serde_json::from_reader(reader)?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or_default();
    if format != FORMAT {
        return Err(PersistError::Format(format.to_string()));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(PersistError::Version { found: version });
    }
    let env: Envelope<SavedModel> = serde_json::from_value(value)?;
    Ok(env.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arima::{fit_css, ArimaOrder};

    fn arima() -> SavedModel {
        let series: Vec<f64> = (0..200).map(|i| 10.0 + ((i * 37) % 11) as f64 * 0.3).collect();
        SavedModel::Arima {
            user_id: "u1".into(),
            model: fit_css(&series, ArimaOrder::new(1, 0, 1)).unwrap(),
        }
    }

    #[test]
    fn arima_round_trip_is_exact() {
        let m = arima();
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        assert_eq!(load_model(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn gam_round_trip_is_exact() {
        use crate::gam::{fit, FitOptions, ModelSpec, Table};
        let x: Vec<f64> = (0..120).map(|i| (i % 24) as f64).collect();
        let g: Vec<f64> = (0..120).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let y: Vec<f64> = x.iter().zip(&g).map(|(h, b)| 1.0 + (h / 4.0).sin().abs() + b + (h * 0.37).fract()).collect();
        let t = Table::new().with_column("hourNb", x).unwrap().with_column("g", g).unwrap();
        let model = fit(&ModelSpec::gamma().smooth("hourNb", 6).factor("g"), &t, &y, &FitOptions::default()).unwrap();
        let saved = SavedModel::Gam {
            trained_on: GamScope::Individual { user_id: "u".into() },
            model: Box::new(model),
        };
        let mut buf = Vec::new();
        save_model(&saved, &mut buf).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(back, saved);
        if let (SavedModel::Gam { model: a, .. }, SavedModel::Gam { model: b, .. }) = (&back, &saved) {
            assert_eq!(a.predict(&t).unwrap(), b.predict(&t).unwrap());
        }
    }

    #[test]
    fn foreign_and_future_files_rejected() {
        assert!(matches!(load_model(&b"{\"format\":\"x\",\"version\":1}"[..]), Err(PersistError::Format(_))));
        let mut buf = Vec::new();
        save_model(&arima(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(load_model(text.as_bytes()), Err(PersistError::Version { found: 9 })));
    }
}
