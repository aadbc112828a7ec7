//! Per-window spatio-temporal covariates and per-user coded profiles.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{make_windows, records_per_window, EntropyError, TimeWindow};
use crate::trace::{LocationRecord, TraceDataset, SECONDS_PER_DAY};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub const FEATURES_HEADER: [&str; 13] = [
    "user_id",
    "window_index",
    "tsnb",
    "maxdistance",
    "meanspeed",
    "maxspeed",
    "campus",
    "hourNb",
    "night",
    "dayNb",
    "prevdayNb",
    "nextdayNb",
    "weekend",
];

/// Coded profile fields and the largest admissible code of each.
pub const PROFILE_FIELDS: [(&str, u8); 24] = [
    ("gender", 1),
    ("age_group", 3),
    ("working_profile", 2),
    ("job", 1),
    ("university", 4),
    ("section", 3),
    ("living_parent_s_home", 1),
    ("parent_s_home_location", 1),
    ("family_status", 4),
    ("sport_exercises_frequence", 2),
    ("student_association", 1),
    ("smoking_cigarettes", 1),
    ("seasonal_allergies", 1),
    ("diet", 4),
    ("car_week", 1),
    ("car_weekend", 1),
    ("public_transportation_week", 1),
    ("public_transportation_weekend", 1),
    ("bike_week", 1),
    ("bike_weekend", 1),
    ("taxi_week", 1),
    ("taxi_weekend", 1),
    ("walking_week", 1),
    ("walking_weekend", 1),
];

#[derive(Debug, Error)]
pub enum CovariateError {
    #[error("line {line}, field `{field}`: {reason}")]
    Field {
        line: u64,
        field: String,
        reason: String,
    },
    #[error("profiles header: {0}")]
    Header(String),
    #[error("invalid campus region: {0}")]
    Campus(String),
    #[error("no profile for user `{0}`")]
    UnknownUser(String),
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Great-circle distance in meters between two `(lat, lon)` points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampusRegion {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl CampusRegion {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self, CovariateError> {
        if !(min_lat < max_lat && min_lon < max_lon) {
            return Err(CovariateError::Campus(format!(
                "need min < max on both axes, got lat [{min_lat}, {max_lat}], lon [{min_lon}, {max_lon}]"
            )));
        }
        Ok(Self {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

/// Covariates of one window. Kinematic fields are `None` for empty windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub k: usize,
    pub tsnb: u32,
    pub maxdistance: Option<f64>,
    pub meanspeed: Option<f64>,
    pub maxspeed: Option<f64>,
    pub campus: u8,
    pub hour_nb: u8,
    pub night: u8,
    pub day_nb: u8,
    pub prev_day_nb: u8,
    pub next_day_nb: u8,
    pub weekend: u8,
}

impl WindowFeatures {
    /// Numeric value of a named covariate, `None` when missing or unknown.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "tsnb" => Some(self.tsnb as f64),
            "maxdistance" => self.maxdistance,
            "meanspeed" => self.meanspeed,
            "maxspeed" => self.maxspeed,
            "campus" => Some(self.campus as f64),
            "hourNb" => Some(self.hour_nb as f64),
            "night" => Some(self.night as f64),
            "dayNb" => Some(self.day_nb as f64),
            "prevdayNb" => Some(self.prev_day_nb as f64),
            "nextdayNb" => Some(self.next_day_nb as f64),
            "weekend" => Some(self.weekend as f64),
            _ => None,
        }
    }

    pub fn names() -> &'static [&'static str] {
        &FEATURES_HEADER[2..]
    }
}

/// Calendar fields of a window start: `(hourNb, dayNb, tsnb)`.
/// Monday is day 1; the week is anchored at Monday 00:00 local time.
pub fn calendar_fields(t_start: i64, utc_offset: i64, duration: i64) -> (u8, u8, u32) {
    let local = t_start + utc_offset;
    let days = local.div_euclid(SECONDS_PER_DAY);
    let sec_of_day = local.rem_euclid(SECONDS_PER_DAY);
    // 1970-01-01 was a Thursday (day 4)
    let day_nb = (days + 3).rem_euclid(7) + 1;
    let hour_nb = sec_of_day / 3600 + 1;
    let sec_of_week = (day_nb - 1) * SECONDS_PER_DAY + sec_of_day;
    let tsnb = sec_of_week / duration + 1;
    (hour_nb as u8, day_nb as u8, tsnb as u32)
}

pub fn window_features(
    records: &[LocationRecord],
    window: &TimeWindow,
    campus: &CampusRegion,
    utc_offset: i64,
    duration: i64,
) -> WindowFeatures {
    let (hour_nb, day_nb, tsnb) = calendar_fields(window.t_start, utc_offset, duration);
    let night = u8::from(hour_nb >= 21 || hour_nb <= 7);
    let weekend = u8::from(day_nb >= 6);

    let (maxdistance, meanspeed, maxspeed) = if records.is_empty() {
        (None, None, None)
    } else {
        let pos = |r: &LocationRecord| (r.latitude, r.longitude);
        let mut maxdist = 0.0f64;
        for (a, ra) in records.iter().enumerate() {
            for rb in &records[a + 1..] {
                maxdist = maxdist.max(haversine_m(pos(ra), pos(rb)));
            }
        }
        let mut path = 0.0;
        let mut elapsed = 0.0;
        let mut top = 0.0f64;
        for pair in records.windows(2) {
            let dt = (pair[1].timestamp - pair[0].timestamp) as f64;
            if dt <= 0.0 {
                continue;
            }
            let dist = haversine_m(pos(&pair[0]), pos(&pair[1]));
            path += dist;
            elapsed += dt;
            top = top.max(dist / dt);
        }
        let mean = if elapsed > 0.0 { path / elapsed } else { 0.0 };
        (Some(maxdist), Some(mean), Some(top))
    };

    WindowFeatures {
        k: window.k,
        tsnb,
        maxdistance,
        meanspeed,
        maxspeed,
        campus: u8::from(records.iter().any(|r| campus.contains(r.latitude, r.longitude))),
        hour_nb,
        night,
        day_nb,
        prev_day_nb: (day_nb + 5) % 7 + 1,
        next_day_nb: day_nb % 7 + 1,
        weekend,
    }
}

/// Features for every window of a dataset, aligned 1:1 with its entropy sequence.
pub fn dataset_features(
    dataset: &TraceDataset,
    campus: &CampusRegion,
    utc_offset: i64,
    duration: i64,
) -> Result<Vec<WindowFeatures>, CovariateError> {
    let (first, last) = match (dataset.first(), dataset.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Ok(vec![]),
    };
    let windows = make_windows(first, last, duration, utc_offset)?;
    let slices = records_per_window(&dataset.records, &windows);
    Ok(windows
        .iter()
        .zip(slices)
        .map(|(w, recs)| window_features(recs, w, campus, utc_offset, duration))
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_features_csv<W: Write>(
    per_user: &[(String, Vec<WindowFeatures>)],
    writer: W,
) -> Result<(), CovariateError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(FEATURES_HEADER)?;
    for (user, rows) in per_user {
        for f in rows {
            wtr.write_record([
                user.clone(),
                f.k.to_string(),
                f.tsnb.to_string(),
                opt(f.maxdistance),
                opt(f.meanspeed),
                opt(f.maxspeed),
                f.campus.to_string(),
                f.hour_nb.to_string(),
                f.night.to_string(),
                f.day_nb.to_string(),
                f.prev_day_nb.to_string(),
                f.next_day_nb.to_string(),
                f.weekend.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_features_csv<R: Read>(
    reader: R,
) -> Result<Vec<(String, Vec<WindowFeatures>)>, CovariateError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(FEATURES_HEADER.iter().copied()) {
        return Err(CovariateError::Parse {
            line: 1,
            reason: format!("expected header `{}`", FEATURES_HEADER.join(",")),
        });
    }
    let mut out: Vec<(String, Vec<WindowFeatures>)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, reason: &str| CovariateError::Field {
            line,
            field: FEATURES_HEADER[i].to_string(),
            reason: reason.to_string(),
        };
        if row.len() != FEATURES_HEADER.len() {
            return Err(CovariateError::Parse {
                line,
                reason: format!("expected {} fields", FEATURES_HEADER.len()),
            });
        }
        let int = |i: usize| -> Result<u32, CovariateError> {
            row[i].parse().map_err(|_| field(i, "not an integer"))
        };
        let real = |i: usize| -> Result<Option<f64>, CovariateError> {
            if row[i].is_empty() {
                Ok(None)
            } else {
                row[i].parse().map(Some).map_err(|_| field(i, "not a number"))
            }
        };
        let f = WindowFeatures {
            k: int(1)? as usize,
            tsnb: int(2)?,
            maxdistance: real(3)?,
            meanspeed: real(4)?,
            maxspeed: real(5)?,
            campus: int(6)? as u8,
            hour_nb: int(7)? as u8,
            night: int(8)? as u8,
            day_nb: int(9)? as u8,
            prev_day_nb: int(10)? as u8,
            next_day_nb: int(11)? as u8,
            weekend: int(12)? as u8,
        };
        match out.iter_mut().find(|(u, _)| u == &row[0]) {
            Some((_, rows)) => rows.push(f),
            None => out.push((row[0].to_string(), vec![f])),
        }
    }
    Ok(out)
}

/// Demographic and transport-mode codes of one user, in `PROFILE_FIELDS` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticProfile {
    pub user_id: String,
    pub codes: [u8; 24],
}

impl StaticProfile {
    pub fn new(user_id: impl Into<String>, codes: [u8; 24]) -> Result<Self, CovariateError> {
        for ((name, max), &code) in PROFILE_FIELDS.iter().zip(codes.iter()) {
            if code > *max {
                return Err(CovariateError::Field {
                    line: 0,
                    field: name.to_string(),
                    reason: format!("code {code} outside 0..={max}"),
                });
            }
        }
        Ok(Self {
            user_id: user_id.into(),
            codes,
        })
    }

    pub fn field_index(name: &str) -> Option<usize> {
        PROFILE_FIELDS.iter().position(|(n, _)| *n == name)
    }

    pub fn get(&self, name: &str) -> Option<u8> {
        Self::field_index(name).map(|i| self.codes[i])
    }

    pub fn set(&mut self, name: &str, code: u8) -> Result<(), CovariateError> {
        let idx = Self::field_index(name).ok_or_else(|| CovariateError::Field {
            line: 0,
            field: name.to_string(),
            reason: "unknown profile field".into(),
        })?;
        let max = PROFILE_FIELDS[idx].1;
        if code > max {
            return Err(CovariateError::Field {
                line: 0,
                field: name.to_string(),
                reason: format!("code {code} outside 0..={max}"),
            });
        }
        self.codes[idx] = code;
        Ok(())
    }
}

/// Looks up a user's profile by id.
pub fn profile_for<'a>(
    profiles: &'a [StaticProfile],
    user_id: &str,
) -> Result<&'a StaticProfile, CovariateError> {
    profiles
        .iter()
        .find(|p| p.user_id == user_id)
        .ok_or_else(|| CovariateError::UnknownUser(user_id.to_string()))
}

/// Parses the profiles CSV. Columns may come in any order but the header
/// must hold `user_id` and exactly the coded field names.
pub fn load_profiles<R: Read>(reader: R) -> Result<Vec<StaticProfile>, CovariateError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(vec![]);
    }
    let names: Vec<&str> = headers.iter().collect();
    let unique: HashSet<&str> = names.iter().copied().collect();
    let expected: HashSet<&str> = PROFILE_FIELDS
        .iter()
        .map(|(n, _)| *n)
        .chain(std::iter::once("user_id"))
        .collect();
    if unique.len() != names.len() || unique != expected {
        let missing: Vec<_> = expected.difference(&unique).copied().collect();
        let extra: Vec<_> = unique.difference(&expected).copied().collect();
        return Err(CovariateError::Header(format!(
            "missing {missing:?}, unexpected {extra:?}"
        )));
    }
    let user_col = names.iter().position(|n| *n == "user_id").unwrap_or(0);
    let cols: Vec<usize> = PROFILE_FIELDS
        .iter()
        .map(|(n, _)| names.iter().position(|h| h == n).unwrap_or(0))
        .collect();

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != names.len() {
            return Err(CovariateError::Parse {
                line,
                reason: format!("expected {} fields, found {}", names.len(), row.len()),
            });
        }
        let mut codes = [0u8; 24];
        for (slot, (&col, (name, max))) in codes.iter_mut().zip(cols.iter().zip(PROFILE_FIELDS.iter())) {
            let code: u8 = row[col].parse().map_err(|_| CovariateError::Field {
                line,
                field: name.to_string(),
                reason: format!("`{}` is not a code", &row[col]),
            })?;
            if code > *max {
                return Err(CovariateError::Field {
                    line,
                    field: name.to_string(),
                    reason: format!("code {code} outside 0..={max}"),
                });
            }
            *slot = code;
        }
        out.push(StaticProfile {
            user_id: row[user_col].to_string(),
            codes,
        });
    }
    Ok(out)
}

pub fn write_profiles<W: Write>(profiles: &[StaticProfile], writer: W) -> Result<(), CovariateError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<&str> = std::iter::once("user_id")
        .chain(PROFILE_FIELDS.iter().map(|(n, _)| *n))
        .collect();
    wtr.write_record(&header)?;
    for p in profiles {
        let mut row = vec![p.user_id.clone()];
        row.extend(p.codes.iter().map(|c| c.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
