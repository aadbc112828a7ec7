//! Location histories: parsing, validation, gap statistics and user selection.
//!
//! The canonical on-disk format is a UTF-8 CSV with the header
//! `user_id,lat,lon,timestamp`, coordinates in decimal degrees and
//! timestamps in integer seconds since the Unix epoch.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Fixed local offset used for calendar-day computations (Lake Geneva, CET).
pub const DEFAULT_UTC_OFFSET: i64 = 3_600;

pub const LOCATIONS_HEADER: [&str; 4] = ["user_id", "lat", "lon", "timestamp"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("invalid header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("invalid location record: {0}")]
    InvalidRecord(String),
    #[error("dataset for user `{0}` has no records")]
    EmptyDataset(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One timestamped fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp: i64,
}

impl LocationRecord {
    pub fn new(latitude: f64, longitude: f64, timestamp: i64) -> Result<Self, TraceError> {
        let record = Self {
            latitude,
            longitude,
            timestamp,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if !self.latitude.is_finite() || !(-90.0..=90.0).contains(&self.latitude) {
            return Err(TraceError::InvalidRecord(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !self.longitude.is_finite() || !(-180.0..=180.0).contains(&self.longitude) {
            return Err(TraceError::InvalidRecord(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        if self.timestamp <= 0 {
            return Err(TraceError::InvalidRecord(format!(
                "timestamp {} must be positive",
                self.timestamp
            )));
        }
        Ok(())
    }
}

/// A user's location history, sorted strictly ascending by timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDataset {
    pub user_id: String,
    pub records: Vec<LocationRecord>,
}

impl TraceDataset {
    /// Validates every record, sorts by timestamp and collapses duplicate
    /// timestamps keeping the first occurrence in input order.
    pub fn new(
        user_id: impl Into<String>,
        mut records: Vec<LocationRecord>,
    ) -> Result<Self, TraceError> {
        let user_id = user_id.into();
        for r in &records {
            r.validate()?;
        }
        // stable sort keeps input order among equal timestamps
        records.sort_by_key(|r| r.timestamp);
        records.dedup_by_key(|r| r.timestamp);
        if records.is_empty() {
            return Err(TraceError::EmptyDataset(user_id));
        }
        Ok(Self { user_id, records })
    }

    pub fn first(&self) -> Option<&LocationRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&LocationRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parses the locations CSV. Datasets are returned in order of first
/// appearance of each user id.
pub fn parse_traces<R: Read>(reader: R) -> Result<Vec<TraceDataset>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.iter().ne(LOCATIONS_HEADER.iter().copied()) {
        return Err(TraceError::Header {
            expected: LOCATIONS_HEADER.join(","),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_user: HashMap<String, Vec<LocationRecord>> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let fail = |reason: String| TraceError::Parse { line, reason };
        if row.len() != LOCATIONS_HEADER.len() {
            return Err(fail(format!(
                "expected {} columns, found {}",
                LOCATIONS_HEADER.len(),
                row.len()
            )));
        }
        let user = row[0].to_string();
        if user.is_empty() {
            return Err(fail("empty user_id".into()));
        }
        let lat: f64 = row[1]
            .parse()
            .map_err(|_| fail(format!("latitude `{}` is not a number", &row[1])))?;
        let lon: f64 = row[2]
            .parse()
            .map_err(|_| fail(format!("longitude `{}` is not a number", &row[2])))?;
        let ts: i64 = row[3]
            .parse()
            .map_err(|_| fail(format!("timestamp `{}` is not an integer", &row[3])))?;
        let record = LocationRecord::new(lat, lon, ts).map_err(|e| fail(e.to_string()))?;
        by_user
            .entry(user.clone())
            .or_insert_with(|| {
                order.push(user);
                Vec::new()
            })
            .push(record);
    }

    order
        .into_iter()
        .map(|user| {
            let records = by_user.remove(&user).unwrap_or_default();
            TraceDataset::new(user, records)
        })
        .collect()
}

/// Writes datasets in the canonical locations CSV format.
pub fn write_traces<W: Write>(datasets: &[TraceDataset], writer: W) -> Result<(), TraceError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(LOCATIONS_HEADER)?;
    for ds in datasets {
        for r in &ds.records {
            wtr.write_record([
                ds.user_id.as_str(),
                &r.latitude.to_string(),
                &r.longitude.to_string(),
                &r.timestamp.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub duration_days: f64,
    /// Longest run of whole local calendar days without any record.
    pub max_gap_days: u32,
}

/// Local calendar day index of a timestamp under a fixed UTC offset.
pub fn local_day(timestamp: i64, utc_offset: i64) -> i64 {
    (timestamp + utc_offset).div_euclid(SECONDS_PER_DAY)
}

pub fn gap_statistics(dataset: &TraceDataset, utc_offset: i64) -> Result<GapReport, TraceError> {
    let (first, last) = match (dataset.first(), dataset.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(TraceError::EmptyDataset(dataset.user_id.clone())),
    };
    let duration_days = (last.timestamp - first.timestamp) as f64 / SECONDS_PER_DAY as f64;

    let mut max_gap = 0i64;
    let mut prev_day = local_day(first.timestamp, utc_offset);
    for r in &dataset.records[1..] {
        let day = local_day(r.timestamp, utc_offset);
        if day > prev_day {
            max_gap = max_gap.max(day - prev_day - 1);
            prev_day = day;
        }
    }
    Ok(GapReport {
        duration_days,
        max_gap_days: max_gap as u32,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionCriteria {
    pub min_days: f64,
    pub max_gap_days: u32,
    pub utc_offset: i64,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        Self {
            min_days: 20.0,
            max_gap_days: 3,
            utc_offset: DEFAULT_UTC_OFFSET,
        }
    }
}

impl SelectionCriteria {
    pub fn accepts(&self, report: &GapReport) -> bool {
        report.duration_days >= self.min_days && report.max_gap_days <= self.max_gap_days
    }
}

/// Keeps users whose trace is long enough and has no long hole. Order is preserved.
pub fn select_users(datasets: &[TraceDataset], criteria: &SelectionCriteria) -> Vec<TraceDataset> {
    datasets
        .iter()
        .filter(|ds| {
            gap_statistics(ds, criteria.utc_offset)
                .map(|g| criteria.accepts(&g))
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAY: i64 = SECONDS_PER_DAY;
    // 2018-04-02 00:00 local (+01:00), a Monday
    const T0: i64 = 1_522_623_600;

    fn ds(times: &[i64]) -> TraceDataset {
        let records = times
            .iter()
            .map(|&t| LocationRecord::new(46.52, 6.57, t).unwrap())
            .collect();
        TraceDataset::new("u", records).unwrap()
    }

    #[test]
    fn parse_sorts_shuffled_rows() {
        let csv = "user_id,lat,lon,timestamp\n\
                   a,46.5,6.6,300\n\
                   a,46.5,6.6,100\n\
                   a,46.5,6.6,200\n";
        let out = parse_traces(csv.as_bytes()).unwrap();
        assert_eq!(out.len(), 1);
        let ts: Vec<i64> = out[0].records.iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![100, 200, 300]);
    }

    #[test]
    fn header_only_is_empty() {
        let out = parse_traces("user_id,lat,lon,timestamp\n".as_bytes()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn out_of_range_latitude_cites_line() {
        let csv = "user_id,lat,lon,timestamp\na,46.5,6.6,100\na,95.0,6.6,200\n";
        match parse_traces(csv.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_are_rejected() {
        for bad in [
            "user_id,lat,lon,timestamp\na,46.5,6.6\n",
            "user_id,lat,lon,timestamp\na,x,6.6,1\n",
            "user_id,lat,lon,timestamp\na,46.5,6.6,1.5\n",
            "user_id,lat,lon,timestamp\na,46.5,200,1\n",
        ] {
            assert!(matches!(
                parse_traces(bad.as_bytes()),
                Err(TraceError::Parse { line: 2, .. })
            ));
        }
        assert!(matches!(
            parse_traces("id,lat,lon,ts\n".as_bytes()),
            Err(TraceError::Header { .. })
        ));
    }

    #[test]
    fn duplicate_timestamps_keep_first() {
        let csv = "user_id,lat,lon,timestamp\na,46.5,6.6,100\na,46.7,6.6,100\nb,1,1,5\n";
        let out = parse_traces(csv.as_bytes()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].records.len(), 1);
        assert_eq!(out[0].records[0].latitude, 46.5);
        assert_eq!(out[1].user_id, "b");
    }

    #[test]
    fn gap_dense_trace() {
        let times: Vec<i64> = (0..=48).map(|h| T0 + h * 3600).collect();
        let g = gap_statistics(&ds(&times), DEFAULT_UTC_OFFSET).unwrap();
        assert_eq!(g.duration_days, 2.0);
        assert_eq!(g.max_gap_days, 0);
    }

    #[test]
    fn gap_day_one_and_six() {
        // noon on day 1 and noon on day 6: days 2..=5 are empty
        let g = gap_statistics(&ds(&[T0 + 12 * 3600, T0 + 5 * DAY + 12 * 3600]), DEFAULT_UTC_OFFSET)
            .unwrap();
        assert_eq!(g.max_gap_days, 4);
    }

    #[test]
    fn gap_single_record() {
        let g = gap_statistics(&ds(&[T0]), DEFAULT_UTC_OFFSET).unwrap();
        assert_eq!(g.duration_days, 0.0);
        assert_eq!(g.max_gap_days, 0);
    }

    #[test]
    fn gap_of_empty_dataset_is_an_error() {
        let empty = TraceDataset {
            user_id: "x".into(),
            records: vec![],
        };
        assert!(matches!(
            gap_statistics(&empty, 0),
            Err(TraceError::EmptyDataset(_))
        ));
    }

    #[test]
    fn gap_uses_local_calendar_days() {
        // 23:30 and 00:30 local on consecutive days: no gap under +01:00
        let a = T0 + DAY - 1800;
        let b = T0 + DAY + 1800;
        assert_eq!(gap_statistics(&ds(&[a, b]), 3600).unwrap().max_gap_days, 0);
    }

    fn daily_trace(days: i64, skip: &[i64]) -> TraceDataset {
        let times: Vec<i64> = (0..=days)
            .filter(|d| !skip.contains(d))
            .map(|d| T0 + d * DAY + 3600)
            .collect();
        ds(&times)
    }

    #[test]
    fn select_users_thresholds() {
        let kept = daily_trace(34, &[10]);
        let short = daily_trace(10, &[]);
        let gappy = daily_trace(25, &[5, 6, 7, 8, 9]);
        let out = select_users(
            &[kept.clone(), short, gappy],
            &SelectionCriteria::default(),
        );
        assert_eq!(out, vec![kept]);
    }

    #[test]
    fn gap_threshold_is_inclusive() {
        let three = daily_trace(25, &[5, 6, 7]);
        assert_eq!(select_users(&[three], &SelectionCriteria::default()).len(), 1);
    }
}
