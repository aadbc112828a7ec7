//! Time windows, per-cell time proportions and the normalized spatio-temporal
//! entropy sequence.
//!
//! Within one window, every record "owns" the time closest to it: the slack
//! before the first record goes to the first record's cell, the slack after
//! the last record goes to the last record's cell, and the gap between two
//! consecutive records in different cells is split in half. Consecutive
//! records in the same cell form a visit run whose inner span counts fully.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellIndex, GridError, GridSpec};
use crate::trace::{LocationRecord, TraceDataset};

pub const DEFAULT_WINDOW_SECONDS: i64 = 3_600;

pub const ENTROPY_HEADER: [&str; 4] = ["user_id", "window_index", "window_start", "entropy"];

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("records must be strictly ascending in time (at position {0})")]
    Unsorted(usize),
    #[error("record at {timestamp} lies outside window [{t_start}, {t_end})")]
    OutsideWindow {
        timestamp: i64,
        t_start: i64,
        t_end: i64,
    },
    #[error("entropy normalization needs at least 2 grid cells")]
    DegenerateGrid,
    #[error("window duration must be positive, got {0}")]
    BadDuration(i64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Half-open interval `[t_start, t_end)`, `k` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub k: usize,
    pub t_start: i64,
    pub t_end: i64,
}

impl TimeWindow {
    pub fn duration(&self) -> i64 {
        self.t_end - self.t_start
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOccupancy {
    pub cell: CellIndex,
    pub proportion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropySample {
    pub k: usize,
    pub t_start: i64,
    /// Percentage in `[0, 100]`; `None` when the window holds no record.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySequence {
    pub user_id: String,
    pub window_duration: i64,
    pub samples: Vec<EntropySample>,
}

impl EntropySequence {
    pub fn values(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().filter(|s| s.value.is_none()).count()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// First window start at or before `t`, aligned to local midnight.
pub fn window_floor(t: i64, duration: i64, utc_offset: i64) -> i64 {
    t - (t + utc_offset).rem_euclid(duration)
}

/// Windows tiling `[t_first, t_last]`. The first window starts on the
/// duration boundary (counted from local midnight) at or before `t_first`;
/// the last one is the half-open window containing `t_last`.
pub fn make_windows(
    t_first: i64,
    t_last: i64,
    duration: i64,
    utc_offset: i64,
) -> Result<Vec<TimeWindow>, EntropyError> {
    if duration <= 0 {
        return Err(EntropyError::BadDuration(duration));
    }
    let t_last = t_last.max(t_first);
    let start = window_floor(t_first, duration, utc_offset);
    let count = ((t_last - start) / duration + 1) as usize;
    Ok((0..count)
        .map(|idx| {
            let t_start = start + idx as i64 * duration;
            TimeWindow {
                k: idx + 1,
                t_start,
                t_end: t_start + duration,
            }
        })
        .collect())
}

/// Time proportion per occupied cell, sorted by cell index. An empty record
/// list yields an empty result.
pub fn window_occupancy(
    records: &[LocationRecord],
    grid: &GridSpec,
    window: &TimeWindow,
) -> Result<Vec<CellOccupancy>, EntropyError> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    for (idx, r) in records.iter().enumerate() {
        if !window.contains(r.timestamp) {
            return Err(EntropyError::OutsideWindow {
                timestamp: r.timestamp,
                t_start: window.t_start,
                t_end: window.t_end,
            });
        }
        if idx > 0 && records[idx - 1].timestamp >= r.timestamp {
            return Err(EntropyError::Unsorted(idx));
        }
    }
    let cells = records
        .iter()
        .map(|r| grid.cell_of(r.latitude, r.longitude))
        .collect::<Result<Vec<_>, _>>()?;

    let last = records.len() - 1;
    let t = |idx: usize| records[idx].timestamp as f64;
    let mut seconds: BTreeMap<CellIndex, f64> = BTreeMap::new();
    let mut b = 0;
    while b <= last {
        let mut c = b;
        while c < last && cells[c + 1] == cells[b] {
            c += 1;
        }
        let lead = if b == 0 {
            t(0) - window.t_start as f64
        } else {
            (t(b) - t(b - 1)) / 2.0
        };
        let trail = if c == last {
            window.t_end as f64 - t(last)
        } else {
            (t(c + 1) - t(c)) / 2.0
        };
        *seconds.entry(cells[b]).or_insert(0.0) += lead + (t(c) - t(b)) + trail;
        b = c + 1;
    }

    let total = window.duration() as f64;
    Ok(seconds
        .into_iter()
        .map(|(cell, s)| CellOccupancy {
            cell,
            proportion: s / total,
        })
        .filter(|o| o.proportion > 0.0)
        .collect())
}

/// Shannon entropy of the proportions, normalized by `log2(n·m)` and
/// expressed as a percentage. `None` for an empty occupancy.
pub fn window_entropy(occ: &[CellOccupancy], grid: &GridSpec) -> Result<Option<f64>, EntropyError> {
    let proportions: Vec<f64> = occ.iter().map(|o| o.proportion).collect();
    normalized_entropy(&proportions, grid.cell_count())
}

pub fn normalized_entropy(proportions: &[f64], cells: usize) -> Result<Option<f64>, EntropyError> {
    if cells < 2 {
        return Err(EntropyError::DegenerateGrid);
    }
    if proportions.is_empty() {
        return Ok(None);
    }
    let h: f64 = proportions
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    let pct = h / (cells as f64).log2() * 100.0;
    // adding 0.0 turns -0.0 into 0.0
    Ok(Some(pct.clamp(0.0, 100.0) + 0.0))
}

/// Splits a sorted record list into per-window slices.
pub(crate) fn records_per_window<'a>(
    records: &'a [LocationRecord],
    windows: &[TimeWindow],
) -> Vec<&'a [LocationRecord]> {
    let mut out = Vec::with_capacity(windows.len());
    let mut lo = 0;
    for w in windows {
        let hi = lo + records[lo..].partition_point(|r| r.timestamp < w.t_end);
        out.push(&records[lo..hi]);
        lo = hi;
    }
    out
}

pub fn entropy_sequence(
    dataset: &TraceDataset,
    grid: &GridSpec,
    duration: i64,
    utc_offset: i64,
) -> Result<EntropySequence, EntropyError> {
    if grid.cell_count() < 2 {
        return Err(EntropyError::DegenerateGrid);
    }
    let (first, last) = match (dataset.first(), dataset.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => {
            return Ok(EntropySequence {
                user_id: dataset.user_id.clone(),
                window_duration: duration,
                samples: vec![],
            })
        }
    };
    let windows = make_windows(first, last, duration, utc_offset)?;
    let slices = records_per_window(&dataset.records, &windows);
    let samples = windows
        .iter()
        .zip(slices)
        .map(|(w, recs)| {
            let occ = window_occupancy(recs, grid, w)?;
            Ok(EntropySample {
                k: w.k,
                t_start: w.t_start,
                value: window_entropy(&occ, grid)?,
            })
        })
        .collect::<Result<Vec<_>, EntropyError>>()?;
    Ok(EntropySequence {
        user_id: dataset.user_id.clone(),
        window_duration: duration,
        samples,
    })
}

pub fn write_entropy_csv<W: Write>(
    sequences: &[EntropySequence],
    writer: W,
) -> Result<(), EntropyError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ENTROPY_HEADER)?;
    for seq in sequences {
        for s in &seq.samples {
            let value = s.value.map(|v| format!("{v:.6}")).unwrap_or_default();
            wtr.write_record([
                seq.user_id.as_str(),
                &s.k.to_string(),
                &s.t_start.to_string(),
                &value,
            ])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads the entropy CSV back into per-user sequences (first-appearance
/// order). The window duration is inferred from consecutive starts.
pub fn read_entropy_csv<R: Read>(reader: R) -> Result<Vec<EntropySequence>, EntropyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(ENTROPY_HEADER.iter().copied()) {
        return Err(EntropyError::Parse {
            line: 1,
            reason: format!("expected header `{}`", ENTROPY_HEADER.join(",")),
        });
    }
    let mut out: Vec<EntropySequence> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let fail = |reason: String| EntropyError::Parse { line, reason };
        if row.len() != 4 {
            return Err(fail(format!("expected 4 fields, found {}", row.len())));
        }
        let k: usize = row[1].parse().map_err(|_| fail("bad window_index".into()))?;
        let t_start: i64 = row[2].parse().map_err(|_| fail("bad window_start".into()))?;
        let value = if row[3].is_empty() {
            None
        } else {
            let v: f64 = row[3].parse().map_err(|_| fail("bad entropy".into()))?;
            if !(0.0..=100.0).contains(&v) {
                return Err(fail(format!("entropy {v} outside [0, 100]")));
            }
            Some(v)
        };
        let sample = EntropySample { k, t_start, value };
        match out.iter_mut().find(|s| s.user_id == row[0]) {
            Some(seq) => {
                if let Some(prev) = seq.samples.last() {
                    if k != prev.k + 1 {
                        return Err(fail("window indices must be contiguous".into()));
                    }
                    seq.window_duration = t_start - prev.t_start;
                }
                seq.samples.push(sample);
            }
            None => {
                if k != 1 {
                    return Err(fail("window indices must start at 1".into()));
                }
                out.push(EntropySequence {
                    user_id: row[0].to_string(),
                    window_duration: DEFAULT_WINDOW_SECONDS,
                    samples: vec![sample],
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: i64 = 1_522_623_600; // Monday 2018-04-02 00:00 at +01:00
    const OFF: i64 = 3_600;
    const D: f64 = 0.0025;

    fn grid() -> GridSpec {
        GridSpec::new(46.0, 6.0, D, D, 10, 10).unwrap()
    }

    fn at(cell: (usize, usize), t: i64) -> LocationRecord {
        LocationRecord::new(
            46.0 + (cell.1 as f64 + 0.5) * D,
            6.0 + (cell.0 as f64 + 0.5) * D,
            t,
        )
        .unwrap()
    }

    fn window() -> TimeWindow {
        TimeWindow {
            k: 1,
            t_start: T0,
            t_end: T0 + 3600,
        }
    }

    fn prop_of(occ: &[CellOccupancy], cell: (usize, usize)) -> f64 {
        occ.iter()
            .find(|o| o.cell == CellIndex { i: cell.0, j: cell.1 })
            .map(|o| o.proportion)
            .unwrap_or(0.0)
    }

    #[test]
    fn windows_aligned_span() {
        assert_eq!(make_windows(T0, T0 + 3 * 3600 - 1, 3600, OFF).unwrap().len(), 3);
    }

    #[test]
    fn windows_mid_hour_span() {
        // 00:20 -> 02:50 covers hours 0, 1 and 2
        let w = make_windows(T0 + 1200, T0 + 1200 + 9000, 3600, OFF).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].t_start, T0);
        assert_eq!(w[2].t_end, T0 + 3 * 3600);
        assert!(w.windows(2).all(|p| p[0].t_end == p[1].t_start));
    }

    #[test]
    fn windows_degenerate_span() {
        let w = make_windows(T0 + 10, T0 + 10, 3600, OFF).unwrap();
        assert_eq!(w, vec![TimeWindow { k: 1, t_start: T0, t_end: T0 + 3600 }]);
    }

    #[test]
    fn windows_reject_bad_duration() {
        assert!(make_windows(T0, T0, 0, OFF).is_err());
    }

    #[test]
    fn single_record_fills_window() {
        let occ = window_occupancy(&[at((3, 3), T0 + 1234)], &grid(), &window()).unwrap();
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].proportion, 1.0);
    }

    #[test]
    fn two_cells_split_half() {
        let recs = [at((1, 1), T0 + 900), at((2, 2), T0 + 2700)];
        let occ = window_occupancy(&recs, &grid(), &window()).unwrap();
        assert!((prop_of(&occ, (1, 1)) - 0.5).abs() < 1e-12);
        assert!((prop_of(&occ, (2, 2)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn run_then_single() {
        let recs = [
            at((1, 1), T0),
            at((1, 1), T0 + 600),
            at((1, 1), T0 + 1200),
            at((4, 2), T0 + 2400),
        ];
        let occ = window_occupancy(&recs, &grid(), &window()).unwrap();
        assert!((prop_of(&occ, (1, 1)) - 0.5).abs() < 1e-12);
        assert!((prop_of(&occ, (4, 2)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reentry_runs_are_summed() {
        let recs = [at((1, 1), T0 + 600), at((2, 1), T0 + 1800), at((1, 1), T0 + 3000)];
        let occ = window_occupancy(&recs, &grid(), &window()).unwrap();
        // A: 600 + 600 (first run), 600 + 600 (second run); B: 600 + 600
        assert!((prop_of(&occ, (1, 1)) - 2400.0 / 3600.0).abs() < 1e-12);
        assert!((prop_of(&occ, (2, 1)) - 1200.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_preconditions() {
        let g = grid();
        let w = window();
        assert!(matches!(
            window_occupancy(&[at((1, 1), T0 + 3600)], &g, &w),
            Err(EntropyError::OutsideWindow { .. })
        ));
        assert!(matches!(
            window_occupancy(&[at((1, 1), T0 + 20), at((1, 1), T0 + 10)], &g, &w),
            Err(EntropyError::Unsorted(1))
        ));
        assert!(window_occupancy(&[], &g, &w).unwrap().is_empty());
    }

    fn occ(ps: &[f64]) -> Vec<CellOccupancy> {
        ps.iter()
            .enumerate()
            .map(|(i, &p)| CellOccupancy {
                cell: CellIndex { i, j: 0 },
                proportion: p,
            })
            .collect()
    }

    #[test]
    fn entropy_anchor_values() {
        let g = GridSpec::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        assert_eq!(window_entropy(&occ(&[1.0]), &g).unwrap(), Some(0.0));
        assert!((window_entropy(&occ(&[0.5, 0.5]), &g).unwrap().unwrap() - 50.0).abs() < 1e-12);
        let v = window_entropy(&occ(&[0.5, 0.25, 0.25]), &g).unwrap().unwrap();
        assert!((v - 75.0).abs() < 1e-12);
        assert_eq!(window_entropy(&[], &g).unwrap(), None);
    }

    #[test]
    fn entropy_needs_two_cells() {
        let g = GridSpec::new(0.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        assert!(matches!(
            window_entropy(&occ(&[1.0]), &g),
            Err(EntropyError::DegenerateGrid)
        ));
    }

    #[test]
    fn stationary_three_days() {
        let recs: Vec<_> = (0..72 * 6).map(|s| at((5, 5), T0 + s * 600)).collect();
        let ds = TraceDataset::new("u", recs).unwrap();
        let seq = entropy_sequence(&ds, &grid(), 3600, OFF).unwrap();
        assert_eq!(seq.len(), 72);
        assert!(seq.samples.iter().all(|s| s.value == Some(0.0)));
    }

    #[test]
    fn empty_hour_is_missing() {
        let mut recs: Vec<_> = (0..6).map(|s| at((5, 5), T0 + s * 600)).collect();
        recs.extend((0..6).map(|s| at((5, 6), T0 + 7200 + s * 600)));
        let ds = TraceDataset::new("u", recs).unwrap();
        let seq = entropy_sequence(&ds, &grid(), 3600, OFF).unwrap();
        assert_eq!(seq.values(), vec![Some(0.0), None, Some(0.0)]);
        assert_eq!(seq.missing_count(), 1);
    }

    #[test]
    fn csv_roundtrip() {
        let seq = EntropySequence {
            user_id: "u1".into(),
            window_duration: 3600,
            samples: vec![
                EntropySample { k: 1, t_start: T0, value: Some(12.5) },
                EntropySample { k: 2, t_start: T0 + 3600, value: None },
                EntropySample { k: 3, t_start: T0 + 7200, value: Some(0.0) },
            ],
        };
        let mut buf = Vec::new();
        write_entropy_csv(std::slice::from_ref(&seq), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("u1,1,1522623600,12.500000\n"));
        assert!(text.contains("u1,2,1522627200,\n"));
        assert_eq!(read_entropy_csv(buf.as_slice()).unwrap(), vec![seq]);
    }
}
