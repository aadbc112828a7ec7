//! Regular latitude/longitude grid shared by all users.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariates::haversine_m;
use crate::trace::TraceDataset;

pub const DEFAULT_CELL_DEGREES: f64 = 0.0025;

/// Slack, in cells, tolerated at the closed top/east edge for rounding.
const EDGE_EPS: f64 = 1e-9;

pub const GRID_HEADER: [&str; 6] = ["origin_lat", "origin_lon", "d_lat", "d_lon", "n", "m"];

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot build a grid without records")]
    NoRecords,
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("point ({lat}, {lon}) lies outside the grid")]
    OutOfGrid { lat: f64, lon: f64 },
    #[error("grid file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `n` cells along longitude (x), `m` along latitude (y), starting at the
/// south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub d_lat: f64,
    pub d_lon: f64,
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

impl GridSpec {
    pub fn new(
        origin_lat: f64,
        origin_lon: f64,
        d_lat: f64,
        d_lon: f64,
        n: usize,
        m: usize,
    ) -> Result<Self, GridError> {
        let g = Self {
            origin_lat,
            origin_lon,
            d_lat,
            d_lon,
            n,
            m,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.d_lat > 0.0 && self.d_lon > 0.0) {
            return Err(GridError::Invalid("cell sizes must be positive".into()));
        }
        if self.n == 0 || self.m == 0 {
            return Err(GridError::Invalid("grid needs at least one cell per axis".into()));
        }
        if !self.origin_lat.is_finite() || !self.origin_lon.is_finite() {
            return Err(GridError::Invalid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.m
    }

    pub fn max_lat(&self) -> f64 {
        self.origin_lat + self.m as f64 * self.d_lat
    }

    pub fn max_lon(&self) -> f64 {
        self.origin_lon + self.n as f64 * self.d_lon
    }

    /// Cells are half-open `[edge, edge + d)`; the top and east edges of the
    /// grid are closed so every point of the extent has a cell.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Result<CellIndex, GridError> {
        let fx = (lon - self.origin_lon) / self.d_lon;
        let fy = (lat - self.origin_lat) / self.d_lat;
        let inside = |f: f64, cells: usize| f >= -EDGE_EPS && f <= cells as f64 + EDGE_EPS;
        if !fx.is_finite() || !fy.is_finite() || !inside(fx, self.n) || !inside(fy, self.m) {
            return Err(GridError::OutOfGrid { lat, lon });
        }
        // values within rounding distance of an edge are snapped onto it
        let snap = |f: f64| if (f - f.round()).abs() < EDGE_EPS { f.round() } else { f };
        let clamp = |f: f64, cells: usize| (snap(f).floor().max(0.0) as usize).min(cells - 1);
        Ok(CellIndex {
            i: clamp(fx, self.n),
            j: clamp(fy, self.m),
        })
    }

    /// Ground size of one cell at a given latitude, `(north-south, east-west)` in meters.
    pub fn cell_size_m(&self, lat: f64) -> (f64, f64) {
        let ns = haversine_m((lat, self.origin_lon), (lat + self.d_lat, self.origin_lon));
        let ew = haversine_m((lat, self.origin_lon), (lat, self.origin_lon + self.d_lon));
        (ns, ew)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GridError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(GRID_HEADER)?;
        wtr.write_record([
            self.origin_lat.to_string(),
            self.origin_lon.to_string(),
            self.d_lat.to_string(),
            self.d_lon.to_string(),
            self.n.to_string(),
            self.m.to_string(),
        ])?;
        wtr.flush().map_err(|e| GridError::Format(e.to_string()))?;
        Ok(())
    }

    /// Reads a grid row, with or without the header line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GridError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        for row in rdr.records() {
            let row = row?;
            if row.iter().eq(GRID_HEADER.iter().copied()) {
                continue;
            }
            if row.len() != 6 {
                return Err(GridError::Format(format!("expected 6 fields, found {}", row.len())));
            }
            let real = |i: usize| -> Result<f64, GridError> {
                row[i]
                    .parse()
                    .map_err(|_| GridError::Format(format!("`{}` is not a number", &row[i])))
            };
            let count = |i: usize| -> Result<usize, GridError> {
                row[i]
                    .parse()
                    .map_err(|_| GridError::Format(format!("`{}` is not a cell count", &row[i])))
            };
            return Self::new(real(0)?, real(1)?, real(2)?, real(3)?, count(4)?, count(5)?);
        }
        Err(GridError::Format("no grid row found".into()))
    }
}

fn cells_spanned(extent: f64, d: f64) -> usize {
    let cells = (extent / d - EDGE_EPS).ceil();
    (cells.max(1.0)) as usize
}

/// Bounding-box grid over every record of every dataset, padded on all sides.
pub fn build_grid(
    datasets: &[TraceDataset],
    d_lat: f64,
    d_lon: f64,
    padding_cells: usize,
) -> Result<GridSpec, GridError> {
    let mut bounds: Option<(f64, f64, f64, f64)> = None;
    for r in datasets.iter().flat_map(|ds| ds.records.iter()) {
        bounds = Some(match bounds {
            None => (r.latitude, r.latitude, r.longitude, r.longitude),
            Some((a, b, c, d)) => (
                a.min(r.latitude),
                b.max(r.latitude),
                c.min(r.longitude),
                d.max(r.longitude),
            ),
        });
    }
    let (min_lat, max_lat, min_lon, max_lon) = bounds.ok_or(GridError::NoRecords)?;
    if !(d_lat > 0.0 && d_lon > 0.0) {
        return Err(GridError::Invalid("cell sizes must be positive".into()));
    }
    let pad = padding_cells as f64;
    GridSpec::new(
        min_lat - pad * d_lat,
        min_lon - pad * d_lon,
        d_lat,
        d_lon,
        cells_spanned(max_lon - min_lon, d_lon) + 2 * padding_cells,
        cells_spanned(max_lat - min_lat, d_lat) + 2 * padding_cells,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::LocationRecord;

    const D: f64 = DEFAULT_CELL_DEGREES;

    fn ds(points: &[(f64, f64)]) -> TraceDataset {
        let recs = points
            .iter()
            .enumerate()
            .map(|(k, &(la, lo))| LocationRecord::new(la, lo, 1000 + k as i64).unwrap())
            .collect();
        TraceDataset::new("u", recs).unwrap()
    }

    #[test]
    fn single_point_padded_is_three_by_three() {
        let g = build_grid(&[ds(&[(46.52, 6.57)])], D, D, 1).unwrap();
        assert_eq!((g.n, g.m), (3, 3));
        assert_eq!(g.cell_of(46.52, 6.57).unwrap(), CellIndex { i: 1, j: 1 });
    }

    #[test]
    fn two_points_half_centidegree_apart() {
        let g = build_grid(&[ds(&[(46.5, 6.5), (46.505, 6.5)])], D, D, 0).unwrap();
        assert_eq!(g.m, 2);
        assert_eq!(g.n, 1);
        // upper point sits on the closed top edge
        assert_eq!(g.cell_of(46.505, 6.5).unwrap(), CellIndex { i: 0, j: 1 });
    }

    #[test]
    fn centidegree_box_padded() {
        let g = build_grid(&[ds(&[(46.50, 6.50), (46.51, 6.51)])], D, D, 1).unwrap();
        assert_eq!((g.n, g.m), (6, 6));
    }

    #[test]
    fn no_records_is_error() {
        assert!(matches!(build_grid(&[], D, D, 1), Err(GridError::NoRecords)));
    }

    #[test]
    fn cell_of_anchor_cases() {
        let g = GridSpec::new(46.0, 6.0, D, D, 10, 10).unwrap();
        assert_eq!(g.cell_of(46.0, 6.0).unwrap(), CellIndex { i: 0, j: 0 });
        assert_eq!(
            g.cell_of(46.0 + 0.5 * D, 6.0 + 1.5 * D).unwrap(),
            CellIndex { i: 1, j: 0 }
        );
        // interior edge belongs to the higher-index cell
        assert_eq!(g.cell_of(46.0 + 4.0 * D, 6.0 + 2.0 * D).unwrap(), CellIndex { i: 2, j: 4 });
        assert_eq!(g.cell_of(g.max_lat(), g.max_lon()).unwrap(), CellIndex { i: 9, j: 9 });
        assert!(matches!(g.cell_of(45.99, 6.01), Err(GridError::OutOfGrid { .. })));
        assert!(g.cell_of(46.01, 6.0 + 10.5 * D).is_err());
    }

    #[test]
    fn cell_size_near_lausanne() {
        let g = GridSpec::new(46.5, 6.5, D, D, 1, 1).unwrap();
        let (ns, ew) = g.cell_size_m(46.5);
        assert!((ns - 278.0).abs() < 3.0, "{ns}");
        assert!((ew - 191.3).abs() < 1.0, "{ew}");
        assert!((ew - 188.0).abs() < 3.5);
    }

    #[test]
    fn grid_csv_roundtrip() {
        let g = GridSpec::new(46.1234567, 6.5, D, 0.003, 17, 4).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(GridSpec::read_csv(buf.as_slice()).unwrap(), g);
        let bare = "46.1234567,6.5,0.0025,0.003,17,4\n";
        assert_eq!(GridSpec::read_csv(bare.as_bytes()).unwrap(), g);
    }
}
