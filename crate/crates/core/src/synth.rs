//! Deterministic synthetic mobility traces and cohorts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariates::{haversine_m, StaticProfile, PROFILE_FIELDS, EARTH_RADIUS_M};
use crate::trace::{LocationRecord, TraceDataset, SECONDS_PER_DAY};

/// Monday 2018-04-02 00:00 at UTC+01:00.
pub const DEFAULT_START: i64 = 1_522_623_600;

/// Minimum separation between two anchors, in meters.
const MIN_ANCHOR_SEPARATION_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("anchors {0} and {1} coincide")]
    CoincidentAnchors(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("generated trace is empty")]
    Empty,
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

/// A home-based round trip: leave home at `depart_hour`, dwell at `anchor`,
/// leave it again at `return_hour`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Commute {
    pub anchor: usize,
    pub depart_hour: f64,
    pub return_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub user_id: String,
    pub seed: u64,
    /// Local midnight of the first day.
    pub start: i64,
    pub days: u32,
    pub utc_offset: i64,
    /// `anchors[0]` is home; the rest are destinations.
    pub anchors: Vec<(f64, f64)>,
    /// Weekday round trips, in chronological order.
    pub commutes: Vec<Commute>,
    /// Standard deviation of the daily shift of every commute time, in hours.
    pub schedule_jitter_hours: f64,
    /// Probability of a weekend outing to a random destination.
    pub weekend_outing_prob: f64,
    pub fix_interval: i64,
    pub speed: f64,
    pub dwell_noise: f64,
    pub missing_day_prob: f64,
}

impl SynthConfig {
    /// One user commuting between two anchors on weekdays.
    pub fn commuter(user_id: &str, seed: u64, home: (f64, f64), campus: (f64, f64)) -> Self {
        Self {
            user_id: user_id.to_string(),
            seed,
            start: DEFAULT_START,
            days: 30,
            utc_offset: 3_600,
            anchors: vec![home, campus],
            commutes: vec![Commute {
                anchor: 1,
                depart_hour: 8.0,
                return_hour: 17.5,
            }],
            schedule_jitter_hours: 0.25,
            weekend_outing_prob: 0.5,
            fix_interval: 300,
            speed: 8.0,
            dwell_noise: 25.0,
            missing_day_prob: 0.03,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.anchors.len() < 2 {
            return Err(SynthError::Config("at least two anchors are required".into()));
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if !(-90.0..=90.0).contains(&a.0) || !(-180.0..=180.0).contains(&a.1) {
                return Err(SynthError::Config(format!("anchor {i} out of range: {a:?}")));
            }
            for (j, b) in self.anchors.iter().enumerate().skip(i + 1) {
                if haversine_m(*a, *b) < MIN_ANCHOR_SEPARATION_M {
                    return Err(SynthError::CoincidentAnchors(i, j));
                }
            }
        }
        if self.fix_interval <= 0 {
            return Err(SynthError::Config("fix_interval must be positive".into()));
        }
        if !(self.speed > 0.0) {
            return Err(SynthError::Config("speed must be positive".into()));
        }
        if !(self.dwell_noise >= 0.0) || !(self.schedule_jitter_hours >= 0.0) {
            return Err(SynthError::Config("noise levels must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.missing_day_prob) || !(0.0..=1.0).contains(&self.weekend_outing_prob) {
            return Err(SynthError::Config("probabilities out of range".into()));
        }
        if self.days == 0 {
            return Err(SynthError::Config("days must be positive".into()));
        }
        let mut last = 0.0;
        for c in &self.commutes {
            if c.anchor == 0 || c.anchor >= self.anchors.len() {
                return Err(SynthError::Config(format!("commute anchor {} is not a destination", c.anchor)));
            }
            if !(c.depart_hour > last && c.return_hour > c.depart_hour && c.return_hour < 24.0) {
                return Err(SynthError::Config(format!(
                    "commute hours must be increasing within the day: {c:?}"
                )));
            }
            last = c.return_hour;
        }
        Ok(())
    }
}

/// Position on the great circle from `a` to `b` at fraction `f`.
pub fn great_circle_point(a: (f64, f64), b: (f64, f64), f: f64) -> (f64, f64) {
    let to_vec = |(lat, lon): (f64, f64)| {
        let (la, lo) = (lat.to_radians(), lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (va, vb) = (to_vec(a), to_vec(b));
    let dot = (va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2]).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-15 {
        return a;
    }
    let (wa, wb) = (((1.0 - f) * omega).sin() / omega.sin(), (f * omega).sin() / omega.sin());
    let v: Vec<f64> = (0..3).map(|i| wa * va[i] + wb * vb[i]).collect();
    let lat = v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt()).to_degrees();
    let lon = v[1].atan2(v[0]).to_degrees();
    (lat, lon)
}

/// Uniform point in a disc of `radius` meters around `center`.
fn jitter(rng: &mut ChaCha8Rng, center: (f64, f64), radius: f64) -> (f64, f64) {
    if radius == 0.0 {
        return center;
    }
    let r = radius * rng.random::<f64>().sqrt();
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let dlat = (r * angle.sin() / EARTH_RADIUS_M).to_degrees();
    let dlon = (r * angle.cos() / (EARTH_RADIUS_M * center.0.to_radians().cos())).to_degrees();
    (center.0 + dlat, center.1 + dlon)
}

/// A leg of the day: stay at `anchor` until `until`, then travel to the next leg.
#[derive(Debug, Clone, Copy)]
struct Leg {
    anchor: usize,
    until: i64,
}

fn day_plan(cfg: &SynthConfig, rng: &mut ChaCha8Rng, day_start: i64, weekday: u32) -> Vec<Leg> {
    let hour = |h: f64| day_start + (h * 3600.0).round() as i64;
    let end = day_start + SECONDS_PER_DAY;
    let mut legs = Vec::new();
    if weekday < 5 {
        let shift = Normal::new(0.0, cfg.schedule_jitter_hours.max(1e-12)).unwrap();
        let mut floor = day_start;
        for c in &cfg.commutes {
            let d = (c.depart_hour + shift.sample(rng)).clamp(0.25, 23.5);
            let r = (c.return_hour + shift.sample(rng)).clamp(0.25, 23.5);
            let (d, r) = (hour(d).max(floor + 1800), hour(r));
            let r = r.max(d + 1800);
            if r >= end - 1800 {
                break;
            }
            legs.push(Leg { anchor: 0, until: d });
            legs.push(Leg {
                anchor: c.anchor,
                until: r,
            });
            floor = r + 1800;
        }
    } else if rng.random::<f64>() < cfg.weekend_outing_prob {
        let dest = rng.random_range(1..cfg.anchors.len());
        let d = hour(rng.random_range(10.0..15.0));
        let r = d + (rng.random_range(1.0..4.0) * 3600.0) as i64;
        legs.push(Leg { anchor: 0, until: d });
        legs.push(Leg { anchor: dest, until: r });
    }
    legs.push(Leg { anchor: 0, until: end });
    legs
}

/// Generates one user's trace: dwells with disc jitter at anchors, straight
/// great-circle transits at constant speed, whole days dropped at random.
pub fn generate_trace(cfg: &SynthConfig) -> Result<TraceDataset, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    for day in 0..cfg.days {
        let day_start = cfg.start + day as i64 * SECONDS_PER_DAY;
        let weekday = ((day_start + cfg.utc_offset).div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as u32;
        let plan = day_plan(cfg, &mut rng, day_start, weekday);
        let keep_day = day == 0 || day + 1 == cfg.days || rng.random::<f64>() >= cfg.missing_day_prob;
        if !keep_day {
            continue;
        }
        // expand legs into (from, to, depart, arrive) transits
        let mut segments = Vec::new();
        let mut t = day_start;
        for pair in plan.windows(2) {
            let (a, b) = (cfg.anchors[pair[0].anchor], cfg.anchors[pair[1].anchor]);
            let depart = pair[0].until.max(t);
            let travel = (haversine_m(a, b) / cfg.speed).ceil() as i64;
            segments.push((pair[0].anchor, pair[1].anchor, depart, depart + travel));
            t = depart + travel;
        }
        let phase = rng.random_range(0..cfg.fix_interval);
        let mut ts = day_start + phase;
        while ts < day_start + SECONDS_PER_DAY {
            let mut at = 0usize;
            let mut pos = None;
            for &(from, to, depart, arrive) in &segments {
                if ts < depart {
                    break;
                }
                if ts < arrive {
                    let f = (ts - depart) as f64 / (arrive - depart) as f64;
                    pos = Some(great_circle_point(cfg.anchors[from], cfg.anchors[to], f));
                    break;
                }
                at = to;
            }
            let (lat, lon) = match pos {
                Some(p) => p,
                None => jitter(&mut rng, cfg.anchors[at], cfg.dwell_noise),
            };
            records.push(LocationRecord::new(lat, lon, ts)?);
            ts += cfg.fix_interval;
        }
    }
    if records.is_empty() {
        return Err(SynthError::Empty);
    }
    Ok(TraceDataset::new(cfg.user_id.clone(), records)?)
}

/// Cohort layout and how profiles are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMixer {
    /// Region box `(min_lat, max_lat, min_lon, max_lon)` for homes and extra anchors.
    pub region: (f64, f64, f64, f64),
    pub campus: (f64, f64),
    pub days: u32,
    /// When set, `job = 1` users go home at lunch and spend the afternoon at
    /// their second anchor, a workplace off campus.
    pub job_effect: bool,
    pub missing_day_prob: f64,
    /// Dwell jitter radius in meters. Zero keeps stationary fixes on the
    /// anchor so that home entropy does not depend on cell-edge proximity.
    pub dwell_noise: f64,
}

impl Default for ProfileMixer {
    fn default() -> Self {
        Self {
            region: (46.50, 46.56, 6.55, 6.67),
            campus: (46.5225, 6.5800),
            days: 30,
            job_effect: true,
            missing_day_prob: 0.03,
            dwell_noise: 0.0,
        }
    }
}

impl ProfileMixer {
    /// Campus box `(min_lat, max_lat, min_lon, max_lon)` one cell around the campus anchor.
    pub fn campus_box(&self) -> (f64, f64, f64, f64) {
        let d = 0.003;
        (self.campus.0 - d, self.campus.0 + d, self.campus.1 - d, self.campus.1 + d)
    }
}

/// User id for cohort member `index` (0-based).
pub fn cohort_user_id(index: usize) -> String {
    format!("user{:02}", index + 1)
}

/// `n_users` synthetic users; user `i` has `job = i mod 2` and a per-user
/// seed derived from `base_seed`.
pub fn generate_cohort(
    base_seed: u64,
    n_users: usize,
    mixer: &ProfileMixer,
) -> Result<(Vec<TraceDataset>, Vec<StaticProfile>), SynthError> {
    let (min_lat, max_lat, min_lon, max_lon) = mixer.region;
    let mut datasets = Vec::with_capacity(n_users);
    let mut profiles = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let seed = base_seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let id = cohort_user_id(i);
        let draw_anchor = |rng: &mut ChaCha8Rng| loop {
            let p = (rng.random_range(min_lat..max_lat), rng.random_range(min_lon..max_lon));
            if haversine_m(p, mixer.campus) > 1500.0 {
                break p;
            }
        };
        let home = draw_anchor(&mut rng);
        let extra = draw_anchor(&mut rng);
        let job = (i % 2) as u8;

        let mut cfg = SynthConfig::commuter(&id, seed, home, mixer.campus);
        cfg.anchors.push(extra);
        cfg.days = mixer.days;
        cfg.missing_day_prob = mixer.missing_day_prob;
        cfg.dwell_noise = mixer.dwell_noise;
        let depart = rng.random_range(7.5..9.0);
        let back = rng.random_range(16.5..18.5);
        cfg.commutes = if mixer.job_effect && job == 1 {
            vec![
                Commute {
                    anchor: 1,
                    depart_hour: depart,
                    return_hour: 12.0,
                },
                Commute {
                    anchor: 2,
                    depart_hour: 13.5,
                    return_hour: back,
                },
            ]
        } else {
            vec![Commute {
                anchor: 1,
                depart_hour: depart,
                return_hour: back,
            }]
        };
        datasets.push(generate_trace(&cfg)?);

        let mut codes = [0u8; 24];
        for (k, (_, max)) in PROFILE_FIELDS.iter().enumerate() {
            codes[k] = rng.random_range(0..=*max);
        }
        let mut profile = StaticProfile::new(id, codes).map_err(|e| SynthError::Config(e.to_string()))?;
        profile.set("job", job).map_err(|e| SynthError::Config(e.to_string()))?;
        profiles.push(profile);
    }
    Ok((datasets, profiles))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOME: (f64, f64) = (46.51, 6.60);
    const CAMPUS: (f64, f64) = (46.5225, 6.58);

    #[test]
    fn same_seed_same_trace() {
        let cfg = SynthConfig::commuter("u", 7, HOME, CAMPUS);
        assert_eq!(generate_trace(&cfg).unwrap(), generate_trace(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(generate_trace(&cfg).unwrap(), generate_trace(&other).unwrap());
    }

    #[test]
    fn coincident_anchors_rejected() {
        let cfg = SynthConfig::commuter("u", 1, HOME, HOME);
        assert!(matches!(generate_trace(&cfg), Err(SynthError::CoincidentAnchors(0, 1))));
    }

    #[test]
    fn no_missing_days_covers_every_day() {
        let mut cfg = SynthConfig::commuter("u", 3, HOME, CAMPUS);
        cfg.missing_day_prob = 0.0;
        cfg.days = 10;
        let ds = generate_trace(&cfg).unwrap();
        let mut days: Vec<i64> = ds
            .records
            .iter()
            .map(|r| crate::trace::local_day(r.timestamp, cfg.utc_offset))
            .collect();
        days.dedup();
        assert_eq!(days.len(), 10);
    }

    #[test]
    fn transit_speed_is_respected() {
        let mut cfg = SynthConfig::commuter("u", 5, HOME, CAMPUS);
        cfg.fix_interval = 30;
        cfg.days = 3;
        cfg.dwell_noise = 0.0;
        let ds = generate_trace(&cfg).unwrap();
        let on_anchor = |r: &LocationRecord| {
            cfg.anchors.iter().any(|a| haversine_m(*a, (r.latitude, r.longitude)) < 1e-6)
        };
        let mut checked = 0;
        for w in ds.records.windows(2) {
            if !on_anchor(&w[0]) && !on_anchor(&w[1]) {
                let v = haversine_m((w[0].latitude, w[0].longitude), (w[1].latitude, w[1].longitude))
                    / (w[1].timestamp - w[0].timestamp) as f64;
                assert!((v / cfg.speed - 1.0).abs() < 0.01, "speed {v}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn great_circle_endpoints() {
        let p = great_circle_point(HOME, CAMPUS, 0.0);
        assert!(haversine_m(p, HOME) < 1e-6);
        let q = great_circle_point(HOME, CAMPUS, 1.0);
        assert!(haversine_m(q, CAMPUS) < 1e-6);
        let m = great_circle_point(HOME, CAMPUS, 0.5);
        let half = haversine_m(HOME, CAMPUS) / 2.0;
        assert!((haversine_m(m, HOME) - half).abs() < 1e-6);
    }

    #[test]
    fn cohort_profiles_and_seeds() {
        let mixer = ProfileMixer {
            days: 5,
            ..ProfileMixer::default()
        };
        let (ds, profiles) = generate_cohort(1, 3, &mixer).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(profiles[1].get("job"), Some(1));
        assert_eq!(profiles[2].get("job"), Some(0));
        assert_eq!(ds[0].user_id, "user01");
        let (single, _) = generate_cohort(1, 1, &mixer).unwrap();
        assert_eq!(single.len(), 1);
        let (other, _) = generate_cohort(2, 1, &mixer).unwrap();
        assert_ne!(single[0], other[0]);
        let (min_lat, max_lat, min_lon, max_lon) = mixer.region;
        for r in ds.iter().flat_map(|d| d.records.iter()) {
            assert!(r.latitude > min_lat - 0.01 && r.latitude < max_lat + 0.01);
            assert!(r.longitude > min_lon - 0.01 && r.longitude < max_lon + 0.01);
        }
    }
}
