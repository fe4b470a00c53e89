//! Source and grid-observation loading, great-circle matching to the nearest
//! source, and analysis-sample filters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0088;
/// Cell-source pair count above which matching uses the latitude index.
pub const BRUTE_FORCE_PAIRS: usize = 1_000_000;

fn check_coords(lat: f64, lon: f64) -> Result<()> {
    if !((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)) {
        return Err(domain(format!("coordinates out of range: lat {lat}, lon {lon}")));
    }
    Ok(())
}

/// Great-circle distance in km between (lat, lon) pairs in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    check_coords(a.0, a.1)?;
    check_coords(b.0, b.1)?;
    Ok(haversine_unchecked(a, b))
}

fn haversine_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSite {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub capacity_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (y, m) = s.trim().split_once('-').ok_or_else(|| format!("period `{s}` is not YYYY-MM"))?;
        let year: i32 = y.parse().map_err(|_| format!("period `{s}` has a bad year"))?;
        let month: u32 = m.parse().map_err(|_| format!("period `{s}` has a bad month"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("period `{s}` has month {month} outside 1-12"));
        }
        Ok(Self { year, month })
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridObservation {
    pub lat: f64,
    pub lon: f64,
    pub period: YearMonth,
    /// Missing values are kept as `None` on load and dropped by [`build_sample`].
    pub outcome: Option<f64>,
    pub nearest_source_id: Option<String>,
    pub distance_km: Option<f64>,
}

impl GridObservation {
    pub fn new(lat: f64, lon: f64, period: YearMonth, outcome: Option<f64>) -> Self {
        Self {
            lat,
            lon,
            period,
            outcome,
            nearest_source_id: None,
            distance_km: None,
        }
    }

    /// Non-missing and non-negative.
    pub fn is_valid(&self) -> bool {
        self.outcome.is_some_and(|v| v >= 0.0 && v.is_finite())
    }

    fn cell(&self) -> (i64, i64) {
        ((self.lat * 1e6).round() as i64, (self.lon * 1e6).round() as i64)
    }
}

struct Table {
    path: std::path::PathBuf,
    reader: csv::Reader<File>,
    columns: HashMap<String, usize>,
}

impl Table {
    fn open(path: &Path) -> Result<Option<Self>> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(file);
        let headers = match reader.headers() {
            Ok(h) => h.clone(),
            Err(e) => return Err(parse_error(path, e.position().map_or(1, |p| p.line()), e.to_string())),
        };
        if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
            return Ok(None);
        }
        let columns = headers.iter().enumerate().map(|(i, h)| (h.to_ascii_lowercase(), i)).collect();
        Ok(Some(Self {
            path: path.to_path_buf(),
            reader,
            columns,
        }))
    }

    fn require(&self, names: &[&str]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.columns
                    .get(*n)
                    .copied()
                    .ok_or_else(|| parse_error(&self.path, 1, format!("missing required column `{n}`")))
            })
            .collect()
    }

    /// Records with their 1-based file line numbers.
    fn rows(&mut self) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
        let path = self.path.clone();
        self.reader.records().map(move |r| match r {
            Ok(rec) => Ok((rec.position().map_or(0, |p| p.line()), rec)),
            Err(e) => Err(parse_error(&path, e.position().map_or(0, |p| p.line()), e.to_string())),
        })
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field_f64(path: &Path, line: u64, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_error(path, line, format!("column `{name}`: `{raw}` is not a number")))
}

/// Sources with capacity strictly above `min_capacity`, from a delimited
/// file with columns `id, lat, lon, capacity_mw`.
pub fn load_sources(path: impl AsRef<Path>, min_capacity: f64) -> Result<Vec<SourceSite>> {
    let path = path.as_ref();
    let Some(mut table) = Table::open(path)? else {
        return Ok(Vec::new());
    };
    let cols = table.require(&["id", "lat", "lon", "capacity_mw"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let p = table.path.clone();
    for row in table.rows() {
        let (line, rec) = row?;
        let id = rec.get(cols[0]).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_error(&p, line, "empty id"));
        }
        let lat = field_f64(&p, line, &rec, cols[1], "lat")?;
        let lon = field_f64(&p, line, &rec, cols[2], "lon")?;
        let capacity_mw = field_f64(&p, line, &rec, cols[3], "capacity_mw")?;
        check_coords(lat, lon).map_err(|e| parse_error(&p, line, e.to_string()))?;
        if capacity_mw < 0.0 {
            return Err(parse_error(&p, line, format!("negative capacity {capacity_mw}")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        if capacity_mw > min_capacity {
            out.push(SourceSite { id, lat, lon, capacity_mw });
        }
    }
    Ok(out)
}

/// Observations from a delimited file with columns `lat, lon, period, outcome`.
/// Empty or `NA` outcomes load as missing.
pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<GridObservation>> {
    let path = path.as_ref();
    let Some(mut table) = Table::open(path)? else {
        return Ok(Vec::new());
    };
    let cols = table.require(&["lat", "lon", "period", "outcome"])?;
    let p = table.path.clone();
    let mut out = Vec::new();
    for row in table.rows() {
        let (line, rec) = row?;
        let lat = field_f64(&p, line, &rec, cols[0], "lat")?;
        let lon = field_f64(&p, line, &rec, cols[1], "lon")?;
        check_coords(lat, lon).map_err(|e| parse_error(&p, line, e.to_string()))?;
        let period: YearMonth = rec.get(cols[2]).unwrap_or("").parse().map_err(|m: String| parse_error(&p, line, m))?;
        let raw = rec.get(cols[3]).unwrap_or("");
        let outcome = if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
            None
        } else {
            Some(field_f64(&p, line, &rec, cols[3], "outcome")?)
        };
        out.push(GridObservation::new(lat, lon, period, outcome));
    }
    Ok(out)
}

/// Writes a matched sample with `nearest_source_id` and `distance_km` appended.
pub fn write_sample(path: impl AsRef<Path>, sample: &[GridObservation]) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["lat", "lon", "period", "outcome", "nearest_source_id", "distance_km"])
        .map_err(io)?;
    for o in sample {
        w.write_record([
            format!("{}", o.lat),
            format!("{}", o.lon),
            o.period.to_string(),
            o.outcome.map_or(String::new(), |v| format!("{v}")),
            o.nearest_source_id.clone().unwrap_or_default(),
            o.distance_km.map_or(String::new(), |v| format!("{v}")),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Nearest source by great-circle distance; ties go to the earlier source.
pub struct SourceIndex<'a> {
    sources: &'a [SourceSite],
    /// Source indices sorted by latitude.
    by_lat: Vec<usize>,
}

impl<'a> SourceIndex<'a> {
    pub fn new(sources: &'a [SourceSite]) -> Self {
        let mut by_lat: Vec<usize> = (0..sources.len()).collect();
        by_lat.sort_by(|&a, &b| sources[a].lat.total_cmp(&sources[b].lat).then(a.cmp(&b)));
        Self { sources, by_lat }
    }

    /// Exhaustive scan.
    pub fn nearest_brute(&self, lat: f64, lon: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.sources.iter().enumerate() {
            let d = haversine_unchecked((lat, lon), (s.lat, s.lon));
            if best.map_or(true, |b| d < b.1) {
                best = Some((i, d));
            }
        }
        best
    }

    /// Scans outward from the query latitude; the meridional separation
    /// R·|Δφ| bounds the distance from below, so the scan stops once it
    /// exceeds the best distance found.
    pub fn nearest(&self, lat: f64, lon: f64) -> Option<(usize, f64)> {
        if self.sources.is_empty() {
            return None;
        }
        let lat_of = |k: usize| self.sources[self.by_lat[k]].lat;
        let start = self.by_lat.partition_point(|&i| self.sources[i].lat < lat);
        let mut best: Option<(usize, f64)> = None;
        let better = |best: Option<(usize, f64)>, i: usize, d: f64| match best {
            None => true,
            Some((bi, bd)) => d < bd || (d == bd && i < bi),
        };
        let bound = |k: usize| EARTH_RADIUS_KM * (lat_of(k) - lat).abs().to_radians() * (1.0 - 1e-12);
        let (mut up, mut down) = (start, start);
        loop {
            let up_ok = up < self.by_lat.len() && best.map_or(true, |b| bound(up) <= b.1);
            let down_ok = down > 0 && best.map_or(true, |b| bound(down - 1) <= b.1);
            if !up_ok && !down_ok {
                break;
            }
            if up_ok {
                let i = self.by_lat[up];
                let d = haversine_unchecked((lat, lon), (self.sources[i].lat, self.sources[i].lon));
                if better(best, i, d) {
                    best = Some((i, d));
                }
                up += 1;
            }
            if down_ok {
                let i = self.by_lat[down - 1];
                let d = haversine_unchecked((lat, lon), (self.sources[i].lat, self.sources[i].lon));
                if better(best, i, d) {
                    best = Some((i, d));
                }
                down -= 1;
            }
        }
        best
    }
}

/// Matches each observation to its nearest source and applies the sample
/// filters: valid outcome, distance ≤ `max_distance_km`, and at least
/// `min_monthly_obs_per_year` distinct valid months in the cell's year. A
/// cell failing the monthly count in one year is dropped for that year only.
pub fn build_sample(
    observations: &[GridObservation],
    sources: &[SourceSite],
    max_distance_km: f64,
    min_monthly_obs_per_year: usize,
) -> Result<Vec<GridObservation>> {
    if observations.is_empty() || sources.is_empty() {
        return Err(domain("build_sample needs at least one observation and one source"));
    }
    if !(max_distance_km >= 0.0) {
        return Err(domain(format!("max_distance_km must be >= 0, got {max_distance_km}")));
    }
    for o in observations {
        check_coords(o.lat, o.lon)?;
    }
    for s in sources {
        check_coords(s.lat, s.lon)?;
    }
    let valid: Vec<&GridObservation> = observations.iter().filter(|o| o.is_valid()).collect();

    let mut months: HashMap<((i64, i64), i32), HashSet<u32>> = HashMap::new();
    for o in &valid {
        months.entry((o.cell(), o.period.year)).or_default().insert(o.period.month);
    }

    let mut cells: BTreeMap<(i64, i64), (f64, f64)> = BTreeMap::new();
    for o in &valid {
        cells.entry(o.cell()).or_insert((o.lat, o.lon));
    }
    let cell_list: Vec<((i64, i64), (f64, f64))> = cells.into_iter().collect();
    let index = SourceIndex::new(sources);
    let brute = cell_list.len().saturating_mul(sources.len()) < BRUTE_FORCE_PAIRS;
    let matched: HashMap<(i64, i64), (usize, f64)> = cell_list
        .par_iter()
        .map(|&(key, (lat, lon))| {
            let m = if brute { index.nearest_brute(lat, lon) } else { index.nearest(lat, lon) };
            (key, m.expect("sources are non-empty"))
        })
        .collect();

    Ok(valid
        .into_iter()
        .filter_map(|o| {
            let (src, dist) = matched[&o.cell()];
            let enough = months[&(o.cell(), o.period.year)].len() >= min_monthly_obs_per_year;
            (dist <= max_distance_km && enough).then(|| GridObservation {
                nearest_source_id: Some(sources[src].id.clone()),
                distance_km: Some(dist),
                ..o.clone()
            })
        })
        .collect())
}

/// (distance_km, outcome) pairs from a matched sample.
pub fn distance_outcome_pairs(sample: &[GridObservation]) -> Vec<(f64, f64)> {
    sample
        .iter()
        .filter_map(|o| Some((o.distance_km?, o.outcome?)))
        .collect()
}
