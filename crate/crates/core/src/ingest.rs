//! CSV loaders for pings, polling places, footprints, block-group
//! demographics and the optional device and state side tables.
//!
//! Malformed rows are skipped and counted in a [`LoadReport`]; structural
//! problems (bad header, duplicate keys, demographic invariants, dangling
//! joins) are errors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

use crate::calendar::{StateClock, StudyCalendar};
use crate::geo::{convex_hull, Footprint, GeoPoint};

/// Most warnings kept per load; the count in `rows_skipped` stays exact.
const MAX_WARNINGS: usize = 20;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: header mismatch, expected columns {expected:?}, found {found:?}")]
    SchemaMismatch {
        path: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{path}: empty input (no header row)")]
    EmptyInput { path: String },
    #[error("{path}: duplicate key `{key}`")]
    DuplicateKey { path: String, key: String },
    #[error("{path}: invariant violated for `{key}`: {reason}")]
    InvariantViolation {
        path: String,
        key: String,
        reason: String,
    },
    #[error("places reference missing block groups: {missing:?}")]
    JoinError { missing: Vec<String> },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

impl IngestError {
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::SchemaMismatch { .. } => "ingest.schema_mismatch",
            IngestError::EmptyInput { .. } => "ingest.empty_input",
            IngestError::DuplicateKey { .. } => "ingest.duplicate_key",
            IngestError::InvariantViolation { .. } => "ingest.invariant_violation",
            IngestError::JoinError { .. } => "ingest.join_error",
            IngestError::Csv { .. } => "ingest.csv",
        }
    }
}

/// Row accounting for one loader: `rows_in = rows_loaded + rows_skipped`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_in: usize,
    pub rows_loaded: usize,
    pub rows_skipped: usize,
    pub warnings: Vec<String>,
}

impl LoadReport {
    pub(crate) fn skip(&mut self, line: u64, why: impl std::fmt::Display) {
        self.rows_skipped += 1;
        if self.warnings.len() < MAX_WARNINGS {
            self.warnings.push(format!("line {line}: {why}"));
        }
    }

    fn warn(&mut self, msg: String) {
        if self.warnings.len() < MAX_WARNINGS {
            self.warnings.push(msg);
        }
    }
}

/// Interned device handle; ids follow the sorted order of device names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ping {
    pub device: DeviceId,
    pub t: i64,
    pub loc: GeoPoint,
}

/// One ping with its external device name.
#[derive(Debug, Clone, PartialEq)]
pub struct PingRecord {
    pub device_id: String,
    pub t: i64,
    pub loc: GeoPoint,
}

/// All pings, sorted by `(device, t)`, with per-device slices.
#[derive(Debug, Clone, Default)]
pub struct PingTable {
    names: Vec<String>,
    pings: Vec<Ping>,
    /// `offsets[d]..offsets[d + 1]` is the slice of device `d`.
    offsets: Vec<usize>,
}

impl PingTable {
    /// Builds a table from pings whose `device` indexes `names`. Names need
    /// not be sorted or used; ties in `t` keep their input order.
    pub fn from_interned(names: Vec<String>, mut pings: Vec<Ping>) -> Self {
        let mut order: Vec<u32> = (0..names.len() as u32).collect();
        order.sort_by(|&a, &b| names[a as usize].cmp(&names[b as usize]));
        let mut remap = vec![0u32; names.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        for p in &mut pings {
            p.device = DeviceId(remap[p.device.0 as usize]);
        }
        let mut names = names;
        let sorted_names: Vec<String> = order
            .iter()
            .map(|&old| std::mem::take(&mut names[old as usize]))
            .collect();
        pings.sort_by_key(|p| (p.device, p.t));

        let mut offsets = Vec::with_capacity(sorted_names.len() + 1);
        let mut i = 0;
        for d in 0..sorted_names.len() as u32 {
            offsets.push(i);
            while i < pings.len() && pings[i].device.0 == d {
                i += 1;
            }
        }
        offsets.push(pings.len());
        Self {
            names: sorted_names,
            pings,
            offsets,
        }
    }

    pub fn from_records(records: Vec<PingRecord>) -> Self {
        let mut interner: HashMap<String, u32> = HashMap::new();
        let mut names = Vec::new();
        let pings = records
            .into_iter()
            .map(|r| {
                let id = *interner.entry(r.device_id).or_insert_with_key(|k| {
                    names.push(k.clone());
                    names.len() as u32 - 1
                });
                Ping {
                    device: DeviceId(id),
                    t: r.t,
                    loc: r.loc,
                }
            })
            .collect();
        Self::from_interned(names, pings)
    }

    pub fn n_devices(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.pings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pings.is_empty()
    }

    pub fn device_name(&self, d: DeviceId) -> &str {
        &self.names[d.0 as usize]
    }

    pub fn device_id(&self, name: &str) -> Option<DeviceId> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| DeviceId(i as u32))
    }

    pub fn device_pings(&self, d: DeviceId) -> &[Ping] {
        let i = d.0 as usize;
        &self.pings[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn devices(&self) -> impl ExactSizeIterator<Item = DeviceId> {
        (0..self.names.len() as u32).map(DeviceId)
    }

    pub fn all(&self) -> &[Ping] {
        &self.pings
    }

    pub fn to_records(&self) -> Vec<PingRecord> {
        self.pings
            .iter()
            .map(|p| PingRecord {
                device_id: self.device_name(p.device).to_string(),
                t: p.t,
                loc: p.loc,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PollingPlace {
    pub place_id: String,
    pub centroid: GeoPoint,
    pub footprint: Option<Footprint>,
    pub state: String,
    pub county: String,
    pub district: Option<String>,
    pub block_group: String,
    /// Registered voters assigned to the place, in thousands.
    pub registered_voters_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGroup {
    pub id: String,
    pub frac_white: f64,
    pub frac_black: f64,
    pub frac_asian: f64,
    pub frac_hispanic: f64,
    pub frac_other: f64,
    pub frac_poverty: Option<f64>,
    pub population_k: f64,
    pub pop_density_k: f64,
}

impl BlockGroup {
    pub fn validate(&self) -> Result<(), String> {
        let fracs = [
            ("frac_white", self.frac_white),
            ("frac_black", self.frac_black),
            ("frac_asian", self.frac_asian),
            ("frac_hispanic", self.frac_hispanic),
            ("frac_other", self.frac_other),
        ];
        for (name, v) in fracs
            .iter()
            .copied()
            .chain(self.frac_poverty.map(|p| ("frac_poverty", p)))
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name}={v} outside [0, 1]"));
            }
        }
        let total: f64 = fracs.iter().map(|(_, v)| v).sum();
        if !(0.99..=1.01).contains(&total) {
            return Err(format!("race fractions sum to {total}"));
        }
        if !(self.population_k >= 0.0) {
            return Err(format!("population_k={} is negative", self.population_k));
        }
        if !(self.pop_density_k >= 0.0) {
            return Err(format!("pop_density_k={} is negative", self.pop_density_k));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub matched: usize,
    /// `(place_id, block_group)` for every place whose block group is absent.
    pub unmatched: Vec<(String, String)>,
}

impl JoinReport {
    pub fn into_result(self) -> Result<(), IngestError> {
        if self.unmatched.is_empty() {
            Ok(())
        } else {
            let missing: BTreeSet<String> = self.unmatched.into_iter().map(|(_, bg)| bg).collect();
            Err(IngestError::JoinError {
                missing: missing.into_iter().collect(),
            })
        }
    }
}

pub fn validate_join(
    places: &[PollingPlace],
    blockgroups: &BTreeMap<String, BlockGroup>,
) -> JoinReport {
    let mut report = JoinReport::default();
    for p in places {
        if blockgroups.contains_key(&p.block_group) {
            report.matched += 1;
        } else {
            report
                .unmatched
                .push((p.place_id.clone(), p.block_group.clone()));
        }
    }
    report
}

/// Accepts epoch seconds or ISO-8601 (with offset, or naive as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

pub(crate) struct CsvFile {
    path: String,
    reader: csv::Reader<std::fs::File>,
    columns: HashMap<String, usize>,
}

impl CsvFile {
    pub(crate) fn open(
        path: &Path,
        required: &[&str],
        optional: &[&str],
    ) -> Result<Self, crate::Error> {
        let shown = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| crate::Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| IngestError::Csv {
                path: shown.clone(),
                message: e.to_string(),
            })?
            .clone();
        if headers.is_empty() || headers.iter().all(str::is_empty) {
            return Err(IngestError::EmptyInput { path: shown }.into());
        }
        let columns: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        let known = |h: &str| required.contains(&h) || optional.contains(&h);
        if required.iter().any(|c| !columns.contains_key(*c)) || headers.iter().any(|h| !known(h)) {
            return Err(IngestError::SchemaMismatch {
                path: shown,
                expected: required.iter().map(|s| s.to_string()).collect(),
                found: headers.iter().map(str::to_string).collect(),
            }
            .into());
        }
        Ok(Self {
            path: shown,
            reader,
            columns,
        })
    }

    pub(crate) fn col(&self, name: &str) -> Option<usize> {
        self.columns.get(name).copied()
    }

    /// Calls `f` on every record; CSV-level errors on a row count as skips.
    pub(crate) fn for_each(
        &mut self,
        report: &mut LoadReport,
        mut f: impl FnMut(&csv::StringRecord, u64, &mut LoadReport) -> Result<(), crate::Error>,
    ) -> Result<(), crate::Error> {
        let mut rec = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut rec) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    report.rows_in += 1;
                    let line = rec.position().map_or(0, |p| p.line());
                    f(&rec, line, report)?;
                }
                Err(e) => {
                    if e.is_io_error() {
                        return Err(IngestError::Csv {
                            path: self.path.clone(),
                            message: e.to_string(),
                        }
                        .into());
                    }
                    report.rows_in += 1;
                    let line = e.position().map_or(0, |p| p.line());
                    report.skip(line, e);
                }
            }
        }
    }
}

pub(crate) fn field(rec: &csv::StringRecord, idx: Option<usize>) -> Option<&str> {
    idx.and_then(|i| rec.get(i)).filter(|s| !s.is_empty())
}

pub(crate) fn parse_f64(
    rec: &csv::StringRecord,
    idx: Option<usize>,
    name: &str,
) -> Result<f64, String> {
    let s = field(rec, idx).ok_or_else(|| format!("missing {name}"))?;
    let v: f64 = s.parse().map_err(|_| format!("bad {name} `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {name}"))
    }
}

fn parse_point(
    rec: &csv::StringRecord,
    lat: Option<usize>,
    lon: Option<usize>,
) -> Result<GeoPoint, String> {
    let la = parse_f64(rec, lat, "lat")?;
    let lo = parse_f64(rec, lon, "lon")?;
    GeoPoint::new(la, lo).map_err(|e| e.to_string())
}

pub const PING_COLUMNS: [&str; 4] = ["device_id", "timestamp_utc", "lat", "lon"];

/// Loads pings, dropping rows outside `window = [start, end)` when given.
pub fn load_pings(
    path: impl AsRef<Path>,
    window: Option<(i64, i64)>,
) -> crate::Result<(PingTable, LoadReport)> {
    let mut file = CsvFile::open(path.as_ref(), &PING_COLUMNS, &[])?;
    let (c_dev, c_t, c_lat, c_lon) = (
        file.col("device_id"),
        file.col("timestamp_utc"),
        file.col("lat"),
        file.col("lon"),
    );
    let mut report = LoadReport::default();
    let mut interner: HashMap<String, u32> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut pings: Vec<Ping> = Vec::new();
    file.for_each(&mut report, |rec, line, report| {
        let Some(dev) = field(rec, c_dev) else {
            report.skip(line, "empty device_id");
            return Ok(());
        };
        let Some(t) = field(rec, c_t).and_then(parse_timestamp) else {
            report.skip(line, "bad timestamp");
            return Ok(());
        };
        if let Some((start, end)) = window {
            if t < start || t >= end {
                report.skip(line, "timestamp outside study window");
                return Ok(());
            }
        }
        let loc = match parse_point(rec, c_lat, c_lon) {
            Ok(p) => p,
            Err(e) => {
                report.skip(line, e);
                return Ok(());
            }
        };
        let id = match interner.get(dev) {
            Some(&id) => id,
            None => {
                let id = names.len() as u32;
                names.push(dev.to_string());
                interner.insert(dev.to_string(), id);
                id
            }
        };
        pings.push(Ping {
            device: DeviceId(id),
            t,
            loc,
        });
        report.rows_loaded += 1;
        Ok(())
    })?;
    Ok((PingTable::from_interned(names, pings), report))
}

pub fn write_pings(path: impl AsRef<Path>, table: &PingTable) -> crate::Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| crate::Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let io = |e| crate::Error::io(path, e);
    writeln!(w, "{}", PING_COLUMNS.join(",")).map_err(io)?;
    for p in table.all() {
        writeln!(
            w,
            "{},{},{},{}",
            table.device_name(p.device),
            p.t,
            p.loc.lat(),
            p.loc.lon()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads places and, if given, their footprint vertices.
pub fn load_places(
    path: impl AsRef<Path>,
    footprints: Option<&Path>,
) -> crate::Result<(Vec<PollingPlace>, LoadReport)> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut file = CsvFile::open(
        path,
        &[
            "place_id",
            "lat",
            "lon",
            "state",
            "county",
            "block_group",
            "registered_voters",
        ],
        &["district"],
    )?;
    let c = |n: &str| file.col(n);
    let (c_id, c_lat, c_lon, c_state, c_county, c_bg, c_reg, c_dist) = (
        c("place_id"),
        c("lat"),
        c("lon"),
        c("state"),
        c("county"),
        c("block_group"),
        c("registered_voters"),
        c("district"),
    );
    let mut report = LoadReport::default();
    let mut places: Vec<PollingPlace> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut county_state: HashMap<String, String> = HashMap::new();
    file.for_each(&mut report, |rec, line, report| {
        let (Some(id), Some(state), Some(county), Some(bg)) = (
            field(rec, c_id),
            field(rec, c_state),
            field(rec, c_county),
            field(rec, c_bg),
        ) else {
            report.skip(line, "missing identifier field");
            return Ok(());
        };
        let centroid = match parse_point(rec, c_lat, c_lon) {
            Ok(p) => p,
            Err(e) => {
                report.skip(line, e);
                return Ok(());
            }
        };
        let registered_voters_k = match field(rec, c_reg) {
            None => None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Some(v),
                _ => {
                    report.skip(line, format!("bad registered_voters `{s}`"));
                    return Ok(());
                }
            },
        };
        if !seen.insert(id.to_string()) {
            return Err(IngestError::DuplicateKey {
                path: shown.clone(),
                key: id.to_string(),
            }
            .into());
        }
        match county_state.get(county) {
            Some(s) if s != state => {
                return Err(IngestError::InvariantViolation {
                    path: shown.clone(),
                    key: id.to_string(),
                    reason: format!("county {county} appears in states {s} and {state}"),
                }
                .into());
            }
            Some(_) => {}
            None => {
                county_state.insert(county.to_string(), state.to_string());
            }
        }
        places.push(PollingPlace {
            place_id: id.to_string(),
            centroid,
            footprint: None,
            state: state.to_string(),
            county: county.to_string(),
            district: field(rec, c_dist).map(str::to_string),
            block_group: bg.to_string(),
            registered_voters_k,
        });
        report.rows_loaded += 1;
        Ok(())
    })?;
    places.sort_by(|a, b| a.place_id.cmp(&b.place_id));
    if let Some(fp_path) = footprints {
        attach_footprints(fp_path, &mut places, &mut report)?;
    }
    Ok((places, report))
}

/// Footprint problems are warnings: the place keeps the centroid fallback.
fn attach_footprints(
    path: &Path,
    places: &mut [PollingPlace],
    report: &mut LoadReport,
) -> crate::Result<()> {
    let mut file = CsvFile::open(path, &["place_id", "vertex_index", "lat", "lon"], &[])?;
    let (c_id, c_idx, c_lat, c_lon) = (
        file.col("place_id"),
        file.col("vertex_index"),
        file.col("lat"),
        file.col("lon"),
    );
    let mut fp_report = LoadReport::default();
    let mut vertices: BTreeMap<String, Vec<(u32, GeoPoint)>> = BTreeMap::new();
    file.for_each(&mut fp_report, |rec, line, r| {
        let (Some(id), Some(idx)) = (
            field(rec, c_id),
            field(rec, c_idx).and_then(|s| s.parse::<u32>().ok()),
        ) else {
            r.skip(line, "bad footprint key");
            return Ok(());
        };
        match parse_point(rec, c_lat, c_lon) {
            Ok(p) => {
                vertices.entry(id.to_string()).or_default().push((idx, p));
                r.rows_loaded += 1;
            }
            Err(e) => r.skip(line, e),
        }
        Ok(())
    })?;
    for w in fp_report.warnings.drain(..) {
        report.warn(format!("footprints: {w}"));
    }
    for (id, mut vs) in vertices {
        vs.sort_by_key(|(i, _)| *i);
        let Ok(pos) = places.binary_search_by(|p| p.place_id.as_str().cmp(&id)) else {
            report.warn(format!("footprint for unknown place {id}"));
            continue;
        };
        let pts: Vec<GeoPoint> = vs.into_iter().map(|(_, p)| p).collect();
        match convex_hull(&pts) {
            Ok(fp) => places[pos].footprint = Some(fp),
            Err(e) => report.warn(format!("footprint for {id} ignored: {e}")),
        }
    }
    Ok(())
}

pub fn load_blockgroups(
    path: impl AsRef<Path>,
) -> crate::Result<(BTreeMap<String, BlockGroup>, LoadReport)> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut file = CsvFile::open(
        path,
        &[
            "block_group",
            "frac_white",
            "frac_black",
            "frac_asian",
            "frac_hispanic",
            "frac_other",
            "population_k",
            "pop_density_k",
        ],
        &["frac_poverty"],
    )?;
    let names = [
        "frac_white",
        "frac_black",
        "frac_asian",
        "frac_hispanic",
        "frac_other",
        "population_k",
        "pop_density_k",
    ];
    let cols: Vec<Option<usize>> = names.iter().map(|n| file.col(n)).collect();
    let (c_id, c_pov) = (file.col("block_group"), file.col("frac_poverty"));
    let mut report = LoadReport::default();
    let mut out = BTreeMap::new();
    file.for_each(&mut report, |rec, line, report| {
        let Some(id) = field(rec, c_id) else {
            report.skip(line, "empty block_group");
            return Ok(());
        };
        let mut v = [0.0; 7];
        for (k, (name, col)) in names.iter().zip(&cols).enumerate() {
            match parse_f64(rec, *col, name) {
                Ok(x) => v[k] = x,
                Err(e) => {
                    report.skip(line, e);
                    return Ok(());
                }
            }
        }
        let frac_poverty = match field(rec, c_pov) {
            None => None,
            Some(_) => match parse_f64(rec, c_pov, "frac_poverty") {
                Ok(x) => Some(x),
                Err(e) => {
                    report.skip(line, e);
                    return Ok(());
                }
            },
        };
        let bg = BlockGroup {
            id: id.to_string(),
            frac_white: v[0],
            frac_black: v[1],
            frac_asian: v[2],
            frac_hispanic: v[3],
            frac_other: v[4],
            frac_poverty,
            population_k: v[5],
            pop_density_k: v[6],
        };
        if let Err(reason) = bg.validate() {
            return Err(IngestError::InvariantViolation {
                path: shown.clone(),
                key: id.to_string(),
                reason,
            }
            .into());
        }
        if out.insert(id.to_string(), bg).is_some() {
            return Err(IngestError::DuplicateKey {
                path: shown.clone(),
                key: id.to_string(),
            }
            .into());
        }
        report.rows_loaded += 1;
        Ok(())
    })?;
    Ok((out, report))
}

/// `device_id,android` side table.
pub fn load_devices(path: impl AsRef<Path>) -> crate::Result<(BTreeMap<String, bool>, LoadReport)> {
    let mut file = CsvFile::open(path.as_ref(), &["device_id", "android"], &[])?;
    let (c_id, c_a) = (file.col("device_id"), file.col("android"));
    let mut report = LoadReport::default();
    let mut out = BTreeMap::new();
    file.for_each(&mut report, |rec, line, report| {
        let flag = match field(rec, c_a) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            _ => {
                report.skip(line, "bad android flag");
                return Ok(());
            }
        };
        match field(rec, c_id) {
            Some(id) => {
                out.insert(id.to_string(), flag);
                report.rows_loaded += 1;
            }
            None => report.skip(line, "empty device_id"),
        }
        Ok(())
    })?;
    Ok((out, report))
}

/// `state,utc_offset_h,open_hour,close_hour` rows, merged into `calendar`.
pub fn load_states(
    path: impl AsRef<Path>,
    calendar: &mut StudyCalendar,
) -> crate::Result<LoadReport> {
    let mut file = CsvFile::open(
        path.as_ref(),
        &["state", "utc_offset_h", "open_hour", "close_hour"],
        &[],
    )?;
    let cols = [
        file.col("utc_offset_h"),
        file.col("open_hour"),
        file.col("close_hour"),
    ];
    let c_state = file.col("state");
    let mut report = LoadReport::default();
    file.for_each(&mut report, |rec, line, report| {
        let Some(state) = field(rec, c_state) else {
            report.skip(line, "empty state");
            return Ok(());
        };
        let parsed: Option<Vec<i32>> = cols
            .iter()
            .map(|c| field(rec, *c).and_then(|s| s.parse().ok()))
            .collect();
        match parsed.as_deref() {
            Some(&[off, open, close])
                if (0..close).contains(&open) && close <= 24 && (-14..=14).contains(&off) =>
            {
                *calendar.clock_mut(state) = StateClock {
                    utc_offset_h: off,
                    open_hour: open as u8,
                    close_hour: close as u8,
                };
                report.rows_loaded += 1;
            }
            _ => report.skip(line, "bad clock fields"),
        }
        Ok(())
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn header_only_is_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "device_id,timestamp_utc,lat,lon\n");
        let (t, r) = load_pings(&p, None).unwrap();
        assert!(t.is_empty());
        assert_eq!((r.rows_in, r.rows_skipped), (0, 0));
    }

    #[test]
    fn no_header_is_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "");
        let err = load_pings(&p, None).unwrap_err();
        assert_eq!(err.kind(), "ingest.empty_input");
    }

    #[test]
    fn wrong_header_is_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "device,ts,lat,lon\na,1,0,0\n");
        assert_eq!(
            load_pings(&p, None).unwrap_err().kind(),
            "ingest.schema_mismatch"
        );
    }

    #[test]
    fn bad_latitude_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "device_id,timestamp_utc,lat,lon\nb,20,1.0,2.0\na,2016-11-08T12:00:00Z,95.0,0\na,10,1.5,2.5\n",
        );
        let (t, r) = load_pings(&p, None).unwrap();
        assert_eq!((r.rows_in, r.rows_loaded, r.rows_skipped), (3, 2, 1));
        assert_eq!(t.n_devices(), 2);
        assert_eq!(t.device_name(DeviceId(0)), "a");
        assert_eq!(t.device_pings(DeviceId(1))[0].t, 20);
    }

    #[test]
    fn timestamps_parse_in_both_forms() {
        assert_eq!(parse_timestamp("1478606400"), Some(1_478_606_400));
        assert_eq!(parse_timestamp("2016-11-08T12:00:00Z"), Some(1_478_606_400));
        assert_eq!(
            parse_timestamp("2016-11-08T07:00:00-05:00"),
            Some(1_478_606_400)
        );
        assert_eq!(parse_timestamp("2016-11-08 12:00:00"), Some(1_478_606_400));
        assert_eq!(parse_timestamp("noon"), None);
    }

    #[test]
    fn window_drops_out_of_range_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "device_id,timestamp_utc,lat,lon\na,5,0,0\na,15,0,0\n",
        );
        let (t, r) = load_pings(&p, Some((10, 20))).unwrap();
        assert_eq!((t.len(), r.rows_skipped), (1, 1));
    }

    #[test]
    fn fraction_sum_violation_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bg.csv",
            "block_group,frac_white,frac_black,frac_asian,frac_hispanic,frac_other,frac_poverty,population_k,pop_density_k\n\
             g1,0.5,0.2,0.1,0.05,0.05,0.1,1.2,3.4\n",
        );
        assert_eq!(
            load_blockgroups(&p).unwrap_err().kind(),
            "ingest.invariant_violation"
        );
    }

    #[test]
    fn duplicate_place_is_error_and_orphans_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let head = "place_id,lat,lon,state,county,block_group,registered_voters\n";
        let dup = write(
            &dir,
            "dup.csv",
            &format!("{head}p1,1,1,NY,c1,g1,2\np1,1,1,NY,c1,g1,2\n"),
        );
        assert_eq!(
            load_places(&dup, None).unwrap_err().kind(),
            "ingest.duplicate_key"
        );

        let ok = write(
            &dir,
            "ok.csv",
            &format!("{head}p1,1,1,NY,c1,g1,2\np2,1,1,NY,c1,g9,\n"),
        );
        let (places, _) = load_places(&ok, None).unwrap();
        let mut bgs = BTreeMap::new();
        bgs.insert(
            "g1".to_string(),
            BlockGroup {
                id: "g1".into(),
                frac_white: 1.0,
                frac_black: 0.0,
                frac_asian: 0.0,
                frac_hispanic: 0.0,
                frac_other: 0.0,
                frac_poverty: None,
                population_k: 1.0,
                pop_density_k: 1.0,
            },
        );
        let rep = validate_join(&places, &bgs);
        assert_eq!(rep.matched, 1);
        assert_eq!(rep.unmatched, vec![("p2".to_string(), "g9".to_string())]);
        match rep.into_result() {
            Err(IngestError::JoinError { missing }) => assert_eq!(missing, vec!["g9".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn county_must_nest_in_state() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "pl.csv",
            "place_id,lat,lon,state,county,block_group,registered_voters\np1,1,1,NY,c1,g1,\np2,1,1,NJ,c1,g1,\n",
        );
        assert_eq!(
            load_places(&p, None).unwrap_err().kind(),
            "ingest.invariant_violation"
        );
    }

    #[test]
    fn footprints_attach_as_hulls() {
        let dir = tempfile::tempdir().unwrap();
        let pl = write(
            &dir,
            "pl.csv",
            "place_id,lat,lon,state,county,block_group,registered_voters,district\np1,40,-75,NY,c1,g1,1.5,NY-1\n",
        );
        let fp = write(
            &dir,
            "fp.csv",
            "place_id,vertex_index,lat,lon\np1,0,39.9999,-75.0001\np1,1,39.9999,-74.9999\np1,2,40.0001,-74.9999\np1,3,40.0001,-75.0001\n",
        );
        let (places, rep) = load_places(&pl, Some(&fp)).unwrap();
        assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
        let f = places[0].footprint.as_ref().unwrap();
        assert!(f.contains(places[0].centroid));
        assert_eq!(places[0].district.as_deref(), Some("NY-1"));
        assert_eq!(places[0].registered_voters_k, Some(1.5));
    }

    #[test]
    fn states_table_sets_clocks() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s.csv",
            "state,utc_offset_h,open_hour,close_hour\nCA,-8,7,20\nXX,1,9,8\n",
        );
        let mut cal = StudyCalendar::new(chrono::NaiveDate::from_ymd_opt(2016, 11, 8).unwrap());
        let r = load_states(&p, &mut cal).unwrap();
        assert_eq!((r.rows_loaded, r.rows_skipped), (1, 1));
        assert_eq!(cal.clock("CA").utc_offset_h, -8);
    }
}
