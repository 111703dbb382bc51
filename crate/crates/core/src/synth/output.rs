//! Simulator artifacts in the ingest schemas, the truth table, and the join
//! of extracted spells against truth.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{GroundTruth, Role, SimOutput};
use crate::ingest::{field, write_pings, CsvFile, LoadReport, PingTable, PollingPlace};
use crate::spells::DwellSpell;

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct SimFiles {
    pub pings: PathBuf,
    pub places: PathBuf,
    pub footprints: PathBuf,
    pub blockgroups: PathBuf,
    pub truth: PathBuf,
    pub states: PathBuf,
    pub devices: PathBuf,
    pub survey: PathBuf,
}

impl SimFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            pings: dir.join("pings.csv"),
            places: dir.join("places.csv"),
            footprints: dir.join("footprints.csv"),
            blockgroups: dir.join("blockgroups.csv"),
            truth: dir.join("truth.csv"),
            states: dir.join("states.csv"),
            devices: dir.join("devices.csv"),
            survey: dir.join("survey.csv"),
        }
    }

    pub fn all(&self) -> [&Path; 8] {
        [
            &self.pings,
            &self.places,
            &self.footprints,
            &self.blockgroups,
            &self.truth,
            &self.states,
            &self.devices,
            &self.survey,
        ]
    }
}

struct Out {
    path: PathBuf,
    w: std::io::BufWriter<std::fs::File>,
}

impl Out {
    fn create(path: &Path, header: &str) -> crate::Result<Self> {
        let f = std::fs::File::create(path).map_err(|e| crate::Error::io(path, e))?;
        let mut o = Out {
            path: path.to_path_buf(),
            w: std::io::BufWriter::new(f),
        };
        o.line(format_args!("{header}"))?;
        Ok(o)
    }

    fn line(&mut self, args: std::fmt::Arguments<'_>) -> crate::Result<()> {
        writeln!(self.w, "{args}").map_err(|e| crate::Error::io(&self.path, e))
    }

    fn finish(mut self) -> crate::Result<()> {
        self.w.flush().map_err(|e| crate::Error::io(&self.path, e))
    }
}

/// Writes every artifact into `dir`, which must exist.
pub fn write_outputs(dir: &Path, out: &SimOutput) -> crate::Result<SimFiles> {
    let files = SimFiles::in_dir(dir);
    write_pings(&files.pings, &out.pings)?;

    let mut w = Out::create(
        &files.places,
        "place_id,lat,lon,state,county,block_group,registered_voters,district",
    )?;
    for p in &out.places {
        w.line(format_args!(
            "{},{},{},{},{},{},{},{}",
            p.place_id,
            p.centroid.lat(),
            p.centroid.lon(),
            p.state,
            p.county,
            p.block_group,
            p.registered_voters_k
                .map_or(String::new(), |v| v.to_string()),
            p.district.as_deref().unwrap_or("")
        ))?;
    }
    w.finish()?;

    let mut w = Out::create(&files.footprints, "place_id,vertex_index,lat,lon")?;
    for p in &out.places {
        if let Some(fp) = &p.footprint {
            for (i, v) in fp.vertices().iter().enumerate() {
                w.line(format_args!("{},{},{},{}", p.place_id, i, v.lat(), v.lon()))?;
            }
        }
    }
    w.finish()?;

    let mut w = Out::create(
        &files.blockgroups,
        "block_group,frac_white,frac_black,frac_asian,frac_hispanic,frac_other,frac_poverty,population_k,pop_density_k",
    )?;
    for b in out.blockgroups.values() {
        w.line(format_args!(
            "{},{},{},{},{},{},{},{},{}",
            b.id,
            b.frac_white,
            b.frac_black,
            b.frac_asian,
            b.frac_hispanic,
            b.frac_other,
            b.frac_poverty.map_or(String::new(), |v| v.to_string()),
            b.population_k,
            b.pop_density_k
        ))?;
    }
    w.finish()?;

    write_truth(&files.truth, &out.truth)?;

    let mut w = Out::create(&files.states, "state,utc_offset_h,open_hour,close_hour")?;
    for (s, c) in &out.calendar.states {
        w.line(format_args!(
            "{},{},{},{}",
            s, c.utc_offset_h, c.open_hour, c.close_hour
        ))?;
    }
    w.finish()?;

    let mut w = Out::create(&files.devices, "device_id,android")?;
    for (d, a) in &out.devices {
        w.line(format_args!("{},{}", d, u8::from(*a)))?;
    }
    w.finish()?;

    crate::cces::write_survey(&files.survey, &out.survey)?;
    Ok(files)
}

pub const TRUTH_COLUMNS: [&str; 8] = [
    "device_id",
    "place_id",
    "day",
    "true_arrival",
    "true_departure",
    "true_wait_min",
    "role",
    "contaminant",
];

pub fn write_truth(path: &Path, truth: &[GroundTruth]) -> crate::Result<()> {
    let mut w = Out::create(path, &TRUTH_COLUMNS.join(","))?;
    for t in truth {
        w.line(format_args!(
            "{},{},{},{},{},{},{},{}",
            t.device_id,
            t.place_id,
            t.day,
            t.true_arrival,
            t.true_departure,
            t.true_wait_min,
            t.role.as_str(),
            u8::from(t.contaminant)
        ))?;
    }
    w.finish()
}

pub fn load_truth(path: impl AsRef<Path>) -> crate::Result<(Vec<GroundTruth>, LoadReport)> {
    let mut file = CsvFile::open(path.as_ref(), &TRUTH_COLUMNS[..7], &TRUTH_COLUMNS[7..])?;
    let cols: Vec<Option<usize>> = TRUTH_COLUMNS.iter().map(|c| file.col(c)).collect();
    let mut report = LoadReport::default();
    let mut out = Vec::new();
    file.for_each(&mut report, |rec, line, report| {
        let get = |i: usize| field(rec, cols[i]);
        let parsed = (|| {
            Some(GroundTruth {
                device_id: get(0)?.to_string(),
                place_id: get(1)?.to_string(),
                day: get(2)?.parse::<NaiveDate>().ok()?,
                true_arrival: get(3)?.parse().ok()?,
                true_departure: get(4)?.parse().ok()?,
                true_wait_min: get(5)?.parse().ok()?,
                role: Role::parse(get(6)?)?,
                contaminant: get(7).is_some_and(|s| s == "1"),
            })
        })();
        match parsed {
            Some(t) => {
                report.rows_loaded += 1;
                out.push(t);
            }
            None => report.skip(line, "bad truth row"),
        }
        Ok(())
    })?;
    Ok((out, report))
}

/// One extracted spell matched to one truth record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TruthPair {
    pub spell: usize,
    pub truth: usize,
}

/// Inner join on `(device_id, place_id, day)`, in spell order, then truth
/// order within a spell.
pub fn truth_join(
    spells: &[DwellSpell],
    pings: &PingTable,
    places: &[PollingPlace],
    truth: &[GroundTruth],
) -> Vec<TruthPair> {
    let mut index: HashMap<(&str, &str, NaiveDate), Vec<usize>> = HashMap::new();
    for (i, t) in truth.iter().enumerate() {
        index
            .entry((t.device_id.as_str(), t.place_id.as_str(), t.day))
            .or_default()
            .push(i);
    }
    let mut out = Vec::new();
    for (s, sp) in spells.iter().enumerate() {
        let key = (
            pings.device_name(sp.device),
            places[sp.place as usize].place_id.as_str(),
            sp.day,
        );
        if let Some(ts) = index.get(&key) {
            out.extend(ts.iter().map(|&t| TruthPair { spell: s, truth: t }));
        }
    }
    out
}
