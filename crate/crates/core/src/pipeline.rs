//! End-to-end glue: dataset loading, radius choice, spell extraction, the
//! filter chain and the join to place demographics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::calendar::StudyCalendar;
use crate::config::{Config, ConfigError};
use crate::filters::{apply_filters, placebo_sample, AttritionReport, FilterConfig, FilterInput};
use crate::ingest::{
    load_blockgroups, load_devices, load_pings, load_places, load_states, validate_join,
    BlockGroup, PingTable, PollingPlace,
};
use crate::radiusscan::{differential_curve, select_radius, DifferentialCurve, RadiusSelection};
use crate::regress::{disparity_table, DepVar, FitResult, LadderColumn, VoterRow};
use crate::spells::{extract_spells, merge_visits, wait_time, DwellSpell, PlaceIndex};
use crate::synth::SimOutput;

/// Every input the pipeline reads.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pings: PingTable,
    pub places: Vec<PollingPlace>,
    pub blockgroups: BTreeMap<String, BlockGroup>,
    pub devices: Option<BTreeMap<String, bool>>,
    pub calendar: StudyCalendar,
}

impl Dataset {
    pub fn from_sim(sim: &SimOutput) -> Self {
        Self {
            pings: sim.pings.clone(),
            places: sim.places.clone(),
            blockgroups: sim.blockgroups.clone(),
            devices: Some(sim.devices.clone()),
            calendar: sim.calendar.clone(),
        }
    }

    /// Reads `input.*` paths and the calendar from `cfg`.
    pub fn load(cfg: &Config) -> crate::Result<Self> {
        let mut calendar = StudyCalendar::from_config(cfg)?;
        let path = |k: &str| cfg.require_str(k).map(PathBuf::from);
        if let Some(states) = cfg.get_str("input.states") {
            load_states(states, &mut calendar)?;
        }
        let footprints = cfg.get_str("input.footprints").map(PathBuf::from);
        let (places, _) = load_places(path("input.places")?, footprints.as_deref())?;
        let (blockgroups, _) = load_blockgroups(path("input.blockgroups")?)?;
        validate_join(&places, &blockgroups).into_result()?;
        let devices = match cfg.get_str("input.devices") {
            Some(p) => Some(load_devices(p)?.0),
            None => None,
        };
        let (pings, _) = load_pings(path("input.pings")?, Some(calendar.utc_window()))?;
        Ok(Self {
            pings,
            places,
            blockgroups,
            devices,
            calendar,
        })
    }

    fn filter_input<'a>(&'a self, spells: &'a [DwellSpell]) -> FilterInput<'a> {
        FilterInput {
            spells,
            pings: &self.pings,
            places: &self.places,
            calendar: &self.calendar,
        }
    }
}

pub const DEFAULT_RADIUS_M: f64 = 60.0;

/// Candidate radii 10, 20, ..., 150 m.
pub fn default_radii() -> Vec<f64> {
    (1..=15).map(|k| 10.0 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Fixed extraction radius; scanned when `None` (`spells.radius_m=auto`).
    pub radius_m: Option<f64>,
    pub radii: Vec<f64>,
    pub gain_threshold: f64,
    pub lambda: f64,
    pub filter: FilterConfig,
    pub region_min_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            radius_m: Some(DEFAULT_RADIUS_M),
            radii: default_radii(),
            gain_threshold: 0.02,
            lambda: 0.5,
            filter: FilterConfig::default(),
            region_min_n: 30,
        }
    }
}

impl PipelineConfig {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let d = PipelineConfig::default();
        let radius_m = match cfg.get_str("spells.radius_m") {
            Some("auto") => None,
            Some(_) => cfg.get("spells.radius_m")?,
            None => d.radius_m,
        };
        Ok(Self {
            radius_m,
            radii: cfg.get_list("radius.radii")?.unwrap_or(d.radii),
            gain_threshold: cfg.get_or("radius.gain_threshold", d.gain_threshold)?,
            lambda: cfg.get_or("spells.lambda", d.lambda)?,
            filter: FilterConfig::from_config(cfg)?,
            region_min_n: cfg.get_or("regions.min_n", d.region_min_n)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusScan {
    pub curve: DifferentialCurve,
    pub selection: RadiusSelection,
}

pub fn scan_radius(ds: &Dataset, radii: &[f64], gain_threshold: f64) -> crate::Result<RadiusScan> {
    let cal = &ds.calendar;
    let curve = differential_curve(
        &ds.pings,
        &ds.places,
        cal,
        radii,
        cal.target_day,
        &cal.other_days(),
    )?;
    let selection = select_radius(&curve, gain_threshold)?;
    Ok(RadiusScan { curve, selection })
}

/// The configured radius, or the scanned one.
pub fn choose_radius(
    ds: &Dataset,
    cfg: &PipelineConfig,
) -> crate::Result<(f64, Option<RadiusScan>)> {
    match cfg.radius_m {
        Some(r) => Ok((r, None)),
        None => {
            let scan = scan_radius(ds, &cfg.radii, cfg.gain_threshold)?;
            Ok((scan.selection.radius_m, Some(scan)))
        }
    }
}

/// Merged spells (one per device × place × day) over all study days.
pub fn extract(ds: &Dataset, radius_m: f64) -> crate::Result<Vec<DwellSpell>> {
    let index = PlaceIndex::new(&ds.places, &ds.calendar, radius_m)?;
    let raw = extract_spells(&ds.pings, &index, &ds.calendar.study_days())?;
    Ok(merge_visits(raw).0)
}

/// Joins spells to place and block-group attributes. Spells whose place has
/// no block group are skipped; the wait falls back to the lower bound when
/// the upper bound is missing.
pub fn build_voter_rows(
    ds: &Dataset,
    spells: &[DwellSpell],
    lambda: f64,
) -> crate::Result<Vec<VoterRow>> {
    let mut rows = Vec::with_capacity(spells.len());
    for s in spells {
        let p = &ds.places[s.place as usize];
        let Some(bg) = ds.blockgroups.get(&p.block_group) else {
            continue;
        };
        let device = ds.pings.device_name(s.device);
        let wait = match s.upper_min() {
            Some(_) => wait_time(s, lambda)?,
            None => s.lower_min(),
        };
        rows.push(VoterRow {
            device: device.to_string(),
            place: p.place_id.clone(),
            state: p.state.clone(),
            county: p.county.clone(),
            district: p.district.clone(),
            arrival_hour: s.arrival_hour,
            lower_min: s.lower_min(),
            upper_min: s.upper_min(),
            wait_min: wait,
            frac_white: bg.frac_white,
            frac_black: bg.frac_black,
            frac_asian: bg.frac_asian,
            frac_hispanic: bg.frac_hispanic,
            frac_other: bg.frac_other,
            frac_poverty: bg.frac_poverty,
            population_k: bg.population_k,
            pop_density_k: bg.pop_density_k,
            android: ds.devices.as_ref().and_then(|d| d.get(device).copied()),
            voters_per_place_k: p.registered_voters_k,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct DayRun {
    pub day: NaiveDate,
    pub survivors: Vec<DwellSpell>,
    pub attrition: AttritionReport,
    pub rows: Vec<VoterRow>,
}

/// The filter chain anchored on `day` and the joined voter rows.
pub fn run_day(
    ds: &Dataset,
    spells: &[DwellSpell],
    filter: &FilterConfig,
    day: NaiveDate,
    lambda: f64,
) -> crate::Result<DayRun> {
    let input = ds.filter_input(spells);
    let (survivors, attrition) = if day == ds.calendar.target_day {
        apply_filters(&input, filter)
    } else {
        placebo_sample(day, &input, filter)
    };
    let rows = build_voter_rows(ds, &survivors, lambda)?;
    Ok(DayRun {
        day,
        survivors,
        attrition,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct PlaceboDay {
    pub day: NaiveDate,
    pub survivors: usize,
    /// Column (1) fit; `None` when the day's sample cannot be fitted.
    pub fit: Option<FitResult>,
}

impl PlaceboDay {
    pub fn coef(&self) -> Option<f64> {
        self.fit.as_ref().and_then(|f| f.coef_of("frac_black"))
    }

    pub fn se(&self) -> Option<f64> {
        self.fit.as_ref().and_then(|f| f.se_of("frac_black"))
    }
}

/// Every non-target study day rerun through the chain and column (1).
pub fn placebo(
    ds: &Dataset,
    spells: &[DwellSpell],
    filter: &FilterConfig,
    lambda: f64,
) -> crate::Result<Vec<PlaceboDay>> {
    ds.calendar
        .other_days()
        .into_par_iter()
        .map(|day| {
            let run = run_day(ds, spells, filter, day, lambda)?;
            Ok(PlaceboDay {
                day,
                survivors: run.survivors.len(),
                fit: disparity_table(&run.rows, LadderColumn::Col1, DepVar::Wait).ok(),
            })
        })
        .collect()
}

pub fn write_placebo(path: impl AsRef<Path>, days: &[PlaceboDay]) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "day,survivors,coef,se").map_err(io)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for d in days {
        writeln!(
            w,
            "{},{},{},{}",
            d.day,
            d.survivors,
            cell(d.coef()),
            cell(d.se())
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Spells, survivors and rows for the target day at a given radius.
#[derive(Debug, Clone)]
pub struct TargetRun {
    pub radius_m: f64,
    pub scan: Option<RadiusScan>,
    pub spells: Vec<DwellSpell>,
    pub day: DayRun,
}

pub fn run_target(ds: &Dataset, cfg: &PipelineConfig) -> crate::Result<TargetRun> {
    let (radius_m, scan) = choose_radius(ds, cfg)?;
    let spells = extract(ds, radius_m)?;
    let day = run_day(ds, &spells, &cfg.filter, ds.calendar.target_day, cfg.lambda)?;
    Ok(TargetRun {
        radius_m,
        scan,
        spells,
        day,
    })
}
