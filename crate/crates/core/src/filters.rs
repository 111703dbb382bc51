//! Likely-voter filter chain with per-stage attrition counts.
//!
//! Every device with a spell on the anchor day is evaluated against the
//! stages in order and stops at the first one it fails. Survivors are the
//! devices that pass all of them; each contributes one spell.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::calendar::StudyCalendar;
use crate::config::{Config, ConfigError};
use crate::ingest::{DeviceId, PingTable, PollingPlace};
use crate::spells::DwellSpell;

pub const STAGES: [&str; 5] = [
    "single_place",
    "exclusion_window",
    "hull_ping",
    "consistency",
    "reasonable_values",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub min_upper_min: f64,
    pub max_upper_min: f64,
    pub min_upper_floor: Option<f64>,
    pub require_hull_ping: bool,
    pub consistency_hours: u32,
    pub exclusion_pre_days: u32,
    pub exclusion_post_days: u32,
    pub single_place: bool,
    pub strict_cross_place: bool,
    /// Spells in the exclusion windows longer than this disqualify.
    pub exclusion_upper_min: f64,
    /// Use the lower bound where the upper bound is missing.
    pub allow_missing_upper: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_upper_min: 1.0,
            max_upper_min: 120.0,
            min_upper_floor: None,
            require_hull_ping: true,
            consistency_hours: 12,
            exclusion_pre_days: 7,
            exclusion_post_days: 7,
            single_place: true,
            strict_cross_place: false,
            exclusion_upper_min: 1.0,
            allow_missing_upper: false,
        }
    }
}

impl FilterConfig {
    /// Reads `filter.*` keys over the defaults.
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let d = FilterConfig::default();
        let c = FilterConfig {
            min_upper_min: cfg.get_or("filter.min_upper_min", d.min_upper_min)?,
            max_upper_min: cfg.get_or("filter.max_upper_min", d.max_upper_min)?,
            min_upper_floor: cfg.get("filter.min_upper_floor")?,
            require_hull_ping: cfg.get_or("filter.require_hull_ping", d.require_hull_ping)?,
            consistency_hours: cfg.get_or("filter.consistency_hours", d.consistency_hours)?,
            exclusion_pre_days: cfg.get_or("filter.exclusion_pre_days", d.exclusion_pre_days)?,
            exclusion_post_days: cfg.get_or("filter.exclusion_post_days", d.exclusion_post_days)?,
            single_place: cfg.get_or("filter.single_place", d.single_place)?,
            strict_cross_place: cfg.get_or("filter.strict_cross_place", d.strict_cross_place)?,
            exclusion_upper_min: cfg.get_or("filter.exclusion_upper_min", d.exclusion_upper_min)?,
            allow_missing_upper: cfg.get_or("filter.allow_missing_upper", d.allow_missing_upper)?,
        };
        c.validate().map_err(|reason| ConfigError::InvalidValue {
            key: "filter".into(),
            value: format!("{c:?}"),
            reason,
        })?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.min_upper_min && self.min_upper_min < self.max_upper_min) {
            return Err("need 0 <= min_upper_min < max_upper_min".into());
        }
        if !(1..=24).contains(&self.consistency_hours) {
            return Err("consistency_hours must be in 1..=24".into());
        }
        Ok(())
    }

    /// Reasonable-values variants RV1..RV10 as `(max_upper_min, min_upper_floor)`.
    pub fn reasonable_values_variants(&self) -> Vec<(String, FilterConfig)> {
        const RV: [(f64, Option<f64>); 10] = [
            (300.0, None),
            (240.0, None),
            (180.0, None),
            (120.0, None),
            (120.0, Some(1.5)),
            (120.0, Some(2.0)),
            (60.0, Some(2.0)),
            (60.0, Some(2.5)),
            (60.0, Some(3.0)),
            (60.0, Some(4.0)),
        ];
        RV.iter()
            .enumerate()
            .map(|(i, &(max, floor))| {
                let mut c = self.clone();
                c.max_upper_min = max;
                c.min_upper_floor = floor;
                (format!("RV{}", i + 1), c)
            })
            .collect()
    }

    fn upper(&self, s: &DwellSpell) -> Option<f64> {
        match s.upper_min() {
            Some(u) => Some(u),
            None if self.allow_missing_upper => Some(s.lower_min()),
            None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageCount {
    pub name: String,
    pub devices_in: usize,
    pub devices_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttritionReport {
    pub stages: Vec<StageCount>,
}

impl AttritionReport {
    pub fn survivors(&self) -> usize {
        self.stages.last().map_or(0, |s| s.devices_out)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let path = path.as_ref();
        let io = |e| crate::Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "stage,devices_in,devices_out").map_err(io)?;
        for s in &self.stages {
            writeln!(w, "{},{},{}", s.name, s.devices_in, s.devices_out).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Where a device left the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Failed(usize),
    /// Index of the kept spell in the input slice.
    Survived(usize),
}

/// Borrowed inputs for one run of the chain.
pub struct FilterInput<'a> {
    /// Merged spells (one per device × place × day), sorted by device.
    pub spells: &'a [DwellSpell],
    pub pings: &'a PingTable,
    pub places: &'a [PollingPlace],
    pub calendar: &'a StudyCalendar,
}

/// Spell slices per device, in device order.
fn by_device(spells: &[DwellSpell]) -> Vec<(DeviceId, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < spells.len() {
        let d = spells[i].device;
        let mut j = i + 1;
        while j < spells.len() && spells[j].device == d {
            j += 1;
        }
        out.push((d, i..j));
        i = j;
    }
    out
}

/// Longest run of consecutive local clock hours on `day` with a ping.
pub fn longest_hour_run(
    input: &FilterInput<'_>,
    device: DeviceId,
    state: &str,
    day: NaiveDate,
) -> u32 {
    let start = input.calendar.day_start_utc(state, day);
    let end = start + 86_400;
    let pings = input.pings.device_pings(device);
    let lo = pings.partition_point(|p| p.t < start);
    let mut mask = 0u32;
    for p in &pings[lo..] {
        if p.t >= end {
            break;
        }
        mask |= 1 << ((p.t - start) / 3600);
    }
    let (mut best, mut run) = (0, 0);
    for h in 0..24 {
        if mask & (1 << h) != 0 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// Runs the chain for one device whose spells are `spells[range]`.
pub fn evaluate_device(
    input: &FilterInput<'_>,
    cfg: &FilterConfig,
    range: std::ops::Range<usize>,
) -> Option<Outcome> {
    let own = &input.spells[range.clone()];
    let cal = input.calendar;
    let day = cal.target_day;
    let on_day: Vec<usize> = (0..own.len()).filter(|&i| own[i].day == day).collect();
    if on_day.is_empty() {
        return None;
    }

    let qualifying: Vec<usize> = on_day
        .iter()
        .copied()
        .filter(|&i| cfg.upper(&own[i]).is_some_and(|u| u >= cfg.min_upper_min))
        .collect();
    let chosen = if cfg.single_place {
        match qualifying.as_slice() {
            [only] => *only,
            _ => return Some(Outcome::Failed(0)),
        }
    } else {
        // Longest qualifying visit; earliest index on ties.
        let mut best: Option<usize> = None;
        for &i in &qualifying {
            if best.is_none_or(|b| cfg.upper(&own[i]) > cfg.upper(&own[b])) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => b,
            None => return Some(Outcome::Failed(0)),
        }
    };
    let spell = &own[chosen];

    let diff = |d: NaiveDate| (d - day).num_days();
    let in_window = |d: NaiveDate| {
        let k = diff(d);
        (k < 0 && -k <= cfg.exclusion_pre_days as i64)
            || (k > 0 && k <= cfg.exclusion_post_days as i64)
    };
    let disqualifying = own.iter().any(|s| {
        in_window(s.day)
            && (cfg.strict_cross_place || s.place == spell.place)
            && s.upper_min().unwrap_or(s.lower_min()) > cfg.exclusion_upper_min
    });
    if disqualifying {
        return Some(Outcome::Failed(1));
    }

    if cfg.require_hull_ping && !spell.hull_ping {
        return Some(Outcome::Failed(2));
    }

    let state = &input.places[spell.place as usize].state;
    if longest_hour_run(input, spell.device, state, day) < cfg.consistency_hours {
        return Some(Outcome::Failed(3));
    }

    let u = cfg.upper(spell).unwrap_or(f64::NAN);
    let floor_ok = cfg.min_upper_floor.is_none_or(|f| u >= f);
    if !(u <= cfg.max_upper_min && floor_ok) {
        return Some(Outcome::Failed(4));
    }
    Some(Outcome::Survived(range.start + chosen))
}

/// Surviving spells on `calendar.target_day`, in device order, and the
/// attrition report.
pub fn apply_filters(
    input: &FilterInput<'_>,
    cfg: &FilterConfig,
) -> (Vec<DwellSpell>, AttritionReport) {
    let groups = by_device(input.spells);
    let outcomes: Vec<Option<Outcome>> = groups
        .par_iter()
        .map(|(_, r)| evaluate_device(input, cfg, r.clone()))
        .collect();

    // reached[k] = devices that entered stage k; reached[5] = survivors.
    let mut reached = [0usize; STAGES.len() + 1];
    let mut survivors = Vec::new();
    for o in outcomes.into_iter().flatten() {
        let last = match o {
            Outcome::Failed(k) => k,
            Outcome::Survived(i) => {
                survivors.push(input.spells[i].clone());
                STAGES.len()
            }
        };
        for r in reached.iter_mut().take(last + 1) {
            *r += 1;
        }
    }
    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(k, name)| StageCount {
            name: name.to_string(),
            devices_in: reached[k],
            devices_out: reached[k + 1],
        })
        .collect();
    (survivors, AttritionReport { stages })
}

/// The same chain with every date anchor moved to `day`.
pub fn placebo_sample(
    day: NaiveDate,
    input: &FilterInput<'_>,
    cfg: &FilterConfig,
) -> (Vec<DwellSpell>, AttritionReport) {
    let shifted = input.calendar.shifted(day);
    let moved = FilterInput {
        spells: input.spells,
        pings: input.pings,
        places: input.places,
        calendar: &shifted,
    };
    apply_filters(&moved, cfg)
}
