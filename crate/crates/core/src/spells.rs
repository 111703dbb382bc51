//! Dwell spells: maximal runs of consecutive in-radius pings at a place,
//! with lower bounds from the first and last inside pings and upper bounds
//! from the bracketing outside pings.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::{StateClock, StudyCalendar};
use crate::geo::GridIndex;
use crate::ingest::{DeviceId, Ping, PingTable, PollingPlace};

/// Without a footprint, a ping this close to the centroid counts as a hull ping.
pub const HULL_FALLBACK_M: f64 = 15.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpellError {
    #[error("pings for device {device} are not sorted by time at index {index}")]
    UnsortedInput { device: String, index: usize },
    #[error("spell lacks an outside bracketing ping, so the upper bound is undefined")]
    MissingBound,
    #[error("lambda {0} is outside [0, 1]")]
    InvalidLambda(f64),
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwellSpell {
    pub device: DeviceId,
    /// Index into the place list the spell was extracted against.
    pub place: u32,
    /// Local day of `t_first_in`.
    pub day: NaiveDate,
    pub t_out_before: Option<i64>,
    pub t_first_in: i64,
    pub t_last_in: i64,
    pub t_out_after: Option<i64>,
    pub arrival_hour: u8,
    pub hull_ping: bool,
}

impl DwellSpell {
    pub fn lower_min(&self) -> f64 {
        (self.t_last_in - self.t_first_in) as f64 / 60.0
    }

    /// `None` unless both bracketing pings exist.
    pub fn upper_min(&self) -> Option<f64> {
        match (self.t_out_before, self.t_out_after) {
            (Some(a), Some(b)) => Some((b - a) as f64 / 60.0),
            _ => None,
        }
    }

    pub fn midpoint_min(&self) -> Option<f64> {
        self.upper_min().map(|u| 0.5 * (u + self.lower_min()))
    }
}

/// `λ·upper + (1 − λ)·lower`; `λ = 0` needs no upper bound.
pub fn wait_time(spell: &DwellSpell, lambda: f64) -> Result<f64, SpellError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SpellError::InvalidLambda(lambda));
    }
    let lower = spell.lower_min();
    if lambda == 0.0 {
        return Ok(lower);
    }
    let upper = spell.upper_min().ok_or(SpellError::MissingBound)?;
    Ok(lambda * upper + (1.0 - lambda) * lower)
}

/// Shared read-only place lookup for extraction.
pub struct PlaceIndex<'a> {
    pub places: &'a [PollingPlace],
    grid: GridIndex,
    clocks: Vec<StateClock>,
    radius_m: f64,
}

impl<'a> PlaceIndex<'a> {
    pub fn new(
        places: &'a [PollingPlace],
        calendar: &StudyCalendar,
        radius_m: f64,
    ) -> Result<Self, SpellError> {
        if !(radius_m > 0.0 && radius_m.is_finite()) {
            return Err(SpellError::InvalidRadius(radius_m));
        }
        let centroids: Vec<_> = places.iter().map(|p| p.centroid).collect();
        Ok(Self {
            places,
            grid: GridIndex::new(&centroids, radius_m.max(50.0)),
            clocks: places.iter().map(|p| calendar.clock(&p.state)).collect(),
            radius_m,
        })
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    fn local(&self, place: usize, t: i64) -> i64 {
        t + self.clocks[place].utc_offset_h as i64 * 3600
    }

    fn local_day(&self, place: usize, t: i64) -> NaiveDate {
        crate::calendar::day_of_local_seconds(self.local(place, t))
    }

    fn is_hull_ping(&self, place: usize, p: &Ping, dist: f64) -> bool {
        match &self.places[place].footprint {
            Some(fp) => fp.contains(p.loc),
            None => dist <= HULL_FALLBACK_M,
        }
    }
}

struct OpenRun {
    place: usize,
    start: usize,
    end: usize,
    hull: bool,
}

/// Spells for one device's time-ordered pings.
pub fn extract_device_spells(
    device: DeviceId,
    pings: &[Ping],
    index: &PlaceIndex<'_>,
    device_name: impl Fn() -> String,
) -> Result<Vec<DwellSpell>, SpellError> {
    if let Some(i) = pings.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(SpellError::UnsortedInput {
            device: device_name(),
            index: i + 1,
        });
    }
    let mut out = Vec::new();
    let mut open: Vec<OpenRun> = Vec::new();
    let mut hits: Vec<(usize, f64)> = Vec::new();
    let close = |run: OpenRun, after: Option<&Ping>, out: &mut Vec<DwellSpell>| {
        let first = &pings[run.start];
        let day = index.local_day(run.place, first.t);
        let same_day = |p: &Ping| index.local_day(run.place, p.t) == day;
        let before = run
            .start
            .checked_sub(1)
            .map(|i| &pings[i])
            .filter(|p| same_day(p));
        let after = after.filter(|p| same_day(p));
        out.push(DwellSpell {
            device,
            place: run.place as u32,
            day,
            t_out_before: before.map(|p| p.t),
            t_first_in: first.t,
            t_last_in: pings[run.end].t,
            t_out_after: after.map(|p| p.t),
            arrival_hour: (index.local(run.place, first.t).rem_euclid(86_400) / 3600) as u8,
            hull_ping: run.hull,
        });
    };
    for (i, p) in pings.iter().enumerate() {
        hits.clear();
        index
            .grid
            .for_each_within(p.loc, index.radius_m, |k, d| hits.push((k, d)));
        hits.sort_unstable_by_key(|h| h.0);
        let mut k = 0;
        while k < open.len() {
            if hits.iter().any(|h| h.0 == open[k].place) {
                k += 1;
            } else {
                let run = open.remove(k);
                close(run, Some(p), &mut out);
            }
        }
        for &(place, dist) in &hits {
            let hull = index.is_hull_ping(place, p, dist);
            match open.iter_mut().find(|r| r.place == place) {
                Some(run) => {
                    run.end = i;
                    run.hull |= hull;
                }
                None => open.push(OpenRun {
                    place,
                    start: i,
                    end: i,
                    hull,
                }),
            }
        }
    }
    for run in open {
        close(run, None, &mut out);
    }
    out.sort_by_key(|s| (s.t_first_in, s.place));
    Ok(out)
}

/// Spells for every device, in device order. When `days` is non-empty only
/// spells on those days are kept.
pub fn extract_spells(
    table: &PingTable,
    index: &PlaceIndex<'_>,
    days: &[NaiveDate],
) -> Result<Vec<DwellSpell>, SpellError> {
    let per_device: Vec<Result<Vec<DwellSpell>, SpellError>> = table
        .devices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|d| {
            let mut spells = extract_device_spells(d, table.device_pings(d), index, || {
                table.device_name(d).to_string()
            })?;
            if !days.is_empty() {
                spells.retain(|s| days.contains(&s.day));
            }
            Ok(spells)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_device {
        out.extend(r?);
    }
    Ok(out)
}

/// Index of the spell to keep among same device/place/day spells sorted by
/// `t_first_in`: largest upper bound, missing bounds lowest, earliest on ties.
pub fn merge_same_place(spells: &[DwellSpell]) -> Option<usize> {
    let key = |s: &DwellSpell| s.upper_min().unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<usize> = None;
    for (i, s) in spells.iter().enumerate() {
        match best {
            Some(b) if key(s) <= key(&spells[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Collapses each device × place × day group to one spell. Returns the kept
/// spells sorted by `(device, place, day)` and the number discarded.
pub fn merge_visits(mut spells: Vec<DwellSpell>) -> (Vec<DwellSpell>, usize) {
    spells.sort_by_key(|s| (s.device, s.place, s.day, s.t_first_in));
    let mut out = Vec::with_capacity(spells.len());
    let mut discarded = 0;
    let mut i = 0;
    while i < spells.len() {
        let mut j = i + 1;
        let k = (spells[i].device, spells[i].place, spells[i].day);
        while j < spells.len() && (spells[j].device, spells[j].place, spells[j].day) == k {
            j += 1;
        }
        let keep = merge_same_place(&spells[i..j]).expect("non-empty group");
        out.push(spells[i + keep].clone());
        discarded += j - i - 1;
        i = j;
    }
    (out, discarded)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Writes `device_id,place_id,day,lower_min,upper_min,midpoint_min,arrival_hour,hull_ping`.
pub fn write_spells(
    path: impl AsRef<Path>,
    spells: &[DwellSpell],
    table: &PingTable,
    places: &[PollingPlace],
) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let f = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(
        w,
        "device_id,place_id,day,lower_min,upper_min,midpoint_min,arrival_hour,hull_ping"
    )
    .map_err(io)?;
    for s in spells {
        writeln!(
            w,
            "{},{},{},{:.4},{},{},{},{}",
            table.device_name(s.device),
            places[s.place as usize].place_id,
            s.day,
            s.lower_min(),
            fmt_opt(s.upper_min()),
            fmt_opt(s.midpoint_min()),
            s.arrival_hour,
            u8::from(s.hull_ping)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
