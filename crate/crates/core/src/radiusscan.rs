//! Radius selection from the election-day excess of unique devices near
//! polling places, scanned over candidate radii.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::StudyCalendar;
use crate::geo::GridIndex;
use crate::ingest::{PingTable, PollingPlace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiusError {
    #[error("radii must be non-empty, positive and strictly increasing")]
    BadRadii,
    #[error("no comparison days")]
    NoOtherDays,
    #[error("curve needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("differential count is non-positive at every radius")]
    NonPositiveCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialCurve {
    pub radii: Vec<f64>,
    pub target_counts: Vec<usize>,
    pub other_mean_counts: Vec<f64>,
}

impl DifferentialCurve {
    pub fn diff(&self, k: usize) -> f64 {
        self.target_counts[k] as f64 - self.other_mean_counts[k]
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        (0..self.radii.len())
            .map(|k| (self.radii[k], self.diff(k)))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let path = path.as_ref();
        let io = |e| crate::Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "radius_m,count_target,mean_count_other,diff").map_err(io)?;
        for k in 0..self.radii.len() {
            writeln!(
                w,
                "{},{},{:.4},{:.4}",
                self.radii[k],
                self.target_counts[k],
                self.other_mean_counts[k],
                self.diff(k)
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Per-day sorted minimum device-to-centroid distances within `r_max`.
///
/// A device contributes one distance per local day: the closest it came to
/// any place centroid, where the day is taken in that place's state.
#[derive(Debug, Clone, Default)]
pub struct DistanceTable {
    pub r_max: f64,
    days: BTreeMap<NaiveDate, Vec<f64>>,
}

impl DistanceTable {
    pub fn build(
        table: &PingTable,
        places: &[PollingPlace],
        calendar: &StudyCalendar,
        r_max: f64,
    ) -> Self {
        let centroids: Vec<_> = places.iter().map(|p| p.centroid).collect();
        let grid = GridIndex::new(&centroids, r_max.max(50.0));
        let offsets: Vec<i64> = places
            .iter()
            .map(|p| calendar.clock(&p.state).utc_offset_h as i64 * 3600)
            .collect();
        let per_device: Vec<Vec<(NaiveDate, f64)>> = table
            .devices()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|d| {
                let mut best: BTreeMap<NaiveDate, f64> = BTreeMap::new();
                for p in table.device_pings(d) {
                    grid.for_each_within(p.loc, r_max, |k, dist| {
                        let day = crate::calendar::day_of_local_seconds(p.t + offsets[k]);
                        let e = best.entry(day).or_insert(f64::INFINITY);
                        if dist < *e {
                            *e = dist;
                        }
                    });
                }
                best.into_iter().collect()
            })
            .collect();
        let mut days: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
        for dev in per_device {
            for (day, dist) in dev {
                days.entry(day).or_default().push(dist);
            }
        }
        for v in days.values_mut() {
            v.sort_by(f64::total_cmp);
        }
        Self { r_max, days }
    }

    /// Distinct devices within `r` of any centroid on `day`; `r <= r_max`.
    pub fn count(&self, day: NaiveDate, r: f64) -> usize {
        debug_assert!(r <= self.r_max);
        self.days
            .get(&day)
            .map_or(0, |v| v.partition_point(|&d| d <= r))
    }
}

/// Distinct devices with a ping within `r` of any place centroid on `day`.
pub fn unique_devices(
    table: &PingTable,
    places: &[PollingPlace],
    calendar: &StudyCalendar,
    r: f64,
    day: NaiveDate,
) -> usize {
    DistanceTable::build(table, places, calendar, r).count(day, r)
}

fn check_radii(radii: &[f64]) -> Result<(), RadiusError> {
    let ok = !radii.is_empty()
        && radii[0] > 0.0
        && radii.iter().all(|r| r.is_finite())
        && radii.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(RadiusError::BadRadii)
    }
}

pub fn curve_from_table(
    dist: &DistanceTable,
    radii: &[f64],
    target_day: NaiveDate,
    other_days: &[NaiveDate],
) -> Result<DifferentialCurve, RadiusError> {
    check_radii(radii)?;
    if other_days.is_empty() {
        return Err(RadiusError::NoOtherDays);
    }
    let target_counts = radii.iter().map(|&r| dist.count(target_day, r)).collect();
    let other_mean_counts = radii
        .iter()
        .map(|&r| {
            let total: usize = other_days.iter().map(|&d| dist.count(d, r)).sum();
            total as f64 / other_days.len() as f64
        })
        .collect();
    Ok(DifferentialCurve {
        radii: radii.to_vec(),
        target_counts,
        other_mean_counts,
    })
}

pub fn differential_curve(
    table: &PingTable,
    places: &[PollingPlace],
    calendar: &StudyCalendar,
    radii: &[f64],
    target_day: NaiveDate,
    other_days: &[NaiveDate],
) -> Result<DifferentialCurve, RadiusError> {
    check_radii(radii)?;
    let dist = DistanceTable::build(table, places, calendar, *radii.last().unwrap());
    curve_from_table(&dist, radii, target_day, other_days)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSelection {
    pub radius_m: f64,
    /// No radius met the gain threshold; the largest was returned.
    pub saturated: bool,
}

/// Smallest `r_k` with `diff_k > 0` and relative gain to `r_{k+1}` below
/// `gain_threshold`.
pub fn select_radius(
    curve: &DifferentialCurve,
    gain_threshold: f64,
) -> Result<RadiusSelection, RadiusError> {
    let n = curve.radii.len();
    if n < 3 {
        return Err(RadiusError::TooFewPoints(n));
    }
    if (0..n).all(|k| curve.diff(k) <= 0.0) {
        return Err(RadiusError::NonPositiveCurve);
    }
    for k in 0..n - 1 {
        let d = curve.diff(k);
        if d > 0.0 && (curve.diff(k + 1) - d) / d < gain_threshold {
            return Ok(RadiusSelection {
                radius_m: curve.radii[k],
                saturated: false,
            });
        }
    }
    Ok(RadiusSelection {
        radius_m: curve.radii[n - 1],
        saturated: true,
    })
}
