//! Descriptive summaries of wait times: kernel densities, decile splits by
//! place demographics, threshold shares, histograms and hourly profiles.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::regress::VoterRow;
use crate::stats::KahanSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("no values to summarise")]
    EmptyInput,
    #[error("half-width and bin width must be positive, got {0}")]
    BadWidth(f64),
    #[error("field `{field}` has {distinct} distinct place values; need at least 10")]
    DegenerateField { field: String, distinct: usize },
    #[error("unknown or missing numeric field `{0}`")]
    UnknownField(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Triangular,
}

impl Kernel {
    /// Kernel on `u ∈ [-1, 1]`, integrating to one.
    fn weight(self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Triangular => 1.0 - u.abs(),
        }
    }
}

/// `lo, lo + step, ...` up to and including `hi` (within rounding).
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

pub fn kde(
    values: &[f64],
    half_width: f64,
    grid: &[f64],
    kernel: Kernel,
) -> Result<Vec<(f64, f64)>, DensityError> {
    if values.is_empty() {
        return Err(DensityError::EmptyInput);
    }
    if !(half_width > 0.0) {
        return Err(DensityError::BadWidth(half_width));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (sorted.len() as f64 * half_width);
    Ok(grid
        .iter()
        .map(|&x| {
            // Only values within the support contribute.
            let lo = sorted.partition_point(|v| *v <= x - half_width);
            let hi = sorted.partition_point(|v| *v < x + half_width);
            let s: KahanSum = sorted[lo..hi]
                .iter()
                .map(|v| kernel.weight((x - v) / half_width))
                .collect();
            (x, s.value() * norm)
        })
        .collect())
}

/// Place-level value of `field`, taken from each place's first row.
fn place_values<'a>(
    rows: &'a [VoterRow],
    field: &str,
) -> Result<BTreeMap<&'a str, f64>, DensityError> {
    let mut out = BTreeMap::new();
    for r in rows {
        if out.contains_key(r.place.as_str()) {
            continue;
        }
        let v = r
            .value(field)
            .ok()
            .flatten()
            .ok_or_else(|| DensityError::UnknownField(field.to_string()))?;
        out.insert(r.place.as_str(), v);
    }
    Ok(out)
}

/// Ranks places by `field` (ties by place id), takes the bottom and top
/// tenth of places (`⌈P/10⌉` each) and returns the voters at those places.
pub fn decile_split<'a>(
    rows: &'a [VoterRow],
    field: &str,
) -> Result<(Vec<&'a VoterRow>, Vec<&'a VoterRow>), DensityError> {
    if rows.is_empty() {
        return Err(DensityError::EmptyInput);
    }
    let values = place_values(rows, field)?;
    let mut distinct: Vec<f64> = values.values().copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 10 {
        return Err(DensityError::DegenerateField {
            field: field.to_string(),
            distinct: distinct.len(),
        });
    }
    let mut ranked: Vec<(&str, f64)> = values.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    let k = ranked.len().div_ceil(10);
    let bottom: std::collections::BTreeSet<&str> = ranked[..k].iter().map(|p| p.0).collect();
    let top: std::collections::BTreeSet<&str> =
        ranked[ranked.len() - k..].iter().map(|p| p.0).collect();
    let pick = |set: &std::collections::BTreeSet<&str>| {
        rows.iter()
            .filter(|r| set.contains(r.place.as_str()))
            .collect()
    };
    Ok((pick(&bottom), pick(&top)))
}

/// Fraction of rows with `wait_min > threshold`.
pub fn share_over<'a>(
    rows: impl IntoIterator<Item = &'a VoterRow>,
    threshold: f64,
) -> Result<f64, DensityError> {
    let (mut n, mut over) = (0usize, 0usize);
    for r in rows {
        n += 1;
        over += usize::from(r.wait_min > threshold);
    }
    if n == 0 {
        return Err(DensityError::EmptyInput);
    }
    Ok(over as f64 / n as f64)
}

/// Left-closed bins `[start + i·width, start + (i+1)·width)`; values below
/// `start` are ignored. Returns `(left_edge, count)` up to the last
/// non-empty bin.
pub fn histogram(
    values: &[f64],
    start: f64,
    width: f64,
) -> Result<Vec<(f64, usize)>, DensityError> {
    if !(width > 0.0) {
        return Err(DensityError::BadWidth(width));
    }
    let mut counts: Vec<usize> = Vec::new();
    for &v in values {
        if !(v >= start) {
            continue;
        }
        let b = ((v - start) / width).floor() as usize;
        if b >= counts.len() {
            counts.resize(b + 1, 0);
        }
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (start + i as f64 * width, c))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourBin {
    pub hour: u8,
    pub volume: usize,
    pub mean_wait: f64,
}

/// Volume and mean wait by local arrival hour, for hours with arrivals.
pub fn hourly_profile<'a>(rows: impl IntoIterator<Item = &'a VoterRow>) -> Vec<HourBin> {
    let mut acc: BTreeMap<u8, (usize, KahanSum)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.arrival_hour).or_default();
        e.0 += 1;
        e.1.add(r.wait_min);
    }
    acc.into_iter()
        .map(|(hour, (volume, s))| HourBin {
            hour,
            volume,
            mean_wait: s.value() / volume as f64,
        })
        .collect()
}

/// [`hourly_profile`] per group label, groups in sorted order.
pub fn hourly_profile_by<F>(rows: &[VoterRow], group: F) -> Vec<(String, Vec<HourBin>)>
where
    F: Fn(&VoterRow) -> String,
{
    let mut groups: BTreeMap<String, Vec<&VoterRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(group(r)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(g, rs)| (g, hourly_profile(rs)))
        .collect()
}

fn create(path: &Path) -> crate::Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| crate::Error::io(path, e))
}

/// `x,density,group`.
pub fn write_density(
    path: impl AsRef<Path>,
    curves: &[(String, Vec<(f64, f64)>)],
) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = create(path)?;
    writeln!(w, "x,density,group").map_err(io)?;
    for (g, pts) in curves {
        for (x, d) in pts {
            writeln!(w, "{x:.3},{d:.6},{g}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// `hour,volume,mean_wait,group`.
pub fn write_hourly(
    path: impl AsRef<Path>,
    profiles: &[(String, Vec<HourBin>)],
) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = create(path)?;
    writeln!(w, "hour,volume,mean_wait,group").map_err(io)?;
    for (g, bins) in profiles {
        for b in bins {
            writeln!(w, "{},{},{:.4},{g}", b.hour, b.volume, b.mean_wait).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// `left,count`.
pub fn write_histogram(path: impl AsRef<Path>, bins: &[(f64, usize)]) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = create(path)?;
    writeln!(w, "left,count").map_err(io)?;
    for (l, c) in bins {
        writeln!(w, "{l:.2},{c}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::tests::row;
    use proptest::prelude::*;

    fn trapezoid(pts: &[(f64, f64)]) -> f64 {
        pts.windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum()
    }

    #[test]
    fn single_value_bump() {
        let g = grid(-3.0, 3.0, 0.05);
        for k in [Kernel::Epanechnikov, Kernel::Triangular] {
            let d = kde(&[0.0], 1.0, &g, k).unwrap();
            for (x, y) in &d {
                if x.abs() >= 1.0 {
                    assert_eq!(*y, 0.0);
                }
                let mirror = d.iter().find(|(m, _)| (m + x).abs() < 1e-9).unwrap().1;
                assert!((mirror - y).abs() < 1e-12);
            }
            assert!((trapezoid(&d) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn far_values_split_mass() {
        let g = grid(-2.0, 12.0, 0.01);
        let d = kde(&[0.0, 10.0], 1.0, &g, Kernel::Epanechnikov).unwrap();
        let left: Vec<_> = d.iter().copied().filter(|p| p.0 < 5.0).collect();
        assert!((trapezoid(&left) - 0.5).abs() < 1e-3);
        assert_eq!(
            kde(&[], 1.0, &g, Kernel::Epanechnikov),
            Err(DensityError::EmptyInput)
        );
    }

    #[test]
    fn decile_by_place_index() {
        let rows: Vec<_> = (1..=100)
            .flat_map(|i| {
                let n = 1 + i % 3;
                (0..n).map(move |_| row(&format!("p{i:03}"), i as f64 / 100.0, 5.0))
            })
            .collect();
        let (bottom, top) = decile_split(&rows, "frac_black").unwrap();
        let mut b: Vec<_> = bottom.iter().map(|r| r.place.clone()).collect();
        b.dedup();
        assert_eq!(b, (1..=10).map(|i| format!("p{i:03}")).collect::<Vec<_>>());
        assert!(top.iter().all(|r| r.frac_black > 0.9));
        let flat: Vec<_> = (0..50).map(|i| row(&format!("p{i}"), 0.3, 5.0)).collect();
        assert!(matches!(
            decile_split(&flat, "frac_black"),
            Err(DensityError::DegenerateField { .. })
        ));
    }

    #[test]
    fn shares_histogram_hours() {
        let ten: Vec<_> = (0..5).map(|i| row(&format!("p{i}"), 0.1, 10.0)).collect();
        let long: Vec<_> = (0..5).map(|i| row(&format!("p{i}"), 0.1, 31.0)).collect();
        assert_eq!(share_over(&ten, 30.0).unwrap(), 0.0);
        assert_eq!(share_over(&long, 30.0).unwrap(), 1.0);
        // Left-closed: 1.5 falls in the second bin.
        assert_eq!(
            histogram(&[0.0, 1.4, 1.5], 0.0, 1.5).unwrap(),
            vec![(0.0, 2), (1.5, 1)]
        );
        let mut rows = ten.clone();
        for r in &mut rows {
            r.arrival_hour = 7;
        }
        let prof = hourly_profile(&rows);
        assert_eq!(
            prof,
            vec![HourBin {
                hour: 7,
                volume: 5,
                mean_wait: 10.0
            }]
        );
    }

    proptest! {
        #[test]
        fn kde_mass_near_one(vals in prop::collection::vec(0.0f64..120.0, 1..200), tri in any::<bool>()) {
            let k = if tri { Kernel::Triangular } else { Kernel::Epanechnikov };
            let d = kde(&vals, 1.0, &grid(-2.0, 122.0, 0.1), k).unwrap();
            let m = trapezoid(&d);
            prop_assert!((0.99..=1.01).contains(&m), "mass {m}");
        }

        #[test]
        fn hourly_partitions_rows(hours in prop::collection::vec(0u8..24, 0..300)) {
            let rows: Vec<_> = hours.iter().enumerate().map(|(i, h)| {
                let mut r = row("p", 0.1, i as f64);
                r.arrival_hour = *h;
                r
            }).collect();
            let total: usize = hourly_profile(&rows).iter().map(|b| b.volume).sum();
            prop_assert_eq!(total, rows.len());
        }

        #[test]
        fn decile_matches_sort_oracle(vals in prop::collection::vec((0u32..1000, 1usize..4), 10..120)) {
            let rows: Vec<_> = vals.iter().enumerate().flat_map(|(i, (v, n))| {
                (0..*n).map(move |_| row(&format!("q{i:03}"), *v as f64 / 1000.0, 1.0))
            }).collect();
            let mut distinct: Vec<u32> = vals.iter().map(|v| v.0).collect();
            distinct.sort_unstable();
            distinct.dedup();
            let got = decile_split(&rows, "frac_black");
            if distinct.len() < 10 {
                prop_assert!(got.is_err());
                return Ok(());
            }
            let (bottom, top) = got.unwrap();
            let mut places: Vec<(u32, String)> = vals.iter().enumerate().map(|(i, v)| (v.0, format!("q{i:03}"))).collect();
            places.sort();
            let k = places.len().div_ceil(10);
            let bset: Vec<&String> = places[..k].iter().map(|p| &p.1).collect();
            let tset: Vec<&String> = places[places.len() - k..].iter().map(|p| &p.1).collect();
            prop_assert_eq!(bottom.len(), rows.iter().filter(|r| bset.contains(&&r.place)).count());
            prop_assert!(bottom.iter().all(|r| bset.contains(&&r.place)));
            prop_assert!(top.iter().all(|r| tset.contains(&&r.place)));
            prop_assert_eq!(top.len(), rows.iter().filter(|r| tset.contains(&&r.place)).count());
        }
    }
}
