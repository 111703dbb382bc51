//! Empirical-Bayes shrinkage of noisy group estimates toward a
//! precision-weighted grand mean.
//!
//! The prior variance τ² and mean μ are the fixed point of
//! `μ = Σ w r / Σ w`, `τ² = max(0, Σ w((r − μ)² − se²) / Σ w)` with
//! `w = 1/(τ² + se²)`; at an interior fixed point
//! `Σ (r − μ)²/(τ² + se²) = n`.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::regress::RegionEffect;
use crate::stats::KahanSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShrinkError {
    #[error("no groups with a finite estimate and positive standard error")]
    NoGroups,
    #[error("tolerance must be positive and max_iter non-zero")]
    BadControl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimate {
    pub group_id: String,
    pub raw: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbStatus {
    Converged,
    /// `max_iter` reached; the last iterate is returned.
    NoConvergence,
    /// Fewer than two usable groups; estimates returned unchanged.
    SingleGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbResult {
    pub status: EbStatus,
    pub mu: f64,
    pub tau2: f64,
    /// The non-negativity clamp on τ² bound at the final iterate.
    pub clamped: bool,
    pub iterations: usize,
    /// `(group_id, adjusted)` for usable groups, in input order.
    pub adjusted: Vec<(String, f64)>,
    /// Groups without a finite estimate or positive SE.
    pub excluded: Vec<String>,
}

impl EbResult {
    pub fn get(&self, id: &str) -> Option<f64> {
        self.adjusted.iter().find(|(g, _)| g == id).map(|(_, v)| *v)
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;

fn weighted_mean(raw: &[f64], se2: &[f64], tau2: f64) -> (f64, Vec<f64>) {
    let w: Vec<f64> = se2.iter().map(|s| 1.0 / (tau2 + s)).collect();
    let sw: KahanSum = w.iter().copied().collect();
    let swr: KahanSum = w.iter().zip(raw).map(|(w, r)| w * r).collect();
    (swr.value() / sw.value(), w)
}

pub fn eb_adjust(
    groups: &[GroupEstimate],
    tol: f64,
    max_iter: usize,
) -> Result<EbResult, ShrinkError> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(ShrinkError::BadControl);
    }
    let (usable, excluded): (Vec<&GroupEstimate>, Vec<&GroupEstimate>) = groups
        .iter()
        .partition(|g| g.raw.is_finite() && g.se.is_finite() && g.se > 0.0);
    let excluded: Vec<String> = excluded.into_iter().map(|g| g.group_id.clone()).collect();
    if usable.is_empty() {
        return Err(ShrinkError::NoGroups);
    }
    if usable.len() == 1 {
        return Ok(EbResult {
            status: EbStatus::SingleGroup,
            mu: usable[0].raw,
            tau2: 0.0,
            clamped: false,
            iterations: 0,
            adjusted: vec![(usable[0].group_id.clone(), usable[0].raw)],
            excluded,
        });
    }
    let raw: Vec<f64> = usable.iter().map(|g| g.raw).collect();
    let se2: Vec<f64> = usable.iter().map(|g| g.se * g.se).collect();

    let var = crate::stats::sample_var(&raw).unwrap_or(0.0);
    let mean_se2 = crate::stats::mean(&se2).unwrap_or(0.0);
    let mut tau2 = (var - mean_se2).max(0.0);
    let (mut mu, _) = weighted_mean(&raw, &se2, tau2);
    let mut status = EbStatus::NoConvergence;
    let mut clamped = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let (mu_new, w) = weighted_mean(&raw, &se2, tau2);
        let sw: KahanSum = w.iter().copied().collect();
        let num: KahanSum = w
            .iter()
            .zip(raw.iter().zip(&se2))
            .map(|(w, (r, s))| w * ((r - mu_new) * (r - mu_new) - s))
            .collect();
        let unclamped = num.value() / sw.value();
        clamped = unclamped < 0.0;
        let tau2_new = unclamped.max(0.0);
        let change = (mu_new - mu).abs() + (tau2_new - tau2).abs();
        mu = mu_new;
        tau2 = tau2_new;
        if change < tol {
            status = EbStatus::Converged;
            break;
        }
    }
    // μ consistent with the final τ².
    mu = weighted_mean(&raw, &se2, tau2).0;
    let adjusted = usable
        .iter()
        .zip(&se2)
        .map(|(g, s)| {
            let b = if tau2 > 0.0 { tau2 / (tau2 + s) } else { 0.0 };
            (g.group_id.clone(), mu + b * (g.raw - mu))
        })
        .collect();
    Ok(EbResult {
        status,
        mu,
        tau2,
        clamped,
        iterations,
        adjusted,
        excluded,
    })
}

/// One output row: raw and adjusted region mean and disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRow {
    pub region: String,
    pub n: usize,
    pub raw_mean: f64,
    pub sd: f64,
    pub adjusted_mean: Option<f64>,
    pub raw_disparity: Option<f64>,
    pub disparity_se: Option<f64>,
    pub adjusted_disparity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTable {
    pub rows: Vec<RegionRow>,
    pub means: Option<EbResult>,
    pub disparities: Option<EbResult>,
}

/// Shrinks region means (SE `sd/√n`) and disparities separately. Regions
/// flagged below the size floor keep their raw values and blank adjusted
/// fields.
pub fn adjust_region_tables(
    effects: &[RegionEffect],
    tol: f64,
    max_iter: usize,
) -> Result<RegionTable, ShrinkError> {
    let mean_groups: Vec<GroupEstimate> = effects
        .iter()
        .filter(|e| !e.below_floor)
        .map(|e| GroupEstimate {
            group_id: e.region.clone(),
            raw: e.mean,
            se: e.sd / (e.n as f64).sqrt(),
            n: e.n,
        })
        .collect();
    let disp_groups: Vec<GroupEstimate> = effects
        .iter()
        .filter(|e| !e.below_floor)
        .filter_map(|e| {
            Some(GroupEstimate {
                group_id: e.region.clone(),
                raw: e.disparity?,
                se: e.disparity_se?,
                n: e.n,
            })
        })
        .collect();
    let run = |g: &[GroupEstimate]| match eb_adjust(g, tol, max_iter) {
        Ok(r) => Ok(Some(r)),
        Err(ShrinkError::NoGroups) => Ok(None),
        Err(e) => Err(e),
    };
    let means = run(&mean_groups)?;
    let disparities = run(&disp_groups)?;
    let rows = effects
        .iter()
        .map(|e| RegionRow {
            region: e.region.clone(),
            n: e.n,
            raw_mean: e.mean,
            sd: e.sd,
            adjusted_mean: means.as_ref().and_then(|m| m.get(&e.region)),
            raw_disparity: e.disparity,
            disparity_se: e.disparity_se,
            adjusted_disparity: disparities.as_ref().and_then(|m| m.get(&e.region)),
        })
        .collect();
    Ok(RegionTable {
        rows,
        means,
        disparities,
    })
}

pub fn write_regions(path: impl AsRef<Path>, table: &RegionTable) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let cell = |v: Option<f64>| {
        v.filter(|x| x.is_finite())
            .map(|x| format!("{x:.4}"))
            .unwrap_or_default()
    };
    writeln!(
        w,
        "region,n,raw_mean,sd,adjusted_mean,raw_disparity,disparity_se,adjusted_disparity"
    )
    .map_err(io)?;
    for r in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.region,
            r.n,
            cell(Some(r.raw_mean)),
            cell(Some(r.sd)),
            cell(r.adjusted_mean),
            cell(r.raw_disparity),
            cell(r.disparity_se),
            cell(r.adjusted_disparity)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
