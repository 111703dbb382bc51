//! Least squares with absorbed fixed effects and place-clustered
//! sandwich standard errors.
//!
//! Fixed effects are removed by alternating within-transformations; the
//! demeaned design is solved by pivoted QR. Degrees of freedom count the
//! absorbed levels, so results match the dummy-variable regression.

pub mod absorb;
pub mod qr;
pub mod tables;

use rayon::prelude::*;
use thiserror::Error;

use crate::stats::KahanSum;
use absorb::{demean, fe_dof, prune_nested, FeSet};
use qr::PivotedQr;

pub use tables::{
    bivariate, congestion_models, disparity_table, hour_restricted, region_effects, table_ladder,
    table_ladder_with, Bivariate, CongestionResult, HourWindow, LadderColumn, RegionEffect,
    RegionKind,
};

/// A demeaned column whose norm falls below this fraction of its raw norm
/// is constant within the fixed-effect cells.
const WITHIN_CONSTANT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("required regressors are collinear or constant within fixed-effect cells: {names:?}")]
    RankDeficient { names: Vec<String> },
    #[error("need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("no observations after sample restrictions")]
    EmptySample,
    #[error("no observations in hour window [{from}, {to})")]
    EmptyWindow { from: u8, to: u8 },
    #[error("{n} observations cannot identify {k} parameters")]
    TooFewObservations { n: usize, k: usize },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("field `{0}` is missing from every row")]
    MissingField(String),
    #[error("covariate has zero variance")]
    DegenerateVariance,
    #[error("need at least {need} groups, got {got}")]
    TooFewGroups { need: usize, got: usize },
}

/// One likely voter on the target day joined to place demographics.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterRow {
    pub device: String,
    pub place: String,
    pub state: String,
    pub county: String,
    pub district: Option<String>,
    pub arrival_hour: u8,
    pub lower_min: f64,
    pub upper_min: Option<f64>,
    /// The λ-split wait used as the outcome.
    pub wait_min: f64,
    pub frac_white: f64,
    pub frac_black: f64,
    pub frac_asian: f64,
    pub frac_hispanic: f64,
    pub frac_other: f64,
    pub frac_poverty: Option<f64>,
    pub population_k: f64,
    pub pop_density_k: f64,
    pub android: Option<bool>,
    pub voters_per_place_k: Option<f64>,
}

impl VoterRow {
    pub fn over30(&self) -> bool {
        self.wait_min > 30.0
    }

    /// Numeric variable by name; `Ok(None)` when the row lacks it.
    pub fn value(&self, name: &str) -> Result<Option<f64>, RegressError> {
        Ok(match name {
            "wait_min" => Some(self.wait_min),
            "over30" => Some(f64::from(u8::from(self.over30()))),
            "lower_min" => Some(self.lower_min),
            "upper_min" => self.upper_min,
            "frac_white" => Some(self.frac_white),
            "frac_black" => Some(self.frac_black),
            "frac_asian" => Some(self.frac_asian),
            "frac_hispanic" => Some(self.frac_hispanic),
            "frac_other" => Some(self.frac_other),
            "frac_poverty" => self.frac_poverty,
            "population_k" => Some(self.population_k),
            "pop_density_k" => Some(self.pop_density_k),
            "android" => self.android.map(|a| f64::from(u8::from(a))),
            "volume" | "voters_per_place_k" => self.voters_per_place_k,
            "arrival_hour" => Some(f64::from(self.arrival_hour)),
            _ => return Err(RegressError::UnknownVariable(name.to_string())),
        })
    }

    /// Categorical key for fixed effects, clusters and regions.
    pub fn key(&self, name: &str) -> Result<Option<String>, RegressError> {
        Ok(match name {
            "state" => Some(self.state.clone()),
            "county" => Some(format!("{}/{}", self.state, self.county)),
            "district" | "congressional_district" => self.district.clone(),
            "place" => Some(self.place.clone()),
            "hour" => Some(format!("{:02}", self.arrival_hour)),
            _ => return Err(RegressError::UnknownVariable(name.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepVar {
    Wait,
    Over30,
}

impl DepVar {
    pub fn name(self) -> &'static str {
        match self {
            DepVar::Wait => "wait_min",
            DepVar::Over30 => "over30",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sample {
    All,
    /// Arrival hours in `[from, to)`.
    Hours {
        from: u8,
        to: u8,
    },
}

impl Sample {
    pub fn admits(&self, r: &VoterRow) -> bool {
        match *self {
            Sample::All => true,
            Sample::Hours { from, to } => (from..to).contains(&r.arrival_hour),
        }
    }
}

/// Small-sample scaling of the cluster sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vce {
    /// `G/(G−1) · (N−1)/(N−K)`.
    Cr1,
    Cr0,
}

impl std::str::FromStr for Vce {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cr1" => Ok(Vce::Cr1),
            "cr0" => Ok(Vce::Cr0),
            _ => Err(format!("unknown vce `{s}` (expected cr1 or cr0)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub label: String,
    pub dependent: DepVar,
    pub regressors: Vec<String>,
    pub fixed_effects: Vec<String>,
    pub interactions: Vec<(String, String)>,
    /// Regressors whose loss to collinearity is an error rather than a warning.
    pub required: Vec<String>,
    pub sample: Sample,
    pub cluster: String,
    pub vce: Vce,
}

impl ModelSpec {
    pub fn new(label: impl Into<String>, dependent: DepVar, regressors: &[&str]) -> Self {
        Self {
            label: label.into(),
            dependent,
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            fixed_effects: Vec::new(),
            interactions: Vec::new(),
            required: Vec::new(),
            sample: Sample::All,
            cluster: "place".into(),
            vce: Vce::Cr1,
        }
    }

    pub fn with_fe(mut self, fe: &[&str]) -> Self {
        self.fixed_effects = fe.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn interaction_name(a: &str, b: &str) -> String {
        format!("{a}_x_{b}")
    }

    /// Column names in design order: regressors then interactions.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.regressors.clone();
        names.extend(
            self.interactions
                .iter()
                .map(|(a, b)| Self::interaction_name(a, b)),
        );
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub label: String,
    pub dependent: String,
    /// Estimated coefficients, in spec order (`_cons` first when present).
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    /// Covariance over `names`.
    pub vcov: Vec<Vec<f64>>,
    pub n: usize,
    pub n_clusters: usize,
    pub r2: f64,
    pub depvar_mean: f64,
    /// Regressors removed as collinear or constant within FE cells.
    pub dropped: Vec<String>,
    /// Fixed-effect sets actually absorbed (nested sets removed).
    pub absorbed: Vec<String>,
    pub fe_dof: usize,
    /// Parameters including absorbed levels.
    pub k: usize,
}

impl FitResult {
    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef_of(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.coef[i])
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.se[i])
    }

    pub fn cov_of(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.vcov[self.position(a)?][self.position(b)?])
    }
}

/// Pivoted least squares on an already-transformed design, with the
/// per-cluster score sums needed for the sandwich.
pub(crate) struct Solved {
    /// Indices into the input columns, sorted ascending.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Coefficients aligned with `kept`.
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(XᵀX)⁻¹` aligned with `kept`.
    pub bread: Vec<Vec<f64>>,
    /// `Σ_g s_g s_gᵀ` aligned with `kept`.
    pub meat: Vec<Vec<f64>>,
}

pub(crate) fn solve(y: &[f64], cols: &[Vec<f64>], clusters: &FeSet) -> Solved {
    let qr = PivotedQr::new(cols, y);
    let b_piv = qr.coefficients();
    let inv_piv = qr.xtx_inverse();
    // Reorder from pivot order to ascending column order.
    let mut order: Vec<usize> = (0..qr.kept.len()).collect();
    order.sort_by_key(|&i| qr.kept[i]);
    let kept: Vec<usize> = order.iter().map(|&i| qr.kept[i]).collect();
    let coef: Vec<f64> = order.iter().map(|&i| b_piv[i]).collect();
    let bread: Vec<Vec<f64>> = order
        .iter()
        .map(|&a| order.iter().map(|&b| inv_piv[a][b]).collect())
        .collect();

    let n = y.len();
    let p = kept.len();
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = KahanSum::new();
            s.add(y[i]);
            for (c, &j) in coef.iter().zip(&kept) {
                s.add(-c * cols[j][i]);
            }
            s.value()
        })
        .collect();

    let mut scores = vec![vec![KahanSum::new(); p]; clusters.levels];
    for i in 0..n {
        let g = clusters.codes[i] as usize;
        for (a, &j) in kept.iter().enumerate() {
            scores[g][a].add(cols[j][i] * residuals[i]);
        }
    }
    let mut meat = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            let v: KahanSum = scores.iter().map(|s| s[a].value() * s[b].value()).collect();
            meat[a][b] = v.value();
            meat[b][a] = v.value();
        }
    }
    Solved {
        kept,
        dropped: qr.dropped,
        coef,
        residuals,
        bread,
        meat,
    }
}

/// `B M B` for symmetric `B`, `M`.
pub(crate) fn sandwich(bread: &[Vec<f64>], meat: &[Vec<f64>], factor: f64) -> Vec<Vec<f64>> {
    let p = bread.len();
    let mut bm = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            bm[i][j] = (0..p).map(|l| bread[i][l] * meat[l][j]).sum();
        }
    }
    let mut out = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let v = factor * (0..p).map(|l| bm[i][l] * bread[l][j]).sum::<f64>();
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

pub(crate) fn small_sample_factor(vce: Vce, g: usize, n: usize, k: usize) -> f64 {
    match vce {
        Vce::Cr0 => 1.0,
        Vce::Cr1 => (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64)),
    }
}

/// Fits `spec` on the complete-case rows of `data`.
pub fn fit(data: &[VoterRow], spec: &ModelSpec) -> Result<FitResult, RegressError> {
    for (a, b) in &spec.interactions {
        for v in [a, b] {
            if !spec.regressors.contains(v) {
                return Err(RegressError::UnknownVariable(format!(
                    "interaction term `{v}` is not a declared regressor"
                )));
            }
        }
    }
    let names = spec.column_names();

    // Complete cases.
    let mut y = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut fe_keys: Vec<Vec<String>> = vec![Vec::new(); spec.fixed_effects.len()];
    let mut cluster_keys: Vec<String> = Vec::new();
    let mut vals = vec![0.0; spec.regressors.len()];
    'rows: for r in data {
        if !spec.sample.admits(r) {
            continue;
        }
        let Some(yv) = r.value(spec.dependent.name())? else {
            continue;
        };
        for (k, name) in spec.regressors.iter().enumerate() {
            match r.value(name)? {
                Some(v) => vals[k] = v,
                None => continue 'rows,
            }
        }
        let mut keys = Vec::with_capacity(spec.fixed_effects.len());
        for fe in &spec.fixed_effects {
            match r.key(fe)? {
                Some(k) => keys.push(k),
                None => continue 'rows,
            }
        }
        let Some(ck) = r.key(&spec.cluster)? else {
            continue;
        };
        y.push(yv);
        for (k, v) in vals.iter().enumerate() {
            cols[k].push(*v);
        }
        for (k, (a, b)) in spec.interactions.iter().enumerate() {
            let ia = spec.regressors.iter().position(|x| x == a).unwrap();
            let ib = spec.regressors.iter().position(|x| x == b).unwrap();
            cols[spec.regressors.len() + k].push(vals[ia] * vals[ib]);
        }
        for (k, key) in keys.into_iter().enumerate() {
            fe_keys[k].push(key);
        }
        cluster_keys.push(ck);
    }
    let n = y.len();
    if n == 0 {
        if let Sample::Hours { from, to } = spec.sample {
            return Err(RegressError::EmptyWindow { from, to });
        }
        return Err(RegressError::EmptySample);
    }
    let clusters = FeSet::from_keys("cluster", cluster_keys.iter().map(String::as_str));
    if clusters.levels < 2 {
        return Err(RegressError::TooFewClusters(clusters.levels));
    }

    let sets: Vec<FeSet> = spec
        .fixed_effects
        .iter()
        .zip(&fe_keys)
        .map(|(name, keys)| FeSet::from_keys(name, keys.iter().map(String::as_str)))
        .collect();
    let (sets, _redundant) = prune_nested(sets);
    let dof = fe_dof(&sets);

    let mut names = names;
    if sets.is_empty() {
        // First, so collinear regressors are dropped in its favour.
        names.insert(0, "_cons".into());
        cols.insert(0, vec![1.0; n]);
    }
    let raw_norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let y_raw = y.clone();
    let mut y_dm = y;
    demean(&mut y_dm, &sets);
    cols.par_iter_mut().for_each(|c| {
        demean(c, &sets);
    });

    // Within-constant columns are zeroed so QR drops them.
    for (c, raw) in cols.iter_mut().zip(&raw_norms) {
        let nrm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm <= WITHIN_CONSTANT_TOL * raw {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    let solved = solve(&y_dm, &cols, &clusters);
    let dropped: Vec<String> = solved.dropped.iter().map(|&j| names[j].clone()).collect();
    let missing_required: Vec<String> = dropped
        .iter()
        .filter(|d| spec.required.contains(d))
        .cloned()
        .collect();
    if !missing_required.is_empty() {
        return Err(RegressError::RankDeficient {
            names: missing_required,
        });
    }
    let k = solved.kept.len() + dof;
    if n <= k {
        return Err(RegressError::TooFewObservations { n, k });
    }
    let factor = small_sample_factor(spec.vce, clusters.levels, n, k);
    let vcov = sandwich(&solved.bread, &solved.meat, factor);

    let rss: KahanSum = solved.residuals.iter().map(|u| u * u).collect();
    let ybar = crate::stats::mean(&y_raw).unwrap_or(0.0);
    let tss: KahanSum = y_raw.iter().map(|v| (v - ybar) * (v - ybar)).collect();
    let r2 = if tss.value() > 0.0 {
        (1.0 - rss.value() / tss.value()).clamp(0.0, 1.0)
    } else {
        0.0
    };

    Ok(FitResult {
        label: spec.label.clone(),
        dependent: spec.dependent.name().to_string(),
        names: solved.kept.iter().map(|&j| names[j].clone()).collect(),
        se: (0..vcov.len())
            .map(|i| vcov[i][i].max(0.0).sqrt())
            .collect(),
        coef: solved.coef,
        vcov,
        n,
        n_clusters: clusters.levels,
        r2,
        depvar_mean: ybar,
        dropped,
        absorbed: sets.iter().map(|s| s.name.clone()).collect(),
        fe_dof: dof,
        k,
    })
}
