//! The disparity specification ladder and the analyses built on it:
//! hour windows, congestion controls, per-region effects and bivariate
//! cross-region regressions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::absorb::FeSet;
use super::{
    fit, sandwich, small_sample_factor, solve, DepVar, FitResult, ModelSpec, RegressError, Sample,
    Vce, VoterRow,
};
use crate::stats::{self, KahanSum};

pub const RACE: [&str; 4] = ["frac_black", "frac_asian", "frac_hispanic", "frac_other"];
pub const AREA_CONTROLS: [&str; 3] = ["frac_poverty", "population_k", "pop_density_k"];

/// Columns (1)-(6) of the main disparity table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LadderColumn {
    Col1,
    Col2,
    Col3,
    Col4,
    Col5,
    Col6,
}

impl LadderColumn {
    pub const ALL: [LadderColumn; 6] = [
        LadderColumn::Col1,
        LadderColumn::Col2,
        LadderColumn::Col3,
        LadderColumn::Col4,
        LadderColumn::Col5,
        LadderColumn::Col6,
    ];

    pub fn number(self) -> usize {
        self as usize + 1
    }

    /// The column's model; `android` joins column 6 only when some row has it.
    pub fn spec(self, dependent: DepVar, has_android: bool) -> ModelSpec {
        let n = self.number();
        let mut regs: Vec<&str> = vec!["frac_black"];
        if n >= 2 {
            regs.extend(&RACE[1..]);
        }
        if n >= 3 {
            regs.extend(AREA_CONTROLS);
        }
        if n == 6 && has_android {
            regs.push("android");
        }
        let fe: &[&str] = match n {
            1..=3 => &[],
            4 => &["state"],
            5 => &["state", "county"],
            _ => &["state", "county", "hour"],
        };
        ModelSpec::new(format!("({n})"), dependent, &regs).with_fe(fe)
    }
}

fn has_android(data: &[VoterRow]) -> bool {
    data.iter().any(|r| r.android.is_some())
}

pub fn disparity_table(
    data: &[VoterRow],
    column: LadderColumn,
    dependent: DepVar,
) -> Result<FitResult, RegressError> {
    if data.is_empty() {
        return Err(RegressError::EmptySample);
    }
    fit(data, &column.spec(dependent, has_android(data)))
}

pub fn table_ladder(data: &[VoterRow], dependent: DepVar) -> Result<Vec<FitResult>, RegressError> {
    table_ladder_with(data, dependent, Vce::Cr1)
}

/// [`table_ladder`] with an explicit small-sample scaling.
pub fn table_ladder_with(
    data: &[VoterRow],
    dependent: DepVar,
    vce: Vce,
) -> Result<Vec<FitResult>, RegressError> {
    if data.is_empty() {
        return Err(RegressError::EmptySample);
    }
    let has = has_android(data);
    LadderColumn::ALL
        .iter()
        .map(|&c| {
            let mut spec = c.spec(dependent, has);
            spec.vce = vce;
            fit(data, &spec)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HourWindow {
    pub from: u8,
    pub to: u8,
}

impl HourWindow {
    /// Full day, from 8, 9 and 10am, 10am-3pm, and from 3pm.
    pub fn defaults() -> Vec<HourWindow> {
        [(0, 24), (8, 24), (9, 24), (10, 24), (10, 15), (15, 24)]
            .iter()
            .map(|&(from, to)| HourWindow { from, to })
            .collect()
    }

    pub fn label(&self) -> String {
        match (self.from, self.to) {
            (0, 24) => "full".into(),
            (f, 24) => format!(">={f}"),
            (f, t) => format!("{f}-{t}"),
        }
    }
}

/// Column-4 model on each window of arrival hours.
pub fn hour_restricted(
    data: &[VoterRow],
    windows: &[HourWindow],
) -> Result<Vec<FitResult>, RegressError> {
    let has = has_android(data);
    windows
        .iter()
        .map(|w| {
            let mut spec = LadderColumn::Col4.spec(DepVar::Wait, has);
            spec.sample = Sample::Hours {
                from: w.from,
                to: w.to,
            };
            spec.label = w.label();
            fit(data, &spec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLine {
    pub volume_k: f64,
    pub wait_fb0: f64,
    pub wait_fb1: f64,
    /// `wait_fb1 − wait_fb0 = b_black + b_interaction · volume`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CongestionResult {
    /// Columns 1-5 with volume added.
    pub controls: Vec<FitResult>,
    /// Columns 1-5 with volume and the black × volume interaction.
    pub interaction: Vec<FitResult>,
    pub lines: Vec<PredictedLine>,
}

pub const VOLUME: &str = "volume";

/// Volume controls and the black × volume interaction over columns 1-5,
/// with predicted waits at all-black and no-black places from column 1.
pub fn congestion_models(
    data: &[VoterRow],
    grid_points: usize,
) -> Result<CongestionResult, RegressError> {
    let volumes: Vec<f64> = data.iter().filter_map(|r| r.voters_per_place_k).collect();
    if volumes.is_empty() {
        return Err(RegressError::MissingField(VOLUME.into()));
    }
    let has = has_android(data);
    let mut controls = Vec::new();
    let mut interaction = Vec::new();
    for col in &LadderColumn::ALL[..5] {
        let mut spec = col.spec(DepVar::Wait, has);
        spec.regressors.push(VOLUME.into());
        spec.required = vec![VOLUME.into()];
        controls.push(fit(data, &spec)?);
        spec.interactions = vec![("frac_black".into(), VOLUME.into())];
        spec.required
            .push(ModelSpec::interaction_name("frac_black", VOLUME));
        interaction.push(fit(data, &spec)?);
    }

    let base = &interaction[0];
    let inter = ModelSpec::interaction_name("frac_black", VOLUME);
    let c = base.coef_of("_cons").unwrap_or(0.0);
    let b_fb = base.coef_of("frac_black").unwrap_or(0.0);
    let b_v = base.coef_of(VOLUME).unwrap_or(0.0);
    let b_int = base.coef_of(&inter).unwrap_or(0.0);
    let lo = volumes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = stats::quantile(&volumes, 0.99).unwrap_or(lo);
    let steps = grid_points.max(2);
    let lines = (0..steps)
        .map(|i| {
            let v = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
            let w0 = c + b_v * v;
            let w1 = c + b_fb + (b_v + b_int) * v;
            PredictedLine {
                volume_k: v,
                wait_fb0: w0,
                wait_fb1: w1,
                gap: b_fb + b_int * v,
            }
        })
        .collect();
    Ok(CongestionResult {
        controls,
        interaction,
        lines,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    State,
    District,
    County,
}

impl RegionKind {
    pub fn key_name(self) -> &'static str {
        match self {
            RegionKind::State => "state",
            RegionKind::District => "district",
            RegionKind::County => "county",
        }
    }
}

impl std::str::FromStr for RegionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "state" => Ok(RegionKind::State),
            "district" | "congressional_district" => Ok(RegionKind::District),
            "county" => Ok(RegionKind::County),
            _ => Err(format!("unknown region kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionEffect {
    pub region: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Within-region slope of wait on frac_black; `None` when frac_black
    /// does not vary in the region.
    pub disparity: Option<f64>,
    pub disparity_se: Option<f64>,
    /// Fewer than the configured minimum number of voters.
    pub below_floor: bool,
}

/// Region means and the region × frac_black interaction model (region
/// intercepts and slopes, no common constant) with place-clustered SEs.
///
/// Places nest in regions, so the joint model is block diagonal: each
/// region is solved alone and the sandwich shares one small-sample factor.
pub fn region_effects(
    data: &[VoterRow],
    kind: RegionKind,
    min_n: usize,
) -> Result<Vec<RegionEffect>, RegressError> {
    let mut groups: BTreeMap<String, Vec<&VoterRow>> = BTreeMap::new();
    for r in data {
        if let Some(k) = r.key(kind.key_name())? {
            groups.entry(k).or_default().push(r);
        }
    }
    if groups.is_empty() {
        return Err(RegressError::MissingField(kind.key_name().into()));
    }
    struct Part {
        region: String,
        n: usize,
        mean: f64,
        sd: f64,
        slope: Option<usize>,
        coef: Vec<f64>,
        bread: Vec<Vec<f64>>,
        meat: Vec<Vec<f64>>,
    }
    let mut parts = Vec::new();
    let (mut n_total, mut k_total) = (0usize, 0usize);
    let mut all_places = std::collections::BTreeSet::new();
    for (region, rows) in groups {
        let y: Vec<f64> = rows.iter().map(|r| r.wait_min).collect();
        let fb: Vec<f64> = rows.iter().map(|r| r.frac_black).collect();
        let clusters = FeSet::from_keys("place", rows.iter().map(|r| r.place.as_str()));
        all_places.extend(rows.iter().map(|r| r.place.clone()));
        let solved = solve(&y, &[vec![1.0; y.len()], fb], &clusters);
        n_total += y.len();
        k_total += solved.kept.len();
        parts.push(Part {
            region,
            n: y.len(),
            mean: stats::mean(&y).unwrap_or(f64::NAN),
            sd: stats::sample_sd(&y).unwrap_or(f64::NAN),
            slope: solved.kept.iter().position(|&j| j == 1),
            coef: solved.coef,
            bread: solved.bread,
            meat: solved.meat,
        });
    }
    let g = all_places.len();
    let factor = if g >= 2 && n_total > k_total {
        small_sample_factor(Vce::Cr1, g, n_total, k_total)
    } else {
        f64::NAN
    };
    Ok(parts
        .into_iter()
        .map(|p| {
            let (disparity, disparity_se) = match p.slope {
                Some(i) => {
                    let v = sandwich(&p.bread, &p.meat, factor);
                    (Some(p.coef[i]), Some(v[i][i].max(0.0).sqrt()))
                }
                None => (None, None),
            };
            RegionEffect {
                below_floor: p.n < min_n,
                region: p.region,
                n: p.n,
                mean: p.mean,
                sd: p.sd,
                disparity,
                disparity_se,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bivariate {
    pub intercept: f64,
    pub slope: f64,
    /// Heteroskedasticity-robust (HC1) standard error of the slope.
    pub se: f64,
    pub r: f64,
}

pub fn bivariate(xs: &[f64], ys: &[f64]) -> Result<Bivariate, RegressError> {
    let n = xs.len().min(ys.len());
    if n < 3 || xs.len() != ys.len() {
        return Err(RegressError::TooFewGroups { need: 3, got: n });
    }
    let mx = stats::mean(xs).unwrap();
    let my = stats::mean(ys).unwrap();
    let sxx: KahanSum = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    let sxy: KahanSum = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    let sxx = sxx.value();
    if !(sxx > 0.0) {
        return Err(RegressError::DegenerateVariance);
    }
    let slope = sxy.value() / sxx;
    let intercept = my - slope * mx;
    let meat: KahanSum = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let u = y - intercept - slope * x;
            (x - mx) * (x - mx) * u * u
        })
        .collect();
    let nf = n as f64;
    let se = (nf / (nf - 2.0) * meat.value()).sqrt() / sxx;
    Ok(Bivariate {
        intercept,
        slope,
        se,
        r: stats::pearson(xs, ys).unwrap_or(0.0),
    })
}

/// Coefficient, SE and summary rows, one column per fit.
pub fn write_fits(path: impl AsRef<Path>, fits: &[FitResult]) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mut terms: Vec<&str> = Vec::new();
    for f in fits {
        for n in &f.names {
            if !terms.contains(&n.as_str()) {
                terms.push(n);
            }
        }
    }
    let header: Vec<&str> = fits.iter().map(|f| f.label.as_str()).collect();
    writeln!(w, "term,stat,{}", header.join(",")).map_err(io)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for t in &terms {
        let coefs: Vec<String> = fits.iter().map(|f| cell(f.coef_of(t))).collect();
        let ses: Vec<String> = fits.iter().map(|f| cell(f.se_of(t))).collect();
        writeln!(w, "{t},coef,{}", coefs.join(",")).map_err(io)?;
        writeln!(w, "{t},se,{}", ses.join(",")).map_err(io)?;
    }
    let row = |name: &str, f: &dyn Fn(&FitResult) -> String| -> String {
        let cells: Vec<String> = fits.iter().map(f).collect();
        format!("{name},,{}", cells.join(","))
    };
    let yes = |b: bool| {
        if b {
            "Yes".to_string()
        } else {
            "No".to_string()
        }
    };
    let lines = [
        row("N", &|f| f.n.to_string()),
        row("R2", &|f| format!("{:.6}", f.r2)),
        row("DepVarMean", &|f| format!("{:.6}", f.depvar_mean)),
        row("Clusters", &|f| f.n_clusters.to_string()),
        row("Polling Area Controls", &|f| {
            yes(f.names.iter().any(|n| n == "population_k"))
        }),
        row("State FE", &|f| {
            yes(f.absorbed.iter().any(|n| n == "state") || f.absorbed.iter().any(|n| n == "county"))
        }),
        row("County FE", &|f| {
            yes(f.absorbed.iter().any(|n| n == "county"))
        }),
        row("Hour FE", &|f| yes(f.absorbed.iter().any(|n| n == "hour"))),
        row("Dropped", &|f| f.dropped.join(" ")),
    ];
    for l in lines {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::tests::row;

    #[test]
    fn ladder_specs() {
        let c1 = LadderColumn::Col1.spec(DepVar::Wait, true);
        assert_eq!(c1.regressors, vec!["frac_black"]);
        assert!(c1.fixed_effects.is_empty());
        let c6 = LadderColumn::Col6.spec(DepVar::Over30, true);
        assert_eq!(c6.regressors.len(), 8);
        assert_eq!(c6.fixed_effects, vec!["state", "county", "hour"]);
        assert_eq!(
            LadderColumn::Col6
                .spec(DepVar::Wait, false)
                .regressors
                .len(),
            7
        );
    }

    #[test]
    fn bivariate_exact_line_and_degenerate() {
        let b = bivariate(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((b.slope - 2.0).abs() < 1e-12 && (b.r - 1.0).abs() < 1e-12);
        assert!(b.se.abs() < 1e-12);
        assert_eq!(
            bivariate(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]),
            Err(RegressError::DegenerateVariance)
        );
        assert!(matches!(
            bivariate(&[1.0, 2.0], &[1.0, 2.0]),
            Err(RegressError::TooFewGroups { .. })
        ));
    }

    #[test]
    fn single_region_equals_pooled_slope_and_constant_region_is_flagged() {
        let mut data = Vec::new();
        for i in 0..40 {
            data.push(row(
                &format!("p{}", i % 8),
                (i % 8) as f64 / 10.0,
                5.0 + 3.0 * ((i % 8) as f64 / 10.0) + (i % 3) as f64,
            ));
        }
        let pooled = fit(&data, &ModelSpec::new("b", DepVar::Wait, &["frac_black"])).unwrap();
        let re = region_effects(&data, RegionKind::State, 30).unwrap();
        assert_eq!(re.len(), 1);
        let d = re[0].disparity.unwrap();
        assert!((d - pooled.coef_of("frac_black").unwrap()).abs() < 1e-12);
        assert!((re[0].disparity_se.unwrap() - pooled.se_of("frac_black").unwrap()).abs() < 1e-12);
        assert!(!re[0].below_floor);

        let flat: Vec<_> = (0..5)
            .map(|i| row(&format!("q{i}"), 0.3, i as f64))
            .collect();
        let re = region_effects(&flat, RegionKind::State, 30).unwrap();
        assert_eq!((re[0].disparity, re[0].below_floor), (None, true));
    }

    #[test]
    fn windows_tile_the_day() {
        let mut data = Vec::new();
        for i in 0..60u32 {
            let mut r = row(&format!("p{}", i % 6), (i % 6) as f64 / 6.0, (i % 7) as f64);
            r.arrival_hour = 6 + (i % 14) as u8;
            r.state = if i % 2 == 0 { "A".into() } else { "B".into() };
            data.push(r);
        }
        let fits = hour_restricted(
            &data,
            &[
                HourWindow { from: 0, to: 10 },
                HourWindow { from: 10, to: 24 },
            ],
        )
        .unwrap();
        assert_eq!(fits.iter().map(|f| f.n).sum::<usize>(), 60);
        let full = hour_restricted(&data, &[HourWindow { from: 0, to: 24 }]).unwrap();
        let unrestricted = disparity_table(&data, LadderColumn::Col4, DepVar::Wait).unwrap();
        assert_eq!(full[0].coef, unrestricted.coef);
        assert_eq!(
            hour_restricted(&data, &[HourWindow { from: 22, to: 23 }]).unwrap_err(),
            RegressError::EmptyWindow { from: 22, to: 23 }
        );
    }

    #[test]
    fn congestion_requires_volume() {
        let data: Vec<_> = (0..10)
            .map(|i| row(&format!("p{i}"), 0.1 * i as f64, i as f64))
            .collect();
        assert_eq!(
            congestion_models(&data, 5).unwrap_err(),
            RegressError::MissingField("volume".into())
        );
        let mut flat = data.clone();
        flat.iter_mut()
            .for_each(|r| r.voters_per_place_k = Some(2.0));
        assert!(matches!(
            congestion_models(&flat, 5),
            Err(RegressError::RankDeficient { .. })
        ));
    }
}
