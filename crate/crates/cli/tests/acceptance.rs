//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p pollwait-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pollwait::cces::{correlate_regions, recode};
use pollwait::config::Config;
use pollwait::density::{decile_split, grid, hourly_profile, hourly_profile_by, kde, Kernel};
use pollwait::pipeline::{
    default_radii, placebo, run_target, scan_radius, Dataset, PipelineConfig, TargetRun,
};
use pollwait::regress::{
    congestion_models, disparity_table, fit, region_effects, DepVar, FitResult, LadderColumn,
    ModelSpec, RegionKind,
};
use pollwait::shrink::{eb_adjust, EbStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use pollwait::spells::wait_time;
use pollwait::synth::survey::noisy_copy;
use pollwait::synth::{simulate, truth_join, Role, ScenarioConfig, SimOutput};
use pollwait::{stats, FilterConfig, GroupEstimate, VoterRow};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sim(cfg: ScenarioConfig) -> SimOutput {
    simulate(&cfg).expect("simulation")
}

fn scenario(n_places: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_places,
        voters_per_place: 100.0,
        seed,
        ..ScenarioConfig::default()
    }
}

fn target(s: &SimOutput) -> (Dataset, TargetRun) {
    let ds = Dataset::from_sim(s);
    let run = run_target(&ds, &PipelineConfig::default()).expect("pipeline");
    (ds, run)
}

fn col(rows: &[VoterRow], c: LadderColumn) -> (f64, f64) {
    let f = disparity_table(rows, c, DepVar::Wait).expect("fit");
    (
        f.coef_of("frac_black").unwrap(),
        f.se_of("frac_black").unwrap(),
    )
}

// ---------------------------------------------------------------- 1

fn c1_bound_sandwich() -> Outcome {
    let start = Instant::now();
    let s = sim(ScenarioConfig {
        placebo_days: 1,
        ..scenario(100, 11)
    });
    let ds = Dataset::from_sim(&s);
    let spells = pollwait::pipeline::extract(&ds, 75.0).map_err(|e| e.to_string())?;
    let pairs = truth_join(&spells, &ds.pings, &ds.places, &s.truth);
    let (mut bracketed, mut violations) = (0usize, 0usize);
    let mut errors = Vec::new();
    let mut voter_devices = std::collections::BTreeSet::new();
    for p in &pairs {
        let (sp, t) = (&spells[p.spell], &s.truth[p.truth]);
        if t.role != Role::Voter || t.contaminant {
            continue;
        }
        voter_devices.insert(sp.device);
        let Some(upper) = sp.upper_min() else {
            continue;
        };
        if sp.t_out_before.is_none() {
            continue;
        }
        bracketed += 1;
        if !(sp.lower_min() <= t.true_wait_min && t.true_wait_min <= upper) {
            violations += 1;
        }
        errors.push((sp.midpoint_min().unwrap() - t.true_wait_min).abs());
    }
    let mut gaps = Vec::new();
    for d in &voter_devices {
        let pings = ds.pings.device_pings(*d);
        gaps.extend(
            pings
                .windows(2)
                .map(|w| (w[1].t - w[0].t) as f64)
                .filter(|g| *g <= 1800.0),
        );
    }
    let mean_gap_min = stats::mean(&gaps).unwrap_or(f64::NAN) / 60.0;
    let median_err = stats::median(&errors).unwrap_or(f64::INFINITY);
    let secs = start.elapsed().as_secs_f64();
    check(
        s.n_voters >= 10_000 && bracketed >= s.n_voters / 2 && violations == 0 && median_err < mean_gap_min / 2.0 && secs < 30.0,
        format!(
            "{} voters, {bracketed} bracketed, {violations} outside bounds, median |mid-true| {median_err:.3} min vs half mean gap {:.3} min, {secs:.1}s",
            s.n_voters,
            mean_gap_min / 2.0
        ),
    )
}

// ---------------------------------------------------------------- 2

fn c2_worked_example() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let (lat, lon) = (38.8977, -77.0365);
    let place = pollwait::GeoPoint::new(lat, lon).unwrap();
    let inside = place.offset(10.0, 5.0).unwrap();
    let outside = place.offset(400.0, 0.0).unwrap();
    let mut pings = String::from("device_id,timestamp_utc,lat,lon\n");
    for (hm, p) in [
        ("08:20", outside),
        ("08:23", inside),
        ("08:28", inside),
        ("08:31", inside),
        ("08:37", inside),
        ("08:40", outside),
    ] {
        pings.push_str(&format!(
            "dev1,2016-11-08T{hm}:00Z,{},{}\n",
            p.lat(),
            p.lon()
        ));
    }
    let files = [
        ("pings.csv", pings),
        (
            "places.csv",
            format!("place_id,lat,lon,state,county,block_group,registered_voters\nP1,{lat},{lon},S01,C01,BG1,1.0\n"),
        ),
        (
            "blockgroups.csv",
            "block_group,frac_white,frac_black,frac_asian,frac_hispanic,frac_other,frac_poverty,population_k,pop_density_k\nBG1,0.5,0.3,0.1,0.05,0.05,0.1,1.0,1.0\n".to_string(),
        ),
    ];
    let mut cfg = Config::new();
    for (name, text) in &files {
        std::fs::write(d.join(name), text).map_err(|e| e.to_string())?;
        cfg.set(
            format!("input.{}", name.trim_end_matches(".csv")),
            d.join(name).display().to_string(),
        );
    }
    cfg.set("study.target_day", "2016-11-08");
    let ds = Dataset::load(&cfg).map_err(|e| e.to_string())?;
    let spells = pollwait::pipeline::extract(&ds, 60.0).map_err(|e| e.to_string())?;
    let [s] = spells.as_slice() else {
        return Err(format!("expected one spell, got {}", spells.len()));
    };
    let (lo, up, mid) = (s.lower_min(), s.upper_min(), s.midpoint_min());
    let w = wait_time(s, 0.5).map_err(|e| e.to_string())?;
    check(
        lo == 14.0 && up == Some(20.0) && mid == Some(17.0) && w == 17.0,
        format!("lower {lo}, upper {up:?}, midpoint {mid:?}"),
    )
}

// ---------------------------------------------------------------- 3

fn fuzz_rows(rng: &mut ChaCha8Rng) -> Vec<VoterRow> {
    let n_states = rng.random_range(2..=4);
    let counties: Vec<(String, String)> = (0..n_states)
        .flat_map(|s| (0..rng.random_range(2..=4)).map(move |c| (format!("S{s}"), format!("C{c}"))))
        .collect();
    let n_places = rng.random_range(20..=60);
    let places: Vec<(usize, f64, f64, f64)> = (0..n_places)
        .map(|p| {
            let county = if p < counties.len() {
                p
            } else {
                rng.random_range(0..counties.len())
            };
            (
                county,
                rng.random::<f64>(),
                0.2 * rng.random::<f64>(),
                rng.random_range(0.5..5.0),
            )
        })
        .collect();
    let county_effect: Vec<f64> = counties
        .iter()
        .map(|_| rng.random_range(-5.0..5.0))
        .collect();
    let place_effect: Vec<f64> = places.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    let n = rng.random_range(300..=5000);
    (0..n)
        .map(|i| {
            let p = if i < n_places {
                i
            } else {
                rng.random_range(0..n_places)
            };
            let (c, fb, fa, pop) = places[p];
            let hour: u8 = rng.random_range(6..=20);
            let android = rng.random_bool(0.5);
            let y = 3.0
                + 5.0 * fb
                + 2.0 * fa
                + county_effect[c]
                + place_effect[p]
                + 0.3 * f64::from(hour)
                + if android { 1.0 } else { 0.0 }
                + rng.random_range(-8.0..8.0);
            VoterRow {
                device: format!("d{i}"),
                place: format!("P{p}"),
                state: counties[c].0.clone(),
                county: counties[c].1.clone(),
                district: None,
                arrival_hour: hour,
                lower_min: y,
                upper_min: None,
                wait_min: y,
                frac_white: 1.0 - fb - fa,
                frac_black: fb,
                frac_asian: fa,
                frac_hispanic: 0.0,
                frac_other: 0.0,
                frac_poverty: Some(0.1),
                population_k: pop,
                pop_density_k: 1.0,
                android: Some(android),
                voters_per_place_k: None,
            }
        })
        .collect()
}

fn dummies(rows: &[VoterRow], key: &str, drop_first: bool) -> Vec<Vec<f64>> {
    let keys: Vec<String> = rows.iter().map(|r| r.key(key).unwrap().unwrap()).collect();
    let levels: std::collections::BTreeSet<&String> = keys.iter().collect();
    levels
        .into_iter()
        .skip(usize::from(drop_first))
        .map(|l| keys.iter().map(|k| f64::from(u8::from(k == l))).collect())
        .collect()
}

/// Dense dummy-variable OLS by SVD with an explicitly assembled CR1
/// sandwich; returns `(coef, se)` for the named regressors.
fn dense_oracle(rows: &[VoterRow], regs: &[&str], fe: &[&str]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let mut cols: Vec<Vec<f64>> = regs
        .iter()
        .map(|r| rows.iter().map(|x| x.value(r).unwrap().unwrap()).collect())
        .collect();
    match fe {
        [] => cols.push(vec![1.0; n]),
        ["state"] => cols.extend(dummies(rows, "state", false)),
        ["state", "county"] => cols.extend(dummies(rows, "county", false)),
        ["state", "county", "hour"] => {
            cols.extend(dummies(rows, "county", false));
            cols.extend(dummies(rows, "hour", true));
        }
        _ => unreachable!(),
    }
    let k = cols.len();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.wait_min));
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    assert!(
        svd.singular_values.iter().all(|s| *s > 1e-9 * smax),
        "oracle design is rank deficient"
    );
    let beta = svd.solve(&y, 0.0).unwrap();
    let v = svd.v_t.as_ref().unwrap().transpose();
    let inv_s2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let bread = &v * inv_s2 * v.transpose();
    let resid = &y - &x * &beta;
    let mut scores: BTreeMap<&str, DVector<f64>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let s = scores
            .entry(r.place.as_str())
            .or_insert_with(|| DVector::zeros(k));
        *s += x.row(i).transpose() * resid[i];
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    let g = scores.len() as f64;
    let factor = g / (g - 1.0) * (n as f64 - 1.0) / (n - k) as f64;
    let vcov = &bread * meat * &bread * factor;
    let coef = (0..regs.len()).map(|j| beta[j]).collect();
    let se = (0..regs.len()).map(|j| vcov[(j, j)].sqrt()).collect();
    (coef, se)
}

fn c3_regression_oracle() -> Outcome {
    let start = Instant::now();
    let regs = ["frac_black", "frac_asian", "population_k", "android"];
    let fes: [&[&str]; 4] = [
        &[],
        &["state"],
        &["state", "county"],
        &["state", "county", "hour"],
    ];
    let (mut worst_b, mut worst_se) = (0.0f64, 0.0f64);
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + case);
        let rows = fuzz_rows(&mut rng);
        let fe = fes[case as usize % fes.len()];
        let f: FitResult = fit(
            &rows,
            &ModelSpec::new("fuzz", DepVar::Wait, &regs).with_fe(fe),
        )
        .map_err(|e| e.to_string())?;
        let (b, se) = dense_oracle(&rows, &regs, fe);
        for (j, name) in regs.iter().enumerate() {
            let rel = |a: f64, o: f64| (a - o).abs() / o.abs();
            worst_b = worst_b.max(rel(f.coef_of(name).unwrap(), b[j]));
            worst_se = worst_se.max(rel(f.se_of(name).unwrap(), se[j]));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_b <= 1e-8 && worst_se <= 1e-10 && secs < 60.0,
        format!("max relative error coef {worst_b:.2e}, clustered se {worst_se:.2e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 4, 5, 11

struct Baseline {
    ds: Dataset,
    run: TargetRun,
}

fn c4_disparity_recovery(base: &Baseline, base_secs: f64) -> Outcome {
    let start = Instant::now();
    let (b1, se1) = col(&base.run.day.rows, LadderColumn::Col1);
    let confounded = sim(ScenarioConfig {
        county_confound_min: 20.0,
        ..scenario(500, ScenarioConfig::default().seed)
    });
    let (_, run) = target(&confounded);
    let (c1, cse1) = col(&run.day.rows, LadderColumn::Col1);
    let (c5, cse5) = col(&run.day.rows, LadderColumn::Col5);
    let secs = base_secs + start.elapsed().as_secs_f64();
    let clean_ok = (4.5..=5.5).contains(&b1) && (b1 - 5.0).abs() <= 2.0 * se1;
    let conf_ok = (c5 - 5.0).abs() <= 2.0 * cse5 && (c1 - 5.0).abs() > 2.0 * cse1;
    check(
        clean_ok && conf_ok && secs < 300.0,
        format!(
            "clean col1 {b1:.3} (se {se1:.3}, n {}); confounded col1 {c1:.3} (se {cse1:.3}), col5 {c5:.3} (se {cse5:.3}); {secs:.0}s",
            base.run.day.rows.len()
        ),
    )
}

fn c5_placebo(base: &Baseline) -> Outcome {
    let days = placebo(&base.ds, &base.run.spells, &FilterConfig::default(), 0.5)
        .map_err(|e| e.to_string())?;
    let target_n = base.run.day.survivors.len();
    let mut worst_z = 0.0f64;
    let mut worst_share = 0.0f64;
    let mut unfitted = 0;
    for d in &days {
        match (d.coef(), d.se()) {
            (Some(b), Some(se)) if se > 0.0 => worst_z = worst_z.max(b.abs() / se),
            _ => unfitted += 1,
        }
        worst_share = worst_share.max(d.survivors as f64 / target_n as f64);
    }
    check(
        days.len() == 14 && unfitted == 0 && worst_z <= 3.0 && worst_share < 0.13,
        format!(
            "{} days, max |coef|/se {worst_z:.2}, max survivors {:.2}% of {target_n}",
            days.len(),
            100.0 * worst_share
        ),
    )
}

fn c11_density(base: &Baseline) -> Outcome {
    let rows = &base.run.day.rows;
    let waits: Vec<f64> = rows.iter().map(|r| r.wait_min).collect();
    let hi = waits.iter().copied().fold(0.0, f64::max);
    let mut masses = Vec::new();
    for hw in [1.0, 3.0] {
        let step = 0.05;
        let xs = grid(-hw, hi + hw, step);
        let d = kde(&waits, hw, &xs, Kernel::Epanechnikov).map_err(|e| e.to_string())?;
        masses.push(d.iter().map(|p| p.1).sum::<f64>() * step);
    }
    let mass_ok = masses.iter().all(|m| (0.99..=1.01).contains(m));
    let hourly_total: usize = hourly_profile(rows).iter().map(|h| h.volume).sum();
    let by_state: usize = hourly_profile_by(rows, |r| r.state.clone())
        .iter()
        .flat_map(|(_, bins)| bins.iter().map(|h| h.volume))
        .sum();
    let hourly_ok = hourly_total == rows.len() && by_state == rows.len();

    let mut mismatches = 0;
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + case);
        let mut fuzz = fuzz_rows(&mut rng);
        // Coarse values force ties across places.
        let values: BTreeMap<String, f64> = fuzz
            .iter()
            .map(|r| (r.place.clone(), (rng.random_range(0..25) as f64) / 25.0))
            .collect();
        for r in &mut fuzz {
            r.frac_black = values[&r.place];
        }
        let Ok((bottom, top)) = decile_split(&fuzz, "frac_black") else {
            continue;
        };
        let mut ranked: Vec<(&String, f64)> = values.iter().map(|(k, v)| (k, *v)).collect();
        ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(b.0)));
        let k = ranked.len().div_ceil(10);
        let lo: Vec<&String> = ranked[..k].iter().map(|p| p.0).collect();
        let up: Vec<&String> = ranked[ranked.len() - k..].iter().map(|p| p.0).collect();
        let want = |set: &[&String]| -> Vec<String> {
            fuzz.iter()
                .filter(|r| set.contains(&&r.place))
                .map(|r| r.device.clone())
                .collect()
        };
        let got = |v: &[&VoterRow]| -> Vec<String> { v.iter().map(|r| r.device.clone()).collect() };
        if got(&bottom) != want(&lo) || got(&top) != want(&up) {
            mismatches += 1;
        }
    }
    check(
        mass_ok && hourly_ok && mismatches == 0,
        format!(
            "kde mass {:.4}/{:.4}, hourly volumes {hourly_total}+{by_state} of {}, decile mismatches {mismatches}/20",
            masses[0],
            masses[1],
            rows.len()
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

fn c6_c7_contamination_and_radius() -> (Outcome, Outcome) {
    let mut shrunk = 0;
    let mut pairs = Vec::new();
    let mut radii = Vec::new();
    for seed in 1..=10u64 {
        let clean = sim(scenario(200, seed));
        let (ds, run) = target(&clean);
        let scan = scan_radius(&ds, &default_radii(), 0.02).expect("scan");
        radii.push(scan.selection.radius_m);
        drop(ds);
        let (b_clean, _) = col(&run.day.rows, LadderColumn::Col1);
        let dirty = sim(ScenarioConfig {
            contamination_rate: 0.13,
            ..scenario(200, seed)
        });
        let (_, run) = target(&dirty);
        let (b_dirty, _) = col(&run.day.rows, LadderColumn::Col1);
        shrunk += usize::from(b_dirty.abs() < b_clean.abs());
        pairs.push(format!("{b_clean:.2}>{b_dirty:.2}"));
    }
    // One-sided sign test: P(X >= shrunk) under Bin(10, 1/2).
    let p: f64 = (shrunk..=10).map(|k| binom(10, k)).sum::<f64>() / 1024.0;
    let c6 = check(
        p < 0.05,
        format!(
            "{shrunk}/10 seeds shrink |coef|, sign test p = {p:.4} [{}]",
            pairs.join(" ")
        ),
    );
    let inside = radii.iter().filter(|r| (**r - 60.0).abs() <= 10.0).count();
    let c7 = check(inside == 10, format!("selected radii {radii:?}"));
    (c6, c7)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

// ---------------------------------------------------------------- 8

#[derive(Clone, Copy, Debug)]
struct Dd(f64, f64);

impl Dd {
    fn from(x: f64) -> Self {
        Dd(x, 0.0)
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd(s, (a - (s - bb)) + (b - bb))
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.0, o.0);
        let t = Dd::two_sum(self.1, o.1);
        let v = Dd::two_sum(s.0, s.1 + t.0);
        Dd::two_sum(v.0, v.1 + t.1)
    }

    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        Dd::two_sum(p, e + self.0 * o.1 + self.1 * o.0)
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.0 / o.0;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.0 / o.0;
        Dd::two_sum(q1, q2).add(Dd::from(q3))
    }

    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
}

/// Direct fixed-point iteration in double-double arithmetic.
fn eb_oracle(raw: &[f64], se: &[f64]) -> Vec<f64> {
    let r: Vec<Dd> = raw.iter().map(|x| Dd::from(*x)).collect();
    let s2: Vec<Dd> = se.iter().map(|s| Dd::from(*s).mul(Dd::from(*s))).collect();
    let mean = |tau2: Dd| {
        let (mut sw, mut swr) = (Dd::from(0.0), Dd::from(0.0));
        for (ri, si) in r.iter().zip(&s2) {
            let w = Dd::from(1.0).div(tau2.add(*si));
            sw = sw.add(w);
            swr = swr.add(w.mul(*ri));
        }
        (swr.div(sw), sw)
    };
    let n = raw.len() as f64;
    let m = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    let mut tau2 = Dd::from((var - se.iter().map(|s| s * s).sum::<f64>() / n).max(0.0));
    for _ in 0..200_000 {
        let (mu, sw) = mean(tau2);
        let mut num = Dd::from(0.0);
        for (ri, si) in r.iter().zip(&s2) {
            let w = Dd::from(1.0).div(tau2.add(*si));
            let d = ri.sub(mu);
            num = num.add(w.mul(d.mul(d).sub(*si)));
        }
        let mut next = num.div(sw);
        if next.0 < 0.0 {
            next = Dd::from(0.0);
        }
        let change = next.sub(tau2).to_f64().abs();
        tau2 = next;
        if change <= 1e-28 * (1.0 + tau2.0) {
            break;
        }
    }
    let (mu, _) = mean(tau2);
    r.iter()
        .zip(&s2)
        .map(|(ri, si)| {
            let b = if tau2.0 > 0.0 {
                tau2.div(tau2.add(*si))
            } else {
                Dd::from(0.0)
            };
            mu.add(b.mul(ri.sub(mu))).to_f64()
        })
        .collect()
}

fn groups(raw: &[f64], se: &[f64]) -> Vec<GroupEstimate> {
    raw.iter()
        .zip(se)
        .enumerate()
        .map(|(i, (r, s))| GroupEstimate {
            group_id: format!("g{i}"),
            raw: *r,
            se: *s,
            n: 10,
        })
        .collect()
}

fn c8_eb() -> Outcome {
    let mut worst = 0.0f64;
    let mut violations = Vec::new();
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + case);
        let k = rng.random_range(2..=40);
        let center = rng.random_range(-20.0..20.0);
        let spread = rng.random_range(0.0..4.0);
        let se: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..3.0)).collect();
        let raw: Vec<f64> = se
            .iter()
            .map(|s| {
                center + spread * rng.random_range(-1.0..1.0) + s * rng.random_range(-1.5..1.5)
            })
            .collect();
        let res = eb_adjust(&groups(&raw, &se), DEFAULT_TOL, DEFAULT_MAX_ITER)
            .map_err(|e| e.to_string())?;
        let adj: Vec<f64> = res.adjusted.iter().map(|a| a.1).collect();
        let oracle = eb_oracle(&raw, &se);
        for (a, o) in adj.iter().zip(&oracle) {
            worst = worst.max((a - o).abs());
        }
        let mu = res.mu;
        let eps = 1e-9 * (1.0 + mu.abs());
        for i in 0..k {
            let (lo, hi) = if raw[i] < mu {
                (raw[i], mu)
            } else {
                (mu, raw[i])
            };
            if adj[i] < lo - eps || adj[i] > hi + eps {
                violations.push(format!("case {case}: betweenness"));
            }
        }
        // Shrinkage toward μ grows with the standard error.
        let mut by_se: Vec<usize> = (0..k).collect();
        by_se.sort_by(|a, b| se[*a].total_cmp(&se[*b]));
        let ratio = |i: usize| {
            if (raw[i] - mu).abs() > 1e-9 {
                Some((adj[i] - mu) / (raw[i] - mu))
            } else {
                None
            }
        };
        let ratios: Vec<f64> = by_se.iter().filter_map(|&i| ratio(i)).collect();
        if ratios.windows(2).any(|w| w[1] > w[0] + 1e-9) {
            violations.push(format!("case {case}: monotone shrinkage"));
        }
        let (a, b) = (
            rng.random_range(0.1..10.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 },
            rng.random_range(-50.0..50.0),
        );
        let scaled_raw: Vec<f64> = raw.iter().map(|r| a * r + b).collect();
        let scaled_se: Vec<f64> = se.iter().map(|s| a.abs() * s).collect();
        let scaled = eb_adjust(
            &groups(&scaled_raw, &scaled_se),
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .map_err(|e| e.to_string())?;
        for (x, y) in adj.iter().zip(&scaled.adjusted) {
            if (a * x + b - y.1).abs() > 1e-6 * (1.0 + y.1.abs()) {
                violations.push(format!("case {case}: scale equivariance"));
                break;
            }
        }
    }
    let single = eb_adjust(&groups(&[3.5], &[1.0]), DEFAULT_TOL, DEFAULT_MAX_ITER)
        .map_err(|e| e.to_string())?;
    let equal = eb_adjust(
        &groups(&[2.0; 6], &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
        DEFAULT_TOL,
        DEFAULT_MAX_ITER,
    )
    .map_err(|e| e.to_string())?;
    let degenerate_ok = single.status == EbStatus::SingleGroup
        && single.adjusted[0].1 == 3.5
        && equal.adjusted.iter().all(|a| (a.1 - 2.0).abs() < 1e-12);
    violations.dedup();
    check(
        worst <= 1e-6 && violations.is_empty() && degenerate_ok,
        format!(
            "max |adjusted - oracle| {worst:.2e}, invariant violations {}{}, degenerate cases {}",
            violations.len(),
            violations
                .first()
                .map(|v| format!(" ({v})"))
                .unwrap_or_default(),
            if degenerate_ok {
                "return raw"
            } else {
                "changed"
            }
        ),
    )
}

// ---------------------------------------------------------------- 9

fn c9_congestion() -> Outcome {
    let seed = ScenarioConfig::default().seed;
    let prelim = sim(scenario(500, seed));
    let volumes: Vec<f64> = prelim
        .places
        .iter()
        .filter_map(|p| p.registered_voters_k)
        .collect();
    let p90 = stats::quantile(&volumes, 0.9).unwrap();
    let slope = (7.0 - 3.7) / p90;
    drop(prelim);
    let s = sim(ScenarioConfig {
        delta_min: 3.7,
        delta_volume_slope: slope,
        ..scenario(500, seed)
    });
    let same_places = s
        .places
        .iter()
        .filter_map(|p| p.registered_voters_k)
        .eq(volumes.iter().copied());
    let (_, run) = target(&s);
    let c = congestion_models(&run.day.rows, 25).map_err(|e| e.to_string())?;
    let base = &c.interaction[0];
    let name = ModelSpec::interaction_name("frac_black", "volume");
    let (b_int, se_int) = (base.coef_of(&name).unwrap(), base.se_of(&name).unwrap());
    let cons = base.coef_of("_cons").unwrap();
    let b_fb = base.coef_of("frac_black").unwrap();
    let b_v = base.coef_of("volume").unwrap();
    let exact = c.lines.iter().all(|l| {
        let v = l.volume_k;
        l.wait_fb0 == cons + b_v * v
            && l.wait_fb1 == cons + b_fb + (b_v + b_int) * v
            && l.gap == b_fb + b_int * v
    });
    check(
        same_places && (b_int - slope).abs() <= 2.0 * se_int && exact && c.lines.len() == 25,
        format!(
            "s = {slope:.4} (p90 volume {p90:.3}k); interaction {b_int:.4} (se {se_int:.4}); {} predicted lines {}",
            c.lines.len(),
            if exact { "match" } else { "differ from" }
        ),
    )
}

// ---------------------------------------------------------------- 10

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "seed = 7\nstudy.target_day = 2016-11-08\nsim.n_places = 30\nsim.voters_per_place = 60\n",
    )
    .map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_pollwait");
    let runs = [("a", "1"), ("b", "8"), ("c", "1"), ("d", "8")];
    for (out, threads) in runs {
        let status = Command::new(bin)
            .args(["all", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(out))
            .args(["--threads", threads])
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "run {out} failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
    }
    let listing = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        v.sort();
        v
    };
    let reference = listing(&dir.path().join("a"));
    let differing: Vec<&str> = runs[1..]
        .iter()
        .filter(|(o, _)| listing(&dir.path().join(o)) != reference)
        .map(|(o, _)| *o)
        .collect();
    check(
        differing.is_empty() && reference.len() > 20,
        format!(
            "{} artifacts across 4 runs (threads 1, 8, 1, 8); differing runs {differing:?}",
            reference.len()
        ),
    )
}

// ---------------------------------------------------------------- 12

fn c12_cces() -> Outcome {
    let want = [
        ("none", 0.0),
        ("lt10", 5.0),
        ("b10to30", 20.0),
        ("b31to60", 45.0),
        ("gt60", 90.0),
    ];
    let recode_ok = want.iter().all(|(b, m)| recode(b).ok() == Some(*m));

    let s = sim(ScenarioConfig {
        counties_per_state: 30,
        ..scenario(300, 12)
    });
    let (_, run) = target(&s);
    let effects =
        region_effects(&run.day.rows, RegionKind::County, 30).map_err(|e| e.to_string())?;
    let raw: Vec<GroupEstimate> = effects
        .iter()
        .filter(|e| !e.below_floor && e.sd > 0.0)
        .map(|e| GroupEstimate {
            group_id: e.region.clone(),
            raw: e.mean,
            se: e.sd / (e.n as f64).sqrt(),
            n: e.n,
        })
        .collect();
    let eb = eb_adjust(&raw, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    let pipeline: Vec<GroupEstimate> = raw
        .iter()
        .zip(&eb.adjusted)
        .map(|(g, a)| GroupEstimate {
            raw: a.1,
            ..g.clone()
        })
        .collect();
    let xs: Vec<f64> = pipeline.iter().map(|g| g.raw).collect();
    let sd = stats::sample_sd(&xs).unwrap();
    let keyed: Vec<(String, f64)> = pipeline
        .iter()
        .map(|g| (g.group_id.clone(), g.raw))
        .collect();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut prev = f64::INFINITY;
    for mult in [0.5, 1.0, 2.0] {
        let sigma = mult * sd;
        let mut rs = Vec::new();
        for seed in 1..=10u64 {
            let noisy = noisy_copy(&pipeline, sigma, seed);
            let survey: Vec<(String, f64)> =
                noisy.iter().map(|g| (g.group_id.clone(), g.raw)).collect();
            rs.push(
                correlate_regions(&keyed, &survey)
                    .map_err(|e| e.to_string())?
                    .r,
            );
        }
        let mean_r = stats::mean(&rs).unwrap();
        let factor = sd / (sd * sd + sigma * sigma).sqrt();
        ok &= (mean_r - factor).abs() <= 0.05 && mean_r < prev;
        prev = mean_r;
        lines.push(format!("sigma {sigma:.2}: r {mean_r:.3} vs {factor:.3}"));
    }
    check(
        recode_ok && ok && pipeline.len() >= 50,
        format!(
            "recode {}; {} county regions, sd {sd:.2}; {}",
            if recode_ok { "exact" } else { "wrong" },
            pipeline.len(),
            lines.join(", ")
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        let (tag, detail) = match &o {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{n:>2}] {name}: {detail}");
        results.push((n, name, o));
    };

    report(1, "bound sandwich", c1_bound_sandwich());
    report(2, "worked example", c2_worked_example());
    report(3, "regression oracle", c3_regression_oracle());

    let start = Instant::now();
    let s = sim(scenario(500, ScenarioConfig::default().seed));
    let (ds, run) = target(&s);
    drop(s);
    let base = Baseline { ds, run };
    let base_secs = start.elapsed().as_secs_f64();
    report(
        4,
        "disparity recovery",
        c4_disparity_recovery(&base, base_secs),
    );
    report(5, "placebo days", c5_placebo(&base));
    report(11, "density and deciles", c11_density(&base));
    drop(base);

    let (c6, c7) = c6_c7_contamination_and_radius();
    report(6, "contamination attenuation", c6);
    report(7, "radius selection", c7);
    report(8, "empirical Bayes", c8_eb());
    report(9, "congestion interaction", c9_congestion());
    report(10, "determinism", c10_determinism());
    report(12, "survey recode and attenuation", c12_cces());

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
