//! Batch driver: `pollwait <subcommand> --config run.cfg [--set key=value]...`.
//!
//! Exit codes: 0 success, 1 data or config error (a JSON error record goes
//! to stderr), 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use pollwait::cces::{correlate_regions, load_survey, region_means};
use pollwait::config::{Config, ConfigError};
use pollwait::density::{
    decile_split, grid, histogram, hourly_profile_by, kde, share_over, write_density,
    write_histogram, write_hourly, Kernel,
};
use pollwait::ingest::{load_blockgroups, load_devices, load_pings, load_places, LoadReport};
use pollwait::pipeline::{
    default_radii, extract, placebo, run_day, scan_radius, write_placebo, Dataset, DayRun,
    PipelineConfig,
};
use pollwait::regress::tables::write_fits;
use pollwait::regress::{
    congestion_models, hour_restricted, region_effects, table_ladder_with, CongestionResult,
    DepVar, FitResult, HourWindow, RegionKind, Vce, VoterRow,
};
use pollwait::shrink::{
    adjust_region_tables, eb_adjust, write_regions, RegionTable, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use pollwait::spells::{write_spells, DwellSpell};
use pollwait::synth::{simulate, write_outputs, ScenarioConfig};
use pollwait::Error;

#[derive(Parser)]
#[command(name = "pollwait", version, about = "Polling-place wait-time pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Plain-text `key=value` config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (config `out.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 = all cores (config `threads`).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed (config `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Simulate a scenario and write the ingest-format inputs.
    Simulate,
    /// Load and validate inputs, reporting skipped rows.
    Ingest,
    /// Unique-device differential curve and radius choice.
    RadiusScan,
    /// Dwell spells for every study day.
    Spells,
    /// Likely-voter filter chain with attrition counts.
    Filter,
    /// Disparity table ladders, hour windows and congestion models.
    Regress,
    /// Raw per-region means and disparities.
    Regions,
    /// Empirical-Bayes adjusted region table.
    Shrink,
    /// Kernel densities, hourly profiles and the wait histogram.
    Density,
    /// Survey recode and correlation with pipeline region means.
    Cces,
    /// Filter chain and column (1) on every non-target study day.
    Placebo,
    /// Headline numbers as key/value rows.
    Report,
    /// Every stage in order.
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ingest => "ingest",
            Command::RadiusScan => "radius-scan",
            Command::Spells => "spells",
            Command::Filter => "filter",
            Command::Regress => "regress",
            Command::Regions => "regions",
            Command::Shrink => "shrink",
            Command::Density => "density",
            Command::Cces => "cces",
            Command::Placebo => "placebo",
            Command::Report => "report",
            Command::All => "all",
        }
    }
}

/// Lazily computed pipeline state shared by the stages of one run.
struct Run {
    cfg: Config,
    out: PathBuf,
    pipeline: PipelineConfig,
    dataset: Option<Dataset>,
    spells: Option<(f64, Vec<DwellSpell>)>,
    target: Option<DayRun>,
    regions: Option<RegionTable>,
    outputs: Vec<(String, PathBuf)>,
    report: Vec<(String, String)>,
}

type Res<T> = pollwait::Result<T>;

impl Run {
    fn new(cfg: Config, out: PathBuf) -> Res<Self> {
        let pipeline = PipelineConfig::from_config(&cfg)?;
        Ok(Self {
            cfg,
            out,
            pipeline,
            dataset: None,
            spells: None,
            target: None,
            regions: None,
            outputs: Vec::new(),
            report: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        let key = name.trim_end_matches(".csv").to_string();
        if !self.outputs.iter().any(|(k, _)| *k == key) {
            self.outputs.push((key, p.clone()));
        }
        p
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.report.push((key.to_string(), value.to_string()));
    }

    fn dataset(&mut self) -> Res<&Dataset> {
        if self.dataset.is_none() {
            self.dataset = Some(Dataset::load(&self.cfg)?);
        }
        Ok(self.dataset.as_ref().expect("loaded"))
    }

    fn radius(&mut self) -> Res<f64> {
        match self.pipeline.radius_m {
            Some(r) => Ok(r),
            None => {
                let (radii, th) = (self.pipeline.radii.clone(), self.pipeline.gain_threshold);
                Ok(scan_radius(self.dataset()?, &radii, th)?.selection.radius_m)
            }
        }
    }

    fn spells(&mut self) -> Res<&[DwellSpell]> {
        if self.spells.is_none() {
            let r = self.radius()?;
            let s = extract(self.dataset()?, r)?;
            self.spells = Some((r, s));
        }
        Ok(&self.spells.as_ref().expect("extracted").1)
    }

    fn target(&mut self) -> Res<&DayRun> {
        if self.target.is_none() {
            self.spells()?;
            let ds = self.dataset.as_ref().expect("loaded");
            let spells = &self.spells.as_ref().expect("extracted").1;
            let run = run_day(
                ds,
                spells,
                &self.pipeline.filter,
                ds.calendar.target_day,
                self.pipeline.lambda,
            )?;
            self.target = Some(run);
        }
        Ok(self.target.as_ref().expect("filtered"))
    }

    fn rows(&mut self) -> Res<&[VoterRow]> {
        Ok(&self.target()?.rows)
    }

    fn region_kind(&self) -> Res<RegionKind> {
        let v = self.cfg.get_str("regions.kind").unwrap_or("district");
        v.parse().map_err(|reason| {
            ConfigError::InvalidValue {
                key: "regions.kind".into(),
                value: v.into(),
                reason,
            }
            .into()
        })
    }

    fn region_table(&mut self) -> Res<&RegionTable> {
        if self.regions.is_none() {
            let kind = self.region_kind()?;
            let min_n = self.pipeline.region_min_n;
            let effects = region_effects(self.rows()?, kind, min_n)?;
            self.regions = Some(adjust_region_tables(
                &effects,
                DEFAULT_TOL,
                DEFAULT_MAX_ITER,
            )?);
        }
        Ok(self.regions.as_ref().expect("adjusted"))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_rows(path: &Path, header: &str, rows: &[String]) -> Res<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn scenario(cfg: &Config) -> Res<ScenarioConfig> {
    Ok(ScenarioConfig::from_config(cfg)?)
}

fn simulate_stage(run: &mut Run) -> Res<String> {
    let sc = scenario(&run.cfg)?;
    let sim = simulate(&sc)?;
    let files = write_outputs(&run.out, &sim)?;
    for p in files.all() {
        let name = p
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        run.path(&name);
    }
    run.note("sim_voters", sim.n_voters);
    run.note("sim_pings", sim.pings.len());
    Ok(format!(
        "simulated {} places, {} voters, {} devices, {} pings",
        sim.places.len(),
        sim.n_voters,
        sim.pings.n_devices(),
        sim.pings.len()
    ))
}

/// Points `input.*` and the calendar at a fresh simulation in the output
/// directory.
fn adopt_simulation(run: &mut Run) -> Res<()> {
    let sc = scenario(&run.cfg)?;
    let names = [
        ("input.pings", "pings.csv"),
        ("input.places", "places.csv"),
        ("input.footprints", "footprints.csv"),
        ("input.blockgroups", "blockgroups.csv"),
        ("input.states", "states.csv"),
        ("input.devices", "devices.csv"),
        ("input.survey", "survey.csv"),
    ];
    for (k, f) in names {
        run.cfg.set(k, run.out.join(f).display().to_string());
    }
    run.cfg.set("study.target_day", sc.target_day.to_string());
    for k in ["study.pre_days", "study.post_days"] {
        if run.cfg.get_str(k).is_none() {
            run.cfg.set(k, sc.placebo_days.to_string());
        }
    }
    Ok(())
}

fn ingest_stage(run: &mut Run) -> Res<String> {
    let cfg = &run.cfg;
    let mut reports: Vec<(&str, LoadReport)> = Vec::new();
    let fp = cfg.get_str("input.footprints").map(PathBuf::from);
    reports.push((
        "places",
        load_places(cfg.require_str("input.places")?, fp.as_deref())?.1,
    ));
    reports.push((
        "blockgroups",
        load_blockgroups(cfg.require_str("input.blockgroups")?)?.1,
    ));
    if let Some(d) = cfg.get_str("input.devices") {
        reports.push(("devices", load_devices(d)?.1));
    }
    reports.push((
        "pings",
        load_pings(cfg.require_str("input.pings")?, None)?.1,
    ));
    let rows: Vec<String> = reports
        .iter()
        .map(|(n, r)| format!("{n},{},{},{}", r.rows_in, r.rows_loaded, r.rows_skipped))
        .collect();
    let p = run.path("ingest.csv");
    write_rows(&p, "file,rows_in,rows_loaded,rows_skipped", &rows)?;
    let loaded: usize = reports.iter().map(|(_, r)| r.rows_loaded).sum();
    let skipped: usize = reports.iter().map(|(_, r)| r.rows_skipped).sum();
    Ok(format!("ingested {loaded} rows, skipped {skipped}"))
}

fn radius_stage(run: &mut Run) -> Res<String> {
    let (radii, th) = (run.pipeline.radii.clone(), run.pipeline.gain_threshold);
    let radii = if radii.is_empty() {
        default_radii()
    } else {
        radii
    };
    let scan = scan_radius(run.dataset()?, &radii, th)?;
    let p = run.path("radius_scan.csv");
    scan.curve.write_csv(&p)?;
    run.note("radius_selected_m", scan.selection.radius_m);
    run.note("radius_saturated", scan.selection.saturated);
    Ok(format!(
        "selected radius {} m{}",
        scan.selection.radius_m,
        if scan.selection.saturated {
            " (saturated)"
        } else {
            ""
        }
    ))
}

fn spells_stage(run: &mut Run) -> Res<String> {
    let n = run.spells()?.len();
    let p = run.path("spells.csv");
    let ds = run.dataset.as_ref().expect("loaded");
    let (r, spells) = run.spells.as_ref().expect("extracted");
    write_spells(&p, spells, &ds.pings, &ds.places)?;
    let r = *r;
    run.note("radius_m", r);
    run.note("spells", n);
    Ok(format!("{n} spells at radius {r} m"))
}

fn filter_stage(run: &mut Run) -> Res<String> {
    run.target()?;
    let (a, v) = (run.path("attrition.csv"), run.path("likely_voters.csv"));
    let ds = run.dataset.as_ref().expect("loaded");
    let t = run.target.as_ref().expect("filtered");
    t.attrition.write_csv(&a)?;
    write_spells(&v, &t.survivors, &ds.pings, &ds.places)?;
    let n = t.survivors.len();
    run.note("likely_voters", n);
    Ok(format!("{n} likely voters"))
}

fn regress_stage(run: &mut Run) -> Res<String> {
    let rows = run.rows()?.to_vec();
    let vce_text = run.cfg.get_str("regress.vce").unwrap_or("cr1").to_string();
    let vce: Vce = vce_text
        .parse()
        .map_err(|reason| ConfigError::InvalidValue {
            key: "regress.vce".into(),
            value: vce_text.clone(),
            reason,
        })?;
    let wait = table_ladder_with(&rows, DepVar::Wait, vce)?;
    let lpm = table_ladder_with(&rows, DepVar::Over30, vce)?;
    let hours = hour_restricted(&rows, &HourWindow::defaults())?;
    let p = run.path("table1.csv");
    write_fits(&p, &wait)?;
    let p = run.path("table_over30.csv");
    write_fits(&p, &lpm)?;
    let p = run.path("hour_restricted.csv");
    write_fits(&p, &hours)?;
    if rows.iter().any(|r| r.voters_per_place_k.is_some()) {
        let grid_points = run.cfg.get_or("regress.congestion_grid", 25usize)?;
        match congestion_models(&rows, grid_points) {
            Ok(c) => write_congestion(run, &c)?,
            // Optional block; small samples cannot identify the interaction.
            Err(e) => eprintln!(
                "{}",
                json!({"warning": "congestion", "message": e.to_string()})
            ),
        }
    }
    let col1: &FitResult = &wait[0];
    let (b, se) = (col1.coef_of("frac_black"), col1.se_of("frac_black"));
    run.note("col1_frac_black", b.map_or(String::new(), fmt));
    run.note("col1_frac_black_se", se.map_or(String::new(), fmt));
    run.note("col1_n", col1.n);
    Ok(format!(
        "column (1) frac_black = {} (se {}) on {} voters",
        b.map_or("NA".into(), fmt),
        se.map_or("NA".into(), fmt),
        col1.n
    ))
}

fn write_congestion(run: &mut Run, c: &CongestionResult) -> Res<()> {
    let p = run.path("congestion_controls.csv");
    write_fits(&p, &c.controls)?;
    let p = run.path("congestion_interaction.csv");
    write_fits(&p, &c.interaction)?;
    let lines: Vec<String> = c
        .lines
        .iter()
        .map(|l| {
            format!(
                "{},{},{},{}",
                fmt(l.volume_k),
                fmt(l.wait_fb0),
                fmt(l.wait_fb1),
                fmt(l.gap)
            )
        })
        .collect();
    let p = run.path("congestion_lines.csv");
    write_rows(
        &p,
        "volume_k,wait_frac_black_0,wait_frac_black_1,gap",
        &lines,
    )?;
    Ok(())
}

fn regions_stage(run: &mut Run) -> Res<String> {
    let kind = run.region_kind()?;
    let min_n = run.pipeline.region_min_n;
    let effects = region_effects(run.rows()?, kind, min_n)?;
    let cell = |v: Option<f64>| v.map_or(String::new(), fmt);
    let rows: Vec<String> = effects
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{},{},{},{}",
                e.region,
                e.n,
                fmt(e.mean),
                fmt(e.sd),
                cell(e.disparity),
                cell(e.disparity_se),
                u8::from(e.below_floor)
            )
        })
        .collect();
    let p = run.path("regions_raw.csv");
    write_rows(
        &p,
        "region,n,mean,sd,disparity,disparity_se,below_floor",
        &rows,
    )?;
    Ok(format!("{} {} regions", effects.len(), kind.key_name()))
}

fn shrink_stage(run: &mut Run) -> Res<String> {
    let p = run.path("regions.csv");
    let table = run.region_table()?;
    write_regions(&p, table)?;
    let tau2 = table.means.as_ref().map(|m| m.tau2);
    let n = table.rows.len();
    if let Some(t) = tau2 {
        run.note("regions_mean_tau2", fmt(t));
    }
    Ok(format!(
        "adjusted {n} regions, tau2 {}",
        tau2.map_or("NA".into(), fmt)
    ))
}

fn density_stage(run: &mut Run) -> Res<String> {
    let half_width = run.cfg.get_or("density.half_width", 1.0f64)?;
    let max_min = run.cfg.get_or("density.max_min", 120.0f64)?;
    let step = run.cfg.get_or("density.step", 0.5f64)?;
    let bin = run.cfg.get_or("density.bin_min", 1.5f64)?;
    let field = run
        .cfg
        .get_str("density.field")
        .unwrap_or("frac_black")
        .to_string();
    let rows = run.rows()?.to_vec();
    let xs = grid(0.0, max_min, step);
    let all: Vec<f64> = rows.iter().map(|r| r.wait_min).collect();
    let mut curves = vec![(
        "all".to_string(),
        kde(&all, half_width, &xs, Kernel::default())?,
    )];
    let (bottom, top) = decile_split(&rows, &field)?;
    for (label, part) in [("bottom", &bottom), ("top", &top)] {
        let w: Vec<f64> = part.iter().map(|r| r.wait_min).collect();
        curves.push((
            format!("{field}_{label}"),
            kde(&w, half_width, &xs, Kernel::default())?,
        ));
    }
    let p = run.path("density.csv");
    write_density(&p, &curves)?;
    let p = run.path("hourly.csv");
    write_hourly(&p, &hourly_profile_by(&rows, |_| "all".to_string()))?;
    let p = run.path("histogram.csv");
    write_histogram(&p, &histogram(&all, 0.0, bin)?)?;
    let over = share_over(&rows, 30.0)?;
    let over_b = share_over(bottom.iter().copied(), 30.0)?;
    let over_t = share_over(top.iter().copied(), 30.0)?;
    run.note("share_over30", fmt(over));
    run.note(&format!("share_over30_{field}_bottom"), fmt(over_b));
    run.note(&format!("share_over30_{field}_top"), fmt(over_t));
    Ok(format!(
        "share over 30 min {:.4} (bottom decile {:.4}, top decile {:.4})",
        over, over_b, over_t
    ))
}

fn cces_stage(run: &mut Run) -> Res<String> {
    let path = run.cfg.require_str("input.survey")?.to_string();
    let (responses, rep) = load_survey(&path)?;
    let min_n = run.cfg.get_or("cces.min_n", 10usize)?;
    let survey = eb_adjust(
        &region_means(&responses, min_n),
        DEFAULT_TOL,
        DEFAULT_MAX_ITER,
    )?;
    let min_voters = run.pipeline.region_min_n;
    let effects = region_effects(run.rows()?, RegionKind::District, min_voters)?;
    let table = adjust_region_tables(&effects, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let pipeline: Vec<(String, f64)> = table
        .rows
        .iter()
        .filter_map(|r| Some((r.region.clone(), r.adjusted_mean?)))
        .collect();
    let corr = correlate_regions(&pipeline, &survey.adjusted)?;
    let survey_of = |k: &str| survey.get(k).map_or(String::new(), fmt);
    let rows: Vec<String> = pipeline
        .iter()
        .filter(|(k, _)| corr.regions.contains(k))
        .map(|(k, v)| format!("{k},{},{}", fmt(*v), survey_of(k)))
        .collect();
    let p = run.path("cces.csv");
    write_rows(
        &p,
        "region,pipeline_adjusted_mean,survey_adjusted_mean",
        &rows,
    )?;
    run.note("cces_r", fmt(corr.r));
    run.note("cces_regions", corr.regions.len());
    Ok(format!(
        "r = {:.4} over {} regions ({} responses kept, {} other mode, {} don't know)",
        corr.r,
        corr.regions.len(),
        responses.len(),
        rep.dropped_mode,
        rep.dropped_dont_know
    ))
}

fn placebo_stage(run: &mut Run) -> Res<String> {
    let target_n = run.target()?.survivors.len();
    let ds = run.dataset.as_ref().expect("loaded");
    let spells = &run.spells.as_ref().expect("extracted").1;
    let days = placebo(ds, spells, &run.pipeline.filter, run.pipeline.lambda)?;
    let p = run.path("placebo.csv");
    write_placebo(&p, &days)?;
    let positive = days
        .iter()
        .filter(|d| matches!((d.coef(), d.se()), (Some(b), Some(s)) if b > 2.0 * s))
        .count();
    let max_share =
        days.iter().map(|d| d.survivors as f64).fold(0.0, f64::max) / target_n.max(1) as f64;
    run.note("placebo_days", days.len());
    run.note("placebo_significant_positive", positive);
    run.note("placebo_max_survivor_share", fmt(max_share));
    Ok(format!(
        "{} placebo days, {} significantly positive, max survivors {:.2}% of target",
        days.len(),
        positive,
        100.0 * max_share
    ))
}

fn report_stage(run: &mut Run) -> Res<String> {
    let rows = run.rows()?;
    let n = rows.len();
    let mean = rows.iter().map(|r| r.wait_min).sum::<f64>() / n.max(1) as f64;
    let median = pollwait::stats::median(&rows.iter().map(|r| r.wait_min).collect::<Vec<_>>())
        .unwrap_or(f64::NAN);
    let radius = run.spells.as_ref().map(|s| s.0).unwrap_or(f64::NAN);
    run.note("voters", n);
    run.note("mean_wait_min", fmt(mean));
    run.note("median_wait_min", fmt(median));
    run.note("radius_m", radius);
    let mut lines: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (k, v) in &run.report {
        if seen.insert(k.clone()) {
            lines.push(format!("{k},{v}"));
        }
    }
    let p = run.path("report.csv");
    write_rows(&p, "key,value", &lines)?;
    Ok(format!(
        "{n} voters, mean wait {mean:.2} min, median {median:.2} min"
    ))
}

fn stage(run: &mut Run, cmd: Command) -> Res<String> {
    match cmd {
        Command::Simulate => simulate_stage(run),
        Command::Ingest => ingest_stage(run),
        Command::RadiusScan => radius_stage(run),
        Command::Spells => spells_stage(run),
        Command::Filter => filter_stage(run),
        Command::Regress => regress_stage(run),
        Command::Regions => regions_stage(run),
        Command::Shrink => shrink_stage(run),
        Command::Density => density_stage(run),
        Command::Cces => cces_stage(run),
        Command::Placebo => placebo_stage(run),
        Command::Report => report_stage(run),
        Command::All => unreachable!("expanded by the caller"),
    }
}

/// Path relative to the output directory when inside it.
fn shown(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

fn write_manifest(run: &Run, cmd: Command, seed: u64) -> Res<()> {
    let mut m = Map::new();
    m.insert("subcommand".into(), json!(cmd.name()));
    m.insert("seed".into(), json!(seed));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    for (k, v) in run.cfg.iter() {
        if k.starts_with("input.") {
            m.insert(k.into(), json!(shown(&run.out, Path::new(v))));
        }
    }
    for (k, p) in &run.outputs {
        m.insert(format!("output.{k}"), json!(shown(&run.out, p)));
    }
    let p = run.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&Value::Object(m)).expect("json") + "\n";
    std::fs::write(&p, text).map_err(io_err(&p))
}

fn execute(cli: &Cli) -> Res<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    for s in &cli.set {
        cfg.apply_override(s)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string());
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", t.to_string());
    }
    if let Some(o) = &cli.out {
        cfg.set("out.dir", o.display().to_string());
    }
    let threads: usize = cfg.get_or("threads", 0)?;
    // Fails only if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    let seed: u64 = cfg.get_or("seed", ScenarioConfig::default().seed)?;
    let out = PathBuf::from(cfg.get_str("out.dir").unwrap_or("out"));
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;

    let mut run = Run::new(cfg, out)?;
    let cmd = cli.command;
    let stages: Vec<Command> = if cmd == Command::All {
        let mut v = Vec::new();
        if run.cfg.get_str("input.pings").is_none() {
            v.push(Command::Simulate);
        }
        v.extend([
            Command::Ingest,
            Command::RadiusScan,
            Command::Spells,
            Command::Filter,
            Command::Regress,
            Command::Regions,
            Command::Shrink,
            Command::Density,
        ]);
        v.extend([Command::Cces, Command::Placebo, Command::Report]);
        v
    } else {
        vec![cmd]
    };
    for s in stages {
        if s == Command::Cces && run.cfg.get_str("input.survey").is_none() {
            continue;
        }
        let summary = match stage(&mut run, s) {
            Ok(line) => line,
            // Within `all` the survey comparison is optional.
            Err(e @ Error::Cces(_)) if cmd == Command::All => {
                eprintln!("{}", json!({"warning": e.kind(), "message": e.to_string()}));
                continue;
            }
            Err(e) => return Err(e),
        };
        println!("{}: {summary}", s.name());
        if s == Command::Simulate && cmd == Command::All {
            adopt_simulation(&mut run)?;
        }
    }
    write_manifest(&run, cmd, seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({
                "error": e.kind(),
                "message": e.to_string(),
                "subcommand": cli.command.name(),
            });
            eprintln!("{record}");
            ExitCode::from(1)
        }
    }
}
