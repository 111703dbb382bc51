use pollwait::cces::{load_survey, region_means};
use pollwait::config::Config;
use pollwait::pipeline::{extract, run_day, run_target, Dataset, PipelineConfig};
use pollwait::regress::{table_ladder, table_ladder_with, DepVar, Vce};
use pollwait::synth::output::load_truth;
use pollwait::synth::{simulate, write_outputs, ScenarioConfig, SimOutput};
use pollwait::FilterConfig;

fn small() -> SimOutput {
    simulate(&ScenarioConfig {
        n_places: 24,
        voters_per_place: 50.0,
        placebo_days: 3,
        seed: 99,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

fn short_filter() -> FilterConfig {
    FilterConfig {
        exclusion_pre_days: 3,
        exclusion_post_days: 3,
        ..FilterConfig::default()
    }
}

#[test]
fn files_reproduce_in_memory_run() {
    let sim = small();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(dir.path(), &sim).unwrap();

    let mut cfg = Config::new();
    cfg.set("study.target_day", sim.calendar.target_day.to_string());
    cfg.set("study.pre_days", "3");
    cfg.set("study.post_days", "3");
    for (k, p) in [
        ("input.pings", &files.pings),
        ("input.places", &files.places),
        ("input.footprints", &files.footprints),
        ("input.blockgroups", &files.blockgroups),
        ("input.states", &files.states),
        ("input.devices", &files.devices),
    ] {
        cfg.set(k, p.display().to_string());
    }
    let loaded = Dataset::load(&cfg).unwrap();
    let memory = Dataset::from_sim(&sim);
    assert_eq!(loaded.places.len(), memory.places.len());
    assert_eq!(loaded.calendar.states, memory.calendar.states);
    assert_eq!(loaded.pings.len(), memory.pings.len());

    let a = extract(&loaded, 60.0).unwrap();
    let b = extract(&memory, 60.0).unwrap();
    assert_eq!(a.len(), b.len());
    let day = memory.calendar.target_day;
    let ra = run_day(&loaded, &a, &short_filter(), day, 0.5).unwrap();
    let rb = run_day(&memory, &b, &short_filter(), day, 0.5).unwrap();
    assert_eq!(ra.attrition, rb.attrition);
    assert_eq!(ra.rows.len(), rb.rows.len());
    for (x, y) in ra.rows.iter().zip(&rb.rows) {
        assert_eq!(x.device, y.device);
        assert_eq!(x.wait_min, y.wait_min);
        // Coordinates and fractions pass through text.
        assert!((x.frac_black - y.frac_black).abs() < 1e-12);
    }

    let (truth, rep) = load_truth(&files.truth).unwrap();
    assert_eq!(rep.rows_skipped, 0);
    assert_eq!(truth, sim.truth);
}

#[test]
fn survey_file_feeds_region_means() {
    let sim = small();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(dir.path(), &sim).unwrap();
    let (kept, rep) = load_survey(&files.survey).unwrap();
    assert_eq!(
        kept.len() + rep.dropped_mode + rep.dropped_dont_know,
        sim.survey.len()
    );
    let means = region_means(&kept, 10);
    assert!(!means.is_empty());
    assert!(means
        .iter()
        .all(|g| (0.0..=90.0).contains(&g.raw) && g.se > 0.0));
}

#[test]
fn ladder_runs_on_simulated_sample() {
    let sim = small();
    let ds = Dataset::from_sim(&sim);
    let pc = PipelineConfig {
        filter: short_filter(),
        ..PipelineConfig::default()
    };
    let run = run_target(&ds, &pc).unwrap();
    assert_eq!(run.radius_m, 60.0);
    assert!(run.day.rows.len() > sim.n_voters / 2);
    let fits = table_ladder(&run.day.rows, DepVar::Wait).unwrap();
    assert_eq!(fits.len(), 6);
    for f in &fits {
        assert!(
            f.coef_of("frac_black").is_some_and(f64::is_finite),
            "{}",
            f.label
        );
        assert!(f.n == run.day.rows.len());
    }
    assert!(fits[0].names.first().is_some_and(|n| n == "_cons"));
    assert!(fits[3].absorbed.contains(&"state".to_string()));
}

#[test]
fn cr1_scales_cr0_by_small_sample_factor() {
    let sim = small();
    let ds = Dataset::from_sim(&sim);
    let pc = PipelineConfig {
        filter: short_filter(),
        ..PipelineConfig::default()
    };
    let rows = run_target(&ds, &pc).unwrap().day.rows;
    let cr1 = table_ladder_with(&rows, DepVar::Wait, Vce::Cr1).unwrap();
    let cr0 = table_ladder_with(&rows, DepVar::Wait, Vce::Cr0).unwrap();
    for (a, b) in cr1.iter().zip(&cr0) {
        assert_eq!(a.coef, b.coef);
        let (g, n, k) = (a.n_clusters as f64, a.n as f64, a.k as f64);
        let factor = g / (g - 1.0) * (n - 1.0) / (n - k);
        let ratio = (a.se_of("frac_black").unwrap() / b.se_of("frac_black").unwrap()).powi(2);
        assert!(
            (ratio - factor).abs() < 1e-10 * factor,
            "{} {ratio} {factor}",
            a.label
        );
    }
    assert_eq!("CR0".parse::<Vce>(), Ok(Vce::Cr0));
    assert!("hc3".parse::<Vce>().is_err());
}
