//! Polling-place simulator: multi-server FIFO queues per place, voter and
//! background device traces, and the ground truth needed to check every
//! downstream estimate.
//!
//! Each place draws from its own ChaCha8 streams (demographics and voters,
//! background, contamination), so output does not depend on thread count
//! and switching contamination on leaves voters unchanged.

pub mod output;
pub mod pings;
pub mod queue;
pub mod survey;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, LogNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::{StateClock, StudyCalendar};
use crate::cces::SurveyResponse;
use crate::config::{Config, ConfigError};
use crate::geo::{Footprint, GeoPoint};
use crate::ingest::{BlockGroup, DeviceId, Ping, PingTable, PollingPlace};
use pings::{disc_point, ring_point, DayPlan, Emitter, Episode, GapModel, Noise};

pub use output::{truth_join, write_outputs, SimFiles};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Voter,
    Worker,
    Passerby,
    Resident,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Voter => "voter",
            Role::Worker => "worker",
            Role::Passerby => "passerby",
            Role::Resident => "resident",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        [Role::Voter, Role::Worker, Role::Passerby, Role::Resident]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

/// One true presence interval of a device at a place.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub device_id: String,
    pub place_id: String,
    /// Local day of the arrival.
    pub day: NaiveDate,
    pub true_arrival: i64,
    pub true_departure: i64,
    pub true_wait_min: f64,
    pub role: Role,
    /// Non-voter injected through the contamination knob.
    pub contaminant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisparityRule {
    /// Extra minutes `frac_black·(delta + slope·volume)` spent before queueing.
    Additive,
    /// `round(resource_gap·frac_black)` fewer servers.
    Resource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub target_day: NaiveDate,
    /// Simulated days on each side of the target day.
    pub placebo_days: u32,
    pub n_places: usize,
    pub n_states: usize,
    pub counties_per_state: usize,
    pub voters_per_place: f64,
    /// Voter count scales with `(volume / median volume)^elasticity`.
    pub voters_volume_elasticity: f64,
    pub open_hour: u8,
    pub close_hour: u8,
    /// Odd-numbered states open an hour earlier.
    pub stagger_open: bool,
    /// Arrival weight by local clock hour, 24 entries.
    pub arrival_weights: Vec<f64>,
    pub service_median_min: f64,
    pub service_sigma: f64,
    pub servers_per_place: usize,
    pub disparity_rule: DisparityRule,
    pub delta_min: f64,
    pub delta_volume_slope: f64,
    pub resource_gap: f64,
    /// Extra minutes times the county's mean black share.
    pub county_confound_min: f64,
    /// Extra minutes per thousand registered voters, for everyone.
    pub volume_effect_min: f64,
    pub abandonment_rate: f64,
    pub ping_gap_median_s: f64,
    pub ping_gap_sigma: f64,
    pub periodic_share: f64,
    pub periodic_gap_s: i64,
    pub gps_noise_m: f64,
    pub noise_clip_sd: f64,
    pub queue_extent_m: f64,
    /// Circumradius of the octagonal building footprint.
    pub building_radius_m: f64,
    /// Devices whose daily coverage is too short for the consistency rule.
    pub sparse_share: f64,
    pub dense_pad_min: f64,
    pub passersby_per_place: f64,
    pub dropin_prob: f64,
    pub dropin_median_min: f64,
    pub workers_per_place: usize,
    pub residents_per_place: usize,
    pub resident_visit_prob: f64,
    /// Drop-in non-voters on the target day, as a share of voters.
    pub contamination_rate: f64,
    pub contamination_median_min: f64,
    pub survey_per_region: usize,
    pub android_share: f64,
    pub registered_median_k: f64,
    pub registered_sigma: f64,
    /// Mean block-group composition: white, black, asian, hispanic, other.
    pub race_mean: [f64; 5],
    pub county_concentration: f64,
    pub place_concentration: f64,
}

/// Bimodal: a morning peak nearly twice the midday level, an evening rise.
pub const DEFAULT_ARRIVAL_WEIGHTS: [f64; 24] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.6, 2.0, 1.6, 1.2, 1.0, 1.0, 1.0, 1.0, 1.1, 1.3, 1.5, 1.8, 1.6,
    1.2, 1.0, 0.0, 0.0, 0.0,
];

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 20161108,
            target_day: NaiveDate::from_ymd_opt(2016, 11, 8).expect("valid date"),
            placebo_days: 7,
            n_places: 100,
            n_states: 5,
            counties_per_state: 4,
            voters_per_place: 100.0,
            voters_volume_elasticity: 0.0,
            open_hour: 7,
            close_hour: 19,
            stagger_open: true,
            arrival_weights: DEFAULT_ARRIVAL_WEIGHTS.to_vec(),
            service_median_min: 8.0,
            service_sigma: 0.4,
            servers_per_place: 3,
            disparity_rule: DisparityRule::Additive,
            delta_min: 5.0,
            delta_volume_slope: 0.0,
            resource_gap: 0.0,
            county_confound_min: 0.0,
            volume_effect_min: 0.0,
            abandonment_rate: 0.0,
            ping_gap_median_s: 48.0,
            ping_gap_sigma: 0.5,
            periodic_share: 0.15,
            periodic_gap_s: 300,
            gps_noise_m: 5.0,
            noise_clip_sd: 3.0,
            queue_extent_m: 60.0,
            building_radius_m: 45.0,
            sparse_share: 0.1,
            dense_pad_min: 20.0,
            passersby_per_place: 2.0,
            dropin_prob: 0.3,
            dropin_median_min: 4.0,
            workers_per_place: 2,
            residents_per_place: 2,
            resident_visit_prob: 0.4,
            contamination_rate: 0.0,
            contamination_median_min: 10.0,
            survey_per_region: 300,
            android_share: 0.5,
            registered_median_k: 2.45,
            registered_sigma: 0.6,
            race_mean: [0.70, 0.11, 0.05, 0.11, 0.03],
            county_concentration: 3.0,
            place_concentration: 3.0,
        }
    }
}

impl ScenarioConfig {
    /// Reads `seed`, `study.target_day` and `sim.*` keys over the defaults.
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let d = ScenarioConfig::default();
        let rule = match cfg.get_str("sim.disparity_rule").unwrap_or("additive") {
            "additive" => DisparityRule::Additive,
            "resource" => DisparityRule::Resource,
            other => {
                return Err(ConfigError::InvalidValue {
                    key: "sim.disparity_rule".into(),
                    value: other.into(),
                    reason: "expected additive or resource".into(),
                })
            }
        };
        let weights = match cfg.get_list::<f64>("sim.arrival_weights")? {
            Some(w) => w,
            None => d.arrival_weights.clone(),
        };
        let race = match cfg.get_list::<f64>("sim.race_mean")? {
            Some(v) if v.len() == 5 => [v[0], v[1], v[2], v[3], v[4]],
            Some(v) => {
                return Err(ConfigError::InvalidValue {
                    key: "sim.race_mean".into(),
                    value: format!("{v:?}"),
                    reason: "expected 5 shares".into(),
                })
            }
            None => d.race_mean,
        };
        let s = ScenarioConfig {
            seed: cfg.get_or("seed", d.seed)?,
            target_day: cfg.get_or("study.target_day", d.target_day)?,
            placebo_days: cfg.get_or("sim.placebo_days", d.placebo_days)?,
            n_places: cfg.get_or("sim.n_places", d.n_places)?,
            n_states: cfg.get_or("sim.n_states", d.n_states)?,
            counties_per_state: cfg.get_or("sim.counties_per_state", d.counties_per_state)?,
            voters_per_place: cfg.get_or("sim.voters_per_place", d.voters_per_place)?,
            voters_volume_elasticity: cfg
                .get_or("sim.voters_volume_elasticity", d.voters_volume_elasticity)?,
            open_hour: cfg.get_or("sim.open_hour", d.open_hour)?,
            close_hour: cfg.get_or("sim.close_hour", d.close_hour)?,
            stagger_open: cfg.get_or("sim.stagger_open", d.stagger_open)?,
            arrival_weights: weights,
            service_median_min: cfg.get_or("sim.service_median_min", d.service_median_min)?,
            service_sigma: cfg.get_or("sim.service_sigma", d.service_sigma)?,
            servers_per_place: cfg.get_or("sim.servers_per_place", d.servers_per_place)?,
            disparity_rule: rule,
            delta_min: cfg.get_or("sim.delta_min", d.delta_min)?,
            delta_volume_slope: cfg.get_or("sim.delta_volume_slope", d.delta_volume_slope)?,
            resource_gap: cfg.get_or("sim.resource_gap", d.resource_gap)?,
            county_confound_min: cfg.get_or("sim.county_confound_min", d.county_confound_min)?,
            volume_effect_min: cfg.get_or("sim.volume_effect_min", d.volume_effect_min)?,
            abandonment_rate: cfg.get_or("sim.abandonment_rate", d.abandonment_rate)?,
            ping_gap_median_s: cfg.get_or("sim.ping_gap_median_s", d.ping_gap_median_s)?,
            ping_gap_sigma: cfg.get_or("sim.ping_gap_sigma", d.ping_gap_sigma)?,
            periodic_share: cfg.get_or("sim.periodic_share", d.periodic_share)?,
            periodic_gap_s: cfg.get_or("sim.periodic_gap_s", d.periodic_gap_s)?,
            gps_noise_m: cfg.get_or("sim.gps_noise_m", d.gps_noise_m)?,
            noise_clip_sd: cfg.get_or("sim.noise_clip_sd", d.noise_clip_sd)?,
            queue_extent_m: cfg.get_or("sim.queue_extent_m", d.queue_extent_m)?,
            building_radius_m: cfg.get_or("sim.building_radius_m", d.building_radius_m)?,
            sparse_share: cfg.get_or("sim.sparse_share", d.sparse_share)?,
            dense_pad_min: cfg.get_or("sim.dense_pad_min", d.dense_pad_min)?,
            passersby_per_place: cfg.get_or("sim.passersby_per_place", d.passersby_per_place)?,
            dropin_prob: cfg.get_or("sim.dropin_prob", d.dropin_prob)?,
            dropin_median_min: cfg.get_or("sim.dropin_median_min", d.dropin_median_min)?,
            workers_per_place: cfg.get_or("sim.workers_per_place", d.workers_per_place)?,
            residents_per_place: cfg.get_or("sim.residents_per_place", d.residents_per_place)?,
            resident_visit_prob: cfg.get_or("sim.resident_visit_prob", d.resident_visit_prob)?,
            contamination_rate: cfg.get_or("sim.contamination_rate", d.contamination_rate)?,
            contamination_median_min: cfg
                .get_or("sim.contamination_median_min", d.contamination_median_min)?,
            survey_per_region: cfg.get_or("sim.survey_per_region", d.survey_per_region)?,
            android_share: cfg.get_or("sim.android_share", d.android_share)?,
            registered_median_k: cfg.get_or("sim.registered_median_k", d.registered_median_k)?,
            registered_sigma: cfg.get_or("sim.registered_sigma", d.registered_sigma)?,
            race_mean: race,
            county_concentration: cfg.get_or("sim.county_concentration", d.county_concentration)?,
            place_concentration: cfg.get_or("sim.place_concentration", d.place_concentration)?,
        };
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigInvalid(m.to_string()));
        let share = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_places == 0 || self.n_states == 0 || self.counties_per_state == 0 {
            return bad("need at least one place, state and county");
        }
        if self.n_places >= 1 << 24 {
            return bad("too many places");
        }
        if self.open_hour < 2 || self.open_hour >= self.close_hour || self.close_hour > 22 {
            return bad("need 2 <= open_hour < close_hour <= 22");
        }
        if self.arrival_weights.len() != 24 || self.arrival_weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("arrival_weights needs 24 non-negative entries");
        }
        let earliest = self.open_hour - u8::from(self.stagger_open);
        if self.arrival_weights[earliest as usize..self.close_hour as usize]
            .iter()
            .sum::<f64>()
            <= 0.0
            || self.arrival_weights[self.open_hour as usize..self.close_hour as usize]
                .iter()
                .sum::<f64>()
                <= 0.0
        {
            return bad("arrival_weights are zero over the opening hours");
        }
        let positive = [
            self.service_median_min,
            self.ping_gap_median_s,
            self.ping_gap_sigma,
            self.queue_extent_m,
            self.building_radius_m,
            self.dropin_median_min,
            self.contamination_median_min,
            self.registered_median_k,
            self.county_concentration,
            self.place_concentration,
            self.noise_clip_sd,
        ];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return bad("medians, spreads, radii and concentrations must be positive");
        }
        if !(self.service_sigma >= 0.0 && self.registered_sigma >= 0.0 && self.gps_noise_m >= 0.0) {
            return bad("spreads must be non-negative");
        }
        if self.periodic_gap_s <= 0 || self.servers_per_place == 0 {
            return bad("periodic gap and server count must be positive");
        }
        if !(self.voters_per_place >= 0.0
            && self.passersby_per_place >= 0.0
            && self.dense_pad_min >= 0.0)
        {
            return bad("counts must be non-negative");
        }
        if ![
            self.periodic_share,
            self.sparse_share,
            self.dropin_prob,
            self.resident_visit_prob,
            self.abandonment_rate,
            self.android_share,
        ]
        .into_iter()
        .all(share)
        {
            return bad("shares and probabilities must lie in [0, 1]");
        }
        if !(self.contamination_rate >= 0.0) {
            return bad("contamination_rate must be non-negative");
        }
        let total: f64 = self.race_mean.iter().sum();
        if self.race_mean.iter().any(|x| !(*x > 0.0)) || (total - 1.0).abs() > 1e-6 {
            return bad("race_mean must be positive and sum to 1");
        }
        if self.building_radius_m > self.queue_extent_m {
            return bad("building_radius_m exceeds queue_extent_m");
        }
        Ok(())
    }

    /// Clock for state number `s`.
    pub fn state_clock(&self, s: usize) -> StateClock {
        const OFFSETS: [i32; 4] = [-5, -6, -7, -8];
        StateClock {
            utc_offset_h: OFFSETS[s % 4],
            open_hour: self.open_hour - u8::from(self.stagger_open && s % 2 == 1),
            close_hour: self.close_hour,
        }
    }

    pub fn calendar(&self) -> StudyCalendar {
        let mut cal = StudyCalendar::new(self.target_day);
        cal.pre_days = self.placebo_days;
        cal.post_days = self.placebo_days;
        for s in 0..self.n_states {
            *cal.clock_mut(&state_id(s)) = self.state_clock(s);
        }
        cal
    }
}

fn state_id(s: usize) -> String {
    format!("S{:02}", s + 1)
}

/// Everything the simulator produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub pings: PingTable,
    pub places: Vec<PollingPlace>,
    pub blockgroups: BTreeMap<String, BlockGroup>,
    pub truth: Vec<GroundTruth>,
    pub devices: BTreeMap<String, bool>,
    pub survey: Vec<SurveyResponse>,
    pub calendar: StudyCalendar,
    /// Mean black share of each place's county, by place index.
    pub county_black_share: Vec<f64>,
    /// Voters actually simulated.
    pub n_voters: usize,
}

const STREAM_GLOBAL: u64 = 0;
const STREAM_SURVEY: u64 = 1;

fn place_stream(k: usize, which: u64) -> u64 {
    // Three streams per place, after the global ones.
    2 + 3 * k as u64 + which
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Opaque, collision-free device name: a bijection of the packed key.
fn device_name(seed: u64, kind: u64, place: usize, day: usize, k: usize) -> String {
    let packed =
        (kind << 56) | ((place as u64) << 32) | ((day as u64) << 24) | (k as u64 & 0xFF_FFFF);
    format!("d{:016x}", splitmix64(packed ^ splitmix64(seed)))
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|d| d / total).collect()
    } else {
        let n = alpha.len() as f64;
        vec![1.0 / n; alpha.len()]
    }
}

fn octagon(center: GeoPoint, circumradius: f64, rotation: f64) -> Footprint {
    let vs: Vec<GeoPoint> = (0..8)
        .map(|i| {
            let th = rotation + i as f64 * PI / 4.0;
            center
                .offset(circumradius * th.cos(), circumradius * th.sin())
                .expect("footprint in range")
        })
        .collect();
    Footprint::new(vs).expect("regular octagon is convex")
}

fn lognormal_min(rng: &mut ChaCha8Rng, median_min: f64, sigma: f64) -> i64 {
    let d = LogNormal::new((median_min * 60.0).ln(), sigma).expect("finite lognormal");
    (d.sample(rng).round() as i64).max(1)
}

/// Per-device emission traits.
struct Profile {
    periodic: bool,
    sparse: bool,
    android: bool,
}

/// Local place frame and emission helpers for one place.
struct PlaceCtx<'a> {
    cfg: &'a ScenarioConfig,
    k: usize,
    place: &'a PollingPlace,
    clock: StateClock,
    days: &'a [NaiveDate],
    gaps: &'a GapModel,
}

struct PlaceSim {
    names: Vec<String>,
    pings: Vec<Ping>,
    truth: Vec<GroundTruth>,
    devices: Vec<(String, bool)>,
    voters: usize,
}

impl PlaceSim {
    fn new_device(&mut self, name: String, android: bool) -> DeviceId {
        self.names.push(name.clone());
        self.devices.push((name, android));
        DeviceId(self.names.len() as u32 - 1)
    }
}

impl PlaceCtx<'_> {
    fn day_start(&self, day: NaiveDate) -> i64 {
        let midnight = day
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
            .timestamp();
        midnight - self.clock.utc_offset_h as i64 * 3600
    }

    fn emitter(&self) -> Emitter<'_> {
        Emitter {
            gaps: self.gaps,
            noise: Noise {
                sd_m: self.cfg.gps_noise_m,
                clip_sd: self.cfg.noise_clip_sd,
            },
            pad_s: (self.cfg.dense_pad_min * 60.0).round() as i64,
            centroid: self.place.centroid,
        }
    }

    fn profile(&self, rng: &mut ChaCha8Rng, allow_sparse: bool) -> Profile {
        Profile {
            periodic: rng.random_bool(self.cfg.periodic_share),
            sparse: allow_sparse && rng.random_bool(self.cfg.sparse_share),
            android: rng.random_bool(self.cfg.android_share),
        }
    }

    /// Heartbeat hours: a full waking day, or a short span around `anchor`.
    fn coverage(&self, rng: &mut ChaCha8Rng, sparse: bool, anchor_hour: u8) -> (u8, u8) {
        if sparse {
            let len = rng.random_range(3u8..=10);
            let from = anchor_hour.saturating_sub(rng.random_range(0..len));
            (from, (from + len).min(24))
        } else {
            (rng.random_range(5u8..=7), rng.random_range(20u8..=22))
        }
    }

    fn away(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        ring_point(rng, 300.0, 700.0)
    }

    /// Spot inside the building footprint.
    fn building_spot(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        disc_point(rng, self.cfg.building_radius_m * (PI / 8.0).cos())
    }

    fn truth(
        &self,
        name: &str,
        start: i64,
        end: i64,
        role: Role,
        contaminant: bool,
    ) -> GroundTruth {
        let local = start + self.clock.utc_offset_h as i64 * 3600;
        GroundTruth {
            device_id: name.to_string(),
            place_id: self.place.place_id.clone(),
            day: crate::calendar::day_of_local_seconds(local),
            true_arrival: start,
            true_departure: end,
            true_wait_min: (end - start) as f64 / 60.0,
            role,
            contaminant,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn emit_stay(
        &self,
        rng: &mut ChaCha8Rng,
        sim: &mut PlaceSim,
        dev: DeviceId,
        prof: &Profile,
        day: NaiveDate,
        episodes: Vec<Episode>,
    ) {
        let ds = self.day_start(day);
        let anchor = ((episodes[0].start() - ds) / 3600).clamp(0, 23) as u8;
        let plan = DayPlan {
            day_start_utc: ds,
            coverage: self.coverage(rng, prof.sparse, anchor),
            episodes,
            away: self.away(rng),
        };
        self.emitter()
            .emit(rng, dev, prof.periodic, &plan, &mut sim.pings);
    }

    fn target_index(&self) -> usize {
        self.days
            .iter()
            .position(|d| *d == self.cfg.target_day)
            .expect("target day simulated")
    }

    fn voters(&self, rng: &mut ChaCha8Rng, sim: &mut PlaceSim, frac_black: f64, county_black: f64) {
        let cfg = self.cfg;
        let volume = self
            .place
            .registered_voters_k
            .unwrap_or(cfg.registered_median_k);
        let n = (cfg.voters_per_place
            * (volume / cfg.registered_median_k).powf(cfg.voters_volume_elasticity))
        .round() as usize;
        let day = cfg.target_day;
        let ds = self.day_start(day);
        let hours: Vec<u8> = (self.clock.open_hour..self.clock.close_hour).collect();
        let weights: Vec<f64> = hours
            .iter()
            .map(|h| cfg.arrival_weights[*h as usize])
            .collect();
        let total_w: f64 = weights.iter().sum();
        let extra_min = match cfg.disparity_rule {
            DisparityRule::Additive => {
                frac_black * (cfg.delta_min + cfg.delta_volume_slope * volume)
            }
            DisparityRule::Resource => 0.0,
        } + cfg.county_confound_min * county_black
            + cfg.volume_effect_min * volume;
        let extra_s = (extra_min * 60.0).round().max(0.0) as i64;
        let servers = match cfg.disparity_rule {
            DisparityRule::Additive => cfg.servers_per_place,
            DisparityRule::Resource => {
                let cut = (cfg.resource_gap * frac_black).round() as usize;
                cfg.servers_per_place.saturating_sub(cut).max(1)
            }
        };

        struct Draw {
            arrival: i64,
            service: i64,
            abandon: Option<i64>,
            spot: (f64, f64),
            prof: Profile,
        }
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.random::<f64>() * total_w;
            let mut h = hours[hours.len() - 1];
            for (hh, w) in hours.iter().zip(&weights) {
                if u < *w {
                    h = *hh;
                    break;
                }
                u -= w;
            }
            let arrival = ds + h as i64 * 3600 + rng.random_range(0..3600);
            let service = lognormal_min(rng, cfg.service_median_min, cfg.service_sigma);
            let abandon = rng
                .random_bool(cfg.abandonment_rate)
                .then(|| rng.random_range(60..=300));
            let spot = disc_point(rng, cfg.queue_extent_m - self.emitter().noise.max_m() - 0.5);
            let prof = self.profile(rng, true);
            draws.push(Draw {
                arrival,
                service,
                abandon,
                spot,
                prof,
            });
        }
        // Abandoning voters never reach a server.
        let queued: Vec<usize> = (0..n).filter(|&i| draws[i].abandon.is_none()).collect();
        let q_arr: Vec<i64> = queued.iter().map(|&i| draws[i].arrival + extra_s).collect();
        let q_svc: Vec<i64> = queued.iter().map(|&i| draws[i].service).collect();
        let served = queue::serve(&q_arr, &q_svc, servers);
        let mut departure = vec![0i64; n];
        for (j, &i) in queued.iter().enumerate() {
            departure[i] = served[j].departure;
        }
        for (i, d) in draws.iter().enumerate() {
            if let Some(a) = d.abandon {
                departure[i] = d.arrival + a;
            }
        }
        let day_idx = self.target_index();
        for (i, d) in draws.iter().enumerate() {
            let name = device_name(cfg.seed, 0, self.k, day_idx, i);
            let dev = sim.new_device(name.clone(), d.prof.android);
            let ep = Episode::Stay {
                start: d.arrival,
                end: departure[i],
                at: d.spot,
            };
            self.emit_stay(rng, sim, dev, &d.prof, day, vec![ep]);
            sim.truth
                .push(self.truth(&name, d.arrival, departure[i], Role::Voter, false));
        }
        sim.voters = n;
    }

    fn background(&self, rng: &mut ChaCha8Rng, sim: &mut PlaceSim) {
        let cfg = self.cfg;
        let target = self.target_index();
        // Poll workers: the whole target day inside the building.
        for w in 0..cfg.workers_per_place {
            let name = device_name(cfg.seed, 1, self.k, target, w);
            let prof = self.profile(rng, false);
            let dev = sim.new_device(name.clone(), prof.android);
            let ds = self.day_start(cfg.target_day);
            let start = ds + (self.clock.open_hour as i64 - 1) * 3600 - rng.random_range(0..1800);
            let end = ds + (self.clock.close_hour as i64 + 1) * 3600 + rng.random_range(0..1800);
            let ep = Episode::Stay {
                start,
                end,
                at: self.building_spot(rng),
            };
            self.emit_stay(rng, sim, dev, &prof, cfg.target_day, vec![ep]);
            sim.truth
                .push(self.truth(&name, start, end, Role::Worker, false));
        }
        // Residents: recurring visits on any study day.
        for r in 0..cfg.residents_per_place {
            let name = device_name(cfg.seed, 3, self.k, 0, r);
            let prof = self.profile(rng, false);
            let dev = sim.new_device(name.clone(), prof.android);
            for &day in self.days {
                if !rng.random_bool(cfg.resident_visit_prob) {
                    continue;
                }
                let ds = self.day_start(day);
                let start = ds + rng.random_range(8 * 3600..18 * 3600);
                let end = start + lognormal_min(rng, 45.0, 0.5);
                let ep = Episode::Stay {
                    start,
                    end,
                    at: self.building_spot(rng),
                };
                self.emit_stay(rng, sim, dev, &prof, day, vec![ep]);
                sim.truth
                    .push(self.truth(&name, start, end, Role::Resident, false));
            }
        }
        // Passersby: fresh devices each day, one transit or a short drop-in.
        for (di, &day) in self.days.iter().enumerate() {
            let whole = cfg.passersby_per_place.floor();
            let n = whole as usize + usize::from(rng.random_bool(cfg.passersby_per_place - whole));
            let ds = self.day_start(day);
            for p in 0..n {
                let name = device_name(cfg.seed, 2, self.k, di, p);
                let prof = self.profile(rng, true);
                let dev = sim.new_device(name.clone(), prof.android);
                let start = ds + rng.random_range(7 * 3600..20 * 3600);
                let ep = if rng.random_bool(cfg.dropin_prob) {
                    Episode::Stay {
                        start,
                        end: start + lognormal_min(rng, cfg.dropin_median_min, 0.5),
                        at: self.building_spot(rng),
                    }
                } else {
                    let offset = rng.random_range(0.0..80.0);
                    let th = rng.random::<f64>() * std::f64::consts::TAU;
                    let speed: f64 = rng.random_range(1.0..1.6);
                    let (ux, uy) = (th.cos(), th.sin());
                    let (nx, ny) = (-uy * offset, ux * offset);
                    Episode::Transit {
                        start,
                        end: start + (300.0 / speed).round() as i64,
                        from: (nx - 150.0 * ux, ny - 150.0 * uy),
                        to: (nx + 150.0 * ux, ny + 150.0 * uy),
                    }
                };
                self.emit_stay(rng, sim, dev, &prof, day, vec![ep]);
                sim.truth
                    .push(self.truth(&name, ep.start(), ep.end(), Role::Passerby, false));
            }
        }
    }

    fn contamination(&self, rng: &mut ChaCha8Rng, sim: &mut PlaceSim) {
        let cfg = self.cfg;
        let expected = cfg.contamination_rate * sim.voters as f64;
        let whole = expected.floor();
        let n = whole as usize + usize::from(rng.random_bool((expected - whole).clamp(0.0, 1.0)));
        let target = self.target_index();
        let ds = self.day_start(cfg.target_day);
        for c in 0..n {
            let name = device_name(cfg.seed, 4, self.k, target, c);
            let prof = self.profile(rng, false);
            let dev = sim.new_device(name.clone(), prof.android);
            let start = ds
                + rng.random_range(
                    self.clock.open_hour as i64 * 3600..self.clock.close_hour as i64 * 3600,
                );
            let end = start + lognormal_min(rng, cfg.contamination_median_min, 0.5);
            let ep = Episode::Stay {
                start,
                end,
                at: self.building_spot(rng),
            };
            self.emit_stay(rng, sim, dev, &prof, cfg.target_day, vec![ep]);
            sim.truth
                .push(self.truth(&name, start, end, Role::Passerby, true));
        }
    }
}

/// Runs the scenario.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimOutput, SynthError> {
    cfg.validate()?;
    let calendar = cfg.calendar();
    let days = calendar.study_days();
    let gaps = GapModel::calibrated(
        cfg.ping_gap_median_s,
        cfg.ping_gap_sigma,
        cfg.periodic_share,
        cfg.periodic_gap_s,
    );
    let n_counties = cfg.n_states * cfg.counties_per_state;

    let mut global = rng_for(cfg.seed, STREAM_GLOBAL);
    let alpha: Vec<f64> = cfg
        .race_mean
        .iter()
        .map(|m| m * cfg.county_concentration)
        .collect();
    let county_comp: Vec<Vec<f64>> = (0..n_counties)
        .map(|_| dirichlet(&mut global, &alpha))
        .collect();
    let rotations: Vec<f64> = (0..cfg.n_places)
        .map(|_| global.random::<f64>() * PI / 4.0)
        .collect();

    // Places and block groups.
    let mut places = Vec::with_capacity(cfg.n_places);
    let mut blockgroups = BTreeMap::new();
    let mut county_black = Vec::with_capacity(cfg.n_places);
    for k in 0..cfg.n_places {
        let county = k % n_counties;
        let s = county / cfg.counties_per_state;
        let c_local = county % cfg.counties_per_state;
        let j = k / n_counties;
        let lat = 30.0 + 3.0 * (s / 4) as f64 + 0.5 * c_local as f64 + 0.02 * (j / 20) as f64;
        let lon = -110.0 + 5.0 * (s % 4) as f64 + 0.02 * (j % 20) as f64;
        let centroid =
            GeoPoint::new(lat, lon).map_err(|e| SynthError::ConfigInvalid(e.to_string()))?;
        let mut rng = rng_for(cfg.seed, place_stream(k, 0));
        let kappa: Vec<f64> = county_comp[county]
            .iter()
            .map(|c| (c * cfg.place_concentration).max(1e-3))
            .collect();
        let f = dirichlet(&mut rng, &kappa);
        let poverty = Beta::new(1.2, 9.7).expect("beta").sample(&mut rng);
        let population_k = LogNormal::new(1.7f64.ln(), 0.5)
            .expect("ln")
            .sample(&mut rng);
        let density_k = LogNormal::new(2.0f64.ln(), 1.0)
            .expect("ln")
            .sample(&mut rng);
        let registered = LogNormal::new(cfg.registered_median_k.ln(), cfg.registered_sigma)
            .expect("ln")
            .sample(&mut rng);
        let bg = format!("BG{:05}", k + 1);
        blockgroups.insert(
            bg.clone(),
            BlockGroup {
                id: bg.clone(),
                frac_white: f[0],
                frac_black: f[1],
                frac_asian: f[2],
                frac_hispanic: f[3],
                frac_other: f[4],
                frac_poverty: Some(poverty),
                population_k,
                pop_density_k: density_k,
            },
        );
        places.push(PollingPlace {
            place_id: format!("P{:05}", k + 1),
            centroid,
            footprint: Some(octagon(centroid, cfg.building_radius_m, rotations[k])),
            state: state_id(s),
            county: format!("{}-C{:02}", state_id(s), c_local + 1),
            district: Some(format!("{}-D{}", state_id(s), c_local / 2 + 1)),
            block_group: bg,
            registered_voters_k: Some(registered),
        });
        county_black.push(county_comp[county][1]);
    }

    let sims: Vec<PlaceSim> = (0..cfg.n_places)
        .into_par_iter()
        .map(|k| {
            let place = &places[k];
            let s = (k % n_counties) / cfg.counties_per_state;
            let ctx = PlaceCtx {
                cfg,
                k,
                place,
                clock: cfg.state_clock(s),
                days: &days,
                gaps: &gaps,
            };
            let mut sim = PlaceSim {
                names: Vec::new(),
                pings: Vec::new(),
                truth: Vec::new(),
                devices: Vec::new(),
                voters: 0,
            };
            let fb = blockgroups[&place.block_group].frac_black;
            // Stream 0 continues after this place's demographic draws.
            let mut main = rng_for(cfg.seed, place_stream(k, 0));
            for _ in 0..DEMOGRAPHIC_SKIP {
                main.random::<u64>();
            }
            ctx.voters(&mut main, &mut sim, fb, county_black[k]);
            ctx.background(&mut rng_for(cfg.seed, place_stream(k, 1)), &mut sim);
            if cfg.contamination_rate > 0.0 {
                ctx.contamination(&mut rng_for(cfg.seed, place_stream(k, 2)), &mut sim);
            }
            sim
        })
        .collect();

    let mut names = Vec::new();
    let mut all_pings = Vec::new();
    let mut truth = Vec::new();
    let mut devices = BTreeMap::new();
    let mut n_voters = 0;
    for sim in sims {
        let base = names.len() as u32;
        names.extend(sim.names);
        all_pings.extend(sim.pings.into_iter().map(|mut p| {
            p.device = DeviceId(p.device.0 + base);
            p
        }));
        truth.extend(sim.truth);
        devices.extend(sim.devices);
        n_voters += sim.voters;
    }
    let pings = PingTable::from_interned(names, all_pings);
    let survey = survey::responses(cfg, &places, &truth, &mut rng_for(cfg.seed, STREAM_SURVEY));
    Ok(SimOutput {
        pings,
        places,
        blockgroups,
        truth,
        devices,
        survey,
        calendar,
        county_black_share: county_black,
        n_voters,
    })
}

/// Offset separating voter draws from demographic draws on a place's main
/// stream; larger than the demographic draws consume.
const DEMOGRAPHIC_SKIP: usize = 64;

/// Study days covered by a scenario.
pub fn simulated_days(cfg: &ScenarioConfig) -> Vec<NaiveDate> {
    let p = cfg.placebo_days as i64;
    (-p..=p)
        .map(|k| cfg.target_day + Duration::days(k))
        .collect()
}
