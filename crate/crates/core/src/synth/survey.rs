//! Synthetic survey responses drawn from simulated voters, and noisy copies
//! of region estimates.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GroundTruth, Role, ScenarioConfig};
use crate::cces::{Bucket, SurveyResponse};
use crate::ingest::PollingPlace;
use crate::shrink::GroupEstimate;

/// Multiplicative recall noise on the reported wait, log scale.
const RECALL_SIGMA: f64 = 0.3;
/// Respondents who did not vote in person on the target day.
const OTHER_MODE_SHARE: f64 = 0.1;

/// `survey_per_region` respondents per district, each recalling a randomly
/// chosen simulated voter's wait in that district.
pub fn responses(
    cfg: &ScenarioConfig,
    places: &[PollingPlace],
    truth: &[GroundTruth],
    rng: &mut ChaCha8Rng,
) -> Vec<SurveyResponse> {
    let district: BTreeMap<&str, &str> = places
        .iter()
        .map(|p| {
            (
                p.place_id.as_str(),
                p.district.as_deref().unwrap_or(p.state.as_str()),
            )
        })
        .collect();
    let mut waits: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in truth
        .iter()
        .filter(|t| t.role == Role::Voter && !t.contaminant)
    {
        if let Some(d) = district.get(t.place_id.as_str()) {
            waits.entry(d).or_default().push(t.true_wait_min);
        }
    }
    let recall = Normal::new(0.0, RECALL_SIGMA).expect("positive sd");
    let mut out = Vec::new();
    for (region, w) in &waits {
        for _ in 0..cfg.survey_per_region {
            let wait = w[rng.random_range(0..w.len())] * recall.sample(rng).exp();
            let other = rng.random_bool(OTHER_MODE_SHARE);
            let (in_person, election_day) = if other {
                let which = rng.random_bool(0.5);
                (which, !which)
            } else {
                (true, true)
            };
            out.push(SurveyResponse {
                respondent_id: format!("R{:06}", out.len() + 1),
                region: region.to_string(),
                bucket: Bucket::of_minutes(wait),
                in_person,
                election_day,
            });
        }
    }
    out
}

/// Estimates plus independent N(0, σ²) noise; standard errors widen to
/// `sqrt(se² + σ²)`.
pub fn noisy_copy(estimates: &[GroupEstimate], sigma: f64, seed: u64) -> Vec<GroupEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sd");
    estimates
        .iter()
        .map(|g| GroupEstimate {
            raw: g.raw + noise.sample(&mut rng),
            se: g.se.hypot(sigma),
            ..g.clone()
        })
        .collect()
}
