//! Ping emission: per-device gap regimes, clipped Gaussian position noise
//! and piecewise trajectories relative to a place centroid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::geo::GeoPoint;
use crate::ingest::{DeviceId, Ping};

/// Gaps between pings. A device is either periodic (fixed gap, random
/// phase) or draws lognormal gaps.
#[derive(Debug, Clone)]
pub struct GapModel {
    lognormal: LogNormal<f64>,
    pub lognormal_median_s: f64,
    pub sigma: f64,
    pub periodic_share: f64,
    pub periodic_s: i64,
}

impl GapModel {
    /// Chooses the lognormal median so that the median over all gaps
    /// emitted in a common time span equals `pooled_median_s`.
    pub fn calibrated(
        pooled_median_s: f64,
        sigma: f64,
        periodic_share: f64,
        periodic_s: i64,
    ) -> Self {
        let m = calibrate_median(pooled_median_s, sigma, periodic_share, periodic_s as f64);
        Self {
            lognormal: LogNormal::new(m.ln(), sigma).expect("finite lognormal parameters"),
            lognormal_median_s: m,
            sigma,
            periodic_share,
            periodic_s,
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng, periodic: bool) -> i64 {
        if periodic {
            self.periodic_s
        } else {
            (self.lognormal.sample(rng).round() as i64).max(1)
        }
    }
}

/// Pooled median of the two-regime mixture as a function of the lognormal
/// median `m`: periodic gaps make up a share of gaps proportional to the
/// share of devices over their gap length.
fn pooled_cdf(x: f64, m: f64, sigma: f64, w: f64, periodic_s: f64) -> f64 {
    let n = StdNormal::new(0.0, 1.0).expect("unit normal");
    let ln_mean = m * (0.5 * sigma * sigma).exp();
    let rate_p = w / periodic_s;
    let rate_l = (1.0 - w) / ln_mean;
    let p = rate_p / (rate_p + rate_l);
    let below_p = if x >= periodic_s { 1.0 } else { 0.0 };
    (1.0 - p) * n.cdf((x / m).ln() / sigma) + p * below_p
}

fn calibrate_median(target: f64, sigma: f64, w: f64, periodic_s: f64) -> f64 {
    if w <= 0.0 || target >= periodic_s {
        return target;
    }
    // The pooled CDF at `target` decreases in `m`.
    let (mut lo, mut hi) = (target / 20.0, target * 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pooled_cdf(target, mid, sigma, w, periodic_s) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Isotropic Gaussian noise in metres, resampled beyond `clip_sd` standard
/// deviations.
#[derive(Debug, Clone, Copy)]
pub struct Noise {
    pub sd_m: f64,
    pub clip_sd: f64,
}

impl Noise {
    pub fn max_m(&self) -> f64 {
        self.sd_m * self.clip_sd
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        if self.sd_m <= 0.0 {
            return (0.0, 0.0);
        }
        let n = Normal::new(0.0, self.sd_m).expect("positive sd");
        loop {
            let (e, s) = (n.sample(rng), n.sample(rng));
            if e.hypot(s) <= self.max_m() {
                return (e, s);
            }
        }
    }
}

/// Where a device is during one activity, in metres east/north of the
/// place centroid. Outside every episode the device is at its away point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Episode {
    Stay {
        start: i64,
        end: i64,
        at: (f64, f64),
    },
    Transit {
        start: i64,
        end: i64,
        from: (f64, f64),
        to: (f64, f64),
    },
}

impl Episode {
    pub fn start(&self) -> i64 {
        match *self {
            Episode::Stay { start, .. } | Episode::Transit { start, .. } => start,
        }
    }

    pub fn end(&self) -> i64 {
        match *self {
            Episode::Stay { end, .. } | Episode::Transit { end, .. } => end,
        }
    }

    fn position(&self, t: i64) -> (f64, f64) {
        match *self {
            Episode::Stay { at, .. } => at,
            Episode::Transit {
                start,
                end,
                from,
                to,
            } => {
                let f = if end > start {
                    (t - start) as f64 / (end - start) as f64
                } else {
                    0.0
                };
                (from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1))
            }
        }
    }
}

/// One device-day of activity.
#[derive(Debug, Clone)]
pub struct DayPlan {
    pub day_start_utc: i64,
    /// Local hours `[from, to)` with one heartbeat ping each.
    pub coverage: (u8, u8),
    pub episodes: Vec<Episode>,
    pub away: (f64, f64),
}

/// Shared emission settings.
pub struct Emitter<'a> {
    pub gaps: &'a GapModel,
    pub noise: Noise,
    pub pad_s: i64,
    pub centroid: GeoPoint,
}

impl Emitter<'_> {
    fn point(&self, rng: &mut ChaCha8Rng, at: (f64, f64)) -> GeoPoint {
        let (e, n) = self.noise.draw(rng);
        self.centroid
            .offset(at.0 + e, at.1 + n)
            .expect("synthetic offsets stay in range")
    }

    /// Dense pings over each padded episode window and hourly heartbeats
    /// elsewhere in the coverage span. Pings at `t` inside an episode's
    /// `[start, end]` are placed by that episode; all others at `away`.
    pub fn emit(
        &self,
        rng: &mut ChaCha8Rng,
        device: DeviceId,
        periodic: bool,
        plan: &DayPlan,
        out: &mut Vec<Ping>,
    ) {
        let mut windows: Vec<(i64, i64)> = plan
            .episodes
            .iter()
            .map(|e| (e.start() - self.pad_s, e.end() + self.pad_s))
            .collect();
        windows.sort_unstable();
        let mut merged: Vec<(i64, i64)> = Vec::with_capacity(windows.len());
        for w in windows {
            match merged.last_mut() {
                Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
                _ => merged.push(w),
            }
        }
        let position = |t: i64| {
            plan.episodes
                .iter()
                .find(|e| e.start() <= t && t <= e.end())
                .map_or(plan.away, |e| e.position(t))
        };
        for &(ws, we) in &merged {
            let first = self.gaps.draw(rng, periodic);
            let mut t = ws + rng.random_range(0..first.max(1));
            while t <= we {
                let at = position(t);
                out.push(Ping {
                    device,
                    t,
                    loc: self.point(rng, at),
                });
                t += self.gaps.draw(rng, periodic);
            }
        }
        for h in plan.coverage.0..plan.coverage.1 {
            let t = plan.day_start_utc + h as i64 * 3600 + rng.random_range(0..3600);
            if merged.iter().any(|&(ws, we)| ws <= t && t <= we) {
                continue;
            }
            out.push(Ping {
                device,
                t,
                loc: self.point(rng, plan.away),
            });
        }
    }
}

/// Uniform point in the disc of radius `r`.
pub fn disc_point(rng: &mut ChaCha8Rng, r: f64) -> (f64, f64) {
    let rho = r * rng.random::<f64>().sqrt();
    let th = rng.random::<f64>() * std::f64::consts::TAU;
    (rho * th.cos(), rho * th.sin())
}

/// Point at a uniform bearing and a distance uniform in `[lo, hi]`.
pub fn ring_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> (f64, f64) {
    let d = rng.random_range(lo..=hi);
    let th = rng.random::<f64>() * std::f64::consts::TAU;
    (d * th.cos(), d * th.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_m;
    use rand::SeedableRng;

    #[test]
    fn calibrated_pooled_median() {
        let g = GapModel::calibrated(48.0, 0.5, 0.15, 300);
        assert!(g.lognormal_median_s < 48.0);
        assert!((pooled_cdf(48.0, g.lognormal_median_s, 0.5, 0.15, 300.0) - 0.5).abs() < 1e-9);
        // Simulated: equal time per device, pooled gaps.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gaps = Vec::new();
        for d in 0..2000 {
            let periodic = d % 20 < 3;
            let mut t = 0;
            while t < 20_000 {
                let gap = g.draw(&mut rng, periodic);
                gaps.push(gap as f64);
                t += gap;
            }
        }
        let med = crate::stats::median(&gaps).unwrap();
        assert!((med - 48.0).abs() < 0.05 * 48.0, "median {med}");
    }

    #[test]
    fn noise_is_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Noise {
            sd_m: 5.0,
            clip_sd: 3.0,
        };
        assert!((0..10_000).all(|_| {
            let (e, s) = n.draw(&mut rng);
            e.hypot(s) <= 15.0
        }));
    }

    #[test]
    fn stay_pings_bracketed_by_away_pings() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gaps = GapModel::calibrated(48.0, 0.5, 0.15, 300);
        let c = GeoPoint::new(38.0, -100.0).unwrap();
        let em = Emitter {
            gaps: &gaps,
            noise: Noise {
                sd_m: 5.0,
                clip_sd: 3.0,
            },
            pad_s: 1200,
            centroid: c,
        };
        let plan = DayPlan {
            day_start_utc: 0,
            coverage: (6, 21),
            episodes: vec![Episode::Stay {
                start: 36_000,
                end: 36_600,
                at: (10.0, 0.0),
            }],
            away: (500.0, 0.0),
        };
        let mut out = Vec::new();
        em.emit(&mut rng, DeviceId(0), false, &plan, &mut out);
        out.sort_by_key(|p| p.t);
        for p in &out {
            let d = haversine_m(c, p.loc);
            if (36_000..=36_600).contains(&p.t) {
                assert!(d <= 25.0 + 1e-6);
            } else {
                assert!(d >= 480.0);
            }
        }
        let hours: std::collections::BTreeSet<i64> = out.iter().map(|p| p.t / 3600).collect();
        assert!(hours.len() >= 15);
    }
}
