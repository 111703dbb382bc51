//! Study calendar: the target day, its exclusion windows, and per-state
//! fixed UTC offsets and poll hours.
//!
//! All timestamps in the crate are UTC epoch seconds. Local clock time is
//! derived from a fixed offset per state for the whole study window.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, NaiveTime};

use crate::config::{Config, ConfigError};

/// Clock rules for one state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateClock {
    /// Hours added to UTC to obtain local time.
    pub utc_offset_h: i32,
    pub open_hour: u8,
    pub close_hour: u8,
}

impl Default for StateClock {
    fn default() -> Self {
        Self {
            utc_offset_h: 0,
            open_hour: 7,
            close_hour: 19,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCalendar {
    pub target_day: NaiveDate,
    pub pre_days: u32,
    pub post_days: u32,
    /// Days left out of "other days" comparisons (e.g. holidays).
    pub excluded_days: Vec<NaiveDate>,
    pub default_clock: StateClock,
    pub states: BTreeMap<String, StateClock>,
}

impl StudyCalendar {
    pub fn new(target_day: NaiveDate) -> Self {
        Self {
            target_day,
            pre_days: 7,
            post_days: 7,
            excluded_days: Vec::new(),
            default_clock: StateClock::default(),
            states: BTreeMap::new(),
        }
    }

    /// Reads `study.*`, `tz.<STATE>` and `hours.<STATE>=open-close` keys.
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let target: NaiveDate = cfg.require("study.target_day")?;
        let mut cal = StudyCalendar::new(target);
        cal.pre_days = cfg.get_or("study.pre_days", 7)?;
        cal.post_days = cfg.get_or("study.post_days", 7)?;
        cal.excluded_days = cfg.get_list("study.exclude_days")?.unwrap_or_default();
        cal.default_clock.utc_offset_h = cfg.get_or("tz.default", 0)?;
        if let Some(h) = cfg.get_str("hours.default") {
            let (o, c) = parse_hours("hours.default", h)?;
            cal.default_clock.open_hour = o;
            cal.default_clock.close_hour = c;
        }
        for (state, v) in cfg.section("tz") {
            if state == "default" {
                continue;
            }
            let off: i32 =
                v.parse()
                    .map_err(|e: std::num::ParseIntError| ConfigError::InvalidValue {
                        key: format!("tz.{state}"),
                        value: v.to_string(),
                        reason: e.to_string(),
                    })?;
            cal.clock_mut(state).utc_offset_h = off;
        }
        for (state, v) in cfg.section("hours") {
            if state == "default" {
                continue;
            }
            let (o, c) = parse_hours(&format!("hours.{state}"), v)?;
            let clock = cal.clock_mut(state);
            clock.open_hour = o;
            clock.close_hour = c;
        }
        Ok(cal)
    }

    pub fn clock_mut(&mut self, state: &str) -> &mut StateClock {
        let default = self.default_clock;
        self.states.entry(state.to_string()).or_insert(default)
    }

    pub fn clock(&self, state: &str) -> StateClock {
        self.states
            .get(state)
            .copied()
            .unwrap_or(self.default_clock)
    }

    pub fn local_seconds(&self, state: &str, t: i64) -> i64 {
        t + self.clock(state).utc_offset_h as i64 * 3600
    }

    pub fn local_day(&self, state: &str, t: i64) -> NaiveDate {
        day_of_local_seconds(self.local_seconds(state, t))
    }

    pub fn local_hour(&self, state: &str, t: i64) -> u8 {
        (self.local_seconds(state, t).rem_euclid(86_400) / 3600) as u8
    }

    /// UTC epoch second of local midnight starting `day` in `state`.
    pub fn day_start_utc(&self, state: &str, day: NaiveDate) -> i64 {
        let midnight = day.and_time(NaiveTime::MIN).and_utc().timestamp();
        midnight - self.clock(state).utc_offset_h as i64 * 3600
    }

    pub fn pre_window(&self) -> Vec<NaiveDate> {
        (1..=self.pre_days as i64)
            .rev()
            .map(|k| self.target_day - Duration::days(k))
            .collect()
    }

    pub fn post_window(&self) -> Vec<NaiveDate> {
        (1..=self.post_days as i64)
            .map(|k| self.target_day + Duration::days(k))
            .collect()
    }

    pub fn is_exclusion_day(&self, day: NaiveDate) -> bool {
        let d = (day - self.target_day).num_days();
        (d < 0 && -d <= self.pre_days as i64) || (d > 0 && d <= self.post_days as i64)
    }

    /// Every day from the start of the pre-window to the end of the post-window.
    pub fn study_days(&self) -> Vec<NaiveDate> {
        let mut days = self.pre_window();
        days.push(self.target_day);
        days.extend(self.post_window());
        days
    }

    /// Study days other than the target, minus the configured exclusions.
    pub fn other_days(&self) -> Vec<NaiveDate> {
        self.study_days()
            .into_iter()
            .filter(|d| *d != self.target_day && !self.excluded_days.contains(d))
            .collect()
    }

    /// UTC bounds `[start, end)` covering every study day in every state.
    pub fn utc_window(&self) -> (i64, i64) {
        let days = self.study_days();
        let first = days[0];
        let last = *days.last().unwrap();
        let offsets = self
            .states
            .values()
            .map(|c| c.utc_offset_h)
            .chain(std::iter::once(self.default_clock.utc_offset_h));
        let (mut lo, mut hi) = (i32::MAX, i32::MIN);
        for o in offsets {
            lo = lo.min(o);
            hi = hi.max(o);
        }
        let start = first.and_time(NaiveTime::MIN).and_utc().timestamp() - hi as i64 * 3600;
        let end = (last + Duration::days(1))
            .and_time(NaiveTime::MIN)
            .and_utc()
            .timestamp()
            - lo as i64 * 3600;
        (start, end)
    }

    /// Same clocks and window lengths, anchored on a different day.
    pub fn shifted(&self, day: NaiveDate) -> Self {
        Self {
            target_day: day,
            ..self.clone()
        }
    }
}

pub fn day_of_local_seconds(local: i64) -> NaiveDate {
    let days = local.div_euclid(86_400);
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + Duration::days(days)
}

fn parse_hours(key: &str, v: &str) -> Result<(u8, u8), ConfigError> {
    let bad = |reason: &str| ConfigError::InvalidValue {
        key: key.to_string(),
        value: v.to_string(),
        reason: reason.to_string(),
    };
    let (o, c) = v
        .split_once('-')
        .ok_or_else(|| bad("expected open-close"))?;
    let o: u8 = o.trim().parse().map_err(|_| bad("open hour"))?;
    let c: u8 = c.trim().parse().map_err(|_| bad("close hour"))?;
    if o >= c || c > 24 {
        return Err(bad("need open < close <= 24"));
    }
    Ok((o, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn windows_exclude_target() {
        let cal = StudyCalendar::new(d(2016, 11, 8));
        let pre = cal.pre_window();
        let post = cal.post_window();
        assert_eq!(pre.first(), Some(&d(2016, 11, 1)));
        assert_eq!(post.last(), Some(&d(2016, 11, 15)));
        assert!(!pre.contains(&cal.target_day) && !post.contains(&cal.target_day));
        assert_eq!(cal.study_days().len(), 15);
        assert_eq!(cal.other_days().len(), 14);
        assert!(cal.is_exclusion_day(d(2016, 11, 1)));
        assert!(!cal.is_exclusion_day(d(2016, 10, 31)));
        assert!(!cal.is_exclusion_day(cal.target_day));
    }

    #[test]
    fn local_clock_uses_offset() {
        let mut cal = StudyCalendar::new(d(2016, 11, 8));
        cal.clock_mut("NY").utc_offset_h = -5;
        // 2016-11-08T03:30:00Z is 22:30 on the 7th in New York.
        let t = d(2016, 11, 8)
            .and_hms_opt(3, 30, 0)
            .unwrap()
            .and_utc()
            .timestamp();
        assert_eq!(cal.local_day("NY", t), d(2016, 11, 7));
        assert_eq!(cal.local_hour("NY", t), 22);
        assert_eq!(cal.local_day("XX", t), d(2016, 11, 8));
        assert_eq!(cal.day_start_utc("NY", d(2016, 11, 8)), t + 90 * 60);
    }

    #[test]
    fn from_config_reads_tables() {
        let cfg = Config::parse(
            "study.target_day=2016-11-08\ntz.default=-5\ntz.CA=-8\nhours.CA=7-20\nstudy.exclude_days=2016-11-11",
        )
        .unwrap();
        let cal = StudyCalendar::from_config(&cfg).unwrap();
        assert_eq!(cal.clock("CA").utc_offset_h, -8);
        assert_eq!(cal.clock("CA").close_hour, 20);
        assert_eq!(cal.clock("NY").utc_offset_h, -5);
        assert_eq!(cal.other_days().len(), 13);
    }
}
