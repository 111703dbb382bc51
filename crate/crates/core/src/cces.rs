//! Survey wait-time buckets: recoding to minutes, loading with mode
//! restrictions, region means and region-level correlation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::ingest::{field, CsvFile, LoadReport};
use crate::shrink::GroupEstimate;
use crate::stats::{pearson, KahanSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcesError {
    #[error("unknown wait bucket `{0}`")]
    UnknownBucket(String),
    #[error("need at least 3 overlapping regions, got {0}")]
    InsufficientOverlap(usize),
    #[error("correlation undefined: one side has zero variance")]
    ZeroVariance,
}

/// Reported wait category, ordered by length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bucket {
    None,
    Lt10,
    B10to30,
    B31to60,
    Gt60,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [
        Bucket::None,
        Bucket::Lt10,
        Bucket::B10to30,
        Bucket::B31to60,
        Bucket::Gt60,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::None => "none",
            Bucket::Lt10 => "lt10",
            Bucket::B10to30 => "b10to30",
            Bucket::B31to60 => "b31to60",
            Bucket::Gt60 => "gt60",
        }
    }

    /// Category midpoint in minutes; the open top category is 90.
    pub fn minutes(self) -> f64 {
        match self {
            Bucket::None => 0.0,
            Bucket::Lt10 => 5.0,
            Bucket::B10to30 => 20.0,
            Bucket::B31to60 => 45.0,
            Bucket::Gt60 => 90.0,
        }
    }

    /// Bucket containing a wait of `m` minutes.
    pub fn of_minutes(m: f64) -> Bucket {
        if m <= 0.0 {
            Bucket::None
        } else if m < 10.0 {
            Bucket::Lt10
        } else if m <= 30.0 {
            Bucket::B10to30
        } else if m <= 60.0 {
            Bucket::B31to60
        } else {
            Bucket::Gt60
        }
    }
}

impl FromStr for Bucket {
    type Err = CcesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bucket::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CcesError::UnknownBucket(s.to_string()))
    }
}

pub fn recode(bucket: &str) -> Result<f64, CcesError> {
    bucket.parse::<Bucket>().map(Bucket::minutes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyResponse {
    pub respondent_id: String,
    pub region: String,
    pub bucket: Bucket,
    pub in_person: bool,
    pub election_day: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurveyReport {
    pub load: LoadReport,
    /// Not in person on election day.
    pub dropped_mode: usize,
    pub dropped_dont_know: usize,
}

pub const SURVEY_COLUMNS: [&str; 5] = [
    "respondent_id",
    "region",
    "bucket",
    "in_person",
    "election_day",
];

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Loads in-person election-day responses with a definite bucket.
pub fn load_survey(path: impl AsRef<Path>) -> crate::Result<(Vec<SurveyResponse>, SurveyReport)> {
    let mut file = CsvFile::open(path.as_ref(), &SURVEY_COLUMNS, &[])?;
    let cols: Vec<Option<usize>> = SURVEY_COLUMNS.iter().map(|c| file.col(c)).collect();
    let mut out = Vec::new();
    let mut report = SurveyReport::default();
    let (mut mode, mut dk) = (0, 0);
    file.for_each(&mut report.load, |rec, line, load| {
        let get = |i: usize| field(rec, cols[i]);
        let (Some(id), Some(region)) = (get(0), get(1)) else {
            load.skip(line, "missing respondent_id or region");
            return Ok(());
        };
        let (Some(ip), Some(ed)) = (get(3).and_then(parse_flag), get(4).and_then(parse_flag))
        else {
            load.skip(line, "bad mode flag");
            return Ok(());
        };
        let raw = get(2).unwrap_or("");
        let bucket = match raw.parse::<Bucket>() {
            Ok(b) => b,
            Err(_)
                if matches!(
                    raw.to_ascii_lowercase().as_str(),
                    "" | "dk" | "dont_know" | "don't know"
                ) =>
            {
                dk += 1;
                return Ok(());
            }
            Err(e) => {
                load.skip(line, e);
                return Ok(());
            }
        };
        if !(ip && ed) {
            mode += 1;
            return Ok(());
        }
        load.rows_loaded += 1;
        out.push(SurveyResponse {
            respondent_id: id.to_string(),
            region: region.to_string(),
            bucket,
            in_person: ip,
            election_day: ed,
        });
        Ok(())
    })?;
    report.dropped_mode = mode;
    report.dropped_dont_know = dk;
    Ok((out, report))
}

pub fn write_survey(path: impl AsRef<Path>, responses: &[SurveyResponse]) -> crate::Result<()> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{}", SURVEY_COLUMNS.join(",")).map_err(io)?;
    for r in responses {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.respondent_id,
            r.region,
            r.bucket.as_str(),
            u8::from(r.in_person),
            u8::from(r.election_day)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Recoded mean per region with SE `sd/√n`; regions with fewer than
/// `min_n` responses are left out.
pub fn region_means(responses: &[SurveyResponse], min_n: usize) -> Vec<GroupEstimate> {
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in responses {
        by.entry(&r.region).or_default().push(r.bucket.minutes());
    }
    by.into_iter()
        .filter(|(_, v)| v.len() >= min_n.max(2))
        .map(|(region, v)| {
            let n = v.len();
            let mean = v.iter().copied().collect::<KahanSum>().value() / n as f64;
            let sd = crate::stats::sample_sd(&v).unwrap_or(0.0);
            GroupEstimate {
                group_id: region.to_string(),
                raw: mean,
                se: sd / (n as f64).sqrt(),
                n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionCorrelation {
    pub r: f64,
    /// Regions in the intersection, sorted.
    pub regions: Vec<String>,
}

/// Pearson correlation of two region-keyed estimates over shared regions.
pub fn correlate_regions(
    pipeline: &[(String, f64)],
    survey: &[(String, f64)],
) -> Result<RegionCorrelation, CcesError> {
    let right: BTreeMap<&str, f64> = survey.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut pairs: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (k, v) in pipeline {
        if let Some(s) = right.get(k.as_str()) {
            if v.is_finite() && s.is_finite() {
                pairs.insert(k, (*v, *s));
            }
        }
    }
    if pairs.len() < 3 {
        return Err(CcesError::InsufficientOverlap(pairs.len()));
    }
    let xs: Vec<f64> = pairs.values().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.values().map(|p| p.1).collect();
    let r = pearson(&xs, &ys).ok_or(CcesError::ZeroVariance)?;
    Ok(RegionCorrelation {
        r,
        regions: pairs.keys().map(|s| s.to_string()).collect(),
    })
}
