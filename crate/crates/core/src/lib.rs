//! Dwell-time measurement at geofenced polling places and estimation of
//! demographic disparities in those dwell times.
//!
//! The crate is organised as a pipeline:
//!
//! * [`geo`]: haversine distance, convex footprints, radius membership and a
//!   grid index over place centroids.
//! * [`ingest`] and [`calendar`]: CSV loaders for pings, places, block groups
//!   and the study calendar (UTC timestamps, per-state clock offsets).
//! * [`spells`]: per-device dwell spells with lower/upper time bounds.
//! * [`filters`]: the likely-voter filter chain with attrition accounting.
//! * [`radiusscan`]: unique-device counts by radius and the election-day
//!   differential curve used to pick the geofence radius.
//! * [`regress`]: OLS/LPM with absorbed fixed effects and cluster-robust
//!   standard errors, plus the table ladders built on top of it.
//! * [`shrink`]: empirical-Bayes shrinkage of per-region estimates.
//! * [`density`]: kernel densities, decile splits, hourly profiles.
//! * [`cces`]: survey bucket recoding and region-level correlation.
//! * [`synth`]: a discrete-event polling-place simulator that emits ping
//!   traces with known ground truth.
//! * [`pipeline`]: glue used by the command-line driver and the acceptance
//!   suite.

// `!(x > 0.0)` also rejects NaN; index loops mirror the triangular algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calendar;
pub mod cces;
pub mod config;
pub mod density;
pub mod error;
pub mod filters;
pub mod geo;
pub mod ingest;
pub mod pipeline;
pub mod radiusscan;
pub mod regress;
pub mod shrink;
pub mod spells;
pub mod stats;
pub mod synth;

pub use calendar::{StateClock, StudyCalendar};
pub use error::{Error, Result};
pub use filters::{AttritionReport, FilterConfig};
pub use geo::{Footprint, GeoPoint};
pub use ingest::{BlockGroup, DeviceId, Ping, PingRecord, PingTable, PollingPlace};
pub use regress::{FitResult, ModelSpec, VoterRow};
pub use shrink::GroupEstimate;
pub use spells::DwellSpell;
