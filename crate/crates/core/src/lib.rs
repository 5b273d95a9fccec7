//! Cascading two-tier screening for small implanted devices on chest radiographs.
//!
//! Tier 1 proposes candidate boxes with a detector whose probability threshold is
//! lowered until every validation device is found. Tier 2 runs a multi-class
//! classifier over each candidate, labelling it with a device type or
//! suppressing it as background.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`geometry`]: box arithmetic, size/aspect filter, NMS, detection matching
//! - [`corpus`]: device registry, manifest model and I/O, synthetic radiographs
//! - [`curation`]: patient/exam splits, lateral eligibility, augmentation, balancing
//! - [`models`]: detector and classifier contracts, reference models, training
//! - [`cascade`]: tier-1/tier-2 composition and recall-constrained calibration
//! - [`metrics`]: precision/recall, PR and ROC curves, tier reports

pub mod cascade;
pub mod corpus;
pub mod curation;
pub mod error;
pub mod fsutil;
pub mod geometry;
pub mod metrics;
pub mod models;
pub mod seeds;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, MatchResult, ScoredBox};
