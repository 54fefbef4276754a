//! Face forgery detection from facial blood-flow rhythms.
//!
//! The pipeline amplifies subtle color changes in a face video at several
//! strengths, summarizes 60 facial regions per frame into spatio-temporal
//! maps, turns every map column into an image patch and classifies the
//! resulting sequence with a small vision transformer. Per-map decisions
//! are aggregated into a video verdict.

pub mod config;
pub mod dataset;
pub mod decide;
pub mod error;
pub mod ingest;
pub mod magnify;
pub mod patchseq;
pub mod selftest;
pub mod stmap;
pub mod toy;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
