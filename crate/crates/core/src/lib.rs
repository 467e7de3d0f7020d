//! Synthetic echo video generation, privacy filtering and evaluation.

pub mod codec;
pub mod denoisers;
pub mod downstream;
pub mod echotoy;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod par;
pub mod privacy;
pub mod rng;
pub mod schedule;
pub mod stitcher;
pub mod video;

pub use error::{CoreError, Result};
