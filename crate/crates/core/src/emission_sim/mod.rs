//! Seeded quantum-jump Monte Carlo of the molecule and the detection chain
//! that turns emitted photons into detector time tags.
//!
//! Every stochastic operation draws from its own ChaCha stream derived from
//! `SimConfig::seed`, so results are bit-identical for identical inputs.

mod chain;
mod cw;
mod detector;
mod filter;
mod pulsed;
mod stream;
pub mod tagfile;

pub use chain::{measure_count_rate, DetectionChain};
pub use cw::simulate_cw_stream;
pub use detector::{add_background, apply_detector, DetectorModel};
pub use filter::{apply_spectral_filter, SpectralWindow};
pub use pulsed::{
    simulate_pulsed_stream, simulate_pulsed_stream_with_stats, PulseStats, PulseTrain,
};
pub use stream::{Origin, PhotonStream, TagLabel};

use crate::photophysics::PhotophysicsError;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of tags a single stream may hold (about 2.4 GB of tags).
pub const MAX_STREAM_TAGS: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("stream needs about {requested} tags, capacity is {capacity}")]
    Capacity { requested: u64, capacity: u64 },
    #[error("time tags out of order at index {index}")]
    Unsorted { index: usize },
    #[error(transparent)]
    Photophysics(#[from] PhotophysicsError),
    #[error("tag file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seed, acquisition length and clock of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Acquisition time, s.
    pub duration: f64,
    /// Clock tick, ps.
    pub time_resolution: u32,
}

impl SimConfig {
    pub fn new(seed: u64, duration: f64) -> Self {
        SimConfig {
            seed,
            duration,
            time_resolution: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::Invalid(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        if self.time_resolution < 1 {
            return Err(SimError::Invalid("time_resolution must be >= 1 ps".into()));
        }
        if self.duration * 1e12 >= u64::MAX as f64 {
            return Err(SimError::Invalid(format!(
                "duration {} s overflows the ps clock",
                self.duration
            )));
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> u64 {
        (self.duration * 1e12).round() as u64
    }

    /// Same settings with a seed derived from this one and `index`.
    pub fn derive(&self, index: u64) -> SimConfig {
        SimConfig {
            seed: derive_seed(self.seed, index),
            ..*self
        }
    }

    /// Rounds an instant in ps down to the clock grid.
    #[inline]
    pub(crate) fn quantize(&self, t_ps: f64) -> u64 {
        let t = t_ps as u64;
        match self.time_resolution {
            1 => t,
            r => t - t % r as u64,
        }
    }
}

/// Stream identifiers, one per stochastic stage.
pub(crate) mod streams {
    pub const CW: u64 = 1;
    pub const PULSED: u64 = 2;
    pub const BACKGROUND: u64 = 3;
    pub const DETECTOR: u64 = 4;
    pub const BEAMSPLIT: u64 = 5;
    pub const SCAN: u64 = 6;
    pub const DERIVE: u64 = 7;
}

pub(crate) fn stage_rng(seed: u64, stage: u64, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stage << 40) | sub);
    rng
}

/// Child seed for sweeps and chunked runs.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stage_rng(seed, streams::DERIVE, index).next_u64()
}

fn check_capacity(expected: f64) -> Result<(), SimError> {
    // 6 sigma headroom over the Poisson expectation
    let need = expected + 6.0 * expected.sqrt();
    if need > MAX_STREAM_TAGS as f64 {
        return Err(SimError::Capacity {
            requested: need as u64,
            capacity: MAX_STREAM_TAGS as u64,
        });
    }
    Ok(())
}
