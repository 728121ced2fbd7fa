//! Hanbury-Brown–Twiss chain: beamsplitter routing, coincidence histograms
//! and pulsed peak-area analysis.
//!
//! Histograms bin signed delays `t_stop − t_start` in ps. Bin edges are
//! `tau_min + k·bin_width`; a bin is closed on the edge nearer zero delay
//! and open on the far edge, so negating every delay maps bin contents onto
//! the mirrored bin whenever the edge set is symmetric.

mod correlate;
pub mod io;
mod peaks;

pub use correlate::{
    full_correlation_histogram, full_correlation_histogram_chunked, start_stop_histogram,
    start_stop_histogram_chunked, symmetric_start_stop_histogram,
};
pub use peaks::{peak_areas, Peak, PeakTable, DEFAULT_LATERAL_PEAKS};

use crate::emission_sim::{PhotonStream, TagLabel};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cw start-stop bin width, ps.
pub const DEFAULT_CW_BIN_PS: u64 = 512;
/// Default cw start-stop range, ps.
pub const DEFAULT_CW_TAU_MAX_PS: i64 = 100_000;
/// Default pulsed bin width, ps.
pub const DEFAULT_PULSED_BIN_PS: u64 = 1_000;
/// Default pulsed half range (five 16 MHz periods), ps.
pub const DEFAULT_PULSED_TAU_MAX_PS: i64 = 320_000;

#[derive(Debug, Error)]
pub enum CorrelatorError {
    #[error("{which} stream is not sorted at index {index}")]
    Unsorted { which: &'static str, index: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("histogram file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HistogramMode {
    StartStop,
    Full,
}

/// Binned delay counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoincidenceHistogram {
    pub bin_width: u64,
    pub tau_min: i64,
    pub tau_max: i64,
    pub counts: Vec<u64>,
    pub n_starts: u64,
    pub mode: HistogramMode,
}

impl CoincidenceHistogram {
    pub fn new(
        bin_width: u64,
        tau_min: i64,
        tau_max: i64,
        mode: HistogramMode,
    ) -> Result<Self, CorrelatorError> {
        if bin_width < 1 {
            return Err(CorrelatorError::Invalid("bin_width must be >= 1 ps".into()));
        }
        if tau_max <= tau_min {
            return Err(CorrelatorError::Invalid(format!(
                "tau_max {tau_max} must exceed tau_min {tau_min}"
            )));
        }
        let span = (tau_max as i128 - tau_min as i128) as u128;
        let n = span.div_ceil(bin_width as u128);
        if n > (1 << 28) {
            return Err(CorrelatorError::Invalid(format!("{n} bins is too many")));
        }
        Ok(CoincidenceHistogram {
            bin_width,
            tau_min,
            tau_max,
            counts: vec![0; n as usize],
            n_starts: 0,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin index of a delay, or `None` outside the range.
    #[inline]
    pub fn bin_index(&self, delay: i64) -> Option<usize> {
        let bw = self.bin_width as i64;
        if delay >= 0 {
            if delay < self.tau_min || delay >= self.tau_max {
                return None;
            }
            Some(((delay - self.tau_min) / bw) as usize)
        } else {
            if delay <= self.tau_min || delay > self.tau_max {
                return None;
            }
            let offset = delay - self.tau_min;
            Some(((offset + bw - 1) / bw - 1) as usize)
        }
    }

    /// Lower edge of bin `i`, ps.
    pub fn bin_start(&self, i: usize) -> i64 {
        self.tau_min + i as i64 * self.bin_width as i64
    }

    /// Center of bin `i`, ps. The last bin is truncated at `tau_max`.
    pub fn bin_center(&self, i: usize) -> f64 {
        let lo = self.bin_start(i);
        let hi = (lo + self.bin_width as i64).min(self.tau_max);
        0.5 * (lo as f64 + hi as f64)
    }

    /// Merges counts of a histogram with the same binning.
    pub fn accumulate(&mut self, other: &CoincidenceHistogram) -> Result<(), CorrelatorError> {
        if (self.bin_width, self.tau_min, self.tau_max, self.mode)
            != (other.bin_width, other.tau_min, other.tau_max, other.mode)
        {
            return Err(CorrelatorError::Invalid("histogram binning differs".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_starts += other.n_starts;
        Ok(())
    }
}

/// Routes every tag independently to output A (channel 0) with probability
/// `reflectance`, otherwise to B (channel 1).
pub fn beamsplit(
    stream: &PhotonStream,
    reflectance: f64,
    seed: u64,
) -> Result<(PhotonStream, PhotonStream), CorrelatorError> {
    if !(0.0..=1.0).contains(&reflectance) {
        return Err(CorrelatorError::Invalid(format!(
            "reflectance must lie in [0,1], got {reflectance}"
        )));
    }
    let mut rng = crate::emission_sim::stage_rng(
        seed,
        crate::emission_sim::streams::BEAMSPLIT,
        stream.channel() as u64,
    );
    let (mut ta, mut la): (Vec<u64>, Vec<TagLabel>) = (Vec::new(), Vec::new());
    let (mut tb, mut lb): (Vec<u64>, Vec<TagLabel>) = (Vec::new(), Vec::new());
    for (t, l) in stream.iter() {
        let to_a = reflectance >= 1.0 || (reflectance > 0.0 && rng.random::<f64>() < reflectance);
        if to_a {
            ta.push(t);
            la.push(l);
        } else {
            tb.push(t);
            lb.push(l);
        }
    }
    let a = PhotonStream::from_sorted(ta, la, stream).with_channel(0);
    let b = PhotonStream::from_sorted(tb, lb, stream).with_channel(1);
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission_sim::{simulate_cw_stream, SimConfig};
    use crate::photophysics::MoleculeModel;

    #[test]
    fn bin_index_is_mirror_symmetric() {
        let h = CoincidenceHistogram::new(10, -50, 50, HistogramMode::Full).unwrap();
        assert_eq!(h.len(), 10);
        for d in -49..50i64 {
            if d == 0 {
                continue;
            }
            let (i, j) = (h.bin_index(d).unwrap(), h.bin_index(-d).unwrap());
            assert_eq!(i + j, h.len() - 1, "delay {d}");
        }
        assert_eq!(h.bin_index(0), Some(5));
        assert_eq!(h.bin_index(50), None);
        assert_eq!(h.bin_index(-50), None);
        assert_eq!(h.bin_index(-1), Some(4));
        assert_eq!(h.bin_index(-9), Some(4));
        assert_eq!(h.bin_index(-10), Some(3));
        assert_eq!(h.bin_index(10), Some(6));
    }

    #[test]
    fn partial_last_bin() {
        let h = CoincidenceHistogram::new(512, 0, 1000, HistogramMode::StartStop).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.bin_index(999), Some(1));
        assert_eq!(h.bin_center(1), 756.0);
        assert!(CoincidenceHistogram::new(0, 0, 10, HistogramMode::Full).is_err());
        assert!(CoincidenceHistogram::new(1, 10, 10, HistogramMode::Full).is_err());
    }

    fn stream() -> PhotonStream {
        simulate_cw_stream(&MoleculeModel::default(), 1.0, &SimConfig::new(1, 1e-3)).unwrap()
    }

    #[test]
    fn beamsplit_edges() {
        let s = stream();
        let (a, b) = beamsplit(&s, 0.0, 1).unwrap();
        assert!(a.is_empty());
        assert_eq!(b.times(), s.times());
        let (a, b) = beamsplit(&s, 1.0, 1).unwrap();
        assert_eq!(a.times(), s.times());
        assert!(b.is_empty());
        assert!(beamsplit(&s, 1.5, 1).is_err());
    }

    #[test]
    fn beamsplit_is_binomial_partition() {
        let s = stream();
        let (a, b) = beamsplit(&s, 0.5, 9).unwrap();
        let n = s.len() as f64;
        assert_eq!(a.len() + b.len(), s.len());
        assert!((a.len() as f64 - 0.5 * n).abs() < 3.0 * (0.25 * n).sqrt());
        let merged = a.merge(&b);
        assert_eq!(merged.times(), s.times());
    }

    #[test]
    fn single_emitter_never_duplicates_a_photon() {
        let s = stream();
        let (a, b) = beamsplit(&s, 0.5, 3).unwrap();
        let mut j = 0;
        for &t in a.times() {
            while j < b.len() && b.times()[j] < t {
                j += 1;
            }
            assert!(j == b.len() || b.times()[j] != t);
        }
    }
}
