use crate::photophysics::{LineKind, SpectralLine};
use serde::{Deserialize, Serialize};
use std::fmt;

use super::SimError;

/// Where a detected or emitted photon came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Origin {
    Zpl = 0,
    RedShifted = 1,
    Background = 2,
    Dark = 3,
}

impl Origin {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Origin> {
        match code {
            0 => Some(Origin::Zpl),
            1 => Some(Origin::RedShifted),
            2 => Some(Origin::Background),
            3 => Some(Origin::Dark),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Origin::Zpl => "ZPL",
            Origin::RedShifted => "RED_SHIFTED",
            Origin::Background => "BACKGROUND",
            Origin::Dark => "DARK",
        }
    }

    pub fn from_name(name: &str) -> Option<Origin> {
        match name {
            "ZPL" => Some(Origin::Zpl),
            "RED_SHIFTED" => Some(Origin::RedShifted),
            "BACKGROUND" => Some(Origin::Background),
            "DARK" => Some(Origin::Dark),
            _ => None,
        }
    }
}

impl From<LineKind> for Origin {
    fn from(kind: LineKind) -> Self {
        match kind {
            LineKind::Zpl => Origin::Zpl,
            LineKind::RedShifted => Origin::RedShifted,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-photon label: origin plus the emitting line, when known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TagLabel {
    pub origin: Origin,
    pub line: Option<u8>,
}

impl TagLabel {
    pub const BACKGROUND: TagLabel = TagLabel {
        origin: Origin::Background,
        line: None,
    };
    pub const DARK: TagLabel = TagLabel {
        origin: Origin::Dark,
        line: None,
    };
}

/// Ordered picosecond time tags of one channel.
///
/// Stored as parallel arrays so that the correlator can work on the bare
/// `&[u64]` times.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonStream {
    times: Vec<u64>,
    labels: Vec<TagLabel>,
    duration_ps: u64,
    resolution_ps: u32,
    channel: u8,
    lines: Vec<SpectralLine>,
}

impl PhotonStream {
    pub fn empty(duration_ps: u64, resolution_ps: u32, lines: Vec<SpectralLine>) -> Self {
        PhotonStream {
            times: Vec::new(),
            labels: Vec::new(),
            duration_ps,
            resolution_ps,
            channel: 0,
            lines,
        }
    }

    /// Builds a stream, checking ordering and the duration bound.
    pub fn from_parts(
        times: Vec<u64>,
        labels: Vec<TagLabel>,
        duration_ps: u64,
        resolution_ps: u32,
        lines: Vec<SpectralLine>,
    ) -> Result<Self, SimError> {
        if times.len() != labels.len() {
            return Err(SimError::Invalid(format!(
                "{} times but {} labels",
                times.len(),
                labels.len()
            )));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
            return Err(SimError::Unsorted { index: i + 1 });
        }
        if let Some(&last) = times.last() {
            if last >= duration_ps {
                return Err(SimError::Invalid(format!(
                    "tag at {last} ps lies outside duration {duration_ps} ps"
                )));
            }
        }
        if let Some(bad) = labels
            .iter()
            .filter_map(|l| l.line)
            .find(|&i| i as usize >= lines.len())
        {
            return Err(SimError::Invalid(format!(
                "line index {bad} has no spectral line"
            )));
        }
        Ok(PhotonStream {
            times,
            labels,
            duration_ps,
            resolution_ps,
            channel: 0,
            lines,
        })
    }

    /// Internal constructor for already-validated data.
    pub(crate) fn from_sorted(times: Vec<u64>, labels: Vec<TagLabel>, like: &PhotonStream) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        debug_assert_eq!(times.len(), labels.len());
        PhotonStream {
            times,
            labels,
            duration_ps: like.duration_ps,
            resolution_ps: like.resolution_ps,
            channel: like.channel,
            lines: like.lines.clone(),
        }
    }

    pub fn with_channel(mut self, channel: u8) -> Self {
        self.channel = channel;
        self
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }

    pub fn labels(&self) -> &[TagLabel] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, TagLabel)> + '_ {
        self.times.iter().copied().zip(self.labels.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    /// Acquisition time in seconds.
    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 * 1e-12
    }

    pub fn resolution_ps(&self) -> u32 {
        self.resolution_ps
    }

    pub fn channel(&self) -> u8 {
        self.channel
    }

    pub fn lines(&self) -> &[SpectralLine] {
        &self.lines
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.labels.iter().filter(|l| l.origin == origin).count()
    }

    /// Mean count rate over the acquisition, counts/s.
    pub fn rate(&self) -> f64 {
        self.len() as f64 / self.duration_s()
    }

    /// Smallest gap between consecutive tags, if there are at least two.
    pub fn min_gap(&self) -> Option<u64> {
        self.times.windows(2).map(|w| w[1] - w[0]).min()
    }

    /// Merges two streams of the same acquisition by time. Ties keep
    /// `self` first. Channel and line table come from `self`.
    pub fn merge(&self, other: &PhotonStream) -> PhotonStream {
        let (times, labels) = merge_sorted(&self.times, &self.labels, &other.times, &other.labels);
        let mut out = PhotonStream::from_sorted(times, labels, self);
        out.duration_ps = self.duration_ps.max(other.duration_ps);
        out
    }
}

pub(crate) fn merge_sorted(
    ta: &[u64],
    la: &[TagLabel],
    tb: &[u64],
    lb: &[TagLabel],
) -> (Vec<u64>, Vec<TagLabel>) {
    let mut times = Vec::with_capacity(ta.len() + tb.len());
    let mut labels = Vec::with_capacity(ta.len() + tb.len());
    let (mut i, mut j) = (0, 0);
    while i < ta.len() && j < tb.len() {
        if ta[i] <= tb[j] {
            times.push(ta[i]);
            labels.push(la[i]);
            i += 1;
        } else {
            times.push(tb[j]);
            labels.push(lb[j]);
            j += 1;
        }
    }
    times.extend_from_slice(&ta[i..]);
    labels.extend_from_slice(&la[i..]);
    times.extend_from_slice(&tb[j..]);
    labels.extend_from_slice(&lb[j..]);
    (times, labels)
}
