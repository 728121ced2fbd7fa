//! `ZPLT` time-tag files.
//!
//! Little-endian layout. A 16-byte header
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ZPLT"
//! 4       2     version (u16, currently 1)
//! 6       4     resolution_ps (u32)
//! 10      2     channel_count (u16)
//! 12      4     reserved, zero
//! ```
//!
//! followed by 10-byte records `{time_ps: u64, channel: u8, origin: u8}`
//! sorted by time. Origin codes: 0 ZPL, 1 RED_SHIFTED, 2 BACKGROUND, 3 DARK.

use super::stream::{Origin, PhotonStream, TagLabel};
use super::SimError;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"ZPLT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagRecord {
    pub time_ps: u64,
    pub channel: u8,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFile {
    pub resolution_ps: u32,
    pub channel_count: u16,
    pub records: Vec<TagRecord>,
}

impl TagFile {
    /// Interleaves streams by time; ties keep the order of `streams`.
    pub fn from_streams(streams: &[&PhotonStream]) -> TagFile {
        let resolution_ps = streams.iter().map(|s| s.resolution_ps()).min().unwrap_or(1);
        let channel_count = streams
            .iter()
            .map(|s| s.channel() as u16 + 1)
            .max()
            .unwrap_or(0);
        let mut records: Vec<TagRecord> = Vec::with_capacity(streams.iter().map(|s| s.len()).sum());
        for s in streams {
            records.extend(s.iter().map(|(t, l)| TagRecord {
                time_ps: t,
                channel: s.channel(),
                origin: l.origin,
            }));
        }
        records.sort_by_key(|r| r.time_ps);
        TagFile {
            resolution_ps,
            channel_count,
            records,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(&MAGIC);
        header[4..6].copy_from_slice(&VERSION.to_le_bytes());
        header[6..10].copy_from_slice(&self.resolution_ps.to_le_bytes());
        header[10..12].copy_from_slice(&self.channel_count.to_le_bytes());
        w.write_all(&header)?;
        let mut buf = [0u8; RECORD_LEN];
        for r in &self.records {
            buf[0..8].copy_from_slice(&r.time_ps.to_le_bytes());
            buf[8] = r.channel;
            buf[9] = r.origin.code();
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<TagFile, SimError> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| SimError::Format("truncated header".into()))?;
        if header[0..4] != MAGIC {
            return Err(SimError::Format("bad magic, not a ZPLT file".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(SimError::Format(format!("unsupported version {version}")));
        }
        let resolution_ps = u32::from_le_bytes(header[6..10].try_into().unwrap());
        let channel_count = u16::from_le_bytes([header[10], header[11]]);
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % RECORD_LEN != 0 {
            return Err(SimError::Format(format!(
                "{} trailing bytes",
                body.len() % RECORD_LEN
            )));
        }
        let mut records = Vec::with_capacity(body.len() / RECORD_LEN);
        let mut last = 0u64;
        for (i, chunk) in body.chunks_exact(RECORD_LEN).enumerate() {
            let time_ps = u64::from_le_bytes(chunk[0..8].try_into().unwrap());
            let channel = chunk[8];
            let origin = Origin::from_code(chunk[9]).ok_or_else(|| {
                SimError::Format(format!("record {i}: unknown origin code {}", chunk[9]))
            })?;
            if time_ps < last {
                return Err(SimError::Unsorted { index: i });
            }
            if channel as u16 >= channel_count {
                return Err(SimError::Format(format!(
                    "record {i}: channel {channel} >= channel_count"
                )));
            }
            last = time_ps;
            records.push(TagRecord {
                time_ps,
                channel,
                origin,
            });
        }
        Ok(TagFile {
            resolution_ps,
            channel_count,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TagFile, SimError> {
        TagFile::read_from(BufReader::new(File::open(path)?))
    }

    /// Acquisition length implied by the file: one tick past the last tag.
    pub fn span_ps(&self) -> u64 {
        self.records
            .last()
            .map_or(1, |r| r.time_ps.saturating_add(1))
    }

    /// Tags of one channel as a stream. Line indices are not stored in the
    /// file, so labels carry the origin only.
    pub fn channel_stream(&self, channel: u8) -> PhotonStream {
        let (times, labels): (Vec<u64>, Vec<TagLabel>) = self
            .records
            .iter()
            .filter(|r| r.channel == channel)
            .map(|r| {
                (
                    r.time_ps,
                    TagLabel {
                        origin: r.origin,
                        line: None,
                    },
                )
            })
            .unzip();
        PhotonStream::from_parts(
            times,
            labels,
            self.span_ps(),
            self.resolution_ps,
            Vec::new(),
        )
        .expect("records are validated on construction")
        .with_channel(channel)
    }

    /// Debug export: `time_ps,channel,origin`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        writeln!(w, "time_ps,channel,origin")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.time_ps, r.channel, r.origin.name())?;
        }
        w.flush()?;
        Ok(())
    }
}
