//! On-disk formats: binary record files, JSON result files, CSV curves.
//!
//! Record file layout (little-endian):
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0  | 4  | magic `QENV` |
//! | 4  | 2  | version (u16) |
//! | 6  | 2  | channels (u16) |
//! | 8  | 8  | dt in seconds (f64) |
//! | 16 | 4  | bins per period (u32) |
//! | 20 | 4  | periods (u32), all shots concatenated |
//! | 24 | 8  | seed (u64) |
//! | 32 | 32 | config digest |
//! | 64 | …  | per channel, `periods · P` pairs of (I, Q) as f32 |
//!
//! The period count per shot is not stored; readers take it from the
//! configuration, whose digest the header carries.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::CorrelationFunction;
use crate::model::TimeGrid;
use crate::reference::PeakReport;
use crate::sampler::RecordSet;

pub const MAGIC: [u8; 4] = *b"QENV";
pub const RECORD_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordHeader {
    pub version: u16,
    pub channels: u16,
    pub dt: f64,
    pub bins_per_period: u32,
    pub periods: u32,
    pub seed: u64,
    pub config_digest: [u8; 32],
}

impl RecordHeader {
    pub fn payload_len(&self) -> usize {
        self.channels as usize * self.periods as usize * self.bins_per_period as usize * 8
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&self.bins_per_period.to_le_bytes());
        out.extend_from_slice(&self.periods.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, not a record file".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().expect("2 bytes"));
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let header = RecordHeader {
            version: u16_at(4),
            channels: u16_at(6),
            dt: f64::from_bits(u64_at(8)),
            bins_per_period: u32_at(16),
            periods: u32_at(20),
            seed: u64_at(24),
            config_digest: bytes[32..64].try_into().expect("32 bytes"),
        };
        if header.version != RECORD_VERSION {
            return Err(Error::Format(format!("unsupported version {}", header.version)));
        }
        Ok(header)
    }
}

/// Serializes records into the binary record format.
pub fn encode_records(records: &RecordSet) -> Result<Vec<u8>> {
    let periods = u32::try_from(records.total_periods())
        .map_err(|_| Error::Format("too many periods for one record file".into()))?;
    let header = RecordHeader {
        version: RECORD_VERSION,
        channels: records.channels.len() as u16,
        dt: records.grid.dt,
        bins_per_period: records.grid.bins_per_period as u32,
        periods,
        seed: records.seed,
        config_digest: records.config_digest,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len());
    header.encode(&mut out);
    for channel in &records.channels {
        for v in channel {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a record file whose shots have `periods_per_shot` periods each.
pub fn decode_records(bytes: &[u8], periods_per_shot: usize) -> Result<RecordSet> {
    let header = RecordHeader::decode(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            header.payload_len()
        )));
    }
    let periods = header.periods as usize;
    if periods_per_shot == 0 || !periods.is_multiple_of(periods_per_shot) {
        return Err(Error::Format(format!(
            "{periods} periods do not split into shots of {periods_per_shot}"
        )));
    }
    let per_channel = periods * header.bins_per_period as usize;
    let channels = payload
        .chunks_exact(per_channel * 8)
        .map(|c| {
            c.chunks_exact(8)
                .map(|p| {
                    Complex32::new(
                        f32::from_le_bytes(p[0..4].try_into().expect("4 bytes")),
                        f32::from_le_bytes(p[4..8].try_into().expect("4 bytes")),
                    )
                })
                .collect()
        })
        .collect();
    Ok(RecordSet {
        grid: TimeGrid::new(header.dt, header.bins_per_period as usize, periods_per_shot),
        shots: periods / periods_per_shot,
        first_shot: 0,
        channels,
        seed: header.seed,
        config_digest: header.config_digest,
        edge_guard: 0,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_records(path: &Path, records: &RecordSet) -> Result<()> {
    write_atomic(path, &encode_records(records)?)
}

pub fn read_records(path: &Path, periods_per_shot: usize) -> Result<RecordSet> {
    decode_records(&std::fs::read(path)?, periods_per_shot)
}

/// Writes a record file chunk by chunk.
///
/// The payload is channel-major, so each chunk of shots lands at its own
/// offset inside every channel block. The file only appears at its final
/// path once [`RecordWriter::finish`] has seen every shot.
pub struct RecordWriter {
    file: tempfile::NamedTempFile,
    path: PathBuf,
    header: RecordHeader,
    periods_per_shot: usize,
    shots: usize,
    written: usize,
}

impl RecordWriter {
    pub fn create(path: &Path, grid: TimeGrid, shots: usize, seed: u64, config_digest: [u8; 32]) -> Result<Self> {
        let periods = u32::try_from(shots * grid.periods)
            .map_err(|_| Error::Format(format!("{shots} shots exceed the period counter")))?;
        let header = RecordHeader {
            version: RECORD_VERSION,
            channels: 2,
            dt: grid.dt,
            bins_per_period: grid.bins_per_period as u32,
            periods,
            seed,
            config_digest,
        };
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut file = tempfile::NamedTempFile::new_in(dir)?;
        let mut head = Vec::with_capacity(HEADER_LEN);
        header.encode(&mut head);
        file.write_all(&head)?;
        file.as_file().set_len((HEADER_LEN + header.payload_len()) as u64)?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
            header,
            periods_per_shot: grid.periods,
            shots,
            written: 0,
        })
    }

    /// Writes the next chunk, whose shots must follow the previous chunk.
    pub fn write_chunk(&mut self, records: &RecordSet) -> Result<()> {
        if records.channels.len() != self.header.channels as usize {
            return Err(Error::ChannelMismatch(format!("expected {} channels", self.header.channels)));
        }
        if records.grid.periods != self.periods_per_shot || records.grid.dt != self.header.dt {
            return Err(Error::GridMismatch("chunk grid differs from the file grid".into()));
        }
        if records.first_shot != self.written || self.written + records.shots > self.shots {
            return Err(Error::Invalid(format!(
                "chunk starting at shot {} does not continue at shot {}",
                records.first_shot, self.written
            )));
        }
        let shot_bytes = records.shot_len() * 8;
        let channel_bytes = self.shots * shot_bytes;
        let mut buf = Vec::with_capacity(records.shots * shot_bytes);
        for (c, channel) in records.channels.iter().enumerate() {
            buf.clear();
            for v in channel {
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
            let offset = HEADER_LEN + c * channel_bytes + self.written * shot_bytes;
            self.file.seek(SeekFrom::Start(offset as u64))?;
            self.file.write_all(&buf)?;
        }
        self.written += records.shots;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.written != self.shots {
            return Err(Error::Invalid(format!("only {} of {} shots written", self.written, self.shots)));
        }
        self.file.as_file().sync_all()?;
        self.file.persist(&self.path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }
}

/// Reads shot ranges of a record file without loading the whole payload.
pub struct RecordReader {
    file: std::fs::File,
    pub header: RecordHeader,
    grid: TimeGrid,
    pub shots: usize,
}

impl RecordReader {
    pub fn open(path: &Path, periods_per_shot: usize) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut head = [0u8; HEADER_LEN];
        file.read_exact(&mut head)
            .map_err(|_| Error::Format(format!("{} is shorter than the header", path.display())))?;
        let header = RecordHeader::decode(&head)?;
        let len = file.metadata()?.len() as usize;
        if len != HEADER_LEN + header.payload_len() {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {}",
                len.saturating_sub(HEADER_LEN),
                header.payload_len()
            )));
        }
        let periods = header.periods as usize;
        if periods_per_shot == 0 || !periods.is_multiple_of(periods_per_shot) {
            return Err(Error::Format(format!(
                "{periods} periods do not split into shots of {periods_per_shot}"
            )));
        }
        Ok(Self {
            file,
            grid: TimeGrid::new(header.dt, header.bins_per_period as usize, periods_per_shot),
            shots: periods / periods_per_shot,
            header,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Shots `[start, start + count)`.
    pub fn read_shots(&mut self, start: usize, count: usize) -> Result<RecordSet> {
        if start + count > self.shots {
            return Err(Error::Invalid(format!(
                "shots {start}..{} exceed the {} in the file",
                start + count,
                self.shots
            )));
        }
        let shot_bytes = self.grid.shot_len() * 8;
        let channel_bytes = self.shots * shot_bytes;
        let mut bytes = vec![0u8; count * shot_bytes];
        let mut channels = Vec::with_capacity(self.header.channels as usize);
        for c in 0..self.header.channels as usize {
            let offset = HEADER_LEN + c * channel_bytes + start * shot_bytes;
            self.file.seek(SeekFrom::Start(offset as u64))?;
            self.file.read_exact(&mut bytes)?;
            channels.push(
                bytes
                    .chunks_exact(8)
                    .map(|p| {
                        Complex32::new(
                            f32::from_le_bytes(p[0..4].try_into().expect("4 bytes")),
                            f32::from_le_bytes(p[4..8].try_into().expect("4 bytes")),
                        )
                    })
                    .collect(),
            );
        }
        Ok(RecordSet {
            grid: self.grid,
            shots: count,
            first_shot: start,
            channels,
            seed: self.header.seed,
            config_digest: self.header.config_digest,
            edge_guard: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub software_version: String,
}

impl Provenance {
    pub fn new(config_digest: String, seeds: Vec<u64>) -> Self {
        Self {
            config_digest,
            seeds,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub name: String,
    #[serde(flatten)]
    pub curve: CorrelationFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedPeakReport {
    pub name: String,
    #[serde(flatten)]
    pub report: PeakReport,
}

/// The JSON document written by the analysis commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub curves: Vec<NamedCurve>,
    #[serde(default)]
    pub peaks: Vec<NamedPeakReport>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl ResultFile {
    pub fn curve(&self, name: &str) -> Option<&CorrelationFunction> {
        self.curves.iter().find(|c| c.name == name).map(|c| &c.curve)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Plot-ready CSV with columns `tau_s,re,im,stderr`.
pub fn curve_csv(curve: &CorrelationFunction) -> String {
    let mut out = String::from("tau_s,re,im,stderr\n");
    for ((tau, v), se) in curve.lags.iter().zip(&curve.values).zip(&curve.stderr) {
        out.push_str(&format!("{tau},{},{},{se}\n", v.re, v.im));
    }
    out
}
