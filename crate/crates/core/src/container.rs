//! IVSG segment container.
//!
//! ```text
//! header : "IVSG" | version u8 = 1 | vehicle_id u32 BE | start_t u64 BE
//! record : type u8 (0x01 frame, 0x02 telemetry) | t u64 BE | payload_len u32 BE | payload
//! ```
//!
//! Vehicle, server and user all write this format, so one validator covers
//! every party's output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::csv;
use crate::Millis;

pub const MAGIC: &[u8; 4] = b"IVSG";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;
pub const RECORD_OVERHEAD: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Frame,
    Telemetry,
}

impl RecordKind {
    pub fn code(self) -> u8 {
        match self {
            RecordKind::Frame => 0x01,
            RecordKind::Telemetry => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(RecordKind::Frame),
            0x02 => Some(RecordKind::Telemetry),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerHeader {
    pub vehicle_id: u32,
    pub start_t: Millis,
}

impl ContainerHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(MAGIC);
        out[4] = VERSION;
        out[5..9].copy_from_slice(&self.vehicle_id.to_be_bytes());
        out[9..17].copy_from_slice(&self.start_t.to_be_bytes());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub kind: RecordKind,
    pub t: Millis,
    pub payload: Vec<u8>,
}

impl Record {
    pub fn encoded_len(&self) -> usize {
        RECORD_OVERHEAD + self.payload.len()
    }
}

/// Appends one encoded record to `out`.
pub fn encode_record(out: &mut Vec<u8>, kind: RecordKind, t: Millis, payload: &[u8]) {
    out.reserve(RECORD_OVERHEAD + payload.len());
    out.push(kind.code());
    out.extend_from_slice(&t.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
}

pub fn record_prefix(kind: RecordKind, t: Millis, payload_len: usize) -> [u8; RECORD_OVERHEAD] {
    let mut out = [0u8; RECORD_OVERHEAD];
    out[0] = kind.code();
    out[1..9].copy_from_slice(&t.to_be_bytes());
    out[9..13].copy_from_slice(&(payload_len as u32).to_be_bytes());
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated record")]
    TruncatedRecord,
    #[error("unknown record type 0x{0:02x}")]
    UnknownRecordType(u8),
    #[error("telemetry record is not a valid CSV line: {0}")]
    BadTelemetry(String),
    #[error("record timestamp {t} precedes previous {prev}")]
    OutOfOrder { t: Millis, prev: Millis },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid container at byte {offset}: {kind}")]
pub struct ContainerError {
    pub offset: usize,
    pub kind: ContainerErrorKind,
}

impl ContainerError {
    fn at(offset: usize, kind: ContainerErrorKind) -> Self {
        Self { offset, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub header: ContainerHeader,
    pub records: Vec<Record>,
}

impl Container {
    pub fn frames(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.kind == RecordKind::Frame)
    }

    pub fn telemetry(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.kind == RecordKind::Telemetry)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.header.encode().to_vec();
        for r in &self.records {
            encode_record(&mut out, r.kind, r.t, &r.payload);
        }
        out
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<ContainerHeader, ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::at(bytes.len(), ContainerErrorKind::TruncatedHeader));
    }
    if &bytes[..4] != MAGIC {
        return Err(ContainerError::at(0, ContainerErrorKind::BadMagic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::at(bytes.len(), ContainerErrorKind::TruncatedHeader));
    }
    if bytes[4] != VERSION {
        return Err(ContainerError::at(4, ContainerErrorKind::BadVersion(bytes[4])));
    }
    Ok(ContainerHeader {
        vehicle_id: u32::from_be_bytes(bytes[5..9].try_into().unwrap()),
        start_t: u64::from_be_bytes(bytes[9..17].try_into().unwrap()),
    })
}

/// Parses a whole container. Structural checks only; see [`validate`].
pub fn parse(bytes: &[u8]) -> Result<Container, ContainerError> {
    let header = parse_header(bytes)?;
    let mut records = Vec::new();
    let mut pos = HEADER_LEN;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < RECORD_OVERHEAD {
            return Err(ContainerError::at(pos, ContainerErrorKind::TruncatedRecord));
        }
        let kind = RecordKind::from_code(rest[0])
            .ok_or_else(|| ContainerError::at(pos, ContainerErrorKind::UnknownRecordType(rest[0])))?;
        let t = u64::from_be_bytes(rest[1..9].try_into().unwrap());
        let len = u32::from_be_bytes(rest[9..13].try_into().unwrap()) as usize;
        if rest.len() - RECORD_OVERHEAD < len {
            return Err(ContainerError::at(pos, ContainerErrorKind::TruncatedRecord));
        }
        records.push(Record {
            kind,
            t,
            payload: rest[RECORD_OVERHEAD..RECORD_OVERHEAD + len].to_vec(),
        });
        pos += RECORD_OVERHEAD + len;
    }
    Ok(Container { header, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContainerSummary {
    pub vehicle_id: u32,
    pub start_t: Millis,
    pub frames: u64,
    pub telemetry: u64,
    pub frame_payload_bytes: u64,
    pub total_bytes: u64,
    pub first_t: Option<Millis>,
    pub last_t: Option<Millis>,
}

/// Full validation: structure, telemetry grammar, and per-kind timestamp
/// order (frames and telemetry are separate streams and may interleave).
pub fn validate(bytes: &[u8]) -> Result<ContainerSummary, ContainerError> {
    let c = parse(bytes)?;
    let mut summary = ContainerSummary {
        vehicle_id: c.header.vehicle_id,
        start_t: c.header.start_t,
        total_bytes: bytes.len() as u64,
        ..Default::default()
    };
    let mut offset = HEADER_LEN;
    let mut last_frame: Option<Millis> = None;
    let mut last_tel: Option<Millis> = None;
    for r in &c.records {
        let prev = match r.kind {
            RecordKind::Frame => &mut last_frame,
            RecordKind::Telemetry => &mut last_tel,
        };
        if let Some(p) = *prev {
            if r.t < p {
                return Err(ContainerError::at(offset, ContainerErrorKind::OutOfOrder { t: r.t, prev: p }));
            }
        }
        *prev = Some(r.t);
        match r.kind {
            RecordKind::Frame => {
                summary.frames += 1;
                summary.frame_payload_bytes += r.payload.len() as u64;
            }
            RecordKind::Telemetry => {
                let text = std::str::from_utf8(&r.payload)
                    .map_err(|e| ContainerError::at(offset, ContainerErrorKind::BadTelemetry(e.to_string())))?;
                csv::parse_line(text)
                    .map_err(|e| ContainerError::at(offset, ContainerErrorKind::BadTelemetry(e.to_string())))?;
                summary.telemetry += 1;
            }
        }
        summary.first_t = Some(summary.first_t.map_or(r.t, |f| f.min(r.t)));
        summary.last_t = Some(summary.last_t.map_or(r.t, |l| l.max(r.t)));
        offset += r.encoded_len();
    }
    Ok(summary)
}
