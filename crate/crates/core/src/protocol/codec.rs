//! Datagram layout shared by every party:
//!
//! ```text
//! "RTVC" | version u8 = 1 | msg_type u8 | channel u8 | vehicle_id u32 | user_id u32
//!        | seq u64 | t u64 | payload_len u32 | payload
//! ```
//!
//! All integers are big-endian, so the header is a fixed 35 bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::csv;
use crate::sim::{AccidentKind, GeoPoint};
use crate::Millis;

pub const MAGIC: &[u8; 4] = b"RTVC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 35;
/// Largest payload that fits one datagram.
pub const MAX_PAYLOAD: usize = 60 * 1024;

/// The five logical channels. Each is bound to its own server port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    Control,
    VehicleVideoIn,
    VehicleDataIn,
    UserVideoOut,
    UserDataOut,
}

impl ChannelId {
    pub const ALL: [ChannelId; 5] = [
        ChannelId::Control,
        ChannelId::VehicleVideoIn,
        ChannelId::VehicleDataIn,
        ChannelId::UserVideoOut,
        ChannelId::UserDataOut,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn is_stream(self) -> bool {
        !matches!(self, ChannelId::Control)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChannelId::Control => "control",
            ChannelId::VehicleVideoIn => "vehicle_video_in",
            ChannelId::VehicleDataIn => "vehicle_data_in",
            ChannelId::UserVideoOut => "user_video_out",
            ChannelId::UserDataOut => "user_data_out",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MsgType {
    Login = 0x01,
    Running = 0x02,
    StreamRequest = 0x03,
    TerminateReport = 0x04,
    AccidentNotify = 0x05,
    UserEnable = 0x06,
    UserDisable = 0x07,
    Ack = 0x08,
    Reject = 0x09,
    Video = 0x10,
    Data = 0x11,
}

impl MsgType {
    pub fn from_code(code: u8) -> Option<Self> {
        use MsgType::*;
        Some(match code {
            0x01 => Login,
            0x02 => Running,
            0x03 => StreamRequest,
            0x04 => TerminateReport,
            0x05 => AccidentNotify,
            0x06 => UserEnable,
            0x07 => UserDisable,
            0x08 => Ack,
            0x09 => Reject,
            0x10 => Video,
            0x11 => Data,
            _ => return None,
        })
    }

    /// Kinds that only a vehicle sends; they must name a vehicle.
    fn vehicle_originated(self) -> bool {
        use MsgType::*;
        matches!(self, Login | Running | TerminateReport | AccidentNotify)
    }

    fn user_originated(self) -> bool {
        matches!(self, MsgType::UserEnable | MsgType::UserDisable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminateReason {
    Stopped = 0,
    Accident = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NotRegistered = 1,
    BadCredentials = 2,
    Malformed = 3,
    NotOwner = 4,
    NotLoggedIn = 5,
}

impl RejectReason {
    pub fn from_code(code: u8) -> Option<Self> {
        use RejectReason::*;
        Some(match code {
            1 => NotRegistered,
            2 => BadCredentials,
            3 => Malformed,
            4 => NotOwner,
            5 => NotLoggedIn,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NotRegistered => "not-registered",
            RejectReason::BadCredentials => "bad-credentials",
            RejectReason::Malformed => "malformed",
            RejectReason::NotOwner => "not-owner",
            RejectReason::NotLoggedIn => "not-logged-in",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Login { credentials: String },
    /// `session_start` is when the vehicle's local recorder started and
    /// `segment_ms` its segment duration; the server aligns its own segments
    /// to them unless configured otherwise.
    Running { session_start: Millis, segment_ms: Millis },
    StreamRequest,
    TerminateReport { reason: TerminateReason },
    AccidentNotify { kind: AccidentKind, fix: GeoPoint },
    UserEnable { credentials: String },
    UserDisable,
    Ack { of: MsgType },
    Reject { reason: RejectReason },
    Video { payload: Vec<u8> },
    Data { line: String },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Login { .. } => MsgType::Login,
            Message::Running { .. } => MsgType::Running,
            Message::StreamRequest => MsgType::StreamRequest,
            Message::TerminateReport { .. } => MsgType::TerminateReport,
            Message::AccidentNotify { .. } => MsgType::AccidentNotify,
            Message::UserEnable { .. } => MsgType::UserEnable,
            Message::UserDisable => MsgType::UserDisable,
            Message::Ack { .. } => MsgType::Ack,
            Message::Reject { .. } => MsgType::Reject,
            Message::Video { .. } => MsgType::Video,
            Message::Data { .. } => MsgType::Data,
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            Message::Login { credentials } | Message::UserEnable { credentials } => credentials.as_bytes().to_vec(),
            Message::Running {
                session_start,
                segment_ms,
            } => {
                let mut out = session_start.to_be_bytes().to_vec();
                out.extend_from_slice(&segment_ms.to_be_bytes());
                out
            }
            Message::StreamRequest | Message::UserDisable => Vec::new(),
            Message::TerminateReport { reason } => vec![*reason as u8],
            Message::AccidentNotify { kind, fix } => {
                let mut out = Vec::with_capacity(17);
                out.push(kind.code());
                out.extend_from_slice(&fix.lat.to_bits().to_be_bytes());
                out.extend_from_slice(&fix.lon.to_bits().to_be_bytes());
                out
            }
            Message::Ack { of } => vec![*of as u8],
            Message::Reject { reason } => vec![*reason as u8],
            Message::Video { payload } => payload.clone(),
            Message::Data { line } => line.as_bytes().to_vec(),
        }
    }
}

/// One datagram: routing header plus message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub channel: ChannelId,
    pub vehicle_id: u32,
    /// 0 when no user is involved.
    pub user_id: u32,
    pub seq: u64,
    pub t: Millis,
    pub message: Message,
}

impl Packet {
    pub fn control(vehicle_id: u32, user_id: u32, t: Millis, message: Message) -> Self {
        Self {
            channel: ChannelId::Control,
            vehicle_id,
            user_id,
            seq: 0,
            t,
            message,
        }
    }

    fn check(&self) -> Result<(), &'static str> {
        let ty = self.message.msg_type();
        if ty.vehicle_originated() && self.vehicle_id == 0 {
            return Err("vehicle message without vehicle_id");
        }
        if ty.user_originated() && self.user_id == 0 {
            return Err("user message without user_id");
        }
        if let Message::Data { line } = &self.message {
            if !csv::is_canonical(line) {
                return Err("data line is not a canonical telemetry line");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("payload-too-large: {0} bytes (max {MAX_PAYLOAD})")]
    PayloadTooLarge(usize),
    #[error("invalid message: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated")]
    Truncated,
    #[error("bad-magic")]
    BadMagic,
    #[error("bad-version: {0}")]
    BadVersion(u8),
    #[error("unknown-type: 0x{0:02x}")]
    UnknownType(u8),
    #[error("unknown-channel: {0}")]
    UnknownChannel(u8),
    #[error("length-mismatch: header says {declared}, datagram carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("bad-payload: {0}")]
    BadPayload(&'static str),
}

impl DecodeError {
    /// Short stable identifier, as used in logs and drop counters.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Truncated => "truncated",
            DecodeError::BadMagic => "bad-magic",
            DecodeError::BadVersion(_) => "bad-version",
            DecodeError::UnknownType(_) => "unknown-type",
            DecodeError::UnknownChannel(_) => "unknown-channel",
            DecodeError::LengthMismatch { .. } => "length-mismatch",
            DecodeError::BadPayload(_) => "bad-payload",
        }
    }
}

pub fn encode(p: &Packet) -> Result<Vec<u8>, EncodeError> {
    p.check().map_err(EncodeError::Invalid)?;
    let payload = p.message.payload();
    if payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(p.message.msg_type() as u8);
    out.push(p.channel.code());
    out.extend_from_slice(&p.vehicle_id.to_be_bytes());
    out.extend_from_slice(&p.user_id.to_be_bytes());
    out.extend_from_slice(&p.seq.to_be_bytes());
    out.extend_from_slice(&p.t.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b.try_into().unwrap())
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b.try_into().unwrap())
}

fn exact<const N: usize>(payload: &[u8], what: &'static str) -> Result<[u8; N], DecodeError> {
    payload.try_into().map_err(|_| DecodeError::BadPayload(what))
}

fn utf8(payload: &[u8], what: &'static str) -> Result<String, DecodeError> {
    String::from_utf8(payload.to_vec()).map_err(|_| DecodeError::BadPayload(what))
}

/// Total over arbitrary bytes: every input yields a packet or an error.
pub fn decode(d: &[u8]) -> Result<Packet, DecodeError> {
    let probe = d.len().min(4);
    if d[..probe] != MAGIC[..probe] {
        return Err(DecodeError::BadMagic);
    }
    if d.len() < HEADER_LEN {
        return Err(DecodeError::Truncated);
    }
    if d[4] != VERSION {
        return Err(DecodeError::BadVersion(d[4]));
    }
    let ty = MsgType::from_code(d[5]).ok_or(DecodeError::UnknownType(d[5]))?;
    let channel = ChannelId::from_code(d[6]).ok_or(DecodeError::UnknownChannel(d[6]))?;
    let declared = be_u32(&d[31..35]) as usize;
    let actual = d.len() - HEADER_LEN;
    if actual < declared {
        return Err(DecodeError::Truncated);
    }
    if actual > declared || declared > MAX_PAYLOAD {
        return Err(DecodeError::LengthMismatch { declared, actual });
    }
    let payload = &d[HEADER_LEN..];
    let message = match ty {
        MsgType::Login => Message::Login {
            credentials: utf8(payload, "credentials")?,
        },
        MsgType::UserEnable => Message::UserEnable {
            credentials: utf8(payload, "credentials")?,
        },
        MsgType::Running => {
            let body: [u8; 16] = exact(payload, "running body")?;
            Message::Running {
                session_start: be_u64(&body[..8]),
                segment_ms: be_u64(&body[8..]),
            }
        }
        MsgType::StreamRequest | MsgType::UserDisable => {
            if !payload.is_empty() {
                return Err(DecodeError::BadPayload("unexpected body"));
            }
            if ty == MsgType::StreamRequest {
                Message::StreamRequest
            } else {
                Message::UserDisable
            }
        }
        MsgType::TerminateReport => {
            let [b] = exact(payload, "terminate body")?;
            let reason = match b {
                0 => TerminateReason::Stopped,
                1 => TerminateReason::Accident,
                _ => return Err(DecodeError::BadPayload("terminate reason")),
            };
            Message::TerminateReport { reason }
        }
        MsgType::AccidentNotify => {
            let body: [u8; 17] = exact(payload, "accident body")?;
            let kind = AccidentKind::from_code(body[0]).ok_or(DecodeError::BadPayload("accident kind"))?;
            Message::AccidentNotify {
                kind,
                fix: GeoPoint {
                    lat: f64::from_bits(be_u64(&body[1..9])),
                    lon: f64::from_bits(be_u64(&body[9..17])),
                },
            }
        }
        MsgType::Ack => {
            let [b] = exact(payload, "ack body")?;
            Message::Ack {
                of: MsgType::from_code(b).ok_or(DecodeError::BadPayload("acked type"))?,
            }
        }
        MsgType::Reject => {
            let [b] = exact(payload, "reject body")?;
            Message::Reject {
                reason: RejectReason::from_code(b).ok_or(DecodeError::BadPayload("reject reason"))?,
            }
        }
        MsgType::Video => Message::Video {
            payload: payload.to_vec(),
        },
        MsgType::Data => Message::Data {
            line: utf8(payload, "data line")?,
        },
    };
    let packet = Packet {
        channel,
        vehicle_id: be_u32(&d[7..11]),
        user_id: be_u32(&d[11..15]),
        seq: be_u64(&d[15..23]),
        t: be_u64(&d[23..31]),
        message,
    };
    packet.check().map_err(DecodeError::BadPayload)?;
    Ok(packet)
}
