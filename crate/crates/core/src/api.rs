//! JSON bodies of the server's HTTP admin API, shared by server and client.

use serde::{Deserialize, Serialize};

use crate::recorder::Segment;
use crate::registry::PartyKind;
use crate::server::{ServerStats, VehicleStatus};
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewVehicle {
    pub id: u32,
    pub credentials: String,
    #[serde(default)]
    pub owners: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewUser {
    pub id: u32,
    pub credentials: String,
    #[serde(default)]
    pub vehicles: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registered {
    pub kind: PartyKind,
    pub id: u32,
    pub links: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixView {
    pub t: Millis,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecorderView {
    pub file_alternat: u8,
    pub stopped: bool,
    pub storage_bytes: u64,
    pub segments: [Segment; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleView {
    pub id: u32,
    pub status: VehicleStatus,
    pub logged_in: bool,
    pub session: u32,
    pub peer: Option<String>,
    pub owners: Vec<u32>,
    pub last_fix: Option<FixView>,
    pub recorder: Option<RecorderView>,
    /// Session number of the retained segments available for replay.
    pub last_session: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserView {
    pub id: u32,
    pub vehicles: Vec<u32>,
    pub enabled: Option<u32>,
    pub peer: Option<String>,
    pub forwarded: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsView {
    #[serde(flatten)]
    pub server: ServerStats,
    /// Forwarded copies dropped because an outbound queue was full.
    pub forward_dropped: u64,
    pub running: usize,
    pub now_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}
