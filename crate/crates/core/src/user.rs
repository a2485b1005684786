//! User endpoint: subscribe to one vehicle, receive live or replayed chunks,
//! and persist them as an IVSG container plus a telemetry CSV.

use std::io::{self, Write};
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::container::{self, ContainerHeader, RecordKind};
use crate::net::{ServerPorts, Transmit};
use crate::protocol::{decode, encode, ChannelId, Message, MsgType, Packet, RejectReason, ReorderBuffer, ReorderConfig};
use crate::store::SegmentStore;
use crate::Millis;

pub const ENABLE_RETRY_MS: Millis = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserConfig {
    pub user_id: u32,
    pub credentials: String,
    pub server: SocketAddr,
    pub ports: ServerPorts,
    pub reorder: ReorderConfig,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self {
            user_id: 1,
            credentials: String::new(),
            server: SocketAddr::from(([127, 0, 0, 1], 7000)),
            ports: ServerPorts::default(),
            reorder: ReorderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserPhase {
    Idle,
    Enabling,
    Enabled,
    Rejected(RejectReason),
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Received {
    pub video_chunks: u64,
    pub data_lines: u64,
    /// Frame payload plus telemetry line bytes.
    pub bytes: u64,
    /// Sequence numbers never received.
    pub gaps: u64,
    /// Duplicates, late arrivals and out-of-order timestamps.
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub user_id: u32,
    pub vehicle_id: u32,
    pub received: Received,
    pub duration_ms: Millis,
}

impl Summary {
    pub const HEADER: &'static str = "summary,user,vehicle,video_chunks,data_lines,bytes,gaps,duration_ms";

    pub fn to_csv(&self) -> String {
        let r = &self.received;
        format!(
            "summary,{},{},{},{},{},{},{}",
            self.user_id, self.vehicle_id, r.video_chunks, r.data_lines, r.bytes, r.gaps, self.duration_ms
        )
    }
}

#[derive(Debug, Error)]
pub enum UserError {
    #[error("invalid user config: {0}")]
    Config(&'static str),
    #[error("a vehicle is already enabled in this session")]
    AlreadyEnabled,
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug)]
struct Subscription {
    vehicle_id: u32,
    enabled_at: Millis,
    video: ReorderBuffer<(Millis, Vec<u8>)>,
    data: ReorderBuffer<(Millis, String)>,
    last_frame_t: Option<Millis>,
    last_data_t: Option<Millis>,
    retry_at: Option<Millis>,
}

#[derive(Debug)]
pub struct UserClient<S, W> {
    cfg: UserConfig,
    phase: UserPhase,
    sub: Option<Subscription>,
    container: S,
    csv: W,
    received: Received,
    summary: Option<Summary>,
    outbox: Vec<Transmit>,
}

impl<S: SegmentStore, W: Write> UserClient<S, W> {
    pub fn new(cfg: UserConfig, container: S, csv: W) -> Result<Self, UserError> {
        if cfg.user_id == 0 {
            return Err(UserError::Config("user_id must be non-zero"));
        }
        Ok(Self {
            cfg,
            phase: UserPhase::Idle,
            sub: None,
            container,
            csv,
            received: Received::default(),
            summary: None,
            outbox: Vec::new(),
        })
    }

    pub fn phase(&self) -> UserPhase {
        self.phase
    }

    pub fn received(&self) -> Received {
        self.received
    }

    pub fn summary(&self) -> Option<Summary> {
        self.summary
    }

    pub fn vehicle_id(&self) -> Option<u32> {
        self.sub.as_ref().map(|s| s.vehicle_id)
    }

    pub fn container(&self) -> &S {
        &self.container
    }

    pub fn container_mut(&mut self) -> &mut S {
        &mut self.container
    }

    pub fn csv(&self) -> &W {
        &self.csv
    }

    pub fn into_parts(self) -> (S, W) {
        (self.container, self.csv)
    }

    pub fn drain_transmits(&mut self) -> Vec<Transmit> {
        std::mem::take(&mut self.outbox)
    }

    fn send_control(&mut self, vehicle_id: u32, t: Millis, message: Message) {
        let packet = Packet::control(vehicle_id, self.cfg.user_id, t, message);
        match encode(&packet) {
            Ok(bytes) => self.outbox.push(Transmit {
                channel: ChannelId::Control,
                peer: self.cfg.ports.addr(self.cfg.server, ChannelId::Control),
                bytes,
            }),
            Err(e) => warn!(error = %e, "dropping unencodable packet"),
        }
    }

    fn send_enable(&mut self, vehicle_id: u32, now: Millis) {
        let credentials = self.cfg.credentials.clone();
        self.send_control(vehicle_id, now, Message::UserEnable { credentials });
    }

    /// Sends UserEnable and retries every second until answered. One vehicle
    /// per session.
    pub fn enable(&mut self, vehicle_id: u32, now: Millis) -> Result<(), UserError> {
        if self.sub.is_some() {
            return Err(UserError::AlreadyEnabled);
        }
        self.container.reset(
            &ContainerHeader {
                vehicle_id,
                start_t: now,
            }
            .encode(),
        )?;
        self.sub = Some(Subscription {
            vehicle_id,
            enabled_at: now,
            video: ReorderBuffer::new(self.cfg.reorder, 0),
            data: ReorderBuffer::new(self.cfg.reorder, 0),
            last_frame_t: None,
            last_data_t: None,
            retry_at: Some(now + ENABLE_RETRY_MS),
        });
        self.phase = UserPhase::Enabling;
        self.send_enable(vehicle_id, now);
        Ok(())
    }

    /// Sends UserDisable, drains what is buffered and fixes the summary. A
    /// no-op unless enabled.
    pub fn disable(&mut self, now: Millis) -> Result<Option<Summary>, UserError> {
        if !matches!(self.phase, UserPhase::Enabling | UserPhase::Enabled) {
            return Ok(self.summary);
        }
        let sub = self.sub.as_mut().expect("enabled session has a subscription");
        let vehicle_id = sub.vehicle_id;
        sub.retry_at = None;
        let video = sub.video.flush();
        let data = sub.data.flush();
        self.write_released(video, data)?;
        self.send_control(vehicle_id, now, Message::UserDisable);
        self.phase = UserPhase::Disabled;
        self.finish_summary(now)?;
        Ok(self.summary)
    }

    fn finish_summary(&mut self, now: Millis) -> Result<(), UserError> {
        let sub = self.sub.as_ref().unwrap();
        self.received.gaps = sub.video.stats().lost + sub.data.stats().lost;
        self.container.flush()?;
        self.csv.flush()?;
        let summary = Summary {
            user_id: self.cfg.user_id,
            vehicle_id: sub.vehicle_id,
            received: self.received,
            duration_ms: now.saturating_sub(sub.enabled_at),
        };
        info!("{}", summary.to_csv());
        self.summary = Some(summary);
        Ok(())
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        let sub = self.sub.as_ref()?;
        if !matches!(self.phase, UserPhase::Enabling | UserPhase::Enabled) {
            return None;
        }
        [sub.retry_at, sub.video.next_deadline(), sub.data.next_deadline()]
            .into_iter()
            .flatten()
            .min()
    }

    pub fn poll(&mut self, now: Millis) -> Result<(), UserError> {
        if !matches!(self.phase, UserPhase::Enabling | UserPhase::Enabled) {
            return Ok(());
        }
        let sub = self.sub.as_mut().unwrap();
        let video = sub.video.poll(now);
        let data = sub.data.poll(now);
        let retry = sub.retry_at.filter(|&r| r <= now).map(|_| sub.vehicle_id);
        if retry.is_some() {
            sub.retry_at = Some(now + ENABLE_RETRY_MS);
        }
        if let Some(vid) = retry {
            self.send_enable(vid, now);
        }
        self.write_released(video, data)
    }

    pub fn handle_datagram(&mut self, now: Millis, bytes: &[u8]) -> Result<(), UserError> {
        let Ok(p) = decode(bytes) else {
            self.received.dropped += 1;
            return Ok(());
        };
        let active = matches!(self.phase, UserPhase::Enabling | UserPhase::Enabled);
        let Some(sub) = self.sub.as_mut().filter(|s| active && s.vehicle_id == p.vehicle_id) else {
            debug!(user = self.cfg.user_id, "ignoring datagram outside an enabled session");
            return Ok(());
        };
        if p.user_id != self.cfg.user_id {
            self.received.dropped += 1;
            return Ok(());
        }
        match (p.channel, p.message) {
            (ChannelId::Control, Message::Ack { of: MsgType::UserEnable }) => {
                sub.retry_at = None;
                self.phase = UserPhase::Enabled;
            }
            (ChannelId::Control, Message::Reject { reason }) => {
                warn!(user = self.cfg.user_id, %reason, "enable rejected");
                sub.retry_at = None;
                self.phase = UserPhase::Rejected(reason);
            }
            (ChannelId::UserVideoOut, Message::Video { payload }) => {
                // Chunks can overtake the Ack.
                sub.retry_at = None;
                self.phase = UserPhase::Enabled;
                let released = sub.video.push(p.seq, (p.t, payload), now);
                self.write_released(released, Vec::new())?;
            }
            (ChannelId::UserDataOut, Message::Data { line }) => {
                sub.retry_at = None;
                self.phase = UserPhase::Enabled;
                let released = sub.data.push(p.seq, (p.t, line), now);
                self.write_released(Vec::new(), released)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn write_released(
        &mut self,
        video: Vec<(u64, (Millis, Vec<u8>))>,
        data: Vec<(u64, (Millis, String))>,
    ) -> Result<(), UserError> {
        let sub = self.sub.as_mut().unwrap();
        for (_, (t, line)) in data {
            if sub.last_data_t.is_some_and(|last| t < last) {
                self.received.dropped += 1;
                continue;
            }
            sub.last_data_t = Some(t);
            let prefix = container::record_prefix(RecordKind::Telemetry, t, line.len());
            self.container.append(&[&prefix, line.as_bytes()])?;
            self.csv.write_all(line.as_bytes())?;
            self.received.data_lines += 1;
            self.received.bytes += line.len() as u64;
        }
        for (_, (t, payload)) in video {
            if sub.last_frame_t.is_some_and(|last| t < last) {
                self.received.dropped += 1;
                continue;
            }
            sub.last_frame_t = Some(t);
            let prefix = container::record_prefix(RecordKind::Frame, t, payload.len());
            self.container.append(&[&prefix, &payload])?;
            self.received.video_chunks += 1;
            self.received.bytes += payload.len() as u64;
        }
        let stats = (sub.video.stats(), sub.data.stats());
        self.received.gaps = stats.0.lost + stats.1.lost;
        self.received.dropped = self.received.dropped.max(stats.0.dropped + stats.1.dropped);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::csv;
    use crate::sim::TelemetrySample;
    use crate::store::MemStore;

    fn client() -> UserClient<MemStore, Vec<u8>> {
        let cfg = UserConfig {
            user_id: 3,
            credentials: "u".into(),
            ..Default::default()
        };
        UserClient::new(cfg, MemStore::new(), Vec::new()).unwrap()
    }

    fn chunk(channel: ChannelId, seq: u64, t: Millis) -> Vec<u8> {
        let message = match channel {
            ChannelId::UserVideoOut => Message::Video { payload: vec![1, 2, 3] },
            _ => Message::Data {
                line: csv::format_line(&TelemetrySample { t, ..Default::default() }, 7),
            },
        };
        encode(&Packet {
            channel,
            vehicle_id: 7,
            user_id: 3,
            seq,
            t,
            message,
        })
        .unwrap()
    }

    fn ack() -> Vec<u8> {
        encode(&Packet::control(7, 3, 0, Message::Ack { of: MsgType::UserEnable })).unwrap()
    }

    #[test]
    fn enable_retries_until_ack() {
        let mut c = client();
        c.enable(7, 0).unwrap();
        assert_eq!(c.drain_transmits().len(), 1);
        c.poll(1_000).unwrap();
        c.poll(2_000).unwrap();
        assert_eq!(c.drain_transmits().len(), 2);
        c.handle_datagram(2_100, &ack()).unwrap();
        assert_eq!(c.phase(), UserPhase::Enabled);
        assert_eq!(c.next_deadline(), None);
        assert!(matches!(c.enable(8, 0), Err(UserError::AlreadyEnabled)));
    }

    #[test]
    fn chunks_persist_in_order_and_summary_counts_gaps() {
        let mut c = client();
        c.enable(7, 0).unwrap();
        c.handle_datagram(0, &ack()).unwrap();
        for (seq, t) in [(0, 0), (2, 66), (1, 33), (4, 133)] {
            c.handle_datagram(t, &chunk(ChannelId::UserVideoOut, seq, t)).unwrap();
        }
        c.handle_datagram(10, &chunk(ChannelId::UserDataOut, 0, 100)).unwrap();
        let s = c.disable(1_000).unwrap().unwrap();
        assert_eq!(s.received.video_chunks, 4);
        assert_eq!(s.received.data_lines, 1);
        assert_eq!(s.received.gaps, 1);
        assert_eq!(s.duration_ms, 1_000);
        assert!(s.to_csv().starts_with("summary,3,7,4,1,"));
        let sent = c.drain_transmits();
        assert!(matches!(decode(&sent.last().unwrap().bytes).unwrap().message, Message::UserDisable));
        let summary = container::validate(c.container().bytes()).unwrap();
        assert_eq!((summary.frames, summary.telemetry), (4, 1));
        let (_, csv_out) = c.into_parts();
        assert_eq!(String::from_utf8(csv_out).unwrap().lines().count(), 1);
    }

    #[test]
    fn chunks_after_disable_are_ignored() {
        let mut c = client();
        c.enable(7, 0).unwrap();
        c.disable(0).unwrap();
        c.handle_datagram(5, &chunk(ChannelId::UserVideoOut, 0, 5)).unwrap();
        assert_eq!(c.received().video_chunks, 0);
        assert_eq!(c.disable(10).unwrap().unwrap().duration_ms, 0);
    }

    #[test]
    fn reject_is_surfaced() {
        let mut c = client();
        c.enable(7, 0).unwrap();
        let reject = encode(&Packet::control(
            7,
            3,
            0,
            Message::Reject {
                reason: RejectReason::NotRegistered,
            },
        ))
        .unwrap();
        c.handle_datagram(0, &reject).unwrap();
        assert_eq!(c.phase(), UserPhase::Rejected(RejectReason::NotRegistered));
        assert_eq!(c.next_deadline(), None);
    }
}
