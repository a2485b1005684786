//! Dual-segment alternating recorder and the single-file full-time baseline.
//!
//! Two segment files take turns. A timer tick seals the active segment,
//! truncates the other one back to its header and makes it active. An accident
//! either stops recording on the spot ([`Variant::StopOnAccident`]) or lets
//! video run into the current segment until the next tick
//! ([`Variant::RecordThroughAccident`]). Ticks are plain method calls driven by
//! the caller's clock; nothing here reads wall time.

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerHeader, RecordKind, HEADER_LEN, RECORD_OVERHEAD};
use crate::protocol::csv;
use crate::sim::{TelemetrySample, DEFAULT_FPS, DEFAULT_FRAME_BYTES};
use crate::store::{FileStore, SegmentStore};
use crate::Millis;

/// Five minutes, the interval used for the reference timer.
pub const DEFAULT_SEGMENT_MS: Millis = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Seal the active segment the moment an accident is detected.
    #[default]
    StopOnAccident,
    /// Keep recording video until the current segment's tick.
    RecordThroughAccident,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stop" | "1" | "stop_on_accident" => Ok(Variant::StopOnAccident),
            "through" | "2" | "record_through_accident" => Ok(Variant::RecordThroughAccident),
            other => Err(format!("unknown variant {other:?} (expected stop|through)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecorderConfig {
    pub vehicle_id: u32,
    /// Segment duration `T` in ms.
    pub segment_ms: Millis,
    pub variant: Variant,
    pub segment_paths: [PathBuf; 2],
    pub fps: u32,
    pub frame_bytes: usize,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        Self {
            vehicle_id: 0,
            segment_ms: DEFAULT_SEGMENT_MS,
            variant: Variant::StopOnAccident,
            segment_paths: [PathBuf::from("test1.ivsg"), PathBuf::from("test2.ivsg")],
            fps: DEFAULT_FPS,
            frame_bytes: DEFAULT_FRAME_BYTES,
        }
    }
}

impl RecorderConfig {
    /// Upper bound on frames whose timestamps fall in one segment.
    pub fn max_frames_per_segment(&self) -> u64 {
        (self.segment_ms * self.fps as u64).div_ceil(1000)
    }

    /// Frame payload bytes a full segment holds at the configured rate.
    pub fn segment_payload_cap(&self) -> u64 {
        self.max_frames_per_segment() * self.frame_bytes as u64
    }
}

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("recorder-stopped")]
    RecorderStopped,
    #[error("sensors-stopped")]
    SensorsStopped,
    #[error("tick at {now} before it is due at {due}")]
    TickNotDue { now: Millis, due: Millis },
    #[error("invalid recorder config: {0}")]
    Config(&'static str),
    #[error("segment storage: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentState {
    Empty,
    Active,
    Sealed,
    Cleared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// 1 or 2.
    pub index: u8,
    pub state: SegmentState,
    pub start_t: Millis,
    pub end_t: Option<Millis>,
    pub frame_count: u64,
    pub telemetry_count: u64,
    /// Exact container size, header included.
    pub byte_count: u64,
    /// Frame payload bytes only (no headers, no telemetry).
    pub payload_bytes: u64,
}

impl Segment {
    fn fresh(index: u8, state: SegmentState, start_t: Millis) -> Self {
        Self {
            index,
            state,
            start_t,
            end_t: None,
            frame_count: 0,
            telemetry_count: 0,
            byte_count: HEADER_LEN as u64,
            payload_bytes: 0,
        }
    }

    pub fn record_count(&self) -> u64 {
        self.frame_count + self.telemetry_count
    }

    /// Time span currently held, clipped to `at`.
    fn retained(&self, at: Millis) -> Option<(Millis, Millis)> {
        let end = match self.state {
            SegmentState::Active => at,
            SegmentState::Sealed => self.end_t.unwrap_or(at).min(at),
            SegmentState::Empty | SegmentState::Cleared => return None,
        };
        (end >= self.start_t).then_some((self.start_t, end))
    }
}

/// Side effects an accident asks of the surrounding system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccidentAction {
    CaptureGps,
    StopSensorRecording,
    NotifyServer,
    SendHelpSms,
}

pub const ACCIDENT_ACTIONS: [AccidentAction; 4] = [
    AccidentAction::CaptureGps,
    AccidentAction::StopSensorRecording,
    AccidentAction::NotifyServer,
    AccidentAction::SendHelpSms,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TickOutcome {
    /// Timer disabled; nothing happened.
    Ignored,
    /// Normal alternation.
    Switched { sealed: u8, activated: u8 },
    /// Record-through variant reached the tick after an accident.
    Stopped { sealed: u8 },
}

/// The two-file alternating recorder.
#[derive(Debug)]
pub struct Recorder<S> {
    cfg: RecorderConfig,
    file_alternat: u8,
    accident_flag: bool,
    timer_enabled: bool,
    next_tick_at: Millis,
    stopped: bool,
    segments: [Segment; 2],
    stores: [S; 2],
}

impl Recorder<FileStore> {
    /// Opens (and truncates) the two configured segment files.
    pub fn create_files(cfg: RecorderConfig, now: Millis) -> Result<Self, RecorderError> {
        let stores = [
            FileStore::create(&cfg.segment_paths[0])?,
            FileStore::create(&cfg.segment_paths[1])?,
        ];
        Self::init(cfg, stores, now)
    }
}

impl<S: SegmentStore> Recorder<S> {
    pub fn init(cfg: RecorderConfig, mut stores: [S; 2], now: Millis) -> Result<Self, RecorderError> {
        if cfg.segment_ms == 0 {
            return Err(RecorderError::Config("segment duration must be > 0"));
        }
        let header = ContainerHeader {
            vehicle_id: cfg.vehicle_id,
            start_t: now,
        }
        .encode();
        for s in &mut stores {
            s.reset(&header)?;
        }
        Ok(Self {
            file_alternat: 1,
            accident_flag: false,
            timer_enabled: true,
            next_tick_at: now + cfg.segment_ms,
            stopped: false,
            segments: [
                Segment::fresh(1, SegmentState::Active, now),
                Segment::fresh(2, SegmentState::Empty, now),
            ],
            stores,
            cfg,
        })
    }

    pub fn config(&self) -> &RecorderConfig {
        &self.cfg
    }

    pub fn file_alternat(&self) -> u8 {
        self.file_alternat
    }

    pub fn accident_flag(&self) -> bool {
        self.accident_flag
    }

    pub fn timer_enabled(&self) -> bool {
        self.timer_enabled
    }

    pub fn next_tick_at(&self) -> Millis {
        self.next_tick_at
    }

    /// Next tick, if the timer is still running.
    pub fn pending_tick(&self) -> Option<Millis> {
        self.timer_enabled.then_some(self.next_tick_at)
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn segments(&self) -> &[Segment; 2] {
        &self.segments
    }

    pub fn segment(&self, index: u8) -> &Segment {
        &self.segments[usize::from(index - 1)]
    }

    pub fn stores(&self) -> &[S; 2] {
        &self.stores
    }

    pub fn stores_mut(&mut self) -> &mut [S; 2] {
        &mut self.stores
    }

    /// Pushes buffered bytes of both segments to their stores.
    pub fn flush(&mut self) -> Result<(), RecorderError> {
        for s in &mut self.stores {
            s.flush()?;
        }
        Ok(())
    }

    pub fn into_stores(self) -> [S; 2] {
        self.stores
    }

    fn active_slot(&self) -> Option<usize> {
        self.segments.iter().position(|s| s.state == SegmentState::Active)
    }

    fn writable_slot(&self) -> Result<usize, RecorderError> {
        if self.stopped {
            return Err(RecorderError::RecorderStopped);
        }
        Ok(self.active_slot().expect("running recorder has an active segment"))
    }

    fn write(&mut self, slot: usize, kind: RecordKind, t: Millis, payload: &[u8]) -> Result<(), RecorderError> {
        let prefix = container::record_prefix(kind, t, payload.len());
        self.stores[slot].append(&[&prefix, payload])?;
        let seg = &mut self.segments[slot];
        seg.byte_count += (RECORD_OVERHEAD + payload.len()) as u64;
        match kind {
            RecordKind::Frame => {
                seg.frame_count += 1;
                seg.payload_bytes += payload.len() as u64;
            }
            RecordKind::Telemetry => seg.telemetry_count += 1,
        }
        debug_assert_eq!(seg.byte_count, self.stores[slot].len());
        Ok(())
    }

    pub fn append_frame(&mut self, t: Millis, payload: &[u8]) -> Result<(), RecorderError> {
        let slot = self.writable_slot()?;
        self.write(slot, RecordKind::Frame, t, payload)
    }

    pub fn append_telemetry(&mut self, sample: &TelemetrySample) -> Result<(), RecorderError> {
        let line = csv::format_line(sample, self.cfg.vehicle_id);
        self.append_telemetry_line(sample.t, &line)
    }

    /// Appends an already formatted telemetry CSV line.
    pub fn append_telemetry_line(&mut self, t: Millis, line: &str) -> Result<(), RecorderError> {
        let slot = self.writable_slot()?;
        if self.accident_flag {
            return Err(RecorderError::SensorsStopped);
        }
        self.write(slot, RecordKind::Telemetry, t, line.as_bytes())
    }

    fn seal(&mut self, slot: usize, now: Millis) -> Result<(), RecorderError> {
        let seg = &mut self.segments[slot];
        seg.state = SegmentState::Sealed;
        seg.end_t = Some(now.max(seg.start_t));
        self.stores[slot].flush()?;
        Ok(())
    }

    pub fn on_tick(&mut self, now: Millis) -> Result<TickOutcome, RecorderError> {
        if !self.timer_enabled {
            return Ok(TickOutcome::Ignored);
        }
        if now < self.next_tick_at {
            return Err(RecorderError::TickNotDue {
                now,
                due: self.next_tick_at,
            });
        }
        let current = usize::from(self.file_alternat - 1);
        if self.accident_flag && self.cfg.variant == Variant::RecordThroughAccident {
            self.timer_enabled = false;
            self.seal(current, now)?;
            self.stopped = true;
            return Ok(TickOutcome::Stopped {
                sealed: self.file_alternat,
            });
        }
        self.seal(current, now)?;
        let other = 1 - current;
        let header = ContainerHeader {
            vehicle_id: self.cfg.vehicle_id,
            start_t: now,
        }
        .encode();
        self.stores[other].reset(&header)?;
        self.segments[other] = Segment::fresh(other as u8 + 1, SegmentState::Cleared, now);
        self.segments[other].state = SegmentState::Active;
        self.file_alternat = other as u8 + 1;
        self.next_tick_at += self.cfg.segment_ms;
        Ok(TickOutcome::Switched {
            sealed: current as u8 + 1,
            activated: self.file_alternat,
        })
    }

    /// Returns the follow-up actions, or `None` if the accident was already
    /// handled.
    pub fn on_accident(&mut self, now: Millis) -> Result<Option<[AccidentAction; 4]>, RecorderError> {
        if self.accident_flag {
            return Ok(None);
        }
        if self.stopped {
            return Err(RecorderError::RecorderStopped);
        }
        self.accident_flag = true;
        if self.cfg.variant == Variant::StopOnAccident {
            self.timer_enabled = false;
            let slot = self.active_slot().expect("running recorder has an active segment");
            self.seal(slot, now)?;
            self.stopped = true;
        }
        Ok(Some(ACCIDENT_ACTIONS))
    }

    /// Normal shutdown (vehicle stopped, no accident). Idempotent.
    pub fn stop(&mut self, now: Millis) -> Result<(), RecorderError> {
        if self.stopped {
            return Ok(());
        }
        self.timer_enabled = false;
        if let Some(slot) = self.active_slot() {
            self.seal(slot, now)?;
        }
        self.stopped = true;
        Ok(())
    }

    /// Length of the contiguous recorded interval ending at the latest
    /// retained instant no later than `at`.
    pub fn recoverable_history(&self, at: Millis) -> Millis {
        let spans: Vec<(Millis, Millis)> = self.segments.iter().filter_map(|s| s.retained(at)).collect();
        let Some(end) = spans.iter().map(|&(_, e)| e).max() else {
            return 0;
        };
        let mut start = spans
            .iter()
            .filter(|&&(_, e)| e == end)
            .map(|&(s, _)| s)
            .min()
            .unwrap();
        while let Some(&(s, _)) = spans.iter().find(|&&(s, e)| e == start && s < start) {
            start = s;
        }
        end - start
    }

    /// Exact bytes across both segment files, headers included.
    pub fn storage_used(&self) -> u64 {
        self.segments.iter().map(|s| s.byte_count).sum()
    }

    pub fn payload_used(&self) -> u64 {
        self.segments.iter().map(|s| s.payload_bytes).sum()
    }
}

/// Events that end a full-time recording early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriveEvent {
    Accident(Millis),
    Stop(Millis),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullTimeConfig {
    pub vehicle_id: u32,
    pub fps: u32,
    pub frame_bytes: usize,
    /// Drive length if nothing stops it earlier.
    pub duration_ms: Millis,
    pub storage_limit: Option<u64>,
    /// Spacing of trace points.
    pub trace_every_ms: Millis,
}

impl Default for FullTimeConfig {
    fn default() -> Self {
        Self {
            vehicle_id: 0,
            fps: DEFAULT_FPS,
            frame_bytes: DEFAULT_FRAME_BYTES,
            duration_ms: 60_000,
            storage_limit: None,
            trace_every_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: Millis,
    pub bytes: u64,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EndOfDrive,
    Stopped,
    Accident,
    StorageLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageTrace {
    pub points: Vec<TracePoint>,
    pub stopped_at: Millis,
    pub reason: StopReason,
    pub frames: u64,
    pub final_bytes: u64,
    pub final_payload_bytes: u64,
}

impl StorageTrace {
    pub fn truncated(&self) -> bool {
        self.reason == StopReason::StorageLimit
    }
}

/// Baseline: one file, no timer, record from start until stop, accident or
/// the storage limit.
pub fn full_time_record(cfg: &FullTimeConfig, events: &[DriveEvent]) -> StorageTrace {
    let mut store = crate::store::CountingStore::default();
    full_time_record_into(cfg, events, &mut store).expect("counting store cannot fail")
}

pub fn full_time_record_into<S: SegmentStore>(
    cfg: &FullTimeConfig,
    events: &[DriveEvent],
    store: &mut S,
) -> io::Result<StorageTrace> {
    let header = ContainerHeader {
        vehicle_id: cfg.vehicle_id,
        start_t: 0,
    }
    .encode();
    store.reset(&header)?;
    let (mut end, mut reason) = (cfg.duration_ms, StopReason::EndOfDrive);
    for ev in events {
        let (t, r) = match *ev {
            DriveEvent::Accident(t) => (t, StopReason::Accident),
            DriveEvent::Stop(t) => (t, StopReason::Stopped),
        };
        if t < end {
            end = t;
            reason = r;
        }
    }
    let payload = vec![0u8; cfg.frame_bytes];
    let every = cfg.trace_every_ms.max(1);
    let mut points = vec![TracePoint {
        t: 0,
        bytes: store.len(),
        payload_bytes: 0,
    }];
    let mut next_point = every;
    let (mut frames, mut payload_bytes) = (0u64, 0u64);
    let mut stopped_at = end;
    loop {
        let t = frames * 1000 / cfg.fps as u64;
        while next_point <= t.min(end) {
            points.push(TracePoint {
                t: next_point,
                bytes: store.len(),
                payload_bytes,
            });
            next_point += every;
        }
        if t >= end {
            break;
        }
        let rec = (RECORD_OVERHEAD + payload.len()) as u64;
        if cfg.storage_limit.is_some_and(|lim| store.len() + rec > lim) {
            reason = StopReason::StorageLimit;
            stopped_at = t;
            break;
        }
        let prefix = container::record_prefix(RecordKind::Frame, t, payload.len());
        store.append(&[&prefix, &payload])?;
        frames += 1;
        payload_bytes += payload.len() as u64;
    }
    if points.last().is_none_or(|p| p.t != stopped_at) {
        points.push(TracePoint {
            t: stopped_at,
            bytes: store.len(),
            payload_bytes,
        });
    }
    store.flush()?;
    Ok(StorageTrace {
        points,
        stopped_at,
        reason,
        frames,
        final_bytes: store.len(),
        final_payload_bytes: payload_bytes,
    })
}
