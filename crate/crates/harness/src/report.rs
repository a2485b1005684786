//! Storage comparison between full-time recording, the dual-segment recorder
//! and the analytic VDVRS reference line.

use std::fmt;
use std::str::FromStr;

use ivvdr_core::recorder::{
    full_time_record, FullTimeConfig, Recorder, RecorderConfig, TickOutcome, Variant,
};
use ivvdr_core::sim::{FrameSource, DEFAULT_FPS};
use ivvdr_core::store::{CountingStore, SegmentStore};
use ivvdr_core::Millis;
use serde::{Deserialize, Serialize};

/// VDVRS storage need in bytes per minute (1.87 GB/min).
pub const VDVRS_BYTES_PER_MIN: u64 = 1_870_000_000;
/// 1800 frames of 12722 bytes: 22,899,600 B/min.
pub const PAPER_RATE_BYTES_PER_MIN: u64 = 22_899_600;

const MINUTE: Millis = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FullTime,
    DualSegment,
    VdvrsReference,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [
        Scheme::FullTime,
        Scheme::DualSegment,
        Scheme::VdvrsReference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::FullTime => "full_time",
            Scheme::DualSegment => "dual_segment",
            Scheme::VdvrsReference => "vdvrs_reference",
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scheme {s:?} (full_time|dual_segment|vdvrs_reference)"))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub schemes: Vec<Scheme>,
    pub durations_min: Vec<u64>,
    pub t_values_min: Vec<u64>,
    pub rate_bytes_per_min: u64,
    pub fps: u32,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            durations_min: vec![1, 5, 10, 20, 30, 60],
            t_values_min: vec![2, 5],
            rate_bytes_per_min: PAPER_RATE_BYTES_PER_MIN,
            fps: DEFAULT_FPS,
        }
    }
}

impl ReportConfig {
    /// Frame size that yields the configured rate, rounded to whole bytes.
    pub fn frame_bytes(&self) -> usize {
        let per_min = u64::from(self.fps) * 60;
        ((self.rate_bytes_per_min + per_min / 2) / per_min).max(1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: Scheme,
    pub duration_min: u64,
    pub t_min: Option<u64>,
    pub max_bytes: u64,
    /// Dual segment: footprint just after the last segment switch. Other
    /// schemes never shrink, so this equals `final_bytes`.
    pub min_bytes: u64,
    pub final_bytes: u64,
    pub max_payload_bytes: u64,
    pub final_payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StorageReport {
    pub rows: Vec<ReportRow>,
}

impl StorageReport {
    pub const CSV_HEADER: &'static str =
        "scheme,duration_min,T_min,max_bytes,min_bytes,final_bytes,max_payload_bytes,final_payload_bytes";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.scheme,
                r.duration_min,
                r.t_min.map(|t| t.to_string()).unwrap_or_default(),
                r.max_bytes,
                r.min_bytes,
                r.final_bytes,
                r.max_payload_bytes,
                r.final_payload_bytes
            ));
        }
        out
    }

    /// Aligned text table in MB, ready for plotting or reading.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>5} {:>14} {:>14} {:>14}\n",
            "scheme", "minutes", "T", "max MB", "min MB", "final MB"
        );
        let mb = |b: u64| format!("{:.3}", b as f64 / 1e6);
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>8} {:>5} {:>14} {:>14} {:>14}\n",
                r.scheme.as_str(),
                r.duration_min,
                r.t_min.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                mb(r.max_bytes),
                mb(r.min_bytes),
                mb(r.final_bytes)
            ));
        }
        out
    }
}

/// Byte accounting of one dual-segment drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DualRun {
    pub frames: u64,
    pub max_bytes: u64,
    pub max_segment_payload: u64,
    pub max_total_payload: u64,
    pub bytes_after_last_switch: u64,
    pub final_bytes: u64,
    pub final_payload: u64,
    pub switches: u64,
}

/// Drives a dual-segment recorder with frames at `fps` for `duration_ms`,
/// optionally with an accident. With `real_payload` the frames carry
/// generated bytes, otherwise zeros (the stores only count).
pub fn simulate_dual(
    cfg: &RecorderConfig,
    duration_ms: Millis,
    accident_at: Option<Millis>,
    real_payload: bool,
    seed: u64,
) -> DualRun {
    let stores = [CountingStore::default(), CountingStore::default()];
    simulate_dual_with(cfg, stores, duration_ms, accident_at, real_payload, seed)
}

pub fn simulate_dual_with<S: SegmentStore>(
    cfg: &RecorderConfig,
    stores: [S; 2],
    duration_ms: Millis,
    accident_at: Option<Millis>,
    real_payload: bool,
    seed: u64,
) -> DualRun {
    let mut rec = Recorder::init(cfg.clone(), stores, 0).expect("valid recorder config");
    let mut frames = FrameSource::new(seed, cfg.fps, cfg.frame_bytes, 0);
    let zeros = vec![0u8; cfg.frame_bytes];
    let mut run = DualRun {
        bytes_after_last_switch: rec.storage_used(),
        ..DualRun::default()
    };
    let mut accident = accident_at;
    loop {
        let t = frames.next_frame_at();
        if t >= duration_ms || rec.is_stopped() {
            break;
        }
        if let Some(at) = accident.filter(|&a| a <= t) {
            accident = None;
            while rec.pending_tick().is_some_and(|d| d < at) {
                let d = rec.pending_tick().unwrap();
                let out = rec_tick(&mut rec, d);
                note_tick(&mut run, &rec, out);
            }
            rec.on_accident(at).expect("first accident");
            continue;
        }
        while let Some(d) = rec.pending_tick().filter(|&d| d <= t) {
            let out = rec_tick(&mut rec, d);
            note_tick(&mut run, &rec, out);
        }
        if rec.is_stopped() {
            break;
        }
        if real_payload {
            let f = frames.make_frame();
            rec.append_frame(f.t, &f.payload).expect("append");
        } else {
            frames.skip_frame();
            rec.append_frame(t, &zeros).expect("append");
        }
        run.frames += 1;
        run.max_bytes = run.max_bytes.max(rec.storage_used());
        run.max_total_payload = run.max_total_payload.max(rec.payload_used());
        let seg_max = rec
            .segments()
            .iter()
            .map(|s| s.payload_bytes)
            .max()
            .unwrap_or(0);
        run.max_segment_payload = run.max_segment_payload.max(seg_max);
    }
    if !rec.is_stopped() {
        while let Some(d) = rec.pending_tick().filter(|&d| d <= duration_ms) {
            let out = rec_tick(&mut rec, d);
            note_tick(&mut run, &rec, out);
        }
    }
    run.final_bytes = rec.storage_used();
    run.final_payload = rec.payload_used();
    run
}

fn rec_tick<S: SegmentStore>(rec: &mut Recorder<S>, due: Millis) -> TickOutcome {
    rec.on_tick(due).expect("tick at due time")
}

fn note_tick<S: SegmentStore>(run: &mut DualRun, rec: &Recorder<S>, outcome: TickOutcome) {
    if let TickOutcome::Switched { .. } = outcome {
        run.switches += 1;
        run.bytes_after_last_switch = rec.storage_used();
    }
}

pub fn storage_report(cfg: &ReportConfig) -> StorageReport {
    let frame_bytes = cfg.frame_bytes();
    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        for &d in &cfg.durations_min {
            match scheme {
                Scheme::FullTime => {
                    let trace = full_time_record(
                        &FullTimeConfig {
                            vehicle_id: 1,
                            fps: cfg.fps,
                            frame_bytes,
                            duration_ms: d * MINUTE,
                            storage_limit: None,
                            trace_every_ms: MINUTE,
                        },
                        &[],
                    );
                    rows.push(ReportRow {
                        scheme,
                        duration_min: d,
                        t_min: None,
                        max_bytes: trace.final_bytes,
                        min_bytes: trace.final_bytes,
                        final_bytes: trace.final_bytes,
                        max_payload_bytes: trace.final_payload_bytes,
                        final_payload_bytes: trace.final_payload_bytes,
                    });
                }
                Scheme::DualSegment => {
                    for &t in &cfg.t_values_min {
                        let rcfg = RecorderConfig {
                            vehicle_id: 1,
                            segment_ms: t * MINUTE,
                            variant: Variant::StopOnAccident,
                            fps: cfg.fps,
                            frame_bytes,
                            ..RecorderConfig::default()
                        };
                        let run = simulate_dual(&rcfg, d * MINUTE, None, false, 0);
                        rows.push(ReportRow {
                            scheme,
                            duration_min: d,
                            t_min: Some(t),
                            max_bytes: run.max_bytes,
                            min_bytes: run.bytes_after_last_switch,
                            final_bytes: run.final_bytes,
                            max_payload_bytes: run.max_total_payload,
                            final_payload_bytes: run.final_payload,
                        });
                    }
                }
                Scheme::VdvrsReference => {
                    let b = VDVRS_BYTES_PER_MIN * d;
                    rows.push(ReportRow {
                        scheme,
                        duration_min: d,
                        t_min: None,
                        max_bytes: b,
                        min_bytes: b,
                        final_bytes: b,
                        max_payload_bytes: b,
                        final_payload_bytes: b,
                    });
                }
            }
        }
    }
    StorageReport { rows }
}
