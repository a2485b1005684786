#![allow(dead_code)]

pub mod oracle;

use ivvdr_core::container::{self, RecordKind};
use ivvdr_core::protocol::csv;
use ivvdr_core::recorder::{Recorder, RecorderConfig, Variant};
use ivvdr_core::sim::{AccidentScript, TelemetrySample};
use ivvdr_core::store::MemStore;
use ivvdr_core::vehicle::AgentConfig;
use ivvdr_core::Millis;
use ivvdr_harness::scenario::VehicleSpec;
use rand::Rng;

use oracle::PseudoRecorder;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Frame { t: Millis, payload: Vec<u8> },
    Sample { t: Millis, line: String },
    Accident { t: Millis },
    Stop { t: Millis },
}

impl Event {
    pub fn t(&self) -> Millis {
        match *self {
            Event::Frame { t, .. } | Event::Sample { t, .. } | Event::Accident { t } | Event::Stop { t } => t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub variant: Variant,
    pub vehicle_id: u32,
    pub segment_ms: Millis,
    pub start: Millis,
    pub events: Vec<Event>,
    pub end: Millis,
}

pub fn sample_line(t: Millis, vehicle_id: u32) -> String {
    let s = TelemetrySample {
        t,
        lat: 15.0 + t as f64 * 1e-6,
        lon: 44.0,
        speed: 50.0,
        ..TelemetrySample::default()
    };
    csv::format_line(&s, vehicle_id)
}

/// Random event schedule with up to `max_events` events. Times often land
/// exactly on tick instants so coincidences get exercised.
pub fn random_schedule(rng: &mut impl Rng, max_events: usize) -> Schedule {
    let segment_ms = rng.random_range(1..=500);
    let start = if rng.random_bool(0.2) { rng.random_range(0..1000) } else { 0 };
    let variant = if rng.random_bool(0.5) {
        Variant::StopOnAccident
    } else {
        Variant::RecordThroughAccident
    };
    let vehicle_id = rng.random_range(1..=1000);
    let n = rng.random_range(0..=max_events);
    let mut t = start;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        t += match rng.random_range(0..10) {
            0 => 0,
            1 => {
                let since = t - start;
                (segment_ms - since % segment_ms) % segment_ms
            }
            2 => rng.random_range(0..3 * segment_ms),
            _ => rng.random_range(0..=segment_ms / 4 + 1),
        };
        let ev = match rng.random_range(0..1000) {
            0..=4 => Event::Accident { t },
            5..=6 => Event::Stop { t },
            7..=349 => Event::Sample {
                t,
                line: sample_line(t, vehicle_id),
            },
            _ => {
                let len = rng.random_range(0..=24);
                Event::Frame {
                    t,
                    payload: (0..len).map(|_| rng.random()).collect(),
                }
            }
        };
        events.push(ev);
    }
    let end = t + rng.random_range(0..=2 * segment_ms);
    Schedule {
        variant,
        vehicle_id,
        segment_ms,
        start,
        events,
        end,
    }
}

/// Final observable state, compared field by field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub files: [Vec<u8>; 2],
    pub accepted: Vec<bool>,
    pub file_alternat: u8,
    pub accident_flag: bool,
    pub timer_enabled: bool,
    /// Next tick, when the timer still runs.
    pub next_tick: Option<Millis>,
    pub recording: bool,
}

pub struct RecorderDriver {
    pub rec: Recorder<MemStore>,
    pub accepted: Vec<bool>,
}

impl RecorderDriver {
    pub fn new(s: &Schedule) -> Self {
        let cfg = RecorderConfig {
            vehicle_id: s.vehicle_id,
            segment_ms: s.segment_ms,
            variant: s.variant,
            ..RecorderConfig::default()
        };
        Self {
            rec: Recorder::init(cfg, [MemStore::new(), MemStore::new()], s.start).expect("valid config"),
            accepted: Vec::new(),
        }
    }

    fn ticks(&mut self, t: Millis, inclusive: bool) {
        while let Some(d) = self.rec.pending_tick().filter(|&d| d < t || (inclusive && d == t)) {
            self.rec.on_tick(d).expect("tick at due time");
        }
    }

    pub fn apply(&mut self, ev: &Event) {
        let ok = match ev {
            Event::Frame { t, payload } => {
                self.ticks(*t, true);
                self.rec.append_frame(*t, payload).is_ok()
            }
            Event::Sample { t, line } => {
                self.ticks(*t, true);
                self.rec.append_telemetry_line(*t, line).is_ok()
            }
            Event::Accident { t } => {
                self.ticks(*t, false);
                matches!(self.rec.on_accident(*t), Ok(Some(_)))
            }
            Event::Stop { t } => {
                self.ticks(*t, true);
                let was = self.rec.is_stopped();
                self.rec.stop(*t).expect("stop");
                !was
            }
        };
        self.accepted.push(ok);
    }

    pub fn finish(&mut self, end: Millis) {
        self.ticks(end, true);
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            files: [
                self.rec.stores()[0].bytes().to_vec(),
                self.rec.stores()[1].bytes().to_vec(),
            ],
            accepted: self.accepted.clone(),
            file_alternat: self.rec.file_alternat(),
            accident_flag: self.rec.accident_flag(),
            timer_enabled: self.rec.timer_enabled(),
            next_tick: self.rec.pending_tick(),
            recording: !self.rec.is_stopped(),
        }
    }
}

pub struct OracleDriver {
    pub o: PseudoRecorder,
    pub powered_on: bool,
    pub accepted: Vec<bool>,
}

impl OracleDriver {
    pub fn new(s: &Schedule) -> Self {
        Self {
            o: PseudoRecorder::vehicle_start_on(s.variant, s.vehicle_id, s.segment_ms, s.start),
            powered_on: true,
            accepted: Vec::new(),
        }
    }

    pub fn apply(&mut self, ev: &Event) {
        let ok = match ev {
            Event::Frame { t, payload } => {
                self.o.run_timer_until(*t, true);
                self.o.video_frame(*t, payload)
            }
            Event::Sample { t, line } => {
                self.o.run_timer_until(*t, true);
                self.o.sensor_data(*t, line.as_bytes())
            }
            Event::Accident { t } => {
                self.o.run_timer_until(*t, false);
                // The handler only runs on a live, not yet triggered system.
                let fresh = self.powered_on && !self.o.accident_flag && self.o.is_recording();
                if self.powered_on {
                    self.o.on_accident(*t);
                }
                fresh
            }
            Event::Stop { t } => {
                self.o.run_timer_until(*t, true);
                let was_on = self.o.is_recording();
                self.o.vehicle_stop(*t);
                self.powered_on = false;
                was_on
            }
        };
        self.accepted.push(ok);
    }

    pub fn finish(&mut self, end: Millis) {
        self.o.run_timer_until(end, true);
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            files: [self.o.capture1.file.clone(), self.o.capture2.file.clone()],
            accepted: self.accepted.clone(),
            file_alternat: self.o.file_alternat,
            accident_flag: self.o.accident_flag,
            timer_enabled: self.o.timer1.enabled,
            next_tick: self.o.timer1.enabled.then_some(self.o.timer1.next_fire),
            recording: self.o.is_recording(),
        }
    }
}

/// Runs a schedule through both implementations.
pub fn run_both(s: &Schedule) -> (RecorderDriver, OracleDriver) {
    let mut r = RecorderDriver::new(s);
    let mut o = OracleDriver::new(s);
    for ev in &s.events {
        r.apply(ev);
        o.apply(ev);
    }
    r.finish(s.end);
    o.finish(s.end);
    (r, o)
}

/// First field where the two outcomes differ, for failure messages.
pub fn first_difference(a: &Outcome, b: &Outcome) -> Option<String> {
    for i in 0..2 {
        if a.files[i] != b.files[i] {
            let at = a.files[i]
                .iter()
                .zip(&b.files[i])
                .position(|(x, y)| x != y)
                .unwrap_or(a.files[i].len().min(b.files[i].len()));
            return Some(format!(
                "file {} differs at byte {at} (len {} vs {})",
                i + 1,
                a.files[i].len(),
                b.files[i].len()
            ));
        }
    }
    if a.accepted != b.accepted {
        let i = a.accepted.iter().zip(&b.accepted).position(|(x, y)| x != y).unwrap();
        return Some(format!("event {i} accepted {} vs {}", a.accepted[i], b.accepted[i]));
    }
    let flags = |o: &Outcome| (o.file_alternat, o.accident_flag, o.timer_enabled, o.next_tick, o.recording);
    (flags(a) != flags(b)).then(|| {
        format!(
            "(alternat, accident, timer, next_tick, recording) {:?} vs {:?}",
            flags(a),
            flags(b)
        )
    })
}

/// Timestamps of frame records across containers, ascending.
pub fn frame_times(files: &[&[u8]]) -> Vec<Millis> {
    let mut out: Vec<Millis> = files
        .iter()
        .flat_map(|f| container::parse(f).expect("valid container").records)
        .filter(|r| r.kind == RecordKind::Frame)
        .map(|r| r.t)
        .collect();
    out.sort_unstable();
    out
}

/// A desk-scale vehicle: small frames so long drives stay cheap.
pub fn desk_vehicle(id: u32, segment_ms: Millis, variant: Variant, accident: Option<AccidentScript>) -> VehicleSpec {
    let mut agent = AgentConfig {
        vehicle_id: id,
        credentials: format!("vehicle-{id}"),
        ..AgentConfig::default()
    };
    agent.recorder.vehicle_id = id;
    agent.recorder.segment_ms = segment_ms;
    agent.recorder.variant = variant;
    agent.recorder.frame_bytes = 64;
    agent.sim.accident = accident;
    VehicleSpec {
        agent,
        ..VehicleSpec::default()
    }
}
