//! Reference recorder transcribed line by line from the timer pseudocode.
//!
//! Two `Capture` objects, a `Timer1`, `file_alternat` and `Accident_flag`.
//! `Start()` opens the capture's file afresh (header only) and begins
//! recording into it; `Stop()` ends recording and leaves the file alone.
//! The timer fires at `Interval` multiples from start-up while enabled.

use ivvdr_core::container::{encode_record, ContainerHeader, RecordKind};
use ivvdr_core::recorder::Variant;
use ivvdr_core::Millis;

#[derive(Debug, Clone)]
pub struct Capture {
    pub file_name: &'static str,
    pub recording: bool,
    pub file: Vec<u8>,
    /// When the current file contents started and (if stopped) ended.
    pub started_at: Millis,
    pub stopped_at: Option<Millis>,
    vehicle_id: u32,
}

impl Capture {
    fn new(file_name: &'static str, vehicle_id: u32, now: Millis) -> Self {
        Self {
            file_name,
            recording: false,
            file: header(vehicle_id, now),
            started_at: now,
            stopped_at: Some(now),
            vehicle_id,
        }
    }

    pub fn start(&mut self, now: Millis) {
        self.file = header(self.vehicle_id, now);
        self.recording = true;
        self.started_at = now;
        self.stopped_at = None;
    }

    pub fn stop(&mut self, now: Millis) {
        if self.recording {
            self.recording = false;
            self.stopped_at = Some(now);
        }
    }

    /// Span of time this file holds footage for, clipped to `at`.
    fn span(&self, at: Millis) -> Option<(Millis, Millis)> {
        let end = self.stopped_at.unwrap_or(at).min(at);
        (end > self.started_at).then_some((self.started_at, end))
    }
}

fn header(vehicle_id: u32, now: Millis) -> Vec<u8> {
    ContainerHeader {
        vehicle_id,
        start_t: now,
    }
    .encode()
    .to_vec()
}

#[derive(Debug, Clone, Copy)]
pub struct Timer {
    pub enabled: bool,
    pub interval: Millis,
    pub next_fire: Millis,
}

#[derive(Debug, Clone)]
pub struct PseudoRecorder {
    pub variant: Variant,
    pub timer1: Timer,
    pub file_alternat: u8,
    pub accident_flag: bool,
    pub sensors_recording: bool,
    pub capture1: Capture,
    pub capture2: Capture,
}

impl PseudoRecorder {
    /// Part 1, vehicle_start_on.
    pub fn vehicle_start_on(variant: Variant, vehicle_id: u32, interval: Millis, now: Millis) -> Self {
        let mut r = Self {
            variant,
            timer1: Timer {
                enabled: true,
                interval,
                next_fire: now + interval,
            },
            file_alternat: 1,
            accident_flag: false,
            sensors_recording: true,
            capture1: Capture::new("test1.ivsg", vehicle_id, now),
            capture2: Capture::new("test2.ivsg", vehicle_id, now),
        };
        r.capture1.start(now);
        r
    }

    /// timer1_Tick for either variant.
    pub fn timer1_tick(&mut self, now: Millis) {
        match self.variant {
            Variant::StopOnAccident => self.alternate(now),
            Variant::RecordThroughAccident => {
                if self.accident_flag {
                    self.timer1.enabled = false;
                    if self.file_alternat == 2 {
                        self.capture2.stop(now);
                    } else {
                        self.capture1.stop(now);
                    }
                } else {
                    self.alternate(now);
                }
            }
        }
    }

    fn alternate(&mut self, now: Millis) {
        if self.file_alternat == 2 {
            self.capture2.stop(now);
            self.capture1.start(now);
            self.file_alternat = 1;
        } else {
            self.capture1.stop(now);
            self.capture2.start(now);
            self.file_alternat = 2;
        }
    }

    /// Part 2, On_Accident.
    pub fn on_accident(&mut self, now: Millis) {
        self.accident_flag = true;
        if self.variant == Variant::StopOnAccident {
            self.timer1.enabled = false;
            if self.file_alternat == 1 {
                self.capture1.stop(now);
            } else {
                self.capture2.stop(now);
            }
        }
        self.sensors_recording = false;
    }

    /// Vehicle switched off normally.
    pub fn vehicle_stop(&mut self, now: Millis) {
        self.timer1.enabled = false;
        self.capture1.stop(now);
        self.capture2.stop(now);
    }

    /// Fires every tick due before `t` (or at `t` when `inclusive`).
    pub fn run_timer_until(&mut self, t: Millis, inclusive: bool) {
        while self.timer1.enabled && (self.timer1.next_fire < t || (inclusive && self.timer1.next_fire == t)) {
            let fire = self.timer1.next_fire;
            self.timer1.next_fire += self.timer1.interval;
            self.timer1_tick(fire);
        }
    }

    fn recording_capture(&mut self) -> Option<&mut Capture> {
        if self.capture1.recording {
            Some(&mut self.capture1)
        } else if self.capture2.recording {
            Some(&mut self.capture2)
        } else {
            None
        }
    }

    /// Returns whether the frame was written anywhere.
    pub fn video_frame(&mut self, t: Millis, payload: &[u8]) -> bool {
        match self.recording_capture() {
            Some(c) => {
                encode_record(&mut c.file, RecordKind::Frame, t, payload);
                true
            }
            None => false,
        }
    }

    pub fn sensor_data(&mut self, t: Millis, line: &[u8]) -> bool {
        if !self.sensors_recording {
            return false;
        }
        match self.recording_capture() {
            Some(c) => {
                encode_record(&mut c.file, RecordKind::Telemetry, t, line);
                true
            }
            None => false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.capture1.recording || self.capture2.recording
    }

    /// Contiguous footage ending at the latest retained instant no later
    /// than `at`, measured one millisecond at a time.
    pub fn history(&self, at: Millis) -> Millis {
        let spans: Vec<(Millis, Millis)> = [&self.capture1, &self.capture2]
            .iter()
            .filter_map(|c| c.span(at))
            .collect();
        let Some(end) = spans.iter().map(|s| s.1).max() else {
            return 0;
        };
        let covered = |ms: Millis| spans.iter().any(|&(s, e)| s <= ms && ms < e);
        let mut ms = end;
        while ms > 0 && covered(ms - 1) {
            ms -= 1;
        }
        end - ms
    }

    /// Milliseconds retained contiguously from `from` onwards.
    pub fn footage_after(&self, from: Millis, at: Millis) -> Millis {
        let spans: Vec<(Millis, Millis)> = [&self.capture1, &self.capture2]
            .iter()
            .filter_map(|c| c.span(at))
            .collect();
        let covered = |ms: Millis| spans.iter().any(|&(s, e)| s <= ms && ms < e);
        let mut ms = from;
        while ms < at && covered(ms) {
            ms += 1;
        }
        ms - from
    }
}
