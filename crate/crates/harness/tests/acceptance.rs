//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ivvdr_core::container::{self, RecordKind};
use ivvdr_core::protocol::{
    codec, csv, ChannelId, Message, MsgType, Packet, RejectReason, ReorderBuffer, ReorderConfig, TerminateReason,
};
use ivvdr_core::recorder::{full_time_record, FullTimeConfig, RecorderConfig, SegmentState, Variant};
use ivvdr_core::sim::{AccidentKind, AccidentScript, GeoPoint, Simulator, TelemetrySample, TurnSignal};
use ivvdr_core::Millis;
use ivvdr_harness::diff::container_diff;
use ivvdr_harness::netsim::{Delay, Faults, NetConfig};
use ivvdr_harness::report::{
    simulate_dual, storage_report, ReportConfig, Scheme, PAPER_RATE_BYTES_PER_MIN, VDVRS_BYTES_PER_MIN,
};
use ivvdr_harness::runner::{run_scenario, RunResult};
use ivvdr_harness::scenario::{Scenario, UserAction, UserSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{desk_vehicle, first_difference, frame_times, run_both, Event, OracleDriver, RecorderDriver, Schedule};

const MINUTE: Millis = 60_000;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within_budget(started: Instant, budget: Duration, detail: String) -> Outcome {
    let took = started.elapsed();
    ensure!(took <= budget, "{detail}; took {took:.1?}, budget {budget:?}");
    Ok(detail)
}

fn storage_bounds() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5107);
    let paper = |t_min: u64, variant: Variant| RecorderConfig {
        vehicle_id: 1,
        segment_ms: t_min * MINUTE,
        variant,
        fps: 30,
        frame_bytes: 12_722,
        ..RecorderConfig::default()
    };
    let drive = 60 * MINUTE;
    let mut worst_seg = 0;
    let mut worst_total = 0;
    for variant in [Variant::StopOnAccident, Variant::RecordThroughAccident] {
        for _ in 0..2 {
            let accident = rng.random_range(0..drive);
            let cfg = paper(5, variant);
            let run = simulate_dual(&cfg, drive, Some(accident), false, 1);
            ensure!(
                run.max_segment_payload <= 114_500_000,
                "T=5 {variant:?} accident@{accident}: segment payload {} > 114.5 MB",
                run.max_segment_payload
            );
            ensure!(
                run.max_total_payload <= 229_000_000,
                "T=5 {variant:?} accident@{accident}: total payload {} > 229 MB",
                run.max_total_payload
            );
            let overhead = 2 * (17 + 13 * cfg.max_frames_per_segment());
            ensure!(
                run.max_bytes <= 2 * cfg.segment_payload_cap() + overhead,
                "T=5 container bytes {} above the two-segment bound",
                run.max_bytes
            );
            worst_seg = worst_seg.max(run.max_segment_payload);
            worst_total = worst_total.max(run.max_total_payload);
        }
    }
    let t2 = paper(2, Variant::StopOnAccident);
    let accident = rng.random_range(2 * t2.segment_ms..drive);
    let mut seg2 = Vec::new();
    for acc in [None, Some(accident)] {
        let run = simulate_dual(&t2, drive, acc, false, 1);
        let err = (run.max_segment_payload as f64 - 45.8e6).abs() / 45.8e6;
        ensure!(
            err <= 0.005,
            "T=2 accident {acc:?}: segment payload {} is {:.3}% off 45.8 MB",
            run.max_segment_payload,
            err * 100.0
        );
        seg2.push(run.max_segment_payload);
    }
    within_budget(
        started,
        Duration::from_secs(60),
        format!("T=5 max segment {worst_seg} B, max total {worst_total} B; T=2 segment {} B", seg2[0]),
    )
}

fn full_time_baseline() -> Outcome {
    let cfg = |minutes: u64| FullTimeConfig {
        vehicle_id: 1,
        fps: 30,
        frame_bytes: 12_722,
        duration_ms: minutes * MINUTE,
        storage_limit: None,
        trace_every_ms: MINUTE,
    };
    let one = full_time_record(&cfg(1), &[]);
    ensure!(
        one.final_payload_bytes == PAPER_RATE_BYTES_PER_MIN,
        "1 min payload {} != 22,899,600",
        one.final_payload_bytes
    );
    ensure!(
        (one.final_payload_bytes as f64 - 22.9e6).abs() < 12_722.0,
        "1 min payload {} not 22.9 MB",
        one.final_payload_bytes
    );
    let hour = full_time_record(&cfg(60), &[]);
    for p in &hour.points {
        let frames = p.t * 30 / 1000;
        ensure!(
            p.payload_bytes == frames * 12_722,
            "payload at {} ms is {}, expected {}",
            p.t,
            p.payload_bytes,
            frames * 12_722
        );
        ensure!(
            p.bytes == p.payload_bytes + 17 + 13 * frames,
            "container bytes at {} ms carry more than header and record overhead",
            p.t
        );
        if p.t % MINUTE == 0 {
            let m = p.t / MINUTE;
            ensure!(
                p.payload_bytes == m * PAPER_RATE_BYTES_PER_MIN,
                "not linear at minute {m}"
            );
        }
    }
    let report = storage_report(&ReportConfig::default());
    let csv = report.to_csv();
    let vdvrs: Vec<_> = report.rows.iter().filter(|r| r.scheme == Scheme::VdvrsReference).collect();
    ensure!(!vdvrs.is_empty(), "report has no VDVRS rows");
    for r in &vdvrs {
        ensure!(
            r.final_bytes == VDVRS_BYTES_PER_MIN * r.duration_min,
            "VDVRS row for {} min is {}",
            r.duration_min,
            r.final_bytes
        );
        ensure!(
            csv.contains(&format!("vdvrs_reference,{},,{}", r.duration_min, r.final_bytes)),
            "VDVRS line missing from CSV"
        );
    }
    for r in report.rows.iter().filter(|r| r.scheme == Scheme::FullTime) {
        ensure!(
            r.final_payload_bytes == r.duration_min * PAPER_RATE_BYTES_PER_MIN,
            "full-time report row for {} min not linear",
            r.duration_min
        );
        for d in report
            .rows
            .iter()
            .filter(|d| d.scheme == Scheme::DualSegment && d.duration_min == r.duration_min)
        {
            let t = d.t_min.unwrap();
            if r.duration_min > 2 * t {
                ensure!(
                    r.final_bytes > d.max_bytes,
                    "full-time {} min does not exceed dual T={t}",
                    r.duration_min
                );
            }
        }
    }
    Ok(format!(
        "1 min = {} B, 60 min = {} B, VDVRS 1 min = {} B",
        one.final_payload_bytes, hour.final_payload_bytes, VDVRS_BYTES_PER_MIN
    ))
}

/// Regular drive at desk scale: frames at `fps`, telemetry every 100 ms,
/// one accident.
fn history_schedule(segment_ms: Millis, fps: u32, variant: Variant, accident: Millis) -> Schedule {
    let end = accident + 2 * segment_ms + 1;
    let mut events = Vec::new();
    let mut k = 0u64;
    let mut next_sample = 100;
    loop {
        let tf = k * 1000 / u64::from(fps);
        if tf >= end {
            break;
        }
        while next_sample <= tf {
            events.push(Event::Sample {
                t: next_sample,
                line: common::sample_line(next_sample, 9),
            });
            next_sample += 100;
        }
        events.push(Event::Frame {
            t: tf,
            payload: vec![(k % 251) as u8; 13],
        });
        k += 1;
    }
    let at = events.partition_point(|e| e.t() < accident);
    events.insert(at, Event::Accident { t: accident });
    Schedule {
        variant,
        vehicle_id: 9,
        segment_ms,
        start: 0,
        events,
        end,
    }
}

fn frame_instants(fps: u32, from: Millis, to: Millis) -> usize {
    let fps = u64::from(fps);
    (0..)
        .map(|k: u64| k * 1000 / fps)
        .take_while(|&t| t < to)
        .filter(|&t| t >= from)
        .count()
}

fn guaranteed_history() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4157);
    let mut cases = 0;
    let mut on_tick = 0;
    for _ in 0..1_000 {
        let segment_ms = rng.random_range(100..=3_000);
        let fps = [5, 10, 20, 25, 30][rng.random_range(0..5)];
        let variant = if rng.random_bool(0.5) {
            Variant::StopOnAccident
        } else {
            Variant::RecordThroughAccident
        };
        let accident = if rng.random_bool(0.1) {
            segment_ms * rng.random_range(1..6)
        } else {
            rng.random_range(0..6 * segment_ms)
        };
        let s = history_schedule(segment_ms, fps, variant, accident);
        let tag = format!("T={segment_ms} fps={fps} {variant:?} accident@{accident}");

        let mut r = RecorderDriver::new(&s);
        let mut o = OracleDriver::new(&s);
        let mut next_tick_at_accident = None;
        for ev in &s.events {
            r.apply(ev);
            o.apply(ev);
            if matches!(ev, Event::Accident { .. }) {
                next_tick_at_accident = Some(r.rec.next_tick_at());
            }
        }
        r.finish(s.end);
        o.finish(s.end);
        if let Some(d) = first_difference(&r.outcome(), &o.outcome()) {
            return Err(format!("{tag}: recorder and oracle disagree: {d}"));
        }
        let files = [o.o.capture1.file.as_slice(), o.o.capture2.file.as_slice()];
        let frames = frame_times(&files);
        let t = accident;
        match variant {
            Variant::StopOnAccident => {
                let h = r.rec.recoverable_history(t);
                ensure!(h == o.o.history(t), "{tag}: history {h} vs oracle {}", o.o.history(t));
                if t < segment_ms {
                    ensure!(h == t, "{tag}: history {h} != t");
                } else if t % segment_ms == 0 && t >= 2 * segment_ms {
                    on_tick += 1;
                    ensure!(h == 2 * segment_ms, "{tag}: tick-coincident history {h} != 2T");
                } else {
                    ensure!(
                        (segment_ms..2 * segment_ms).contains(&h),
                        "{tag}: history {h} outside [T, 2T)"
                    );
                }
                let held = frames.iter().filter(|&&f| f >= t - h && f < t).count();
                ensure!(
                    held == frame_instants(fps, t - h, t),
                    "{tag}: {held} frames held for the {h} ms history"
                );
                ensure!(frames.iter().all(|&f| f < t), "{tag}: frame after the accident");
            }
            Variant::RecordThroughAccident => {
                let next_tick = next_tick_at_accident.expect("accident applied");
                let pre = o.o.history(t);
                if t >= segment_ms {
                    ensure!(pre >= segment_ms, "{tag}: pre-accident footage {pre} < T");
                } else {
                    ensure!(pre == t, "{tag}: pre-accident footage {pre} != t");
                }
                let post = o.o.footage_after(t, s.end);
                ensure!(
                    post == next_tick - t,
                    "{tag}: post-accident footage {post} != next tick {next_tick} - t"
                );
                let after: Vec<_> = frames.iter().filter(|&&f| f >= t).collect();
                ensure!(
                    after.len() == frame_instants(fps, t, next_tick) && after.iter().all(|&&f| f < next_tick),
                    "{tag}: post-accident frames do not fill [t, next tick)"
                );
                ensure!(
                    r.rec.recoverable_history(s.end) == o.o.history(s.end),
                    "{tag}: final history differs from oracle"
                );
            }
        }
        cases += 1;
    }
    within_budget(
        started,
        Duration::from_secs(30),
        format!("{cases} scenarios, {on_tick} tick-coincident accidents, 0 violations"),
    )
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut events = 0usize;
    let mut largest = 0usize;
    for i in 0..10_000 {
        let max_events = if i % 100 == 0 { 10_000 } else { 400 };
        let s = common::random_schedule(&mut rng, max_events);
        let (r, o) = run_both(&s);
        if let Some(d) = first_difference(&r.outcome(), &o.outcome()) {
            return Err(format!(
                "schedule {i} (T={}, {:?}, {} events): {d}",
                s.segment_ms,
                s.variant,
                s.events.len()
            ));
        }
        events += s.events.len();
        largest = largest.max(s.events.len());
    }
    within_budget(
        started,
        Duration::from_secs(60),
        format!("10000 schedules, {events} events (largest {largest}), byte-identical"),
    )
}

fn random_string(rng: &mut impl Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| rng.random::<char>()).collect()
}

fn random_packet(rng: &mut impl Rng) -> Packet {
    let fix = GeoPoint {
        lat: f64::from_bits(rng.random()),
        lon: f64::from_bits(rng.random()),
    };
    let message = match rng.random_range(0..11) {
        0 => Message::Login {
            credentials: random_string(rng, 40),
        },
        1 => Message::Running {
            session_start: rng.random(),
            segment_ms: rng.random(),
        },
        2 => Message::StreamRequest,
        3 => Message::TerminateReport {
            reason: if rng.random() {
                TerminateReason::Stopped
            } else {
                TerminateReason::Accident
            },
        },
        4 => Message::AccidentNotify {
            kind: if rng.random() {
                AccidentKind::Turnover
            } else {
                AccidentKind::Crash
            },
            fix,
        },
        5 => Message::UserEnable {
            credentials: random_string(rng, 40),
        },
        6 => Message::UserDisable,
        7 => Message::Ack {
            of: MsgType::from_code([1, 2, 3, 4, 5, 6, 7, 8, 9, 0x10, 0x11][rng.random_range(0..11)]).unwrap(),
        },
        8 => Message::Reject {
            reason: RejectReason::from_code(rng.random_range(1..=5)).unwrap(),
        },
        9 => {
            let len = if rng.random_bool(0.01) {
                codec::MAX_PAYLOAD
            } else {
                rng.random_range(0..2_048)
            };
            let mut payload = vec![0u8; len];
            rng.fill(&mut payload[..]);
            Message::Video { payload }
        }
        _ => {
            let sample = TelemetrySample {
                t: rng.random_range(0..u64::MAX / 2),
                lat: rng.random_range(-90.0..90.0),
                lon: rng.random_range(-180.0..180.0),
                speed: rng.random_range(0.0..300.0),
                angle: rng.random_range(-180.0..180.0),
                airbag_deployed: rng.random(),
                brake: rng.random(),
                turn_signal: [TurnSignal::Off, TurnSignal::Left, TurnSignal::Right][rng.random_range(0..3)],
            };
            Message::Data {
                line: csv::format_line(&sample, rng.random()),
            }
        }
    };
    Packet {
        channel: ChannelId::ALL[rng.random_range(0..5)],
        vehicle_id: rng.random_range(1..=u32::MAX),
        user_id: rng.random_range(1..=u32::MAX),
        seq: rng.random(),
        t: rng.random(),
        message,
    }
}

fn has_nan(p: &Packet) -> bool {
    matches!(&p.message, Message::AccidentNotify { fix, .. } if fix.lat.is_nan() || fix.lon.is_nan())
}

fn protocol_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    let mut corpus = Vec::new();
    for i in 0..100_000 {
        let p = random_packet(&mut rng);
        let bytes = codec::encode(&p).map_err(|e| format!("message {i} failed to encode: {e}"))?;
        let back = codec::decode(&bytes).map_err(|e| format!("message {i} failed to decode: {e}"))?;
        ensure!(
            has_nan(&p) || back == p,
            "message {i} changed in round trip: {p:?} -> {back:?}"
        );
        ensure!(
            codec::encode(&back).as_deref() == Ok(&bytes[..]),
            "message {i} re-encodes differently"
        );
        if corpus.len() < 512 && bytes.len() < 4_096 {
            corpus.push(bytes);
        }
    }

    let prev = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut crashes = 0u64;
    let mut accepted = 0u64;
    let mut buf = Vec::new();
    for i in 0..1_000_000u32 {
        buf.clear();
        match i % 4 {
            0 => {
                let n = rng.random_range(0..96);
                buf.extend((0..n).map(|_| rng.random::<u8>()));
            }
            1 => {
                buf.extend_from_slice(codec::MAGIC);
                buf.push(codec::VERSION);
                let n = rng.random_range(0..80);
                buf.extend((0..n).map(|_| rng.random::<u8>()));
            }
            _ => {
                buf.extend_from_slice(&corpus[rng.random_range(0..corpus.len())]);
                for _ in 0..rng.random_range(1..4) {
                    match rng.random_range(0..3) {
                        0 if !buf.is_empty() => {
                            let at = rng.random_range(0..buf.len());
                            buf[at] ^= 1 << rng.random_range(0..8);
                        }
                        1 => buf.truncate(rng.random_range(0..=buf.len())),
                        _ => buf.push(rng.random()),
                    }
                }
            }
        }
        match panic::catch_unwind(AssertUnwindSafe(|| codec::decode(&buf))) {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(_)) => {}
            Err(_) => crashes += 1,
        }
    }
    panic::set_hook(prev);
    ensure!(crashes == 0, "decode panicked on {crashes} fuzz datagrams");

    let mut releases = 0u64;
    for round in 0..2_000u64 {
        let cfg = ReorderConfig {
            window: rng.random_range(1..=64),
            max_hold_ms: rng.random_range(1..=300),
        };
        let mut buf = ReorderBuffer::new(cfg, 0);
        let n = rng.random_range(1..400u64);
        let mut order: Vec<u64> = (0..n).collect();
        // Shuffle only within the window, then lose and duplicate a few.
        for i in 0..order.len() {
            let j = (i + rng.random_range(0..cfg.window)).min(order.len() - 1);
            order.swap(i, j);
        }
        let mut now = 0;
        let mut out = Vec::new();
        for seq in order {
            now += rng.random_range(0..20);
            out.extend(buf.poll(now));
            if rng.random_bool(0.05) {
                continue;
            }
            out.extend(buf.push(seq, seq, now));
            if rng.random_bool(0.05) {
                out.extend(buf.push(seq, seq, now));
            }
        }
        out.extend(buf.flush());
        ensure!(
            out.windows(2).all(|w| w[0].0 < w[1].0),
            "round {round}: release order not strictly increasing"
        );
        ensure!(out.iter().all(|(s, v)| s == v), "round {round}: payload swapped");
        releases += out.len() as u64;
    }
    Ok(format!(
        "100000 round trips, 1000000 fuzz datagrams ({accepted} accepted, 0 panics), {releases} ordered releases"
    ))
}

fn event_time(line: &str) -> Millis {
    line.split(' ').next().and_then(|t| t.parse().ok()).unwrap_or(0)
}

fn streaming_since(r: &RunResult, vid: u32) -> Option<Millis> {
    let needle = format!(" vehicle {vid} phase=Streaming");
    r.trace.iter().find(|l| l.contains(&needle)).map(|l| event_time(l))
}

/// Vehicle and server containers of `vid` compared over the part of the
/// drive that was both streamed and is still retained on the vehicle.
fn mirror_diff(r: &mut RunResult, vid: u32, stop: Millis) -> Result<ivvdr_harness::diff::DiffReport, String> {
    let since = streaming_since(r, vid).ok_or("vehicle never streamed")?;
    let rec = r.vehicle(vid).and_then(|v| v.recorder()).ok_or("vehicle has no recorder")?;
    let retained = rec
        .segments()
        .iter()
        .filter(|s| matches!(s.state, SegmentState::Active | SegmentState::Sealed))
        .map(|s| s.start_t)
        .min()
        .ok_or("vehicle retained nothing")?;
    let veh = r.vehicle_segments(vid);
    let srv = r.server_segments(vid);
    ensure!(!srv.is_empty(), "server kept no segments for vehicle {vid}");
    let a: Vec<&[u8]> = veh.iter().map(|v| v.as_slice()).collect();
    let b: Vec<&[u8]> = srv.iter().map(|v| v.as_slice()).collect();
    container_diff(&a, &b, since.max(retained)..stop + 1).map_err(|e| e.to_string())
}

fn mirroring_scenario(net: NetConfig) -> Scenario {
    let mut v = desk_vehicle(1, 5 * MINUTE, Variant::StopOnAccident, None);
    v.stop_at = Some(12 * MINUTE);
    Scenario {
        name: "mirror".into(),
        duration_ms: 12 * MINUTE + 5_000,
        net,
        vehicles: vec![v],
        ..Scenario::default()
    }
}

fn end_to_end_mirroring() -> Outcome {
    let stop = 12 * MINUTE;
    let mut clean = run_scenario(&mirroring_scenario(NetConfig::lossless(6))).map_err(|e| e.to_string())?;
    let d = mirror_diff(&mut clean, 1, stop)?;
    ensure!(d.compared_a > 0, "nothing compared");
    ensure!(d.is_empty(), "zero-loss diff not empty: {d}");

    let p = 0.05;
    let mut lossy = run_scenario(&mirroring_scenario(NetConfig::stream_loss(6, p))).map_err(|e| e.to_string())?;
    let l = mirror_diff(&mut lossy, 1, stop)?;
    ensure!(
        l.extra_on_b.is_empty() && l.mismatched.is_empty(),
        "lossy diff has {} extra and {} mismatched records",
        l.extra_on_b.len(),
        l.mismatched.len()
    );
    let n = l.compared_a as f64;
    let (mean, sigma) = (n * p, (n * p * (1.0 - p)).sqrt());
    let missing = l.missing_on_b.len() as f64;
    ensure!(
        (missing - mean).abs() <= 3.0 * sigma,
        "{missing} missing of {n}, expected {mean:.1} ± {:.1}",
        3.0 * sigma
    );
    Ok(format!(
        "clean: {} records identical; 5% loss: {} missing of {} (expected {mean:.0} ± {:.0}), none extra or mismatched",
        d.compared_a,
        l.missing_on_b.len(),
        l.compared_a,
        3.0 * sigma
    ))
}

fn fix_at(sc: &Scenario, vid: u32, t: Millis) -> GeoPoint {
    let spec = sc.vehicles.iter().find(|v| v.agent.vehicle_id == vid).unwrap();
    let mut sim = Simulator::starting_at(spec.agent.sim.clone(), spec.start_at).unwrap();
    loop {
        let s = sim.next_sample();
        if s.t >= t {
            return s.fix();
        }
    }
}

fn accident_flow() -> Outcome {
    let mut notes = Vec::new();
    for kind in [AccidentKind::Turnover, AccidentKind::Crash] {
        for variant in [Variant::StopOnAccident, Variant::RecordThroughAccident] {
            let tag = format!("{kind} {variant:?}");
            let script = AccidentScript {
                kind,
                at: 150_000,
            };
            let mut v = desk_vehicle(3, MINUTE, variant, Some(script));
            v.stop_at = Some(400_000);
            let sc = Scenario {
                name: "accident".into(),
                duration_ms: 420_000,
                net: NetConfig::lossless(7),
                vehicles: vec![v],
                ..Scenario::default()
            };
            let r = run_scenario(&sc).map_err(|e| e.to_string())?;
            let agent = r.vehicle(3).unwrap();
            let (k, detected) = agent.accident().ok_or(format!("{tag}: no accident detected"))?;
            ensure!(k == kind, "{tag}: detected as {k}");
            let fix = fix_at(&sc, 3, detected);
            let log: Vec<_> = r.server.accident_log().iter().filter(|e| e.vehicle_id == 3).collect();
            ensure!(log.len() == 1, "{tag}: {} accident log entries", log.len());
            ensure!(
                log[0].t == detected && log[0].kind == kind,
                "{tag}: log entry {:?} does not match detection at {detected}",
                log[0]
            );
            ensure!(
                log[0].lat == fix.lat && log[0].lon == fix.lon,
                "{tag}: logged fix ({}, {}) is not the fix at detection ({}, {})",
                log[0].lat,
                log[0].lon,
                fix.lat,
                fix.lon
            );
            let sms = agent.sms_log();
            ensure!(sms.len() == 1, "{tag}: {} SMS records", sms.len());
            ensure!(
                sms[0].lat == fix.lat && sms[0].lon == fix.lon && sms[0].t == detected,
                "{tag}: SMS record does not carry the detection fix"
            );
            let control: Vec<&String> = r
                .trace
                .iter()
                .filter(|l| l.contains(" send vehicle 3 control "))
                .collect();
            let last = control.last().ok_or(format!("{tag}: vehicle sent nothing"))?;
            if variant == Variant::StopOnAccident {
                ensure!(
                    last.contains(" TerminateReport "),
                    "{tag}: final control message is {last:?}"
                );
                let notify = control.iter().position(|l| l.contains(" AccidentNotify "));
                ensure!(
                    notify.is_some_and(|i| i + 1 < control.len()),
                    "{tag}: AccidentNotify missing or not before the terminate report"
                );
            }
            notes.push(format!("{kind}/{}@{detected}", if variant == Variant::StopOnAccident { 1 } else { 2 }));
        }
    }
    Ok(format!("one log entry and one SMS each: {}", notes.join(", ")))
}

fn server_event_time(r: &RunResult, event: &str, user: u32) -> Option<Millis> {
    let e = format!("event={event} ");
    let u = format!(" user={user}");
    r.server
        .events()
        .iter()
        .find(|ev| ev.to_string().contains(&e) && ev.to_string().contains(&u))
        .map(|ev| ev.t)
}

fn subscription_semantics() -> Outcome {
    let mut v = desk_vehicle(5, 2 * MINUTE, Variant::StopOnAccident, None);
    v.owners = vec![1, 2];
    v.stop_at = Some(180_000);
    let user = |id: u32, actions: Vec<UserAction>| UserSpec {
        id,
        credentials: format!("user-{id}"),
        vehicles: vec![5],
        register: true,
        actions,
    };
    let sc = Scenario {
        name: "subscribe".into(),
        duration_ms: 260_000,
        net: NetConfig::lossless(8),
        vehicles: vec![v],
        users: vec![
            user(
                1,
                vec![
                    UserAction::Enable { t: 30_000, vehicle: 5 },
                    UserAction::Disable { t: 90_000 },
                ],
            ),
            user(2, vec![UserAction::Enable { t: 200_000, vehicle: 5 }]),
        ],
        ..Scenario::default()
    };
    let mut r = run_scenario(&sc).map_err(|e| e.to_string())?;

    let enabled = server_event_time(&r, "user-enable", 1).ok_or("user 1 never enabled")?;
    let disabled = server_event_time(&r, "user-disable", 1).ok_or("user 1 never disabled")?;
    let live = r.user(1).unwrap();
    let got = live.received();
    let forwarded = r.server.user(1).unwrap().forwarded;
    ensure!(forwarded > 0, "nothing forwarded to user 1");
    ensure!(
        got.video_chunks + got.data_lines == forwarded && got.gaps == 0 && got.dropped == 0,
        "user 1 got {got:?} of {forwarded} forwarded"
    );
    let user_bytes = live.container().bytes().to_vec();
    let srv = r.server_segments(5);
    let b: Vec<&[u8]> = srv.iter().map(|v| v.as_slice()).collect();
    // Chunks ingested after the enable; a send period of slack at the end.
    let window = enabled..disabled - 100;
    let d = container_diff(&[&user_bytes], &b, window.clone()).map_err(|e| e.to_string())?;
    ensure!(
        d.is_empty(),
        "live stream differs from the server recording over {window:?}: {d}"
    );
    let after_disable = r
        .trace
        .iter()
        .filter(|l| l.contains(" send server->user 1 user_") && event_time(l) > disabled)
        .count();
    ensure!(after_disable == 0, "{after_disable} chunks forwarded after disable");

    let replay = r.user(2).unwrap();
    let replay_bytes = replay.container().bytes().to_vec();
    let rd = container_diff(&b, &[&replay_bytes], 0..Millis::MAX).map_err(|e| e.to_string())?;
    ensure!(rd.compared_a > 0, "replay compared nothing");
    ensure!(rd.is_empty(), "replay differs from last segments: {rd}");
    let replayed = container::parse(&replay_bytes).map_err(|e| e.to_string())?.records;
    let mut stored: Vec<_> = b
        .iter()
        .flat_map(|f| container::parse(f).unwrap().records)
        .collect();
    stored.sort_by_key(|r| r.t);
    // Video and telemetry travel on separate channels; order holds per kind.
    for kind in [RecordKind::Frame, RecordKind::Telemetry] {
        let of = |v: &[container::Record]| -> Vec<(Millis, Vec<u8>)> {
            v.iter().filter(|r| r.kind == kind).map(|r| (r.t, r.payload.clone())).collect()
        };
        ensure!(of(&replayed) == of(&stored), "replayed {kind:?} records out of order");
    }
    Ok(format!(
        "live: {forwarded} chunks all received, 0 after disable; replay: {} records byte-identical",
        rd.compared_a
    ))
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn busy_scenario() -> Scenario {
    let mut net = NetConfig::lossless(0);
    net.default = Faults {
        loss_rate: 0.03,
        delay: Delay::Uniform { min: 1, max: 30 },
        reorder_rate: 0.1,
        reorder_extra_ms: 60,
        duplicate_rate: 0.02,
    };
    let mut a = desk_vehicle(
        1,
        30_000,
        Variant::RecordThroughAccident,
        Some(AccidentScript {
            kind: AccidentKind::Turnover,
            at: 70_000,
        }),
    );
    a.owners = vec![1];
    let mut b = desk_vehicle(2, 20_000, Variant::StopOnAccident, None);
    b.start_at = 5_000;
    b.stop_at = Some(100_000);
    b.owners = vec![1];
    Scenario {
        name: "busy".into(),
        duration_ms: 150_000,
        net,
        vehicles: vec![a, b],
        users: vec![UserSpec {
            id: 1,
            credentials: "u".into(),
            vehicles: vec![1, 2],
            register: true,
            actions: vec![
                UserAction::Enable { t: 10_000, vehicle: 2 },
                UserAction::Disable { t: 50_000 },
            ],
        }],
        ..Scenario::default()
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let sc = busy_scenario().with_seed(42);
        let mut r = run_scenario(&sc).map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("run{run}"));
        r.write_outputs(&out).map_err(|e| e.to_string())?;
        hashes.push(r.trace_hash.clone());
        outputs.push(files_under(&out));
    }
    ensure!(hashes[0] == hashes[1], "trace hashes differ: {} vs {}", hashes[0], hashes[1]);
    ensure!(outputs[0].len() > 5, "only {} output files", outputs[0].len());
    for (name, bytes) in &outputs[0] {
        ensure!(outputs[1].get(name) == Some(bytes), "output {name} differs between runs");
    }
    ensure!(outputs[0].len() == outputs[1].len(), "different output file sets");
    let other = run_scenario(&busy_scenario().with_seed(43)).map_err(|e| e.to_string())?;
    ensure!(other.trace_hash != hashes[0], "a different seed produced the same trace");
    Ok(format!(
        "hash {} twice, {} output files identical",
        &hashes[0][..16],
        outputs[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("storage bounds at paper scale", storage_bounds),
        ("full-time baseline and VDVRS line", full_time_baseline),
        ("guaranteed history", guaranteed_history),
        ("oracle equivalence", oracle_equivalence),
        ("protocol round trip and robustness", protocol_robustness),
        ("end-to-end mirroring", end_to_end_mirroring),
        ("accident flow", accident_flow),
        ("subscription semantics", subscription_semantics),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = started.elapsed();
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail} [{took:.1?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{took:.1?}]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
