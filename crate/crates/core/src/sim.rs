//! Simulated vehicle sensors and synthetic camera frames.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! [`SimConfig::seed`]. Telemetry draws use stream 0 of that generator; frame
//! payloads use a fresh generator per frame, seeded the same way, positioned on
//! stream `seq + 1`. Golden traces are reproducible as long as that mapping and
//! the draw order in [`Simulator::next_sample`] (speed, then angle) hold.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Millis;

/// Default critical turnover angle in degrees.
pub const DEFAULT_THETA_CRIT: f64 = 60.0;
/// Standard deviation of the upright angle noise, degrees.
pub const DEFAULT_ANGLE_SIGMA: f64 = 2.0;
/// A scripted turnover ramps from upright to `2 * theta_crit` over this long.
pub const TURNOVER_RAMP_MS: Millis = 1_000;
/// Frame size that makes 30 fps land on 22.9 MB of payload per minute.
pub const DEFAULT_FRAME_BYTES: usize = 12_722;
pub const DEFAULT_FPS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TurnSignal {
    #[default]
    Off,
    Left,
    Right,
}

impl TurnSignal {
    pub fn code(self) -> u8 {
        match self {
            TurnSignal::Off => 0,
            TurnSignal::Left => 1,
            TurnSignal::Right => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TurnSignal::Off),
            1 => Some(TurnSignal::Left),
            2 => Some(TurnSignal::Right),
            _ => None,
        }
    }
}

/// One timestamped sensor reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TelemetrySample {
    pub t: Millis,
    /// km/h
    pub speed: f64,
    /// Degrees from upright.
    pub angle: f64,
    pub airbag_deployed: bool,
    pub lat: f64,
    pub lon: f64,
    pub brake: bool,
    pub turn_signal: TurnSignal,
}

impl TelemetrySample {
    pub fn fix(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.speed >= 0.0
            && (-180.0..=180.0).contains(&self.angle)
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// Great-circle distance in metres (haversine, mean Earth radius).
    pub fn distance_m(&self, other: &GeoPoint) -> f64 {
        const EARTH_RADIUS_M: f64 = 6_371_008.8;
        let (phi1, phi2) = (self.lat.to_radians(), other.lat.to_radians());
        let dphi = phi2 - phi1;
        let dlambda = (other.lon - self.lon).to_radians();
        let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }
}

/// Which accident predicate fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccidentKind {
    /// Turnover (angle past the critical angle).
    Turnover,
    /// Crash (airbag deployed).
    Crash,
}

impl AccidentKind {
    pub fn code(self) -> u8 {
        match self {
            AccidentKind::Turnover => 1,
            AccidentKind::Crash => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(AccidentKind::Turnover),
            2 => Some(AccidentKind::Crash),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AccidentKind::Turnover => "turnover",
            AccidentKind::Crash => "crash",
        }
    }
}

impl fmt::Display for AccidentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scripted accident, written `turnover@420000` or `crash@5000`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccidentScript {
    pub kind: AccidentKind,
    pub at: Millis,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptParseError {
    #[error("expected <turnover|crash>@<ms>, got {0:?}")]
    Syntax(String),
    #[error("unknown accident kind {0:?}")]
    Kind(String),
    #[error("invalid accident time {0:?}")]
    Time(String),
}

impl FromStr for AccidentScript {
    type Err = ScriptParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, at) = s
            .split_once('@')
            .ok_or_else(|| ScriptParseError::Syntax(s.to_string()))?;
        let kind = match kind.trim() {
            "turnover" | "vtd" => AccidentKind::Turnover,
            "crash" | "vcd" => AccidentKind::Crash,
            other => return Err(ScriptParseError::Kind(other.to_string())),
        };
        let at = at
            .trim()
            .parse()
            .map_err(|_| ScriptParseError::Time(at.to_string()))?;
        Ok(AccidentScript { kind, at })
    }
}

impl fmt::Display for AccidentScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.at)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub mu_speed: f64,
    pub sigma_speed: f64,
    pub theta_crit: f64,
    pub angle_sigma: f64,
    pub sample_period: Millis,
    #[serde(with = "script_serde")]
    pub accident: Option<AccidentScript>,
    pub route: Vec<GeoPoint>,
}

mod script_serde {
    use super::AccidentScript;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<AccidentScript>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(script) => s.serialize_some(&script.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<AccidentScript>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mu_speed: 60.0,
            sigma_speed: 10.0,
            theta_crit: DEFAULT_THETA_CRIT,
            angle_sigma: DEFAULT_ANGLE_SIGMA,
            sample_period: 100,
            accident: None,
            // A short east-bound run through Sana'a.
            route: vec![GeoPoint::new(15.3694, 44.1910), GeoPoint::new(15.3694, 44.2410)],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimConfigError {
    #[error("sigma_speed must be >= 0 (got {0})")]
    Sigma(f64),
    #[error("theta_crit must be > 0 (got {0})")]
    Theta(f64),
    #[error("sample_period must be > 0")]
    SamplePeriod,
    #[error("angle_sigma must be >= 0 (got {0})")]
    AngleSigma(f64),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        if self.sigma_speed.is_nan() || self.sigma_speed < 0.0 {
            return Err(SimConfigError::Sigma(self.sigma_speed));
        }
        if self.theta_crit.is_nan() || self.theta_crit <= 0.0 {
            return Err(SimConfigError::Theta(self.theta_crit));
        }
        if self.sample_period == 0 {
            return Err(SimConfigError::SamplePeriod);
        }
        if self.angle_sigma.is_nan() || self.angle_sigma < 0.0 {
            return Err(SimConfigError::AngleSigma(self.angle_sigma));
        }
        Ok(())
    }
}

/// Vehicle turnover detection: strictly greater than the critical angle.
pub fn detect_vtd(sample: &TelemetrySample, theta_crit: f64) -> bool {
    sample.angle.abs() > theta_crit
}

/// Vehicle crash detection: airbag deployed.
pub fn detect_vcd(sample: &TelemetrySample) -> bool {
    sample.airbag_deployed
}

/// Piecewise-linear route with cumulative segment lengths.
#[derive(Debug, Clone)]
struct Route {
    points: Vec<GeoPoint>,
    cumulative_m: Vec<f64>,
}

impl Route {
    fn new(points: Vec<GeoPoint>) -> Self {
        let mut cumulative_m = Vec::with_capacity(points.len());
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                total += points[i - 1].distance_m(p);
            }
            cumulative_m.push(total);
        }
        Self {
            points,
            cumulative_m,
        }
    }

    fn position(&self, travelled_m: f64) -> GeoPoint {
        match self.points.len() {
            0 => GeoPoint::default(),
            1 => self.points[0],
            _ => {
                let idx = self.cumulative_m.partition_point(|&c| c <= travelled_m);
                if idx >= self.points.len() {
                    return *self.points.last().unwrap();
                }
                let (a, b) = (self.points[idx - 1], self.points[idx]);
                let span = self.cumulative_m[idx] - self.cumulative_m[idx - 1];
                let frac = if span > 0.0 {
                    (travelled_m - self.cumulative_m[idx - 1]) / span
                } else {
                    0.0
                };
                GeoPoint::new(a.lat + (b.lat - a.lat) * frac, a.lon + (b.lon - a.lon) * frac)
            }
        }
    }
}

/// Telemetry generator for one vehicle.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    speed: Normal<f64>,
    angle_noise: Normal<f64>,
    route: Route,
    t: Millis,
    travelled_m: f64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimConfigError> {
        Self::starting_at(cfg, 0)
    }

    /// The first sample is stamped `start + sample_period`.
    pub fn starting_at(cfg: SimConfig, start: Millis) -> Result<Self, SimConfigError> {
        cfg.validate()?;
        let speed = Normal::new(cfg.mu_speed, cfg.sigma_speed).map_err(|_| SimConfigError::Sigma(cfg.sigma_speed))?;
        let angle_noise =
            Normal::new(0.0, cfg.angle_sigma).map_err(|_| SimConfigError::AngleSigma(cfg.angle_sigma))?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            route: Route::new(cfg.route.clone()),
            speed,
            angle_noise,
            cfg,
            t: start,
            travelled_m: 0.0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Timestamp of the last generated sample (or the start time).
    pub fn now(&self) -> Millis {
        self.t
    }

    pub fn next_sample_at(&self) -> Millis {
        self.t + self.cfg.sample_period
    }

    pub fn next_sample(&mut self) -> TelemetrySample {
        let t = self.t + self.cfg.sample_period;
        let speed = self.speed.sample(&mut self.rng).max(0.0);
        let noise = self.angle_noise.sample(&mut self.rng);
        // Noise never reaches the detection threshold on its own.
        let limit = self.cfg.theta_crit / 2.0;
        let mut angle = noise.clamp(-limit, limit);
        let mut airbag = false;
        if let Some(script) = self.cfg.accident {
            if t >= script.at {
                match script.kind {
                    AccidentKind::Turnover => {
                        let elapsed = (t - script.at).min(TURNOVER_RAMP_MS) as f64;
                        let target = (2.0 * self.cfg.theta_crit).min(180.0);
                        angle = target * elapsed / TURNOVER_RAMP_MS as f64;
                    }
                    AccidentKind::Crash => airbag = true,
                }
            }
        }
        self.travelled_m += speed / 3.6 * (self.cfg.sample_period as f64 / 1000.0);
        let pos = self.route.position(self.travelled_m);
        self.t = t;
        TelemetrySample {
            t,
            speed,
            angle,
            airbag_deployed: airbag,
            lat: pos.lat,
            lon: pos.lon,
            // Driver inputs are not modelled beyond "moving, not braking".
            brake: false,
            turn_signal: TurnSignal::Off,
        }
    }
}

/// One sequence-numbered synthetic video frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameChunk {
    pub seq: u64,
    pub t: Millis,
    pub payload: Vec<u8>,
}

/// Synthetic camera: frame `k` is stamped `start + floor(k * 1000 / fps)`.
#[derive(Debug, Clone)]
pub struct FrameSource {
    seed: u64,
    fps: u32,
    frame_bytes: usize,
    start: Millis,
    next_seq: u64,
}

impl FrameSource {
    pub fn new(seed: u64, fps: u32, frame_bytes: usize, start: Millis) -> Self {
        assert!(fps > 0, "fps must be > 0");
        assert!(frame_bytes > 0, "frame_bytes must be > 0");
        Self {
            seed,
            fps,
            frame_bytes,
            start,
            next_seq: 0,
        }
    }

    pub fn frame_bytes(&self) -> usize {
        self.frame_bytes
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn time_of(&self, seq: u64) -> Millis {
        self.start + seq * 1000 / self.fps as u64
    }

    pub fn next_frame_at(&self) -> Millis {
        self.time_of(self.next_seq)
    }

    pub fn make_frame(&mut self) -> FrameChunk {
        let seq = self.next_seq;
        self.next_seq += 1;
        FrameChunk {
            seq,
            t: self.time_of(seq),
            payload: frame_payload(self.seed, seq, self.frame_bytes),
        }
    }

    /// Advances past the next frame without generating its payload.
    pub fn skip_frame(&mut self) -> Millis {
        self.next_seq += 1;
        self.time_of(self.next_seq - 1)
    }
}

/// Deterministic pseudo-random payload for `(seed, seq)`.
pub fn frame_payload(seed: u64, seq: u64, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq.wrapping_add(1));
    let mut buf = vec![0u8; len];
    rng.fill_bytes(&mut buf);
    buf
}
