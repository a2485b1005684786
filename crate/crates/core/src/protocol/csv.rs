//! Telemetry text line, as carried on the data channel and stored in
//! telemetry records:
//!
//! `t_ms,vehicle_id,lat,lon,speed_kmh,angle_deg,airbag,brake,turn\n`
//!
//! Reals use six decimal places, booleans are `0`/`1`, turn is `0` (off),
//! `1` (left) or `2` (right).

use std::fmt::Write as _;

use thiserror::Error;

use crate::sim::{TelemetrySample, TurnSignal};

pub const FIELDS: [&str; 9] = [
    "t_ms",
    "vehicle_id",
    "lat",
    "lon",
    "speed_kmh",
    "angle_deg",
    "airbag",
    "brake",
    "turn",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CsvError {
    #[error("missing-field: {0}")]
    MissingField(&'static str),
    #[error("extra-field: line has more than {} fields", FIELDS.len())]
    ExtraField,
    #[error("invalid-field: {field}={value:?}")]
    InvalidField { field: &'static str, value: String },
}

pub fn format_line(s: &TelemetrySample, vehicle_id: u32) -> String {
    let mut out = String::with_capacity(72);
    writeln!(
        out,
        "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
        s.t,
        vehicle_id,
        s.lat,
        s.lon,
        s.speed,
        s.angle,
        u8::from(s.airbag_deployed),
        u8::from(s.brake),
        s.turn_signal.code()
    )
    .expect("writing to a String cannot fail");
    out
}

fn invalid(field: &'static str, value: &str) -> CsvError {
    CsvError::InvalidField {
        field,
        value: value.to_string(),
    }
}

fn real(field: &'static str, raw: &str, range: std::ops::RangeInclusive<f64>) -> Result<f64, CsvError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && range.contains(v))
        .ok_or_else(|| invalid(field, raw))
}

fn flag(field: &'static str, raw: &str) -> Result<bool, CsvError> {
    match raw {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(invalid(field, raw)),
    }
}

/// Parses one line (trailing newline optional). Returns the sample and the
/// vehicle id it carries.
pub fn parse_line(line: &str) -> Result<(TelemetrySample, u32), CsvError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() < FIELDS.len() {
        return Err(CsvError::MissingField(FIELDS[parts.len()]));
    }
    if parts.len() > FIELDS.len() {
        return Err(CsvError::ExtraField);
    }
    let t = parts[0].parse().map_err(|_| invalid("t_ms", parts[0]))?;
    let vehicle_id = parts[1].parse().map_err(|_| invalid("vehicle_id", parts[1]))?;
    let sample = TelemetrySample {
        t,
        lat: real("lat", parts[2], -90.0..=90.0)?,
        lon: real("lon", parts[3], -180.0..=180.0)?,
        speed: real("speed_kmh", parts[4], 0.0..=f64::MAX)?,
        angle: real("angle_deg", parts[5], -180.0..=180.0)?,
        airbag_deployed: flag("airbag", parts[6])?,
        brake: flag("brake", parts[7])?,
        turn_signal: parts[8]
            .parse::<u8>()
            .ok()
            .and_then(TurnSignal::from_code)
            .ok_or_else(|| invalid("turn", parts[8]))?,
    };
    Ok((sample, vehicle_id))
}

/// True if `line` is exactly what [`format_line`] would produce for its
/// parsed contents.
pub fn is_canonical(line: &str) -> bool {
    match parse_line(line) {
        Ok((s, id)) => format_line(&s, id) == line,
        Err(_) => false,
    }
}
