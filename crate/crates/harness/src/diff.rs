//! Record-level comparison of two recordings over a time interval.
//!
//! Each side is one or more IVSG containers (a recorder's two segments, say).
//! Records are matched by kind, timestamp and occurrence among records with
//! that kind and timestamp, so the split across segment files does not
//! matter, only what was recorded.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use ivvdr_core::container::{self, ContainerError, Record, RecordKind};
use ivvdr_core::Millis;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct RecordKey {
    pub kind: RecordKind,
    pub t: Millis,
    pub occurrence: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            RecordKind::Frame => "frame",
            RecordKind::Telemetry => "telemetry",
        };
        write!(f, "{kind}@{}", self.t)?;
        if self.occurrence > 0 {
            write!(f, "#{}", self.occurrence)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub compared_a: usize,
    pub compared_b: usize,
    pub missing_on_b: Vec<RecordKey>,
    pub extra_on_b: Vec<RecordKey>,
    pub mismatched: Vec<RecordKey>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.missing_on_b.is_empty() && self.extra_on_b.is_empty() && self.mismatched.is_empty()
    }

    pub fn len(&self) -> usize {
        self.missing_on_b.len() + self.extra_on_b.len() + self.mismatched.len()
    }
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "compared {} vs {} records: {} missing on b, {} extra on b, {} mismatched",
            self.compared_a,
            self.compared_b,
            self.missing_on_b.len(),
            self.extra_on_b.len(),
            self.mismatched.len()
        )?;
        for k in &self.missing_on_b {
            writeln!(f, "missing {k}")?;
        }
        for k in &self.extra_on_b {
            writeln!(f, "extra {k}")?;
        }
        for k in &self.mismatched {
            writeln!(f, "mismatch {k}")?;
        }
        Ok(())
    }
}

/// Which side a parse error came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideError {
    pub side: char,
    pub file: usize,
    pub error: ContainerError,
}

impl fmt::Display for SideError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "side {} file {}: {}", self.side, self.file, self.error)
    }
}

impl std::error::Error for SideError {}

fn index(
    side: char,
    files: &[&[u8]],
    interval: &Range<Millis>,
) -> Result<BTreeMap<RecordKey, Record>, SideError> {
    let mut out = BTreeMap::new();
    let mut seen: BTreeMap<(RecordKind, Millis), u32> = BTreeMap::new();
    for (i, bytes) in files.iter().enumerate() {
        let c = container::parse(bytes).map_err(|error| SideError {
            side,
            file: i,
            error,
        })?;
        for r in c.records.into_iter().filter(|r| interval.contains(&r.t)) {
            let n = seen.entry((r.kind, r.t)).or_default();
            let key = RecordKey {
                kind: r.kind,
                t: r.t,
                occurrence: *n,
            };
            *n += 1;
            out.insert(key, r);
        }
    }
    Ok(out)
}

pub fn container_diff(
    a: &[&[u8]],
    b: &[&[u8]],
    interval: Range<Millis>,
) -> Result<DiffReport, SideError> {
    let ia = index('a', a, &interval)?;
    let ib = index('b', b, &interval)?;
    let mut report = DiffReport {
        compared_a: ia.len(),
        compared_b: ib.len(),
        ..DiffReport::default()
    };
    for (k, ra) in &ia {
        match ib.get(k) {
            None => report.missing_on_b.push(*k),
            Some(rb) if rb.payload != ra.payload => report.mismatched.push(*k),
            Some(_) => {}
        }
    }
    report.extra_on_b = ib.keys().filter(|k| !ia.contains_key(k)).copied().collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ivvdr_core::container::{encode_record, ContainerHeader};

    fn build(records: &[(RecordKind, Millis, &[u8])]) -> Vec<u8> {
        let mut out = ContainerHeader {
            vehicle_id: 1,
            start_t: 0,
        }
        .encode()
        .to_vec();
        for &(k, t, p) in records {
            encode_record(&mut out, k, t, p);
        }
        out
    }

    #[test]
    fn identity_is_empty() {
        let a = build(&[(RecordKind::Frame, 0, b"x"), (RecordKind::Frame, 33, b"y")]);
        let d = container_diff(&[&a], &[&a], 0..u64::MAX).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.compared_a, 2);
    }

    #[test]
    fn split_files_match_single_file() {
        let whole = build(&[(RecordKind::Frame, 0, b"x"), (RecordKind::Frame, 33, b"y")]);
        let p1 = build(&[(RecordKind::Frame, 0, b"x")]);
        let p2 = build(&[(RecordKind::Frame, 33, b"y")]);
        assert!(container_diff(&[&whole], &[&p2, &p1], 0..100)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn classifies_differences() {
        let a = build(&[
            (RecordKind::Frame, 0, b"x"),
            (RecordKind::Frame, 33, b"y"),
            (RecordKind::Frame, 66, b"z"),
        ]);
        let b = build(&[
            (RecordKind::Frame, 0, b"x"),
            (RecordKind::Frame, 66, b"Z"),
            (RecordKind::Telemetry, 70, b"t"),
        ]);
        let d = container_diff(&[&a], &[&b], 0..1000).unwrap();
        assert_eq!(d.missing_on_b.len(), 1);
        assert_eq!(d.missing_on_b[0].t, 33);
        assert_eq!(d.mismatched[0].t, 66);
        assert_eq!(d.extra_on_b[0].kind, RecordKind::Telemetry);
        let restricted = container_diff(&[&a], &[&b], 0..30).unwrap();
        assert!(restricted.is_empty());
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let mut bad = build(&[(RecordKind::Frame, 0, b"xyz")]);
        bad.truncate(bad.len() - 1);
        let e = container_diff(&[&bad], &[], 0..10).unwrap_err();
        assert_eq!(e.side, 'a');
        assert_eq!(e.error.offset, 17);
    }
}
