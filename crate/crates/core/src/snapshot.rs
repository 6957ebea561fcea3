//! Training snapshots and the JSONL run log.
//!
//! Line 1 of a run log is a header (schema version, crate version, config,
//! probe sequences); every further line is one snapshot. Floats are written
//! in shortest round-trip form, so a log read back is bit-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SnapshotError;
use crate::model::{forward_into, ForwardTrace, ModelParams};
use crate::numerics::NormVariant;
use crate::task::ProbeSequence;
use crate::training::{MetricsRow, TrainConfig};

pub const SCHEMA_VERSION: &str = "v1";

/// Per-probe quantities, one inner vector per probe sequence.
///
/// Normalized embeddings are not stored; they follow from `params`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub xi: Vec<Vec<f64>>,
    pub attn: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
}

impl ProbeRecord {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub params: ModelParams,
    pub probe: ProbeRecord,
    pub metrics: MetricsRow,
}

/// Copies `params` and runs every probe through the model.
pub fn record_snapshot(
    epoch: usize,
    params: &ModelParams,
    probes: &[ProbeSequence],
    metrics: &MetricsRow,
    norm: NormVariant,
) -> Snapshot {
    let mut trace = ForwardTrace::for_params(params);
    let mut probe = ProbeRecord::default();
    for p in probes {
        forward_into(params, &p.tokens, norm, &mut trace);
        probe.xi.push(trace.xi.clone());
        probe.attn.push(trace.attn.clone());
        probe.mu.push(trace.mu.clone());
        probe.psi.push(trace.psi.clone());
    }
    Snapshot { epoch, params: params.clone(), probe, metrics: metrics.clone() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema: String,
    pub version: String,
    pub config: TrainConfig,
    pub probes: Vec<ProbeSequence>,
}

impl RunHeader {
    pub fn new(config: TrainConfig, probes: Vec<ProbeSequence>) -> Self {
        Self {
            schema: SCHEMA_VERSION.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            probes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    snapshots: Vec<Snapshot>,
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        Self { header, snapshots: Vec::new() }
    }

    /// Appends a snapshot; epochs must strictly increase.
    pub fn push(&mut self, snapshot: Snapshot) -> Result<(), SnapshotError> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.epoch <= last.epoch {
                return Err(SnapshotError::NonIncreasingEpoch { last: last.epoch, epoch: snapshot.epoch });
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn metrics(&self) -> Vec<MetricsRow> {
        self.snapshots.iter().map(|s| s.metrics.clone()).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SnapshotError> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for s in &self.snapshots {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a log, stopping at the first bad snapshot line. The header must
    /// be valid; the error for a bad snapshot line is returned alongside
    /// everything read before it.
    pub fn read_partial<R: BufRead>(reader: R) -> Result<(RunLog, Option<SnapshotError>), SnapshotError> {
        let mut lines = reader.lines().enumerate();
        let header_line = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(SnapshotError::MissingHeader),
        };
        let header = parse_header(&header_line)?;
        let mut log = RunLog::new(header);
        for (i, line) in lines {
            let number = i + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Ok((log, Some(SnapshotError::CorruptLine { line: number, message: e.to_string() }))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Snapshot>(&line)
                .map_err(|e| SnapshotError::CorruptLine { line: number, message: e.to_string() })
                .and_then(|s| log.push(s));
            if let Err(e) = parsed {
                return Ok((log, Some(e)));
            }
        }
        Ok((log, None))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<RunLog, SnapshotError> {
        match Self::read_partial(reader)? {
            (log, None) => Ok(log),
            (_, Some(e)) => Err(e),
        }
    }
}

fn parse_header(line: &str) -> Result<RunHeader, SnapshotError> {
    let corrupt = |e: serde_json::Error| SnapshotError::CorruptLine { line: 1, message: e.to_string() };
    let value: serde_json::Value = serde_json::from_str(line).map_err(corrupt)?;
    match value.get("schema").and_then(|s| s.as_str()) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(SnapshotError::SchemaVersionMismatch {
                expected: SCHEMA_VERSION.to_string(),
                found: other.to_string(),
            })
        }
        None => return Err(SnapshotError::MissingHeader),
    }
    serde_json::from_value(value).map_err(corrupt)
}

pub fn write_run_log(path: &Path, log: &RunLog) -> Result<(), SnapshotError> {
    log.write_to(BufWriter::new(File::create(path)?))
}

pub fn read_run_log(path: &Path) -> Result<RunLog, SnapshotError> {
    RunLog::read_from(BufReader::new(File::open(path)?))
}

pub fn read_run_log_partial(path: &Path) -> Result<(RunLog, Option<SnapshotError>), SnapshotError> {
    RunLog::read_partial(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::task::{build_probe_set, default_suffixes};

    fn small_log(n: usize) -> RunLog {
        let config = TrainConfig::default();
        let probes = build_probe_set(&config.hyper.task, &default_suffixes(&config.hyper.task)).unwrap();
        let mut log = RunLog::new(RunHeader::new(config.clone(), probes.clone()));
        for e in 0..n {
            let params = init_params(&config.hyper, e as u64).unwrap();
            let metrics = MetricsRow { epoch: e * 10, train_loss: 0.1 / (e + 3) as f64, ..MetricsRow::default() };
            log.push(record_snapshot(e * 10, &params, &probes, &metrics, NormVariant::Standard)).unwrap();
        }
        log
    }

    #[test]
    fn snapshot_is_a_copy() {
        let config = TrainConfig::default();
        let mut params = init_params(&config.hyper, 0).unwrap();
        let probes = build_probe_set(&config.hyper.task, &default_suffixes(&config.hyper.task)).unwrap();
        let snap = record_snapshot(0, &params, &probes, &MetricsRow::default(), NormVariant::Standard);
        let before = snap.clone();
        params.query[0] += 1.0;
        assert_eq!(snap, before);
        assert_eq!(snap.probe.len(), probes.len());
    }

    #[test]
    fn epochs_must_increase() {
        let mut log = small_log(2);
        let dup = log.snapshots()[1].clone();
        assert!(matches!(log.push(dup), Err(SnapshotError::NonIncreasingEpoch { last: 10, epoch: 10 })));
    }

    #[test]
    fn round_trip_is_exact() {
        let log = small_log(3);
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let back = RunLog::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, log);
        let bits = |l: &RunLog| l.snapshots().iter().flat_map(|s| s.params.token_embedding.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&log));
    }

    #[test]
    fn truncated_tail_keeps_earlier_snapshots() {
        let log = small_log(3);
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 40];
        let (partial, err) = RunLog::read_partial(cut.as_bytes()).unwrap();
        assert_eq!(partial.snapshots().len(), 2);
        assert!(matches!(err, Some(SnapshotError::CorruptLine { line: 4, .. })));
        assert!(matches!(RunLog::read_from(cut.as_bytes()), Err(SnapshotError::CorruptLine { line: 4, .. })));
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let log = small_log(1);
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("\"v1\"", "\"v9\"", 1);
        assert!(matches!(
            RunLog::read_from(text.as_bytes()),
            Err(SnapshotError::SchemaVersionMismatch { found, .. }) if found == "v9"
        ));
        assert!(matches!(RunLog::read_from(&b""[..]), Err(SnapshotError::MissingHeader)));
    }

    #[test]
    fn every_line_is_standalone_json() {
        let log = small_log(2);
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.is_object());
        }
    }
}
