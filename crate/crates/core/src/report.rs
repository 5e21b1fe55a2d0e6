//! Run artifacts: the per-round JSON-lines trace, the summary derived from
//! it, and CSV comparison tables for sweeps.
//!
//! The summary is a pure function of the trace, so regenerating it from a
//! written trace reproduces the original bytes.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::WeightedMetrics;

/// One completed global round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Virtual time of the global update.
    pub time: f64,
    /// Virtual seconds since the previous update (or since start).
    pub duration: f64,
    /// Clients aggregated this round, ascending.
    pub participants: Vec<usize>,
    /// Version gap of each participant's upload, aligned to `participants`.
    pub gaps: Vec<u64>,
    /// Per client: gap at classification time (0 for participants), before
    /// any forced refresh.
    pub classification_gaps: Vec<u64>,
    /// Per client: gap after the distribution phase.
    pub post_distribution_gaps: Vec<u64>,
    /// Clients force-refreshed this round.
    pub deprecated: Vec<usize>,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// Cost of the same transfers at dense framing.
    pub dense_equivalent_bytes: u64,
    /// (uplink + downlink) / dense equivalent for this round.
    pub byte_ratio: f64,
    pub supervised_weight: f64,
    /// Mean pseudo-label coverage over this round's participants.
    pub mean_coverage: f64,
    /// FNV-1a checksum of the global model after this round, hex.
    pub model_checksum: String,
    pub metrics: WeightedMetrics,
}

/// Scalar summary of a run; derived from the trace only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: u64,
    pub final_metrics: WeightedMetrics,
    pub best_accuracy: f64,
    /// Mean per-round byte ratio.
    pub aco: f64,
    /// Mean per-round virtual duration.
    pub art: f64,
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
    pub final_model_checksum: String,
}

/// Folds a trace into its summary.
pub fn summarize(records: &[RoundRecord]) -> Result<RunSummary> {
    let last = records
        .last()
        .ok_or_else(|| Error::Input("summary of an empty trace".into()))?;
    let n = records.len() as f64;
    Ok(RunSummary {
        rounds: records.len() as u64,
        final_metrics: last.metrics,
        best_accuracy: records.iter().map(|r| r.metrics.accuracy).fold(0.0, f64::max),
        aco: records.iter().map(|r| r.byte_ratio).sum::<f64>() / n,
        art: records.iter().map(|r| r.duration).sum::<f64>() / n,
        total_uplink_bytes: records.iter().map(|r| r.uplink_bytes).sum(),
        total_downlink_bytes: records.iter().map(|r| r.downlink_bytes).sum(),
        final_model_checksum: last.model_checksum.clone(),
    })
}

pub fn write_trace(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut file, record).map_err(|e| Error::Io(e.into()))?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<RoundRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Corruption(format!("bad trace line: {e}")))?,
        );
    }
    Ok(records)
}

pub fn summary_json(summary: &RunSummary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes")
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    std::fs::write(path, summary_json(summary))?;
    Ok(())
}

/// One row of a sweep comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub art: f64,
    pub aco: f64,
}

impl SweepRow {
    /// Means over repetition summaries (final-round metrics).
    pub fn from_summaries(variant: impl Into<String>, summaries: &[RunSummary]) -> Self {
        let n = summaries.len() as f64;
        let mean = |f: &dyn Fn(&RunSummary) -> f64| summaries.iter().map(|s| f(s)).sum::<f64>() / n;
        Self {
            variant: variant.into(),
            accuracy: mean(&|s| s.final_metrics.accuracy),
            precision: mean(&|s| s.final_metrics.precision),
            recall: mean(&|s| s.final_metrics.recall),
            f1: mean(&|s| s.final_metrics.f1),
            fpr: mean(&|s| s.final_metrics.fpr),
            art: mean(&|s| s.art),
            aco: mean(&|s| s.aco),
        }
    }
}

pub fn write_sweep_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("variant,accuracy,precision,recall,f1,fpr,art,aco\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.2},{:.4}\n",
            r.variant, r.accuracy, r.precision, r.recall, r.f1, r.fpr, r.art, r.aco
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64, ratio: f64, duration: f64) -> RoundRecord {
        RoundRecord {
            round,
            time: duration * (round + 1) as f64,
            duration,
            participants: vec![0, 1],
            gaps: vec![0, 1],
            classification_gaps: vec![0, 0, 1],
            post_distribution_gaps: vec![0, 0, 1],
            deprecated: vec![],
            uplink_bytes: 100,
            downlink_bytes: 50,
            dense_equivalent_bytes: 200,
            byte_ratio: ratio,
            supervised_weight: 0.5,
            mean_coverage: 0.8,
            model_checksum: format!("{round:016x}"),
            metrics: WeightedMetrics {
                accuracy: 0.9 + round as f64 * 0.01,
                precision: 0.9,
                recall: 0.9,
                f1: 0.9,
                fpr: 0.01,
                zero_division: false,
            },
        }
    }

    #[test]
    fn summary_is_means_and_final_values() {
        let records = vec![record(0, 1.0, 10.0), record(1, 0.5, 30.0)];
        let s = summarize(&records).unwrap();
        assert_eq!(s.rounds, 2);
        assert!((s.aco - 0.75).abs() < 1e-12);
        assert!((s.art - 20.0).abs() < 1e-12);
        assert_eq!(s.final_metrics.accuracy, 0.91);
        assert_eq!(s.best_accuracy, 0.91);
        assert_eq!(s.final_model_checksum, "0000000000000001");
        assert_eq!(s.total_uplink_bytes, 200);
    }

    #[test]
    fn trace_round_trips_and_summary_regenerates_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let records = vec![record(0, 1.0, 10.0), record(1, 0.5, 30.0)];
        write_trace(&path, &records).unwrap();
        let reread = read_trace(&path).unwrap();
        assert_eq!(records, reread);
        let original = summary_json(&summarize(&records).unwrap());
        let regenerated = summary_json(&summarize(&reread).unwrap());
        assert_eq!(original, regenerated);
    }

    #[test]
    fn sweep_rows_average_over_repetitions() {
        let s1 = summarize(&[record(0, 1.0, 10.0)]).unwrap();
        let s2 = summarize(&[record(0, 0.5, 20.0)]).unwrap();
        let row = SweepRow::from_summaries("x", &[s1, s2]);
        assert!((row.aco - 0.75).abs() < 1e-12);
        assert!((row.art - 15.0).abs() < 1e-12);
    }
}
