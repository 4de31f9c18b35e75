//! JSONL decode traces: one record per generated token.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vgs_core::{DecodeTrace, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub token_id: u32,
    pub token_str: String,
    pub p_orig: f64,
    pub p_dist: Option<f64>,
    pub vgs: Option<f64>,
    pub factor: Option<f64>,
    pub strategy: String,
}

/// Flattens a trace. `strategy` is written verbatim so sweeps can tag each
/// run (for example `vgs[alpha=0.5]`).
pub fn trace_records(trace: &DecodeTrace, vocab: &Vocab, strategy: &str) -> Vec<TraceRecord> {
    trace
        .steps
        .iter()
        .map(|s| TraceRecord {
            step: s.step,
            token_id: s.token.0,
            token_str: vocab.token_str(s.token).unwrap_or("<unk>").to_string(),
            p_orig: s.p_orig,
            p_dist: s.p_dist,
            vgs: s.vgs,
            factor: s.factor,
            strategy: strategy.to_string(),
        })
        .collect()
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TraceRecord>, std::io::Error> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}
