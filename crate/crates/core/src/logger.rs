//! Aggregates simulator windows into training rows and stores the corpus.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gamma::{gamma_score, IntervalOp};
use crate::level::ConsistencyLevel;
use crate::sim::Trace;
use crate::workload::WorkloadSpec;

pub const DATASET_HEADER: &str = "rw,tc,p,c,l_ms,s_ms,t_ops";

/// Default percentile for the per-key staleness score.
pub const DEFAULT_PERCENTILE: f64 = 95.0;

/// One observation window: workload and network features, the applied level, and
/// the resulting latency, staleness and throughput.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRow {
    pub rw: f64,
    pub tc: u32,
    /// Messages on the network during the window.
    pub p: u64,
    pub c: ConsistencyLevel,
    pub l_ms: f64,
    pub s_ms: f64,
    pub t_ops: f64,
}

/// Summarises a window's trace.
///
/// Latency is the mean over the window's operations, staleness the percentile
/// per-key Γ in milliseconds (judged together with the trace's prior writes),
/// throughput completed operations per simulated second.
pub fn observe(
    trace: &Trace,
    spec: &WorkloadSpec,
    level: ConsistencyLevel,
    percentile: f64,
) -> Result<TrainingRow> {
    if trace.records.is_empty() {
        return Err(Error::Empty("trace has no operations"));
    }
    if trace.window_us == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let n = trace.records.len() as f64;
    let l_ms = trace.records.iter().map(|r| r.latency_us() as f64).sum::<f64>() / n / 1000.0;
    let ops: Vec<IntervalOp> = trace.records.iter().chain(&trace.prior_writes).map(IntervalOp::from).collect();
    let s_ms = gamma_score(&ops, percentile)?.score_ms();
    Ok(TrainingRow {
        rw: spec.read_proportion,
        tc: spec.thread_count as u32,
        p: trace.op_messages() + trace.background_messages,
        c: level,
        l_ms,
        s_ms,
        t_ops: n / (trace.window_us as f64 / 1e6),
    })
}

pub fn write_rows(rows: &[TrainingRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.6},{},{},{},{:.6},{:.6},{:.6}",
            r.rw, r.tc, r.p, r.c, r.l_ms, r.s_ms, r.t_ops
        )?;
    }
    Ok(())
}

/// Writes the corpus; reals are fixed-point with 6 decimals.
pub fn write_dataset(rows: &[TrainingRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::Empty("no rows to write"));
    }
    if let Some(r) = rows
        .iter()
        .find(|r| ![r.rw, r.l_ms, r.s_ms, r.t_ops].iter().all(|v| v.is_finite()))
    {
        return Err(Error::Config(format!("non-finite field in row {r:?}")));
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_rows(rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<TrainingRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(f).lines();
    match lines.next() {
        None => return Err(Error::parse(path, 1, "empty dataset file")),
        Some(Err(e)) => return Err(Error::io(path, e)),
        Some(Ok(h)) if h.trim_end() != DATASET_HEADER => {
            return Err(Error::parse(path, 1, format!("expected header `{DATASET_HEADER}`")))
        }
        Some(Ok(_)) => {}
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_row(&line).map_err(|msg| Error::parse(path, lineno, msg))?);
    }
    Ok(rows)
}

fn parse_row(line: &str) -> std::result::Result<TrainingRow, String> {
    let f: Vec<&str> = line.trim_end().split(',').collect();
    if f.len() != 7 {
        return Err(format!("expected 7 fields, found {}", f.len()));
    }
    fn real(name: &str, s: &str) -> std::result::Result<f64, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("{name}: bad number {s:?}")),
        }
    }
    let row = TrainingRow {
        rw: real("rw", f[0])?,
        tc: f[1].parse().map_err(|_| format!("tc: bad integer {:?}", f[1]))?,
        p: f[2].parse().map_err(|_| format!("p: bad integer {:?}", f[2]))?,
        c: f[3].parse().map_err(|e: Error| format!("c: {e}"))?,
        l_ms: real("l_ms", f[4])?,
        s_ms: real("s_ms", f[5])?,
        t_ops: real("t_ops", f[6])?,
    };
    if !(0.0..=1.0).contains(&row.rw) {
        return Err(format!("rw {} outside [0, 1]", row.rw));
    }
    Ok(row)
}
