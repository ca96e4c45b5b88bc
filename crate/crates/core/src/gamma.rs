//! Client-centric staleness: Γ-atomicity of single-register traces.
//!
//! A trace is Γ-atomic when widening every operation's interval by Γ/2 on both
//! ends admits a total order that respects real time and in which every read
//! returns the latest preceding write. With the widened intervals, `a` happens
//! before `b` iff `a.finish + Γ < b.start`, so no halving is ever needed.
//!
//! Write values are unique, so a read's dictating write is known. In any valid
//! order a write and the reads it dictates form a contiguous block, which turns
//! the check into acyclicity of the block precedence relation. Reads of the
//! initial token form a block that must come first.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::level::OpKind;
use crate::sim::{OperationRecord, INITIAL_TOKEN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalOp {
    pub start: i64,
    pub finish: i64,
    pub kind: OpKind,
    pub value: u64,
    pub key: String,
}

impl IntervalOp {
    pub fn read(key: &str, start: i64, finish: i64, value: u64) -> Self {
        IntervalOp {
            start,
            finish,
            kind: OpKind::Read,
            value,
            key: key.to_string(),
        }
    }

    pub fn write(key: &str, start: i64, finish: i64, value: u64) -> Self {
        IntervalOp {
            start,
            finish,
            kind: OpKind::Write,
            value,
            key: key.to_string(),
        }
    }
}

impl From<&OperationRecord> for IntervalOp {
    fn from(r: &OperationRecord) -> Self {
        IntervalOp {
            start: r.start_us as i64,
            finish: r.finish_us as i64,
            kind: r.kind,
            value: r.value,
            key: r.key.clone(),
        }
    }
}

/// Per-key Γ values and their percentile.
#[derive(Debug, Clone, PartialEq)]
pub struct StalenessReport {
    pub per_key_gamma: BTreeMap<String, u64>,
    pub percentile: f64,
    /// Γ at `percentile` over keys, in microseconds.
    pub score_us: u64,
}

impl StalenessReport {
    pub fn score_ms(&self) -> f64 {
        self.score_us as f64 / 1000.0
    }
}

/// Write blocks of one key, in the shape the check needs.
struct Blocks {
    /// (write start, write finish, earliest finish in block, latest start in block)
    writes: Vec<Block>,
    /// Latest start among reads of the initial token.
    initial_max_start: Option<i64>,
    /// For each read of a real write: (read finish, write start).
    read_vs_write: Vec<(i64, i64)>,
}

struct Block {
    min_finish: i64,
    max_start: i64,
}

fn validate(ops: &[IntervalOp]) -> Result<Blocks> {
    if let Some(op) = ops.iter().find(|o| o.start >= o.finish) {
        return Err(Error::MalformedTrace(format!(
            "operation on {:?} has start {} >= finish {}",
            op.key, op.start, op.finish
        )));
    }
    if let Some(first) = ops.first() {
        if ops.iter().any(|o| o.key != first.key) {
            return Err(Error::MalformedTrace("operations span several keys".into()));
        }
    }
    let mut by_token: HashMap<u64, usize> = HashMap::new();
    let mut writes = Vec::new();
    let mut write_start = Vec::new();
    for op in ops.iter().filter(|o| o.kind == OpKind::Write) {
        if op.value == INITIAL_TOKEN {
            return Err(Error::MalformedTrace("write of the initial token".into()));
        }
        if by_token.insert(op.value, writes.len()).is_some() {
            return Err(Error::MalformedTrace(format!("duplicate write token {}", op.value)));
        }
        writes.push(Block {
            min_finish: op.finish,
            max_start: op.start,
        });
        write_start.push(op.start);
    }
    let mut initial_max_start = None;
    let mut read_vs_write = Vec::new();
    for op in ops.iter().filter(|o| o.kind == OpKind::Read) {
        if op.value == INITIAL_TOKEN {
            initial_max_start = Some(initial_max_start.map_or(op.start, |m: i64| m.max(op.start)));
            continue;
        }
        let &w = by_token.get(&op.value).ok_or_else(|| {
            Error::MalformedTrace(format!("read of {:?} returned unknown token {}", op.key, op.value))
        })?;
        let b = &mut writes[w];
        b.min_finish = b.min_finish.min(op.finish);
        b.max_start = b.max_start.max(op.start);
        read_vs_write.push((op.finish, write_start[w]));
    }
    Ok(Blocks {
        writes,
        initial_max_start,
        read_vs_write,
    })
}

fn blocks_atomic(b: &Blocks, gamma: i64) -> bool {
    let before = |finish: i64, start: i64| finish.saturating_add(gamma) < start;

    // A read that finished before its write started.
    if b.read_vs_write.iter().any(|&(rf, ws)| before(rf, ws)) {
        return false;
    }
    // The initial block must precede every write block.
    if let Some(ims) = b.initial_max_start {
        if b.writes.iter().any(|w| before(w.min_finish, ims)) {
            return false;
        }
    }
    // Kahn's algorithm on A -> B iff some op of A happens before some op of B.
    let n = b.writes.len();
    let edge = |a: usize, c: usize| a != c && before(b.writes[a].min_finish, b.writes[c].max_start);
    let mut indeg: Vec<usize> = (0..n).map(|c| (0..n).filter(|&a| edge(a, c)).count()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&c| indeg[c] == 0).collect();
    let mut seen = 0;
    while let Some(a) = ready.pop() {
        seen += 1;
        for c in 0..n {
            if edge(a, c) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(c);
                }
            }
        }
    }
    seen == n
}

/// Whether `ops` (all on one key) are Γ-atomic for the given Γ in microseconds.
pub fn check_atomic(ops: &[IntervalOp], gamma: u64) -> Result<bool> {
    let blocks = validate(ops)?;
    Ok(blocks_atomic(&blocks, gamma as i64))
}

/// The values of Γ at which the answer of [`check_atomic`] can change: 0 and every
/// positive `start - finish` difference between two operations.
pub fn candidate_gammas(ops: &[IntervalOp]) -> Vec<u64> {
    let mut c = vec![0u64];
    for a in ops {
        for b in ops {
            let d = b.start - a.finish;
            if d > 0 {
                c.push(d as u64);
            }
        }
    }
    c.sort_unstable();
    c.dedup();
    c
}

/// Minimal Γ ≥ 0 making the single-key trace Γ-atomic.
pub fn per_key_gamma(ops: &[IntervalOp]) -> Result<u64> {
    let blocks = validate(ops)?;
    if blocks_atomic(&blocks, 0) {
        return Ok(0);
    }
    let cands = candidate_gammas(ops);
    // Atomicity is monotone in Γ and holds at the largest candidate, where no
    // operation happens before another.
    let (mut lo, mut hi) = (0usize, cands.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if blocks_atomic(&blocks, cands[mid] as i64) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(cands[lo])
}

/// Nearest-rank percentile of a non-empty multiset.
pub fn nearest_rank(values: &mut [u64], percentile: f64) -> u64 {
    values.sort_unstable();
    let rank = ((percentile / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Per-key Γ for every key in `trace` plus the nearest-rank percentile over keys.
pub fn gamma_score(trace: &[IntervalOp], percentile: f64) -> Result<StalenessReport> {
    if trace.is_empty() {
        return Err(Error::Empty("no operations to score"));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Config(format!("percentile must lie in (0, 100], got {percentile}")));
    }
    let mut by_key: BTreeMap<&str, Vec<IntervalOp>> = BTreeMap::new();
    for op in trace {
        by_key.entry(&op.key).or_default().push(op.clone());
    }
    let mut per_key_gamma = BTreeMap::new();
    for (k, ops) in by_key {
        per_key_gamma.insert(k.to_string(), self::per_key_gamma(&ops)?);
    }
    let mut vals: Vec<u64> = per_key_gamma.values().copied().collect();
    let score_us = nearest_rank(&mut vals, percentile);
    Ok(StalenessReport {
        per_key_gamma,
        percentile,
        score_us,
    })
}

pub mod oracle {
    //! Exhaustive reference for small traces.

    use super::*;

    pub const MAX_OPS: usize = 8;

    fn legal_order(order: &[usize], ops: &[IntervalOp], gamma: i64) -> bool {
        let mut current = INITIAL_TOKEN;
        for (i, &a) in order.iter().enumerate() {
            // Nothing placed later may happen before `a`.
            if order[i + 1..]
                .iter()
                .any(|&b| ops[b].finish + gamma < ops[a].start)
            {
                return false;
            }
            match ops[a].kind {
                OpKind::Write => current = ops[a].value,
                OpKind::Read if ops[a].value != current => return false,
                OpKind::Read => {}
            }
        }
        true
    }

    fn permute(k: usize, order: &mut Vec<usize>, ops: &[IntervalOp], gamma: i64) -> bool {
        if k == order.len() {
            return legal_order(order, ops, gamma);
        }
        for i in k..order.len() {
            order.swap(k, i);
            if permute(k + 1, order, ops, gamma) {
                return true;
            }
            order.swap(k, i);
        }
        false
    }

    /// Γ-atomicity by enumerating every total order.
    pub fn brute_force_atomic(ops: &[IntervalOp], gamma: u64) -> bool {
        let mut order: Vec<usize> = (0..ops.len()).collect();
        permute(0, &mut order, ops, gamma as i64)
    }

    /// Minimal Γ by scanning every candidate shift with [`brute_force_atomic`].
    pub fn brute_force_min_gamma(ops: &[IntervalOp]) -> Result<u64> {
        if ops.len() > MAX_OPS {
            return Err(Error::Config(format!(
                "brute force is limited to {MAX_OPS} operations, got {}",
                ops.len()
            )));
        }
        // Rejects the same malformed inputs as the fast path.
        super::validate(ops)?;
        let mut cands = vec![0u64];
        for a in ops {
            for b in ops {
                if b.start > a.finish {
                    cands.push((b.start - a.finish) as u64);
                }
            }
        }
        cands.sort_unstable();
        Ok(cands
            .into_iter()
            .find(|&g| brute_force_atomic(ops, g))
            .expect("the largest shift removes every real-time constraint"))
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use proptest::prelude::*;

    const MS: i64 = 1000;

    fn stale_read_trace() -> Vec<IntervalOp> {
        vec![
            IntervalOp::write("k", 0, 10 * MS, 1),
            IntervalOp::write("k", 20 * MS, 30 * MS, 2),
            IntervalOp::read("k", 40 * MS, 50 * MS, 1),
        ]
    }

    #[test]
    fn serial_trace_is_atomic() {
        let ops = vec![
            IntervalOp::write("k", 0, 10 * MS, 1),
            IntervalOp::read("k", 20 * MS, 30 * MS, 1),
        ];
        assert!(check_atomic(&ops, 0).unwrap());
        assert_eq!(per_key_gamma(&ops).unwrap(), 0);
    }

    #[test]
    fn stale_read_needs_ten_ms() {
        let ops = stale_read_trace();
        assert!(!check_atomic(&ops, 0).unwrap());
        assert!(!brute_force_atomic(&ops, 0));
        assert!(!check_atomic(&ops, 9_999).unwrap());
        assert!(check_atomic(&ops, 10_000).unwrap());
        assert!(brute_force_atomic(&ops, 10_000));
        assert_eq!(per_key_gamma(&ops).unwrap(), 10_000);
        assert_eq!(brute_force_min_gamma(&ops).unwrap(), 10_000);
    }

    #[test]
    fn trivial_traces() {
        assert_eq!(per_key_gamma(&[IntervalOp::write("k", 0, 5, 1)]).unwrap(), 0);
        assert_eq!(brute_force_min_gamma(&[]).unwrap(), 0);
        assert_eq!(per_key_gamma(&[]).unwrap(), 0);
        assert_eq!(
            brute_force_min_gamma(&[IntervalOp::read("k", 0, 5, INITIAL_TOKEN)]).unwrap(),
            0
        );
    }

    #[test]
    fn read_of_initial_after_write() {
        // Write finished long before a read that still saw the initial value.
        let ops = vec![
            IntervalOp::write("k", 0, 10, 1),
            IntervalOp::read("k", 100, 110, INITIAL_TOKEN),
        ];
        assert_eq!(per_key_gamma(&ops).unwrap(), 90);
        assert_eq!(brute_force_min_gamma(&ops).unwrap(), 90);
    }

    #[test]
    fn read_before_its_write() {
        let ops = vec![
            IntervalOp::read("k", 0, 10, 1),
            IntervalOp::write("k", 30, 40, 1),
        ];
        assert_eq!(per_key_gamma(&ops).unwrap(), 20);
        assert_eq!(brute_force_min_gamma(&ops).unwrap(), 20);
    }

    #[test]
    fn malformed_traces() {
        let unknown = vec![IntervalOp::write("k", 0, 5, 1), IntervalOp::read("k", 6, 8, 7)];
        assert!(matches!(check_atomic(&unknown, 0), Err(Error::MalformedTrace(_))));
        assert!(matches!(per_key_gamma(&unknown), Err(Error::MalformedTrace(_))));
        let dup = vec![IntervalOp::write("k", 0, 5, 1), IntervalOp::write("k", 6, 8, 1)];
        assert!(check_atomic(&dup, 0).is_err());
        let big: Vec<_> = (0..9).map(|i| IntervalOp::write("k", i, i + 1, i as u64 + 1)).collect();
        assert!(brute_force_min_gamma(&big).is_err());
    }

    #[test]
    fn percentile_score() {
        let mut v = vec![0, 0, 0, 10_000];
        assert_eq!(nearest_rank(&mut v, 95.0), 10_000);
        assert_eq!(nearest_rank(&mut v, 75.0), 0);
        assert_eq!(nearest_rank(&mut v, 100.0), 10_000);

        let mut trace = stale_read_trace();
        for k in ["a", "b", "c"] {
            trace.push(IntervalOp::write(k, 0, 10, 1));
            trace.push(IntervalOp::read(k, 20, 30, 1));
        }
        let r = gamma_score(&trace, 95.0).unwrap();
        assert_eq!(r.per_key_gamma.len(), 4);
        assert_eq!(r.score_us, 10_000);
        assert_eq!(r.score_ms(), 10.0);
        assert_eq!(gamma_score(&trace, 50.0).unwrap().score_us, 0);
        assert!(gamma_score(&[], 95.0).is_err());
        assert!(gamma_score(&trace, 0.0).is_err());
    }

    fn arb_trace(max_ops: usize) -> impl Strategy<Value = Vec<IntervalOp>> {
        proptest::collection::vec((0i64..60, 1i64..25, any::<bool>(), 0u64..4), 0..=max_ops).prop_map(
            |raw| {
                let writes = raw.iter().filter(|r| r.2).count() as u64;
                let mut next = 0;
                raw.into_iter()
                    .map(|(s, len, is_write, pick)| {
                        if is_write {
                            next += 1;
                            IntervalOp::write("k", s, s + len, next)
                        } else {
                            IntervalOp::read("k", s, s + len, pick % (writes + 1))
                        }
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_brute_force(ops in arb_trace(6)) {
            prop_assert_eq!(per_key_gamma(&ops).unwrap(), brute_force_min_gamma(&ops).unwrap());
        }

        #[test]
        fn check_agrees_with_enumeration(ops in arb_trace(5), g in 0u64..40) {
            prop_assert_eq!(check_atomic(&ops, g).unwrap(), brute_force_atomic(&ops, g));
        }

        #[test]
        fn monotone_in_gamma(ops in arb_trace(8), g in 0u64..60, dg in 1u64..30) {
            if check_atomic(&ops, g).unwrap() {
                prop_assert!(check_atomic(&ops, g + dg).unwrap());
            }
        }

        #[test]
        fn zero_iff_atomic(ops in arb_trace(8)) {
            prop_assert_eq!(per_key_gamma(&ops).unwrap() == 0, check_atomic(&ops, 0).unwrap());
        }

        #[test]
        fn translation_invariant(ops in arb_trace(8), shift in -1_000_000i64..1_000_000) {
            let moved: Vec<_> = ops.iter().cloned().map(|mut o| { o.start += shift; o.finish += shift; o }).collect();
            prop_assert_eq!(per_key_gamma(&ops).unwrap(), per_key_gamma(&moved).unwrap());
        }
    }
}
