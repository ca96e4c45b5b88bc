//! Deterministic discrete-event simulator of an N-replica Dynamo-style store.
//!
//! A coordinator sends every operation to all replicas and completes it once the
//! level's required number of replies has arrived. Writes become visible on a
//! replica after the request delay plus an optional commit time; replicas that did
//! not take part in the acknowledgement still apply the write when their message
//! lands, which is what opens stale-read windows under weak levels. Reads resolve
//! conflicts last-write-wins on `(timestamp, op_id)`.
//!
//! Each operation draws its message delays from its own RNG stream keyed by
//! `(window, session, seq)`, so the same workload run under two different levels
//! sees exactly the same per-replica delays.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::level::{ConsistencyLevel, OpKind};
use crate::rng;
use crate::workload::WorkloadOp;

/// Version token returned by reads of a key that was never written.
pub const INITIAL_TOKEN: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyModel {
    /// Lognormal with the given median (µs) and log-space standard deviation.
    LogNormal { median_us: f64, sigma: f64 },
}

impl LatencyModel {
    fn validate(&self, what: &str) -> Result<()> {
        let LatencyModel::LogNormal { median_us, sigma } = *self;
        if !(median_us > 0.0 && median_us.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "{what}: lognormal parameters must be strictly positive (median {median_us}, sigma {sigma})"
            )));
        }
        Ok(())
    }

    fn distribution(&self) -> LogNormal<f64> {
        let LatencyModel::LogNormal { median_us, sigma } = *self;
        LogNormal::new(median_us.ln(), sigma).expect("validated parameters")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub replica_count: usize,
    /// One-way delay of every request and reply message.
    pub latency: LatencyModel,
    /// Replica-side commit time before a write is visible and acknowledged.
    pub write_service: Option<LatencyModel>,
    /// Replica-side time to serve a read; the replica's state is read on arrival.
    pub read_service: Option<LatencyModel>,
    /// Constant added to every one-way delay (traffic shaping).
    pub injected_delay_us: u64,
    /// Per-replica clock offsets are drawn from `[0, bound]` and skew write timestamps.
    pub clock_skew_bound_us: u64,
    /// Background traffic in messages/s, drawn uniformly from this range.
    pub background_rate: (f64, f64),
    /// Consecutive windows sharing one background draw.
    pub background_epoch_windows: u64,
    /// Background rate at which message delays double.
    pub congestion_capacity: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            replica_count: 5,
            latency: LatencyModel::LogNormal {
                median_us: 10_000.0,
                sigma: 0.5,
            },
            write_service: None,
            read_service: None,
            injected_delay_us: 0,
            clock_skew_bound_us: 0,
            background_rate: (0.0, 0.0),
            background_epoch_windows: 1,
            congestion_capacity: 100_000.0,
            seed: 1,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replica_count == 0 {
            return Err(Error::Config("replica_count must be at least 1".into()));
        }
        self.latency.validate("latency")?;
        if let Some(s) = &self.write_service {
            s.validate("write_service")?;
        }
        if let Some(s) = &self.read_service {
            s.validate("read_service")?;
        }
        let (lo, hi) = self.background_rate;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("bad background rate range [{lo}, {hi}]")));
        }
        if self.background_epoch_windows == 0 {
            return Err(Error::Config("background_epoch_windows must be at least 1".into()));
        }
        if !(self.congestion_capacity > 0.0) {
            return Err(Error::Config("congestion_capacity must be positive".into()));
        }
        Ok(())
    }

    /// Reads a `key = value` cluster file; missing keys keep their defaults.
    ///
    /// Keys: `replica_count`, `delay_median_us`, `delay_sigma`,
    /// `write_service_median_us`, `write_service_sigma`, `read_service_median_us`,
    /// `read_service_sigma`, `injected_delay_us`,
    /// `clock_skew_bound_us`, `background_rate_min`, `background_rate_max`,
    /// `background_epoch_windows`, `congestion_capacity`, `seed`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut kv = KvFile::read(path)?;
        let mut c = ClusterConfig::default();
        if let Some(v) = kv.take("replica_count")? {
            c.replica_count = v;
        }
        let LatencyModel::LogNormal {
            mut median_us,
            mut sigma,
        } = c.latency;
        if let Some(v) = kv.take("delay_median_us")? {
            median_us = v;
        }
        if let Some(v) = kv.take("delay_sigma")? {
            sigma = v;
        }
        c.latency = LatencyModel::LogNormal { median_us, sigma };
        let svc_median: Option<f64> = kv.take("write_service_median_us")?;
        let svc_sigma: Option<f64> = kv.take("write_service_sigma")?;
        if let Some(median_us) = svc_median {
            c.write_service = Some(LatencyModel::LogNormal {
                median_us,
                sigma: svc_sigma.unwrap_or(0.5),
            });
        }
        let rd_median: Option<f64> = kv.take("read_service_median_us")?;
        let rd_sigma: Option<f64> = kv.take("read_service_sigma")?;
        if let Some(median_us) = rd_median {
            c.read_service = Some(LatencyModel::LogNormal {
                median_us,
                sigma: rd_sigma.unwrap_or(0.5),
            });
        }
        if let Some(v) = kv.take("injected_delay_us")? {
            c.injected_delay_us = v;
        }
        if let Some(v) = kv.take("clock_skew_bound_us")? {
            c.clock_skew_bound_us = v;
        }
        if let Some(v) = kv.take("background_rate_min")? {
            c.background_rate.0 = v;
            c.background_rate.1 = c.background_rate.1.max(v);
        }
        if let Some(v) = kv.take("background_rate_max")? {
            c.background_rate.1 = v;
        }
        if let Some(v) = kv.take("background_epoch_windows")? {
            c.background_epoch_windows = v;
        }
        if let Some(v) = kv.take("congestion_capacity")? {
            c.congestion_capacity = v;
        }
        if let Some(v) = kv.take("seed")? {
            c.seed = v;
        }
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationRecord {
    pub op_id: u64,
    pub key: String,
    pub kind: OpKind,
    pub start_us: u64,
    pub finish_us: u64,
    /// Written token for writes, returned token for reads.
    pub value: u64,
    pub level: ConsistencyLevel,
    pub messages: u64,
}

impl OperationRecord {
    pub fn latency_us(&self) -> u64 {
        self.finish_us - self.start_us
    }
}

/// Operations of one window, in issue order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<OperationRecord>,
    pub window_start_us: u64,
    pub window_us: u64,
    /// Messages of unrelated traffic that crossed the network during the window.
    pub background_messages: u64,
    /// Earlier writes to keys this window read, from the oldest token a read
    /// returned onwards. They let staleness be judged against writes that
    /// completed before the window opened.
    pub prior_writes: Vec<OperationRecord>,
    /// Sessions that ran out of workload before the window closed.
    pub exhausted_sessions: usize,
}

impl Trace {
    pub fn op_messages(&self) -> u64 {
        self.records.iter().map(|r| r.messages).sum()
    }

    /// Window records plus prior writes, ordered by op id.
    pub fn all_ops(&self) -> Vec<OperationRecord> {
        let mut v: Vec<OperationRecord> = self.prior_writes.iter().chain(&self.records).cloned().collect();
        v.sort_by_key(|r| r.op_id);
        v
    }
}

/// Chooses the level for each operation of a window.
pub trait LevelPolicy {
    fn level_for(&mut self, op: &WorkloadOp) -> ConsistencyLevel;
}

impl LevelPolicy for ConsistencyLevel {
    fn level_for(&mut self, _: &WorkloadOp) -> ConsistencyLevel {
        *self
    }
}

/// Adapts a closure into a [`LevelPolicy`].
pub struct PerOp<F>(pub F);

impl<F: FnMut(&WorkloadOp) -> ConsistencyLevel> LevelPolicy for PerOp<F> {
    fn level_for(&mut self, op: &WorkloadOp) -> ConsistencyLevel {
        (self.0)(op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Version {
    ts: i64,
    op_id: u64,
    token: u64,
}

impl Version {
    fn newer_than(&self, other: &Option<Version>) -> bool {
        match other {
            None => true,
            Some(o) => (self.ts, self.op_id) > (o.ts, o.op_id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    /// Read request reaches a replica.
    ReadArrive { op: u64, replica: usize },
    /// Write committed on a replica.
    WriteApply { op: u64, replica: usize },
    /// Reply reaches the coordinator.
    Reply { op: u64, replica: usize },
    /// A session issues its next operation.
    Issue { session: usize },
}

#[derive(Debug)]
struct Pending {
    key: String,
    kind: OpKind,
    start: u64,
    level: ConsistencyLevel,
    required: usize,
    acks: usize,
    replies: usize,
    version: Version,
    best: Option<Version>,
    /// Reply delay per replica.
    reply_delay: Vec<u64>,
    /// Version each replica reported, for reads.
    reported: Vec<Option<Version>>,
    session: Option<usize>,
    done: bool,
}

/// Mutable state of the simulated store: replicas, in-flight messages and the clock.
pub struct Cluster {
    config: ClusterConfig,
    now: u64,
    replicas: Vec<HashMap<String, Version>>,
    clock_offsets: Vec<i64>,
    queue: BinaryHeap<Reverse<(u64, u64, EventKind)>>,
    event_seq: u64,
    pending: HashMap<u64, Pending>,
    next_op_id: u64,
    key_counters: HashMap<String, u64>,
    messages: u64,
    window_index: u64,
    congestion: f64,
    delay: LogNormal<f64>,
    service: Option<LogNormal<f64>>,
    read_service: Option<LogNormal<f64>>,
    /// Completed writes per key, in completion order.
    write_log: HashMap<String, Vec<OperationRecord>>,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, &[0xC10C]);
        let clock_offsets = (0..config.replica_count)
            .map(|_| {
                if config.clock_skew_bound_us == 0 {
                    0
                } else {
                    r.random_range(0..=config.clock_skew_bound_us) as i64
                }
            })
            .collect();
        Ok(Cluster {
            delay: config.latency.distribution(),
            service: config.write_service.map(|s| s.distribution()),
            read_service: config.read_service.map(|s| s.distribution()),
            replicas: vec![HashMap::new(); config.replica_count],
            clock_offsets,
            queue: BinaryHeap::new(),
            event_seq: 0,
            pending: HashMap::new(),
            next_op_id: 0,
            key_counters: HashMap::new(),
            messages: 0,
            window_index: 0,
            congestion: 1.0,
            write_log: HashMap::new(),
            now: 0,
            config,
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Total sends and replies issued so far.
    pub fn messages_sent(&self) -> u64 {
        self.messages
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    fn schedule(&mut self, at: u64, ev: EventKind) {
        self.event_seq += 1;
        self.queue.push(Reverse((at, self.event_seq, ev)));
    }

    fn sample_delay(&self, rng: &mut ChaCha8Rng) -> u64 {
        let d = self.delay.sample(rng) * self.congestion + self.config.injected_delay_us as f64;
        (d.round() as u64).max(1)
    }

    fn issue(
        &mut self,
        kind: OpKind,
        key: &str,
        level: ConsistencyLevel,
        session: Option<usize>,
        seq: u64,
    ) -> u64 {
        let n = self.config.replica_count;
        let op_id = self.next_op_id;
        self.next_op_id += 1;
        let mut rng = match session {
            Some(s) => rng::stream(self.config.seed, &[self.window_index, s as u64, seq]),
            None => rng::stream(self.config.seed, &[u64::MAX, op_id]),
        };
        // Always draw request, service and reply delays so reads and writes consume
        // identical amounts of the op's stream.
        let mut request = Vec::with_capacity(n);
        let mut service = Vec::with_capacity(n);
        let mut reply = Vec::with_capacity(n);
        for _ in 0..n {
            request.push(self.sample_delay(&mut rng));
            service.push(match &self.service {
                Some(d) => d.sample(&mut rng).round() as u64,
                None => 0,
            });
            let read = match &self.read_service {
                Some(d) => d.sample(&mut rng).round() as u64,
                None => 0,
            };
            let back = self.sample_delay(&mut rng);
            reply.push(if kind == OpKind::Read { read + back } else { back });
        }

        let start = self.now;
        let coordinator = session.map_or(op_id as usize, |s| s) % n;
        let token = match kind {
            OpKind::Write => {
                let c = self.key_counters.entry(key.to_string()).or_insert(INITIAL_TOKEN);
                *c += 1;
                *c
            }
            OpKind::Read => INITIAL_TOKEN,
        };
        let required = match kind {
            OpKind::Read => level.read.acks(n),
            OpKind::Write => level.write.acks(n),
        };
        self.pending.insert(
            op_id,
            Pending {
                key: key.to_string(),
                kind,
                start,
                level,
                required,
                acks: 0,
                replies: 0,
                version: Version {
                    ts: start as i64 + self.clock_offsets[coordinator],
                    op_id,
                    token,
                },
                best: None,
                reply_delay: reply,
                reported: vec![None; n],
                session,
                done: false,
            },
        );
        for replica in 0..n {
            self.messages += 1;
            match kind {
                OpKind::Read => {
                    self.schedule(start + request[replica], EventKind::ReadArrive { op: op_id, replica })
                }
                OpKind::Write => self.schedule(
                    start + request[replica] + service[replica],
                    EventKind::WriteApply { op: op_id, replica },
                ),
            }
        }
        op_id
    }

    /// Processes one event. Returns the completed record when an operation finishes,
    /// or the session id for an `Issue` event.
    fn step(&mut self) -> Option<Step> {
        let Reverse((at, _, ev)) = self.queue.pop()?;
        self.now = self.now.max(at);
        match ev {
            EventKind::ReadArrive { op, replica } => {
                let p = self.pending.get_mut(&op).expect("pending read");
                p.reported[replica] = self.replicas[replica].get(&p.key).copied();
                let back = p.reply_delay[replica];
                self.messages += 1;
                self.schedule(at + back, EventKind::Reply { op, replica });
                Some(Step::Nothing)
            }
            EventKind::WriteApply { op, replica } => {
                let p = self.pending.get(&op).expect("pending write");
                let slot = self.replicas[replica].entry(p.key.clone());
                let v = p.version;
                let back = p.reply_delay[replica];
                match slot {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        if v.newer_than(&Some(*e.get())) {
                            e.insert(v);
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(v);
                    }
                }
                self.messages += 1;
                self.schedule(at + back, EventKind::Reply { op, replica });
                Some(Step::Nothing)
            }
            EventKind::Reply { op, replica } => {
                let n = self.config.replica_count as u64;
                let p = self.pending.get_mut(&op).expect("pending op");
                p.replies += 1;
                let mut out = Step::Nothing;
                if !p.done {
                    p.acks += 1;
                    if let Some(v) = p.reported[replica] {
                        if v.newer_than(&p.best) {
                            p.best = Some(v);
                        }
                    }
                    if p.acks == p.required {
                        p.done = true;
                        let value = match p.kind {
                            OpKind::Write => p.version.token,
                            OpKind::Read => p.best.map_or(INITIAL_TOKEN, |v| v.token),
                        };
                        let rec = OperationRecord {
                                op_id: op,
                                key: p.key.clone(),
                                kind: p.kind,
                                start_us: p.start,
                                finish_us: at,
                                value,
                                level: p.level,
                                messages: 2 * n,
                        };
                        if rec.kind == OpKind::Write {
                            self.write_log.entry(rec.key.clone()).or_default().push(rec.clone());
                        }
                        out = Step::Completed(rec, p.session);
                    }
                }
                if p.replies == self.config.replica_count {
                    self.pending.remove(&op);
                }
                Some(out)
            }
            EventKind::Issue { session } => Some(Step::Issue(session)),
        }
    }

    /// Executes a single operation starting now and returns once it completes.
    /// Messages of the operation that are still in flight stay queued.
    pub fn execute(&mut self, kind: OpKind, key: &str, level: ConsistencyLevel) -> Result<OperationRecord> {
        let id = self.issue(kind, key, level, None, 0);
        loop {
            match self.step() {
                Some(Step::Completed(rec, _)) if rec.op_id == id => return Ok(rec),
                Some(_) => {}
                None => unreachable!("operation {id} never completed"),
            }
        }
    }

    /// Runs all in-flight messages to completion.
    pub fn drain(&mut self) {
        while self.step().is_some() {}
    }

    /// Runs one window of closed-loop sessions starting at the current time.
    ///
    /// Every session issues its operations back to back (plus think time) as long as
    /// the issue time falls inside the window; operations issued inside the window
    /// run to completion even when they finish after it.
    pub fn run_window(
        &mut self,
        ops: &[WorkloadOp],
        policy: &mut dyn LevelPolicy,
        window_us: u64,
    ) -> Result<Trace> {
        if window_us == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        self.window_index += 1;
        let epoch = (self.window_index - 1) / self.config.background_epoch_windows;
        let mut wr = rng::stream(self.config.seed, &[epoch, 0xB6]);
        let (lo, hi) = self.config.background_rate;
        let rate = if hi > lo { wr.random_range(lo..hi) } else { lo };
        self.congestion = 1.0 + rate / self.config.congestion_capacity;
        let background_messages = (rate * window_us as f64 / 1e6).round() as u64;

        let t0 = self.now;
        let end = t0 + window_us;
        let first_op = self.next_op_id;
        let sessions = ops.iter().map(|o| o.session + 1).max().unwrap_or(0);
        let mut queues: Vec<VecDeque<&WorkloadOp>> = vec![VecDeque::new(); sessions];
        for op in ops {
            queues[op.session].push_back(op);
        }
        for q in &mut queues {
            q.make_contiguous().sort_by_key(|o| o.seq);
        }
        let mut waiting = 0usize;
        let mut exhausted_sessions = 0usize;
        for (s, q) in queues.iter().enumerate() {
            if !q.is_empty() {
                self.schedule(t0, EventKind::Issue { session: s });
                waiting += 1;
            }
        }

        let mut records = Vec::new();
        while waiting > 0 {
            match self.step().expect("sessions outstanding") {
                Step::Issue(s) => {
                    let op = queues[s].pop_front().expect("issue without op");
                    let level = policy.level_for(op);
                    self.issue(op.kind, &op.key, level, Some(s), op.seq as u64);
                }
                Step::Completed(rec, Some(s)) if s < sessions => {
                    let next = rec.finish_us + queues[s].front().map_or(0, |o| o.think_us);
                    records.push(rec);
                    if next >= end {
                        waiting -= 1;
                    } else if queues[s].is_empty() {
                        exhausted_sessions += 1;
                        waiting -= 1;
                    } else {
                        self.schedule(next, EventKind::Issue { session: s });
                    }
                }
                Step::Completed(..) | Step::Nothing => {}
            }
        }
        records.sort_by_key(|r| r.op_id);
        let prior_writes = self.prior_writes(&records, first_op);
        Ok(Trace {
            records,
            window_start_us: t0,
            window_us,
            background_messages,
            prior_writes,
            exhausted_sessions,
        })
    }

    fn prior_writes(&self, records: &[OperationRecord], first_op: u64) -> Vec<OperationRecord> {
        let mut oldest: BTreeMap<&str, u64> = BTreeMap::new();
        let written: HashSet<(&str, u64)> = records
            .iter()
            .filter(|r| r.kind == OpKind::Write)
            .map(|r| (r.key.as_str(), r.value))
            .collect();
        for r in records.iter().filter(|r| r.kind == OpKind::Read) {
            if !written.contains(&(r.key.as_str(), r.value)) {
                let e = oldest.entry(&r.key).or_insert(r.value);
                *e = (*e).min(r.value);
            }
        }
        let mut out: Vec<OperationRecord> = oldest
            .into_iter()
            .flat_map(|(k, t)| {
                self.write_log
                    .get(k)
                    .into_iter()
                    .flatten()
                    .filter(move |w| w.op_id < first_op && w.value >= t)
                    .cloned()
            })
            .collect();
        out.sort_by_key(|r| r.op_id);
        out
    }
}

enum Step {
    Nothing,
    Completed(OperationRecord, Option<usize>),
    Issue(usize),
}

pub const TRACE_HEADER: &str = "op_id,key,kind,start_us,finish_us,value,read_level,write_level,messages";

pub fn write_trace(records: &[OperationRecord], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.op_id,
            r.key,
            match r.kind {
                OpKind::Read => "read",
                OpKind::Write => "write",
            },
            r.start_us,
            r.finish_us,
            r.value,
            r.level.read.name(),
            r.level.write.name(),
            r.messages
        )?;
    }
    Ok(())
}

pub fn save_trace(records: &[OperationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(r) = records.iter().find(|r| r.key.contains([',', '\n'])) {
        return Err(Error::MalformedTrace(format!("key {:?} cannot be serialized", r.key)));
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_trace(records, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<OperationRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == TRACE_HEADER => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(Error::parse(path, 1, format!("expected header `{TRACE_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse(path, lineno, msg.to_string());
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(&format!("bad integer {s:?}")));
        let kind = match f[2] {
            "read" => OpKind::Read,
            "write" => OpKind::Write,
            other => return Err(bad(&format!("bad kind {other:?}"))),
        };
        let level = ConsistencyLevel::new(
            f[6].parse().map_err(|e: Error| bad(&e.to_string()))?,
            f[7].parse().map_err(|e: Error| bad(&e.to_string()))?,
        );
        let rec = OperationRecord {
            op_id: num(f[0])?,
            key: f[1].to_string(),
            kind,
            start_us: num(f[3])?,
            finish_us: num(f[4])?,
            value: num(f[5])?,
            level,
            messages: num(f[8])?,
        };
        if rec.start_us >= rec.finish_us {
            return Err(bad("start must precede finish"));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::{ReadLevel, WriteLevel};
    use crate::workload::{generate, WorkloadSpec};

    fn lvl(s: &str) -> ConsistencyLevel {
        s.parse().unwrap()
    }

    fn cluster(seed: u64) -> Cluster {
        Cluster::new(ClusterConfig {
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    /// Round trips the op would have seen, recomputed from its delay stream.
    fn round_trips(c: &ClusterConfig, op_id: u64) -> Vec<u64> {
        let d = c.latency.distribution();
        let mut rng = rng::stream(c.seed, &[u64::MAX, op_id]);
        (0..c.replica_count)
            .map(|_| {
                let a = (d.sample(&mut rng).round() as u64).max(1);
                let b = (d.sample(&mut rng).round() as u64).max(1);
                a + b
            })
            .collect()
    }

    #[test]
    fn read_service_adds_to_round_trip() {
        let cfg = ClusterConfig {
            read_service: Some(LatencyModel::LogNormal {
                median_us: 50_000.0,
                sigma: 0.5,
            }),
            seed: 8,
            ..Default::default()
        };
        let mut c = Cluster::new(cfg.clone()).unwrap();
        let rec = c.execute(OpKind::Read, "k", lvl("ALL/ANY")).unwrap();
        let d = cfg.latency.distribution();
        let r = cfg.read_service.unwrap().distribution();
        let mut rng = rng::stream(cfg.seed, &[u64::MAX, rec.op_id]);
        let slowest = (0..5)
            .map(|_| {
                let a = (d.sample(&mut rng).round() as u64).max(1);
                let s = r.sample(&mut rng).round() as u64;
                let b = (d.sample(&mut rng).round() as u64).max(1);
                a + s + b
            })
            .max()
            .unwrap();
        assert_eq!(rec.latency_us(), slowest);
    }

    #[test]
    fn read_one_waits_for_fastest_round_trip() {
        let mut c = cluster(3);
        let rec = c.execute(OpKind::Read, "k", lvl("ONE/ANY")).unwrap();
        let rtt = round_trips(c.config(), rec.op_id);
        assert_eq!(rec.latency_us(), *rtt.iter().min().unwrap());
        assert_eq!(rec.messages, 10);
        assert_eq!(rec.value, INITIAL_TOKEN);
    }

    #[test]
    fn write_all_waits_for_slowest_round_trip() {
        let mut c = cluster(4);
        let rec = c.execute(OpKind::Write, "k", lvl("ONE/ALL")).unwrap();
        let rtt = round_trips(c.config(), rec.op_id);
        assert_eq!(rec.latency_us(), *rtt.iter().max().unwrap());
        assert_eq!(rec.value, 1);
    }

    #[test]
    fn quorum_write_waits_for_third_fastest() {
        let mut c = cluster(5);
        let rec = c.execute(OpKind::Write, "k", lvl("ONE/QUORUM")).unwrap();
        let mut rtt = round_trips(c.config(), rec.op_id);
        rtt.sort();
        assert_eq!(rec.latency_us(), rtt[2]);
    }

    #[test]
    fn serial_strong_reads_see_latest_write() {
        let strong: Vec<_> = ConsistencyLevel::all().into_iter().filter(|l| l.is_strong(5)).collect();
        for seed in 0..20 {
            let mut c = cluster(seed);
            let mut latest = INITIAL_TOKEN;
            let l = strong[seed as usize % strong.len()];
            for i in 0..60 {
                if i % 3 == 0 {
                    latest = c.execute(OpKind::Write, "x", l).unwrap().value;
                } else {
                    assert_eq!(c.execute(OpKind::Read, "x", l).unwrap().value, latest);
                }
            }
        }
    }

    #[test]
    fn weak_levels_can_read_stale() {
        let mut c = Cluster::new(ClusterConfig {
            latency: LatencyModel::LogNormal {
                median_us: 10_000.0,
                sigma: 1.5,
            },
            ..Default::default()
        })
        .unwrap();
        let mut stale = 0;
        for _ in 0..300 {
            let w = c.execute(OpKind::Write, "x", lvl("ONE/ONE")).unwrap();
            if c.execute(OpKind::Read, "x", lvl("ONE/ONE")).unwrap().value != w.value {
                stale += 1;
            }
        }
        assert!(stale > 0);
    }

    #[test]
    fn message_accounting_after_drain() {
        let mut c = cluster(9);
        let ops = generate(&WorkloadSpec {
            ops_per_thread_per_window: 50,
            ..Default::default()
        })
        .unwrap();
        let t = c.run_window(&ops, &mut lvl("QUORUM/ONE"), 10_000_000).unwrap();
        c.drain();
        assert_eq!(t.op_messages(), c.messages_sent());
        assert_eq!(c.in_flight(), 0);
        assert!(t.records.iter().all(|r| r.start_us < r.finish_us));
    }

    #[test]
    fn empty_workload_gives_empty_trace() {
        let mut c = cluster(1);
        let t = c.run_window(&[], &mut lvl("ALL/ALL"), 1000).unwrap();
        assert!(t.records.is_empty());
        assert!(c.run_window(&[], &mut lvl("ALL/ALL"), 0).is_err());
    }

    #[test]
    fn fixed_policy_and_determinism() {
        let spec = WorkloadSpec {
            ops_per_thread_per_window: 500,
            ..Default::default()
        };
        let ops = generate(&spec).unwrap();
        let run = || {
            let mut c = cluster(11);
            let mut out = Vec::new();
            for _ in 0..3 {
                out.push(c.run_window(&ops, &mut lvl("ONE/ANY"), 500_000).unwrap());
            }
            out
        };
        let a = run();
        assert!(a.iter().flat_map(|t| &t.records).all(|r| r.level == lvl("ONE/ANY")));
        let b = run();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_trace(&a[2].records, &mut ba).unwrap();
        write_trace(&b[2].records, &mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn window_bounds_issue_times() {
        let mut c = cluster(2);
        let ops = generate(&WorkloadSpec::default()).unwrap();
        let t = c.run_window(&ops, &mut lvl("ONE/ONE"), 300_000).unwrap();
        assert!(!t.records.is_empty());
        assert!(t.records.iter().all(|r| r.start_us < 300_000));
        // sessions keep issuing until the window closes
        assert!(t.records.iter().any(|r| r.finish_us >= 280_000));
    }

    #[test]
    fn per_op_policy() {
        let mut c = cluster(2);
        let ops = generate(&WorkloadSpec {
            ops_per_thread_per_window: 20,
            ..Default::default()
        })
        .unwrap();
        let mut policy = PerOp(|op: &WorkloadOp| {
            if op.seq % 2 == 0 {
                ConsistencyLevel::new(ReadLevel::All, WriteLevel::All)
            } else {
                ConsistencyLevel::new(ReadLevel::One, WriteLevel::Any)
            }
        });
        let t = c.run_window(&ops, &mut policy, 60_000_000).unwrap();
        assert_eq!(t.records.len(), 80);
    }

    #[test]
    fn background_traffic_counts_and_congests() {
        let cfg = ClusterConfig {
            background_rate: (50_000.0, 50_000.0),
            congestion_capacity: 50_000.0,
            ..Default::default()
        };
        let ops = generate(&WorkloadSpec {
            ops_per_thread_per_window: 30,
            thread_count: 1,
            ..Default::default()
        })
        .unwrap();
        let mut busy = Cluster::new(cfg.clone()).unwrap();
        let t = busy.run_window(&ops, &mut lvl("ALL/ALL"), 2_000_000).unwrap();
        assert_eq!(t.background_messages, 100_000);
        let mut quiet = Cluster::new(ClusterConfig {
            background_rate: (0.0, 0.0),
            ..cfg
        })
        .unwrap();
        let q = quiet.run_window(&ops, &mut lvl("ALL/ALL"), 2_000_000).unwrap();
        let mean = |t: &Trace| t.records.iter().map(|r| r.latency_us()).sum::<u64>() / t.records.len() as u64;
        assert!(mean(&t) > mean(&q));
    }

    #[test]
    fn background_epochs_share_a_draw() {
        let cfg = ClusterConfig {
            background_rate: (0.0, 100_000.0),
            background_epoch_windows: 3,
            ..Default::default()
        };
        let ops = generate(&WorkloadSpec {
            ops_per_thread_per_window: 5,
            thread_count: 1,
            ..Default::default()
        })
        .unwrap();
        let mut c = Cluster::new(cfg).unwrap();
        let bg: Vec<u64> = (0..6)
            .map(|_| c.run_window(&ops, &mut lvl("ONE/ANY"), 1_000_000).unwrap().background_messages)
            .collect();
        assert!(bg[0] == bg[1] && bg[1] == bg[2]);
        assert!(bg[3] == bg[4] && bg[4] == bg[5]);
        assert_ne!(bg[0], bg[3]);
    }

    #[test]
    fn exhausted_sessions_are_reported() {
        let spec = WorkloadSpec {
            ops_per_thread_per_window: 5,
            thread_count: 3,
            ..Default::default()
        };
        let ops = generate(&spec).unwrap();
        let t = cluster(1).run_window(&ops, &mut lvl("ONE/ANY"), 60_000_000).unwrap();
        assert_eq!(t.exhausted_sessions, 3);
        assert_eq!(t.records.len(), 15);
        let t = cluster(1).run_window(&ops, &mut lvl("ONE/ANY"), 10_000).unwrap();
        assert_eq!(t.exhausted_sessions, 0);
    }

    #[test]
    fn prior_writes_explain_tokens_from_earlier_windows() {
        let spec = WorkloadSpec {
            key_count: 20,
            read_proportion: 0.5,
            ops_per_thread_per_window: 400,
            ..Default::default()
        };
        let ops = generate(&spec).unwrap();
        let mut c = cluster(2);
        let a = c.run_window(&ops, &mut lvl("ONE/ANY"), 1_000_000).unwrap();
        let b = c.run_window(&ops, &mut lvl("ONE/ANY"), 1_000_000).unwrap();
        assert!(!b.prior_writes.is_empty());
        for w in &b.prior_writes {
            assert!(a.records.contains(w) || w.op_id < a.records[0].op_id);
        }
        let ops: Vec<_> = b.all_ops().iter().map(crate::gamma::IntervalOp::from).collect();
        crate::gamma::gamma_score(&ops, 95.0).unwrap();
        let bare: Vec<_> = b.records.iter().map(crate::gamma::IntervalOp::from).collect();
        assert!(crate::gamma::gamma_score(&bare, 95.0).is_err());
    }

    #[test]
    fn trace_file_round_trip() {
        let mut c = cluster(6);
        let ops = generate(&WorkloadSpec {
            ops_per_thread_per_window: 25,
            ..Default::default()
        })
        .unwrap();
        let t = c.run_window(&ops, &mut lvl("QUORUM/ALL"), 10_000_000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        save_trace(&t.records, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        assert_eq!(load_trace(&p).unwrap(), t.records);

        std::fs::write(&p, format!("{TRACE_HEADER}\n1,k,read,5,3,0,ONE,ONE,10\n")).unwrap();
        assert!(load_trace(&p).unwrap_err().to_string().contains(":2:"));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Cluster::new(ClusterConfig {
            replica_count: 0,
            ..Default::default()
        })
        .is_err());
        assert!(Cluster::new(ClusterConfig {
            latency: LatencyModel::LogNormal {
                median_us: 0.0,
                sigma: 1.0
            },
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn parses_cluster_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        std::fs::write(
            &p,
            "replica_count = 3\ndelay_median_us = 5000\nwrite_service_median_us = 1000\nbackground_rate_max = 10\n",
        )
        .unwrap();
        let c = ClusterConfig::from_file(&p).unwrap();
        assert_eq!(c.replica_count, 3);
        assert_eq!(
            c.write_service,
            Some(LatencyModel::LogNormal {
                median_us: 1000.0,
                sigma: 0.5
            })
        );
        assert_eq!(c.background_rate, (0.0, 10.0));
    }
}
