//! Corpus generation and closed-loop evaluation of level policies.
//!
//! Every series of windows runs on one cluster whose seed depends only on the
//! workload cell, so different levels (and the predicted policy) face the same
//! message delays and background traffic. Each series starts with one unscored
//! warm-up window.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::learner::{Features, Label, Model};
use crate::level::ConsistencyLevel;
use crate::logger::{observe, TrainingRow, DEFAULT_PERCENTILE};
use crate::rng::mix;
use crate::sim::{Cluster, ClusterConfig, Trace};
use crate::sla::SubSla;
use crate::workload::{generate, WorkloadSpec};

/// Level used for warm-up windows of the predicted policy and whenever it
/// predicts INFEASIBLE.
pub const FALLBACK: ConsistencyLevel = ConsistencyLevel::new(crate::level::ReadLevel::Quorum, crate::level::WriteLevel::Quorum);

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub cluster: ClusterConfig,
    /// Base workload; read proportion and thread count are overridden per cell.
    pub workload: WorkloadSpec,
    pub window_us: u64,
    pub percentile: f64,
    pub seed: u64,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            cluster: ClusterConfig::default(),
            workload: WorkloadSpec::default(),
            window_us: 60_000_000,
            percentile: DEFAULT_PERCENTILE,
            seed: 1,
        }
    }
}

fn seed_of(seed: u64, salts: &[u64]) -> u64 {
    salts.iter().fold(seed, |acc, &s| mix(acc, s))
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.workload.validate()?;
        if self.window_us == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Config(format!("percentile must lie in (0, 100], got {}", self.percentile)));
        }
        Ok(())
    }

    fn cluster(&self, salts: &[u64]) -> Result<Cluster> {
        Cluster::new(ClusterConfig {
            seed: seed_of(self.seed, salts),
            ..self.cluster.clone()
        })
    }

    fn spec(&self, rw: f64, tc: usize, salts: &[u64]) -> WorkloadSpec {
        WorkloadSpec {
            read_proportion: rw,
            thread_count: tc,
            seed: seed_of(self.seed, salts),
            ..self.workload.clone()
        }
    }

    fn window(&self, cluster: &mut Cluster, spec: &WorkloadSpec, level: ConsistencyLevel) -> Result<(Trace, TrainingRow)> {
        let ops = generate(spec)?;
        let trace = cluster.run_window(&ops, &mut level.clone(), self.window_us)?;
        if trace.exhausted_sessions > 0 {
            return Err(Error::Config(format!(
                "{} sessions ran out of operations before the window closed; raise ops_per_thread_per_window",
                trace.exhausted_sessions
            )));
        }
        let row = observe(&trace, spec, level, self.percentile)?;
        Ok((trace, row))
    }
}

/// Maps `f` over `items` on all available cores, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusGrid {
    pub read_proportions: Vec<f64>,
    pub thread_counts: Vec<usize>,
    pub levels: Vec<ConsistencyLevel>,
    /// Scored windows per (read proportion, thread count, level).
    pub windows: usize,
}

impl Default for CorpusGrid {
    fn default() -> Self {
        CorpusGrid {
            read_proportions: (1..=10).map(|i| i as f64 / 10.0).collect(),
            thread_counts: vec![4, 16],
            levels: ConsistencyLevel::all().to_vec(),
            windows: 25,
        }
    }
}

impl CorpusGrid {
    pub fn rows(&self) -> usize {
        self.read_proportions.len() * self.thread_counts.len() * self.levels.len() * self.windows
    }
}

/// One training row per scored window of every grid cell, in grid order
/// (read proportion, thread count, level, window).
pub fn corpus(exp: &Experiment, grid: &CorpusGrid) -> Result<Vec<TrainingRow>> {
    exp.validate()?;
    if grid.rows() == 0 {
        return Err(Error::Empty("corpus grid has no cells"));
    }
    let mut cells = Vec::new();
    for (ri, &rw) in grid.read_proportions.iter().enumerate() {
        for (ti, &tc) in grid.thread_counts.iter().enumerate() {
            for &level in &grid.levels {
                cells.push((ri as u64, rw, ti as u64, tc, level));
            }
        }
    }
    let series = par_map(&cells, |&(ri, rw, ti, tc, level)| {
        let mut cluster = exp.cluster(&[0xC0, ri, ti])?;
        let mut rows = Vec::with_capacity(grid.windows);
        for w in 0..=grid.windows as u64 {
            let spec = exp.spec(rw, tc, &[0xC1, ri, ti, w]);
            let (_, row) = exp.window(&mut cluster, &spec, level)?;
            if w > 0 {
                rows.push(row);
            }
        }
        Ok(rows)
    })?;
    Ok(series.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Predicted,
    Fixed(ConsistencyLevel),
}

impl Policy {
    /// The predicted policy followed by the 12 fixed levels.
    pub fn all() -> Vec<Policy> {
        std::iter::once(Policy::Predicted)
            .chain(ConsistencyLevel::all().into_iter().map(Policy::Fixed))
            .collect()
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Predicted => f.write_str("PREDICTED"),
            Policy::Fixed(l) => l.fmt(f),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("PREDICTED") {
            Ok(Policy::Predicted)
        } else {
            s.parse().map(Policy::Fixed)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub policy: Policy,
    pub rw: f64,
    pub tc: usize,
    pub window: usize,
    /// What the model predicted; `None` for fixed policies.
    pub predicted: Option<Label>,
    /// Level the window actually ran at.
    pub level: ConsistencyLevel,
    pub p: u64,
    pub l_ms: f64,
    pub s_ms: f64,
    pub t_ops: f64,
    /// Met the subSLA; windows predicted INFEASIBLE never do.
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcomes: Vec<WindowOutcome>,
    /// Wall-clock time of each prediction. Not part of any output file.
    pub prediction_ms: Vec<f64>,
}

pub const OUTCOME_HEADER: &str = "policy,rw,tc,window,predicted,level,p,l_ms,s_ms,t_ops,satisfied";
pub const M_HEADER: &str = "policy,windows,m";

impl Evaluation {
    /// M-statistic per policy, in [`Policy::all`] order, skipping absent policies.
    pub fn m_statistics(&self) -> Vec<(Policy, usize, f64)> {
        Policy::all()
            .into_iter()
            .filter_map(|p| {
                let mine: Vec<_> = self.outcomes.iter().filter(|o| o.policy == p).collect();
                (!mine.is_empty()).then(|| {
                    let ok = mine.iter().filter(|o| o.satisfied).count();
                    (p, mine.len(), 100.0 * ok as f64 / mine.len() as f64)
                })
            })
            .collect()
    }

    pub fn m_of(&self, policy: Policy) -> Option<f64> {
        self.m_statistics().into_iter().find(|(p, _, _)| *p == policy).map(|(_, _, m)| m)
    }

    pub fn write_outcomes(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{OUTCOME_HEADER}")?;
        for o in &self.outcomes {
            writeln!(
                w,
                "{},{:.6},{},{},{},{},{},{:.6},{:.6},{:.6},{}",
                o.policy,
                o.rw,
                o.tc,
                o.window,
                o.predicted.map_or("-".to_string(), |l| l.to_string()),
                o.level,
                o.p,
                o.l_ms,
                o.s_ms,
                o.t_ops,
                o.satisfied
            )?;
        }
        Ok(())
    }

    pub fn write_m(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{M_HEADER}")?;
        for (p, n, m) in self.m_statistics() {
            writeln!(w, "{p},{n},{m:.6}")?;
        }
        Ok(())
    }
}

/// Runs every policy for `windows` scored windows at each read proportion.
///
/// The predicted policy chooses each window's level from the workload's read
/// proportion and thread count and the packet count of the previous window.
pub fn evaluate(
    exp: &Experiment,
    model: &Model,
    subsla: &SubSla,
    read_proportions: &[f64],
    windows: usize,
    policies: &[Policy],
) -> Result<Evaluation> {
    exp.validate()?;
    if read_proportions.is_empty() || windows == 0 || policies.is_empty() {
        return Err(Error::Empty("nothing to evaluate"));
    }
    let tc = exp.workload.thread_count;
    let mut tasks = Vec::new();
    for (ri, &rw) in read_proportions.iter().enumerate() {
        for &p in policies {
            tasks.push((ri as u64, rw, p));
        }
    }
    let series = par_map(&tasks, |&(ri, rw, policy)| {
        let mut cluster = exp.cluster(&[0xE0, ri])?;
        let mut outcomes = Vec::with_capacity(windows);
        let mut timings = Vec::new();
        let warm = match policy {
            Policy::Fixed(l) => l,
            Policy::Predicted => FALLBACK,
        };
        let (_, mut prev) = exp.window(&mut cluster, &exp.spec(rw, tc, &[0xE1, ri, 0]), warm)?;
        for w in 1..=windows {
            let predicted = match policy {
                Policy::Fixed(_) => None,
                Policy::Predicted => {
                    let f = Features {
                        rw,
                        tc: tc as f64,
                        p: prev.p as f64,
                    };
                    let t = Instant::now();
                    let label = model.predict(&f, subsla)?;
                    timings.push(t.elapsed().as_secs_f64() * 1e3);
                    Some(label)
                }
            };
            let level = match (policy, predicted) {
                (Policy::Fixed(l), _) => l,
                (_, Some(Label::Level(l))) => l,
                _ => FALLBACK,
            };
            let (_, row) = exp.window(&mut cluster, &exp.spec(rw, tc, &[0xE1, ri, w as u64]), level)?;
            outcomes.push(WindowOutcome {
                policy,
                rw,
                tc,
                window: w,
                predicted,
                level,
                p: row.p,
                l_ms: row.l_ms,
                s_ms: row.s_ms,
                t_ops: row.t_ops,
                satisfied: predicted != Some(Label::Infeasible) && subsla.satisfied_by(row.l_ms, row.s_ms),
            });
            prev = row;
        }
        Ok((outcomes, timings))
    })?;
    let mut outcomes = Vec::new();
    let mut prediction_ms = Vec::new();
    for (o, t) in series {
        outcomes.extend(o);
        prediction_ms.extend(t);
    }
    Ok(Evaluation { outcomes, prediction_ms })
}
