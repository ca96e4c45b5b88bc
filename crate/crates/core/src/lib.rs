//! Simulated quorum-replicated key-value store and the tooling to learn, per
//! workload, a consistency level that meets a latency/staleness SLA.
//!
//! The pipeline is: [`workload`] generates operations, [`sim`] executes them on an
//! N-replica cluster, [`gamma`] measures staleness, [`logger`] aggregates windows
//! into training rows, [`learner`] labels and learns, and [`sla`] scores outcomes.

pub mod error;
pub mod experiment;
pub mod gamma;
pub mod kv;
pub mod learner;
pub mod level;
pub mod logger;
pub mod rng;
pub mod sim;
pub mod sla;
pub mod workload;

pub use error::{Error, Result};
pub use gamma::{gamma_score, per_key_gamma, IntervalOp, StalenessReport};
pub use learner::{Features, Label, LabelledRow, LearnerKind, Model};
pub use level::{ConsistencyLevel, OpKind, ReadLevel, WriteLevel};
pub use logger::TrainingRow;
pub use sim::{Cluster, ClusterConfig, OperationRecord, Trace};
pub use sla::{Sla, SubSla};
pub use workload::{KeyDistribution, WorkloadSpec};
