//! Shared fixtures for the benchmarks.

use qtune_core::experiment::{corpus, CorpusGrid, Experiment};
use qtune_core::learner::{train, LabelConfig};
use qtune_core::sim::LatencyModel;
use qtune_core::workload::generate;
use qtune_core::{
    Cluster, ClusterConfig, ConsistencyLevel, Features, IntervalOp, LearnerKind, Model, SubSla, TrainingRow,
    WorkloadSpec,
};

pub fn sla() -> SubSla {
    SubSla::new(250.0, 5.0).expect("valid thresholds")
}

fn cluster() -> ClusterConfig {
    ClusterConfig {
        write_service: Some(LatencyModel::LogNormal {
            median_us: 50_000.0,
            sigma: 1.3,
        }),
        background_rate: (0.0, 100_000.0),
        congestion_capacity: 1_000_000.0,
        ..Default::default()
    }
}

/// A small simulated corpus: every read proportion and level, two windows each.
pub fn small_corpus() -> Vec<TrainingRow> {
    let exp = Experiment {
        cluster: cluster(),
        workload: WorkloadSpec {
            key_count: 50,
            ops_per_thread_per_window: 2_000,
            ..Default::default()
        },
        window_us: 1_000_000,
        ..Default::default()
    };
    let grid = CorpusGrid {
        thread_counts: vec![4],
        windows: 2,
        ..Default::default()
    };
    corpus(&exp, &grid).expect("fixture corpus")
}

pub fn model(kind: &str, rows: &[TrainingRow]) -> Model {
    let kind: LearnerKind = kind.parse().expect("known learner");
    train(&kind, rows, &sla(), &LabelConfig::default()).expect("fixture model")
}

pub fn features(rows: &[TrainingRow]) -> Vec<Features> {
    rows.iter().map(Features::of).collect()
}

/// All operations of one simulated window at a weak level, with `keys` keys.
pub fn weak_trace(keys: usize, window_us: u64) -> Vec<IntervalOp> {
    let spec = WorkloadSpec {
        key_count: keys,
        ops_per_thread_per_window: 20_000,
        ..Default::default()
    };
    let ops = generate(&spec).expect("fixture workload");
    let mut c = Cluster::new(cluster()).expect("fixture cluster");
    let mut level: ConsistencyLevel = "ONE/ANY".parse().expect("level");
    let trace = c.run_window(&ops, &mut level, window_us).expect("fixture window");
    trace.all_ops().iter().map(IntervalOp::from).collect()
}
