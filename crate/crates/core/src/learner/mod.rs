//! SLA-constrained labelling and the learners that predict a matching level.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::level::ConsistencyLevel;
use crate::logger::TrainingRow;
use crate::sla::SubSla;

pub mod forest;
pub mod label;
pub mod logistic;
pub mod metrics;
pub mod model_io;
pub mod tree;
pub mod validate;

pub use forest::{train_forest, ForestConfig, ForestModel};
pub use label::{label_dataset, CellKey, CellQuantizer, LabelConfig, Labelling};
pub use logistic::{fit_logistic, LogisticConfig, LogisticModel};
pub use metrics::{aicc, bic, perf, BicForm, ModelScore, PerfConfig};
pub use tree::{train_tree, TreeConfig, TreeModel};
pub use validate::{cross_validate, cross_validate_labelled, CvReport};

/// Class count: the 12 levels plus INFEASIBLE.
pub const CLASS_COUNT: usize = ConsistencyLevel::COUNT + 1;

/// What the learner predicts for a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Level(ConsistencyLevel),
    /// No level meets the subSLA; the caller should fail the operation.
    Infeasible,
}

impl Label {
    pub fn class(self) -> usize {
        match self {
            Label::Level(l) => l.index(),
            Label::Infeasible => ConsistencyLevel::COUNT,
        }
    }

    pub fn from_class(c: usize) -> Option<Self> {
        if c == ConsistencyLevel::COUNT {
            Some(Label::Infeasible)
        } else {
            ConsistencyLevel::from_index(c).map(Label::Level)
        }
    }

    pub fn level(self) -> Option<ConsistencyLevel> {
        match self {
            Label::Level(l) => Some(l),
            Label::Infeasible => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Level(l) => l.fmt(f),
            Label::Infeasible => f.write_str("INFEASIBLE"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("INFEASIBLE") {
            Ok(Label::Infeasible)
        } else {
            s.parse().map(Label::Level)
        }
    }
}

pub const FEATURE_NAMES: [&str; 3] = ["rw", "tc", "p"];

/// Workload and network features a prediction is made from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    pub rw: f64,
    pub tc: f64,
    pub p: f64,
}

impl Features {
    pub fn of(row: &TrainingRow) -> Self {
        Features {
            rw: row.rw,
            tc: row.tc as f64,
            p: row.p as f64,
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match i {
            0 => self.rw,
            1 => self.tc,
            2 => self.p,
            _ => panic!("feature index {i} out of range"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rw.is_finite() && self.tc.is_finite() && self.p.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelledRow {
    pub features: Features,
    pub label: Label,
}

/// Which learner to train, with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerKind {
    Tree(TreeConfig),
    Forest(ForestConfig),
    Logistic(LogisticConfig),
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Tree(_) => "tree",
            LearnerKind::Forest(_) => "forest",
            LearnerKind::Logistic(_) => "logistic",
        }
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(LearnerKind::Tree(TreeConfig::default())),
            "forest" => Ok(LearnerKind::Forest(ForestConfig::default())),
            "logistic" => Ok(LearnerKind::Logistic(LogisticConfig::default())),
            other => Err(Error::Config(format!("unknown learner {other:?}"))),
        }
    }
}

/// A trained predictor bound to the subSLA it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tree(TreeModel),
    Forest(ForestModel),
    Logistic(LogisticModel),
}

impl Model {
    pub fn subsla(&self) -> SubSla {
        match self {
            Model::Tree(m) => m.subsla,
            Model::Forest(m) => m.subsla,
            Model::Logistic(m) => m.subsla,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Tree(_) => "tree",
            Model::Forest(_) => "forest",
            Model::Logistic(_) => "logistic",
        }
    }

    /// Predicts a matching level, or [`Label::Infeasible`].
    ///
    /// Tree and forest labels are specific to the subSLA they were trained on, so a
    /// different `subsla` is rejected.
    pub fn predict(&self, features: &Features, subsla: &SubSla) -> Result<Label> {
        if !features.is_finite() {
            return Err(Error::Model(format!("non-finite features {features:?}")));
        }
        if *subsla != self.subsla() {
            return Err(Error::Model(format!(
                "model was trained for subSLA ({}) but asked about ({})",
                self.subsla(),
                subsla
            )));
        }
        match self {
            Model::Tree(m) => m.predict(features),
            Model::Forest(m) => m.predict(features),
            Model::Logistic(m) => m.predict(features),
        }
    }
}

/// Labels `rows` (where the learner needs labels) and trains the chosen learner.
pub fn train(
    kind: &LearnerKind,
    rows: &[TrainingRow],
    subsla: &SubSla,
    labels: &LabelConfig,
) -> Result<Model> {
    match kind {
        LearnerKind::Tree(cfg) => {
            let l = label_dataset(rows, subsla, labels)?;
            Ok(Model::Tree(train_tree(&l.rows, cfg, *subsla)?))
        }
        LearnerKind::Forest(cfg) => {
            let l = label_dataset(rows, subsla, labels)?;
            Ok(Model::Forest(train_forest(&l.rows, cfg, *subsla)?))
        }
        LearnerKind::Logistic(cfg) => Ok(Model::Logistic(fit_logistic(rows, subsla, cfg, labels)?)),
    }
}
