//! k-fold cross-validation with 0/1 loss.

use rand::seq::SliceRandom;

use super::label::{label_dataset, LabelConfig};
use super::{fit_logistic, train_forest, train_tree, LabelledRow, LearnerKind, Model};
use crate::error::{Error, Result};
use crate::logger::TrainingRow;
use crate::rng;
use crate::sla::SubSla;

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// Misclassification rate of each held-out fold.
    pub fold_errors: Vec<f64>,
    /// Mean of `fold_errors`.
    pub mean: f64,
}

/// Shuffled assignment of `n` rows to `folds` folds of near-equal size.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Config(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[0xCF]));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    Ok(fold)
}

fn seed_of(kind: &LearnerKind) -> u64 {
    match kind {
        LearnerKind::Tree(c) => c.seed,
        LearnerKind::Forest(c) => c.seed,
        LearnerKind::Logistic(_) => 1,
    }
}

fn run(
    n: usize,
    folds: usize,
    seed: u64,
    mut fit_and_score: impl FnMut(&[usize], &[usize]) -> Result<f64>,
) -> Result<CvReport> {
    let assignment = fold_assignment(n, folds, seed)?;
    let mut fold_errors = Vec::with_capacity(folds);
    for f in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == f);
        fold_errors.push(fit_and_score(&train, &test)?);
    }
    let mean = fold_errors.iter().sum::<f64>() / folds as f64;
    Ok(CvReport { fold_errors, mean })
}

fn error_rate(model: &Model, subsla: &SubSla, test: &[LabelledRow]) -> Result<f64> {
    let mut wrong = 0usize;
    for r in test {
        wrong += (model.predict(&r.features, subsla)? != r.label) as usize;
    }
    Ok(wrong as f64 / test.len() as f64)
}

/// Cross-validates a tree or forest on already labelled rows.
pub fn cross_validate_labelled(
    rows: &[LabelledRow],
    subsla: &SubSla,
    folds: usize,
    kind: &LearnerKind,
) -> Result<CvReport> {
    run(rows.len(), folds, seed_of(kind), |train, test| {
        let tr: Vec<LabelledRow> = train.iter().map(|&i| rows[i]).collect();
        let te: Vec<LabelledRow> = test.iter().map(|&i| rows[i]).collect();
        let model = match kind {
            LearnerKind::Tree(c) => Model::Tree(train_tree(&tr, c, *subsla)?),
            LearnerKind::Forest(c) => Model::Forest(train_forest(&tr, c, *subsla)?),
            LearnerKind::Logistic(_) => {
                return Err(Error::Config("the logistic learner needs unlabelled rows".into()))
            }
        };
        error_rate(&model, subsla, &te)
    })
}

/// Labels the full corpus once, then cross-validates against those labels.
///
/// Labels are a property of the feature cell over the whole corpus, so every fold is
/// scored against the same targets. The logistic learner is refit on each fold's raw
/// rows.
pub fn cross_validate(
    rows: &[TrainingRow],
    subsla: &SubSla,
    folds: usize,
    kind: &LearnerKind,
    labels: &LabelConfig,
) -> Result<CvReport> {
    let labelled = label_dataset(rows, subsla, labels)?.rows;
    match kind {
        LearnerKind::Logistic(cfg) => run(rows.len(), folds, seed_of(kind), |train, test| {
            let tr: Vec<TrainingRow> = train.iter().map(|&i| rows[i]).collect();
            let te: Vec<LabelledRow> = test.iter().map(|&i| labelled[i]).collect();
            let model = Model::Logistic(fit_logistic(&tr, subsla, cfg, labels)?);
            error_rate(&model, subsla, &te)
        }),
        _ => cross_validate_labelled(&labelled, subsla, folds, kind),
    }
}
