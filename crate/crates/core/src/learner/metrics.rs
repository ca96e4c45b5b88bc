//! Model-selection metrics: AICC, BIC, prediction overhead and the Perf tradeoff.

use std::time::Instant;

use super::label::{label_dataset, LabelConfig};
use super::{Features, Model, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::logger::TrainingRow;
use crate::sla::SubSla;

/// Corrected Akaike information criterion. Undefined unless `n > k + 1`.
pub fn aicc(k: usize, n: usize, log_l: f64) -> Result<f64> {
    if n <= k + 1 {
        return Err(Error::Undefined(format!("AICC needs n > k + 1 (k = {k}, n = {n})")));
    }
    let k = k as f64;
    Ok(2.0 * k - 2.0 * log_l + 2.0 * k * (k + 1.0) / (n as f64 - k - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BicForm {
    /// `2k ln N - 2 ln L`
    #[default]
    Printed,
    /// `k ln N - 2 ln L`
    Standard,
}

pub fn bic(k: usize, n: f64, log_l: f64, form: BicForm) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(Error::Undefined(format!("BIC needs N >= 1, got {n}")));
    }
    let coef = match form {
        BicForm::Printed => 2.0,
        BicForm::Standard => 1.0,
    };
    Ok(coef * k as f64 * n.ln() - 2.0 * log_l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfConfig {
    /// Overhead of the slowest learner, ms.
    pub o_base: f64,
    /// Error of the least accurate learner.
    pub e_base: f64,
    pub w_speedup: f64,
    pub w_a: f64,
}

impl Default for PerfConfig {
    fn default() -> Self {
        PerfConfig {
            o_base: 1.5,
            e_base: 1.98,
            w_speedup: 0.5,
            w_a: 0.5,
        }
    }
}

impl PerfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.o_base > 0.0 && self.e_base > 0.0) {
            return Err(Error::Config("Perf baselines must be positive".into()));
        }
        let in_unit = |w: f64| (0.0..=1.0).contains(&w);
        if !in_unit(self.w_speedup) || !in_unit(self.w_a) || (self.w_speedup + self.w_a - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "Perf weights must lie in [0, 1] and sum to 1, got {} and {}",
                self.w_speedup, self.w_a
            )));
        }
        Ok(())
    }
}

/// `w_speedup * (o_base - o) / o_base + w_a * (e_base - e) / e_base`, unclamped.
pub fn perf(overhead_ms: f64, error: f64, cfg: &PerfConfig) -> Result<f64> {
    cfg.validate()?;
    let speedup = (cfg.o_base - overhead_ms) / cfg.o_base;
    let a_rel = (cfg.e_base - error) / cfg.e_base;
    Ok(cfg.w_speedup * speedup + cfg.w_a * a_rel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overhead {
    pub mean_ms: f64,
    pub variance: f64,
    pub std_dev: f64,
    pub samples: usize,
}

/// Times one prediction per feature vector.
pub fn measure_overhead(model: &Model, features: &[Features], subsla: &SubSla) -> Result<Overhead> {
    if features.is_empty() {
        return Err(Error::Empty("no feature vectors to time"));
    }
    let mut ms = Vec::with_capacity(features.len());
    for f in features {
        let t = Instant::now();
        std::hint::black_box(model.predict(std::hint::black_box(f), subsla)?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = ms.len() as f64;
    let mean_ms = ms.iter().sum::<f64>() / n;
    let variance = ms.iter().map(|x| (x - mean_ms).powi(2)).sum::<f64>() / n;
    Ok(Overhead {
        mean_ms,
        variance,
        std_dev: variance.sqrt(),
        samples: ms.len(),
    })
}

/// Parameter count and maximised log-likelihood of a model on its training rows.
///
/// Trees count one parameter per leaf and score each row by its leaf's
/// Laplace-smoothed class frequency. Forests use the mean leaf count per tree and
/// Laplace-smoothed vote shares. Logistic models count non-zero coefficients and
/// sum both logits' Bernoulli likelihoods.
pub fn likelihood(model: &Model, rows: &[TrainingRow], labels: &LabelConfig) -> Result<(usize, f64)> {
    if rows.is_empty() {
        return Err(Error::Empty("no rows to score"));
    }
    match model {
        Model::Tree(t) => {
            let l = label_dataset(rows, &t.subsla, labels)?;
            let dist = t.leaf_distributions(&l.rows)?;
            let mut ll = 0.0;
            for r in &l.rows {
                ll += dist[t.leaf_of(&r.features)?][r.label.class()].ln();
            }
            Ok((t.leaf_count(), ll))
        }
        Model::Forest(f) => {
            let l = label_dataset(rows, &f.subsla, labels)?;
            let trees = f.trees.len() as f64;
            let mut ll = 0.0;
            for r in &l.rows {
                let votes = f
                    .trees
                    .iter()
                    .map(|t| t.predict(&r.features).map(|p| (p == r.label) as usize))
                    .sum::<Result<usize>>()?;
                ll += ((votes as f64 + 1.0) / (trees + CLASS_COUNT as f64)).ln();
            }
            let leaves: usize = f.trees.iter().map(|t| t.leaf_count()).sum();
            Ok((leaves.div_ceil(f.trees.len().max(1)), ll))
        }
        Model::Logistic(m) => Ok((m.parameter_count(), m.log_likelihood(rows))),
    }
}

/// Everything reported about one trained learner.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub learner: &'static str,
    /// Mean 0/1 loss over cross-validation folds.
    pub cv_error: f64,
    /// `None` when `n <= k + 1`.
    pub aicc: Option<f64>,
    pub bic: f64,
    pub k: usize,
    pub n: usize,
    pub log_l: f64,
    pub overhead: Overhead,
}

impl ModelScore {
    pub fn new(
        model: &Model,
        rows: &[TrainingRow],
        labels: &LabelConfig,
        cv_error: f64,
        overhead: Overhead,
        form: BicForm,
    ) -> Result<Self> {
        let (k, log_l) = likelihood(model, rows, labels)?;
        let n = rows.len();
        Ok(ModelScore {
            learner: model.kind_name(),
            cv_error,
            aicc: aicc(k, n, log_l).ok(),
            bic: bic(k, n as f64, log_l, form)?,
            k,
            n,
            log_l,
            overhead,
        })
    }
}
