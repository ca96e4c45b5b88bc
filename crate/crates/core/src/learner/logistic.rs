//! Pair of L1-regularised logits for latency and staleness exceedance.
//!
//! Each logit models `P(l_ms > L)` (resp. `P(s_ms > S)`) from a one-hot encoding
//! of the consistency level plus standardised rw, tc and p. Prediction keeps the
//! levels whose two exceedance probabilities fall below the cut and returns the one
//! with the highest throughput observed in the query's feature cell.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, Normal};

use super::label::{label_dataset, CellKey, CellQuantizer, LabelConfig};
use super::{Features, Label};
use crate::error::{Error, Result};
use crate::level::ConsistencyLevel;
use crate::logger::TrainingRow;
use crate::sla::SubSla;

const LEVELS: usize = ConsistencyLevel::COUNT;
/// Intercept, one dummy per level, rw, tc, p. The L1 penalty resolves the
/// redundancy between the intercept and a full set of level dummies.
pub const COEF_COUNT: usize = 1 + LEVELS + 3;
const INTERCEPT_BOUND: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticConfig {
    /// L1 weight on the summed negative log-likelihood.
    pub lambda: f64,
    /// Significance level for the Wald tests reported by [`LogisticModel::significance`].
    pub alpha: f64,
    /// A level is feasible when both exceedance probabilities are below this.
    pub cut: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lambda: 25.0,
            alpha: 0.05,
            cut: 0.5,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

pub fn coef_names() -> Vec<String> {
    let mut v = vec!["intercept".to_string()];
    v.extend(ConsistencyLevel::all().into_iter().map(|c| format!("c={c}")));
    v.extend(["rw", "tc", "p"].map(String::from));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logit {
    pub coef: Vec<f64>,
    /// Wald standard errors; `None` where the coefficient was shrunk to zero.
    pub std_err: Vec<Option<f64>>,
}

impl Logit {
    fn prob(&self, x: &[f64; COEF_COUNT]) -> f64 {
        sigmoid(dot(&self.coef, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub name: String,
    pub coef: f64,
    pub z: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub latency: Logit,
    pub staleness: Logit,
    /// (mean, sd) of rw, tc, p in the training rows.
    pub scale: [(f64, f64); 3],
    pub quantizer: CellQuantizer,
    /// Mean throughput per level in each training cell.
    pub cell_throughput: BTreeMap<CellKey, [Option<f64>; LEVELS]>,
    /// Mean throughput per level over the whole corpus; used for unseen cells.
    pub global_throughput: [Option<f64>; LEVELS],
    pub config: LogisticConfig,
    pub subsla: SubSla,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

fn design(level: ConsistencyLevel, f: &Features, scale: &[(f64, f64); 3]) -> [f64; COEF_COUNT] {
    let mut x = [0.0; COEF_COUNT];
    x[0] = 1.0;
    x[1 + level.index()] = 1.0;
    for i in 0..3 {
        x[1 + LEVELS + i] = (f.get(i) - scale[i].0) / scale[i].1;
    }
    x
}

fn log_lik(coef: &[f64], xs: &[[f64; COEF_COUNT]], ys: &[bool]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| {
            let t = dot(coef, x);
            // log sigmoid(t) = -ln(1 + e^-t), computed stably
            let log1pexp = |u: f64| if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
            if y {
                -log1pexp(-t)
            } else {
                -log1pexp(t)
            }
        })
        .sum()
}

fn objective(coef: &[f64], xs: &[[f64; COEF_COUNT]], ys: &[bool], lambda: f64) -> f64 {
    -log_lik(coef, xs, ys) + lambda * coef[1..].iter().map(|b| b.abs()).sum::<f64>()
}

/// Proximal Newton: each outer step solves the weighted lasso of the local quadratic
/// approximation by coordinate descent, then halves the step until the penalised
/// objective does not increase.
fn fit_one(xs: &[[f64; COEF_COUNT]], ys: &[bool], cfg: &LogisticConfig) -> Result<Logit> {
    let n = xs.len();
    let mut beta = vec![0.0; COEF_COUNT];
    let frac = ys.iter().filter(|&&y| y).count() as f64 / n as f64;
    let f = frac.clamp(1e-9, 1.0 - 1e-9);
    beta[0] = (f / (1.0 - f)).ln().clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND);
    let mut obj = objective(&beta, xs, ys, cfg.lambda);
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        for i in 0..n {
            let eta = dot(&beta, &xs[i]);
            let p = sigmoid(eta);
            w[i] = (p * (1.0 - p)).max(1e-6);
            z[i] = eta + ((ys[i] as u8 as f64) - p) / w[i];
        }
        // Coordinate descent on 1/2 sum w (z - x.b)^2 + lambda |b_{1..}|.
        let mut b = beta.clone();
        let mut r: Vec<f64> = (0..n).map(|i| z[i] - dot(&b, &xs[i])).collect();
        let col_ss: Vec<f64> = (0..COEF_COUNT)
            .map(|j| (0..n).map(|i| w[i] * xs[i][j] * xs[i][j]).sum())
            .collect();
        for _ in 0..200 {
            let mut max_delta: f64 = 0.0;
            for j in 0..COEF_COUNT {
                if col_ss[j] <= 0.0 {
                    continue;
                }
                let rho: f64 = (0..n).map(|i| w[i] * xs[i][j] * r[i]).sum::<f64>() + col_ss[j] * b[j];
                let new = if j == 0 {
                    (rho / col_ss[j]).clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND)
                } else {
                    soft_threshold(rho, cfg.lambda) / col_ss[j]
                };
                let d = new - b[j];
                if d != 0.0 {
                    for i in 0..n {
                        r[i] -= d * xs[i][j];
                    }
                    b[j] = new;
                    max_delta = max_delta.max(d.abs());
                }
            }
            if max_delta < cfg.tol * 0.1 {
                break;
            }
        }
        let mut step = 1.0;
        let mut cand: Vec<f64>;
        loop {
            cand = beta.iter().zip(&b).map(|(o, n)| o + step * (n - o)).collect();
            let c = objective(&cand, xs, ys, cfg.lambda);
            if c <= obj + 1e-12 || step < 1e-8 {
                obj = c;
                break;
            }
            step /= 2.0;
        }
        residual = beta.iter().zip(&cand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = cand;
        if residual < cfg.tol {
            let std_err = wald_std_err(&beta, xs);
            return Ok(Logit { coef: beta, std_err });
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Standard errors from the inverse Fisher information over the active coefficients.
fn wald_std_err(beta: &[f64], xs: &[[f64; COEF_COUNT]]) -> Vec<Option<f64>> {
    let active: Vec<usize> = (0..COEF_COUNT).filter(|&j| j == 0 || beta[j] != 0.0).collect();
    let k = active.len();
    let mut info = vec![vec![0.0; k]; k];
    for x in xs {
        let p = sigmoid(dot(beta, x));
        let w = p * (1.0 - p);
        for a in 0..k {
            for b in 0..k {
                info[a][b] += w * x[active[a]] * x[active[b]];
            }
        }
    }
    // The intercept and a full dummy set are collinear; a small ridge keeps the
    // information matrix invertible and shows up as large standard errors.
    for (a, row) in info.iter_mut().enumerate() {
        row[a] += 1e-6;
    }
    let mut out = vec![None; COEF_COUNT];
    if let Some(inv) = invert(info) {
        for (a, &j) in active.iter().enumerate() {
            out[j] = Some(inv[a][a].max(0.0).sqrt());
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
fn invert(mut m: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        if m[piv][c].abs() < 1e-12 {
            return None;
        }
        m.swap(c, piv);
        inv.swap(c, piv);
        let d = m[c][c];
        for j in 0..n {
            m[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn fit_logistic(
    rows: &[TrainingRow],
    subsla: &SubSla,
    cfg: &LogisticConfig,
    labels: &LabelConfig,
) -> Result<LogisticModel> {
    if rows.is_empty() {
        return Err(Error::Empty("no rows to fit"));
    }
    if !(cfg.lambda >= 0.0) || !(cfg.cut > 0.0 && cfg.cut < 1.0) || !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("invalid logistic configuration {cfg:?}")));
    }
    let feats: Vec<Features> = rows.iter().map(Features::of).collect();
    let n = rows.len() as f64;
    let mut scale = [(0.0, 1.0); 3];
    for (i, s) in scale.iter_mut().enumerate() {
        let mean = feats.iter().map(|f| f.get(i)).sum::<f64>() / n;
        let var = feats.iter().map(|f| (f.get(i) - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        *s = (mean, if sd > 0.0 { sd } else { 1.0 });
    }
    let xs: Vec<[f64; COEF_COUNT]> = rows.iter().zip(&feats).map(|(r, f)| design(r.c, f, &scale)).collect();
    let y_lat: Vec<bool> = rows.iter().map(|r| r.l_ms > subsla.latency_ms).collect();
    let y_stale: Vec<bool> = rows.iter().map(|r| r.s_ms > subsla.staleness_ms).collect();
    let latency = fit_one(&xs, &y_lat, cfg)?;
    let staleness = fit_one(&xs, &y_stale, cfg)?;

    let labelling = label_dataset(rows, subsla, labels)?;
    let cell_throughput = labelling
        .cells
        .iter()
        .map(|(k, c)| (*k, c.levels.map(|s| s.map(|s| s.mean_t_ops))))
        .collect();
    let mut sums = [(0.0, 0usize); LEVELS];
    for r in rows {
        sums[r.c.index()].0 += r.t_ops;
        sums[r.c.index()].1 += 1;
    }
    let global_throughput = sums.map(|(s, c)| (c > 0).then(|| s / c as f64));
    Ok(LogisticModel {
        latency,
        staleness,
        scale,
        quantizer: labelling.quantizer,
        cell_throughput,
        global_throughput,
        config: cfg.clone(),
        subsla: *subsla,
    })
}

impl LogisticModel {
    /// Exceedance probabilities `(P(l > L), P(s > S))` for `level` at `f`.
    pub fn probabilities(&self, level: ConsistencyLevel, f: &Features) -> (f64, f64) {
        let x = design(level, f, &self.scale);
        (self.latency.prob(&x), self.staleness.prob(&x))
    }

    pub fn feasible(&self, f: &Features) -> Vec<ConsistencyLevel> {
        ConsistencyLevel::all()
            .into_iter()
            .filter(|&c| {
                let (pl, ps) = self.probabilities(c, f);
                pl < self.config.cut && ps < self.config.cut
            })
            .collect()
    }

    fn throughput(&self, key: &CellKey, level: ConsistencyLevel) -> Option<f64> {
        self.cell_throughput
            .get(key)
            .and_then(|t| t[level.index()])
            .or(self.global_throughput[level.index()])
    }

    pub fn predict(&self, f: &Features) -> Result<Label> {
        if self.latency.coef.len() != COEF_COUNT || self.staleness.coef.len() != COEF_COUNT {
            return Err(Error::Model("logistic model has no coefficients".into()));
        }
        let key = self.quantizer.key(f);
        let mut best: Option<(ConsistencyLevel, f64)> = None;
        for c in self.feasible(f) {
            let t = self.throughput(&key, c).unwrap_or(0.0);
            if best.is_none_or(|(_, bt)| t > bt) {
                best = Some((c, t));
            }
        }
        Ok(best.map_or(Label::Infeasible, |(c, _)| Label::Level(c)))
    }

    /// Wald tests for both logits, latency first.
    pub fn significance(&self) -> Vec<(&'static str, Significance)> {
        let normal = Normal::standard();
        let names = coef_names();
        let mut out = Vec::new();
        for (which, logit) in [("latency", &self.latency), ("staleness", &self.staleness)] {
            for (j, name) in names.iter().enumerate() {
                let z = logit.std_err[j].map_or(f64::NAN, |se| logit.coef[j] / se);
                let p_value = if z.is_finite() { 2.0 * (1.0 - normal.cdf(z.abs())) } else { f64::NAN };
                out.push((
                    which,
                    Significance {
                        name: name.clone(),
                        coef: logit.coef[j],
                        z,
                        p_value,
                        significant: p_value < self.config.alpha,
                    },
                ));
            }
        }
        out
    }

    /// Sum of both logits' Bernoulli log-likelihoods on `rows`.
    pub fn log_likelihood(&self, rows: &[TrainingRow]) -> f64 {
        let xs: Vec<_> = rows.iter().map(|r| design(r.c, &Features::of(r), &self.scale)).collect();
        let yl: Vec<bool> = rows.iter().map(|r| r.l_ms > self.subsla.latency_ms).collect();
        let ys: Vec<bool> = rows.iter().map(|r| r.s_ms > self.subsla.staleness_ms).collect();
        log_lik(&self.latency.coef, &xs, &yl) + log_lik(&self.staleness.coef, &xs, &ys)
    }

    /// Non-zero coefficients across both logits.
    pub fn parameter_count(&self) -> usize {
        self.latency
            .coef
            .iter()
            .chain(&self.staleness.coef)
            .filter(|b| **b != 0.0)
            .count()
    }
}
