//! Classification tree over (rw, tc, p).
//!
//! Splits greedily on information gain with thresholds at midpoints between
//! adjacent observed values, then prunes bottom-up by replacing a subtree with a
//! leaf whenever the leaf's pessimistic error estimate (upper confidence limit at
//! `confidence`) does not exceed the subtree's.

use rand::seq::index::sample;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Features, Label, LabelledRow, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::sla::SubSla;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeConfig {
    /// Pruning confidence; smaller prunes harder.
    pub confidence: f64,
    /// Data shuffling seed, used for cross-validation folds.
    pub seed: u64,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub prune: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            confidence: 0.25,
            seed: 1,
            min_leaf: 2,
            max_depth: None,
            prune: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Label),
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    /// Root at index 0.
    pub nodes: Vec<Node>,
    pub config: TreeConfig,
    pub subsla: SubSla,
}

impl TreeModel {
    pub fn predict(&self, f: &Features) -> Result<Label> {
        self.leaf_of(f).map(|i| match self.nodes[i] {
            Node::Leaf(l) => l,
            Node::Split { .. } => unreachable!(),
        })
    }

    /// Index of the leaf `f` falls into.
    pub fn leaf_of(&self, f: &Features) -> Result<usize> {
        if self.nodes.is_empty() {
            return Err(Error::Model("tree has not been trained".into()));
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(_) => return Ok(i),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if f.get(*feature) <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(&self.nodes, 0)
        }
    }

    /// Laplace-smoothed class distribution of every leaf, estimated from `rows`.
    pub fn leaf_distributions(&self, rows: &[LabelledRow]) -> Result<Vec<[f64; CLASS_COUNT]>> {
        let mut counts = vec![[1.0f64; CLASS_COUNT]; self.nodes.len()];
        for r in rows {
            counts[self.leaf_of(&r.features)?][r.label.class()] += 1.0;
        }
        for c in &mut counts {
            let total: f64 = c.iter().sum();
            c.iter_mut().for_each(|v| *v /= total);
        }
        Ok(counts)
    }
}

/// Growing-time node with training class counts, before compaction.
enum Grown {
    Leaf {
        counts: [usize; CLASS_COUNT],
    },
    Split {
        feature: usize,
        threshold: f64,
        counts: [usize; CLASS_COUNT],
        left: Box<Grown>,
        right: Box<Grown>,
    },
}

/// Majority class; ties go to the lowest class index.
pub(crate) fn majority(counts: &[usize; CLASS_COUNT]) -> usize {
    let mut best = 0;
    for c in 1..CLASS_COUNT {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

fn entropy(counts: &[usize; CLASS_COUNT], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Highest information-gain split of `idx` over `features`. Ties keep the earlier
/// feature and the lower threshold.
pub(crate) fn best_split(
    rows: &[LabelledRow],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<BestSplit> {
    let n = idx.len();
    let mut total = [0usize; CLASS_COUNT];
    for &i in idx {
        total[rows[i].label.class()] += 1;
    }
    let parent = entropy(&total, n);
    let mut best: Option<BestSplit> = None;
    let mut sorted = idx.to_vec();
    for &f in features {
        sorted.sort_by(|&a, &b| {
            rows[a]
                .features
                .get(f)
                .total_cmp(&rows[b].features.get(f))
        });
        let mut left = [0usize; CLASS_COUNT];
        for k in 0..n - 1 {
            left[rows[sorted[k]].label.class()] += 1;
            let lo = rows[sorted[k]].features.get(f);
            let hi = rows[sorted[k + 1]].features.get(f);
            if lo == hi || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let mut right = total;
            for c in 0..CLASS_COUNT {
                right[c] -= left[c];
            }
            let nl = k + 1;
            let nr = n - nl;
            let child = (nl as f64 * entropy(&left, nl) + nr as f64 * entropy(&right, nr)) / n as f64;
            let gain = parent - child;
            if best.is_none_or(|b| gain > b.gain + 1e-12) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-12)
}

/// Feature subset chooser for forests; `None` means all features.
pub(crate) struct FeaturePicker<'a, R: Rng> {
    pub rng: &'a mut R,
    pub per_split: usize,
}

fn grow<R: Rng>(
    rows: &[LabelledRow],
    idx: Vec<usize>,
    cfg: &TreeConfig,
    depth: usize,
    picker: &mut Option<FeaturePicker<'_, R>>,
) -> Grown {
    let mut counts = [0usize; CLASS_COUNT];
    for &i in &idx {
        counts[rows[i].label.class()] += 1;
    }
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let too_small = idx.len() < 2 * cfg.min_leaf.max(1);
    let too_deep = cfg.max_depth.is_some_and(|d| depth >= d);
    if pure || too_small || too_deep {
        return Grown::Leaf { counts };
    }
    let features: Vec<usize> = match picker {
        None => (0..3).collect(),
        Some(p) => {
            let mut f = sample(p.rng, 3, p.per_split.clamp(1, 3)).into_vec();
            f.sort_unstable();
            f
        }
    };
    let Some(split) = best_split(rows, &idx, &features, cfg.min_leaf.max(1)) else {
        return Grown::Leaf { counts };
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| rows[i].features.get(split.feature) <= split.threshold);
    let left = grow(rows, l, cfg, depth + 1, picker);
    let right = grow(rows, r, cfg, depth + 1, picker);
    Grown::Split {
        feature: split.feature,
        threshold: split.threshold,
        counts,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Pessimistic extra errors for a leaf with `errors` misclassified out of `n`,
/// at upper confidence limit `cf` (C4.5 style).
pub fn added_errors(n: f64, errors: f64, cf: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    if errors < 1.0 {
        let base = n * (1.0 - cf.powf(1.0 / n));
        if errors == 0.0 {
            return base;
        }
        return base + errors * (added_errors(n, 1.0, cf) - base);
    }
    if errors + 0.5 >= n {
        return 0.67 * (n - errors);
    }
    let z = Normal::standard().inverse_cdf(1.0 - cf);
    let f = (errors + 0.5) / n;
    let r = (f + z * z / (2.0 * n) + z * (f / n - f * f / n + z * z / (4.0 * n * n)).sqrt())
        / (1.0 + z * z / n);
    r * n - errors
}

fn leaf_estimate(counts: &[usize; CLASS_COUNT], cf: f64) -> f64 {
    let n: usize = counts.iter().sum();
    let e = (n - counts[majority(counts)]) as f64;
    e + added_errors(n as f64, e, cf)
}

/// Bottom-up subtree replacement. Returns the pruned node and its error estimate.
fn prune(node: Grown, cf: f64) -> (Grown, f64) {
    match node {
        Grown::Leaf { counts } => {
            let e = leaf_estimate(&counts, cf);
            (Grown::Leaf { counts }, e)
        }
        Grown::Split {
            feature,
            threshold,
            counts,
            left,
            right,
        } => {
            let (left, el) = prune(*left, cf);
            let (right, er) = prune(*right, cf);
            let subtree = el + er;
            let as_leaf = leaf_estimate(&counts, cf);
            if as_leaf <= subtree + 0.1 {
                (Grown::Leaf { counts }, as_leaf)
            } else {
                (
                    Grown::Split {
                        feature,
                        threshold,
                        counts,
                        left: Box::new(left),
                        right: Box::new(right),
                    },
                    subtree,
                )
            }
        }
    }
}

fn flatten(node: &Grown, nodes: &mut Vec<Node>) -> usize {
    let at = nodes.len();
    match node {
        Grown::Leaf { counts } => nodes.push(Node::Leaf(Label::from_class(majority(counts)).unwrap())),
        Grown::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            nodes.push(Node::Leaf(Label::Infeasible));
            let l = flatten(left, nodes);
            let r = flatten(right, nodes);
            nodes[at] = Node::Split {
                feature: *feature,
                threshold: *threshold,
                left: l,
                right: r,
            };
        }
    }
    at
}

pub(crate) fn train_with<R: Rng>(
    rows: &[LabelledRow],
    cfg: &TreeConfig,
    subsla: SubSla,
    picker: Option<FeaturePicker<'_, R>>,
) -> Result<TreeModel> {
    if rows.is_empty() {
        return Err(Error::Empty("no labelled rows to train on"));
    }
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::Config(format!(
            "pruning confidence must lie in (0, 1), got {}",
            cfg.confidence
        )));
    }
    let mut picker = picker;
    let mut root = grow(rows, (0..rows.len()).collect(), cfg, 0, &mut picker);
    if cfg.prune {
        root = prune(root, cfg.confidence).0;
    }
    let mut nodes = Vec::new();
    flatten(&root, &mut nodes);
    Ok(TreeModel {
        nodes,
        config: cfg.clone(),
        subsla,
    })
}

pub fn train_tree(rows: &[LabelledRow], cfg: &TreeConfig, subsla: SubSla) -> Result<TreeModel> {
    train_with::<rand_chacha::ChaCha8Rng>(rows, cfg, subsla, None)
}
