//! Bagged trees with per-split feature subsampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tree::{majority, train_with, FeaturePicker, TreeConfig, TreeModel};
use super::{Features, Label, LabelledRow, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::rng;
use crate::sla::SubSla;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub tree_count: usize,
    /// Features considered per split; `None` considers all three.
    pub max_features: Option<usize>,
    pub tree: TreeConfig,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            tree_count: 100,
            // ceil(sqrt(3))
            max_features: Some(2),
            tree: TreeConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    pub subsla: SubSla,
}

impl ForestModel {
    /// Majority vote; ties go to the lowest class index.
    pub fn predict(&self, f: &Features) -> Result<Label> {
        if self.trees.is_empty() {
            return Err(Error::Model("forest has no trees".into()));
        }
        let mut votes = [0usize; CLASS_COUNT];
        for t in &self.trees {
            votes[t.predict(f)?.class()] += 1;
        }
        Ok(Label::from_class(majority(&votes)).expect("class in range"))
    }
}

/// RNG for tree `index`: draws the bootstrap first, then the split feature subsets.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    rng::stream(seed, &[0xF0, index as u64])
}

/// Bootstrap indices for a sample of size `n`, drawn from `rng`.
pub fn bootstrap(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn train_forest(rows: &[LabelledRow], cfg: &ForestConfig, subsla: SubSla) -> Result<ForestModel> {
    if rows.is_empty() {
        return Err(Error::Empty("no labelled rows to train on"));
    }
    if cfg.tree_count == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    if cfg.max_features == Some(0) {
        return Err(Error::Config("max_features must be positive".into()));
    }
    let mut trees = Vec::with_capacity(cfg.tree_count);
    for i in 0..cfg.tree_count {
        let mut rng = tree_rng(cfg.seed, i);
        let sample: Vec<LabelledRow> = bootstrap(&mut rng, rows.len()).into_iter().map(|j| rows[j]).collect();
        let picker = cfg.max_features.map(|m| FeaturePicker {
            rng: &mut rng,
            per_split: m,
        });
        trees.push(train_with(&sample, &cfg.tree, subsla, picker)?);
    }
    Ok(ForestModel { trees, subsla })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::train_tree;

    fn sla() -> SubSla {
        SubSla::new(250.0, 5.0).unwrap()
    }

    fn lr(rw: f64, tc: f64, p: f64, class: usize) -> LabelledRow {
        LabelledRow {
            features: Features { rw, tc, p },
            label: Label::from_class(class).unwrap(),
        }
    }

    fn noisy_separable(seed: u64, n: usize, noise: f64) -> Vec<LabelledRow> {
        let mut rng = rng::stream(seed, &[]);
        (0..n)
            .map(|_| {
                let rw: f64 = rng.random();
                let p = rng.random_range(0.0..1000.0);
                let mut c = if rw <= 0.5 { 0 } else { 5 };
                if rng.random_bool(noise) {
                    c = rng.random_range(0..CLASS_COUNT);
                }
                lr(rw, rng.random_range(1..4) as f64, p, c)
            })
            .collect()
    }

    #[test]
    fn single_tree_forest_matches_tree_on_its_bootstrap() {
        let rows = noisy_separable(3, 200, 0.2);
        let cfg = ForestConfig {
            tree_count: 1,
            max_features: None,
            ..Default::default()
        };
        let forest = train_forest(&rows, &cfg, sla()).unwrap();
        let boot: Vec<_> = bootstrap(&mut tree_rng(cfg.seed, 0), rows.len()).into_iter().map(|i| rows[i]).collect();
        let tree = train_tree(&boot, &cfg.tree, sla()).unwrap();
        assert_eq!(forest.trees[0].nodes, tree.nodes);
        for r in &rows {
            assert_eq!(forest.predict(&r.features).unwrap(), tree.predict(&r.features).unwrap());
        }
    }

    #[test]
    fn single_label_votes_unanimously() {
        let rows: Vec<_> = (0..50).map(|i| lr(i as f64 / 50.0, 2.0, i as f64, 7)).collect();
        let f = train_forest(&rows, &ForestConfig { tree_count: 10, ..Default::default() }, sla()).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(f.predict(&Features { rw: 0.3, tc: 9.0, p: 1.0 }).unwrap(), Label::from_class(7).unwrap());
    }

    #[test]
    fn forest_not_worse_than_tree_on_held_out_noisy_data() {
        let train = noisy_separable(11, 400, 0.25);
        let test = noisy_separable(12, 400, 0.25);
        let tree = train_tree(&train, &TreeConfig::default(), sla()).unwrap();
        let forest = train_forest(&train, &ForestConfig::default(), sla()).unwrap();
        let err = |pred: &dyn Fn(&Features) -> Label| {
            test.iter().filter(|r| pred(&r.features) != r.label).count() as f64 / test.len() as f64
        };
        let te = err(&|f| tree.predict(f).unwrap());
        let fe = err(&|f| forest.predict(f).unwrap());
        assert!(fe <= te + 0.05, "forest {fe} tree {te}");
    }

    #[test]
    fn vote_ties_go_to_lowest_class() {
        let leaf = |c| TreeModel {
            nodes: vec![super::super::tree::Node::Leaf(Label::from_class(c).unwrap())],
            config: TreeConfig::default(),
            subsla: sla(),
        };
        let f = ForestModel {
            trees: vec![leaf(4), leaf(2), leaf(4), leaf(2), leaf(9)],
            subsla: sla(),
        };
        assert_eq!(f.predict(&Features { rw: 0.0, tc: 1.0, p: 0.0 }).unwrap().class(), 2);
    }

    #[test]
    fn deterministic_and_rejects_bad_config() {
        let rows = noisy_separable(4, 100, 0.1);
        let cfg = ForestConfig { tree_count: 5, ..Default::default() };
        assert_eq!(train_forest(&rows, &cfg, sla()).unwrap(), train_forest(&rows, &cfg, sla()).unwrap());
        assert!(train_forest(&[], &cfg, sla()).is_err());
        assert!(train_forest(&rows, &ForestConfig { tree_count: 0, ..Default::default() }, sla()).is_err());
        let empty = ForestModel { trees: vec![], subsla: sla() };
        assert!(empty.predict(&Features { rw: 0.0, tc: 1.0, p: 0.0 }).is_err());
    }
}
