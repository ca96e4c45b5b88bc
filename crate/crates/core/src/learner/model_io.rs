//! Versioned plain-text model files.
//!
//! ```text
//! qtune-model 1
//! kind tree
//! sla 250 5
//! config confidence=0.25 seed=1 min_leaf=2 max_depth=none prune=true
//! nodes 3
//! rw,0.45,1,2
//! ONE/ANY
//! QUORUM/QUORUM
//! ```
//!
//! Split nodes are `feature,threshold,left,right` and leaves are a bare label.
//! Forests repeat the `config`/`nodes` block once per tree after a `trees` count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::label::{CellKey, CellQuantizer};
use super::logistic::{Logit, COEF_COUNT};
use super::tree::Node;
use super::{ForestModel, Label, LogisticConfig, LogisticModel, Model, TreeConfig, TreeModel, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::level::ConsistencyLevel;
use crate::sla::SubSla;

pub const MAGIC: &str = "qtune-model";
pub const VERSION: u32 = 1;

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn write_tree(out: &mut String, t: &TreeModel) {
    let c = &t.config;
    writeln!(
        out,
        "config confidence={} seed={} min_leaf={} max_depth={} prune={}",
        c.confidence,
        c.seed,
        c.min_leaf,
        c.max_depth.map_or("none".to_string(), |d| d.to_string()),
        c.prune
    )
    .unwrap();
    writeln!(out, "nodes {}", t.nodes.len()).unwrap();
    for n in &t.nodes {
        match n {
            Node::Leaf(l) => writeln!(out, "{l}").unwrap(),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => writeln!(out, "{},{threshold},{left},{right}", FEATURE_NAMES[*feature]).unwrap(),
        }
    }
}

pub fn model_to_string(model: &Model) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "kind {}", model.kind_name()).unwrap();
    let sla = model.subsla();
    writeln!(out, "sla {} {}", sla.latency_ms, sla.staleness_ms).unwrap();
    match model {
        Model::Tree(t) => write_tree(&mut out, t),
        Model::Forest(f) => {
            writeln!(out, "trees {}", f.trees.len()).unwrap();
            for t in &f.trees {
                write_tree(&mut out, t);
            }
        }
        Model::Logistic(m) => {
            let c = &m.config;
            writeln!(
                out,
                "config lambda={} alpha={} cut={} max_iter={} tol={}",
                c.lambda, c.alpha, c.cut, c.max_iter, c.tol
            )
            .unwrap();
            for (name, l) in [("latency", &m.latency), ("staleness", &m.staleness)] {
                writeln!(out, "{name} {}", join(&l.coef)).unwrap();
                let se: Vec<String> = l.std_err.iter().map(|v| opt(*v)).collect();
                writeln!(out, "{name}_se {}", se.join(" ")).unwrap();
            }
            for (i, (mean, sd)) in m.scale.iter().enumerate() {
                writeln!(out, "scale {} {mean} {sd}", FEATURE_NAMES[i]).unwrap();
            }
            writeln!(out, "rw_step {}", m.quantizer.rw_step).unwrap();
            writeln!(out, "p_cuts {}", join(&m.quantizer.p_cuts)).unwrap();
            let row = |t: &[Option<f64>]| t.iter().map(|v| opt(*v)).collect::<Vec<_>>().join(" ");
            writeln!(out, "global {}", row(&m.global_throughput)).unwrap();
            writeln!(out, "cells {}", m.cell_throughput.len()).unwrap();
            for (k, t) in &m.cell_throughput {
                writeln!(out, "{} {} {} {}", k.rw, k.tc, k.p, row(t)).unwrap();
            }
        }
    }
    out
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, path)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, self.line, msg)
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim_end())
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    /// Reads a line starting with `key` and returns the rest.
    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest),
            _ if l == key => Ok(""),
            _ => Err(self.err(format!("expected `{key}`, found {l:?}"))),
        }
    }

    fn val<T: FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad {what} {s:?}")))
    }

    fn floats(&self, s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
        let v: Vec<f64> = s.split_whitespace().map(|x| self.val(x, what)).collect::<Result<_>>()?;
        if n != usize::MAX && v.len() != n {
            return Err(self.err(format!("expected {n} values for {what}, found {}", v.len())));
        }
        Ok(v)
    }

    fn config_map(&mut self) -> Result<BTreeMap<&'a str, &'a str>> {
        let rest = self.keyed("config")?;
        rest.split_whitespace()
            .map(|kv| kv.split_once('=').ok_or_else(|| self.err(format!("bad config entry {kv:?}"))))
            .collect()
    }

    fn field<T: FromStr>(&self, m: &BTreeMap<&str, &str>, k: &str) -> Result<T> {
        let v = m.get(k).ok_or_else(|| self.err(format!("missing config field {k}")))?;
        self.val(v, k)
    }

    fn tree(&mut self, subsla: SubSla) -> Result<TreeModel> {
        let m = self.config_map()?;
        let max_depth = match *m.get("max_depth").ok_or_else(|| self.err("missing config field max_depth"))? {
            "none" => None,
            d => Some(self.val(d, "max_depth")?),
        };
        let config = TreeConfig {
            confidence: self.field(&m, "confidence")?,
            seed: self.field(&m, "seed")?,
            min_leaf: self.field(&m, "min_leaf")?,
            max_depth,
            prune: self.field(&m, "prune")?,
        };
        let count: usize = {
            let s = self.keyed("nodes")?;
            self.val(s, "node count")?
        };
        if count == 0 {
            return Err(self.err("tree has no nodes"));
        }
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            let l = self.next()?;
            let parts: Vec<&str> = l.split(',').collect();
            let node = match parts.as_slice() {
                [label] => Node::Leaf(self.val::<Label>(label, "label")?),
                [feature, thr, left, right] => {
                    let feature = FEATURE_NAMES
                        .iter()
                        .position(|f| f == feature)
                        .ok_or_else(|| self.err(format!("unknown feature {feature:?}")))?;
                    let (left, right): (usize, usize) = (self.val(left, "child")?, self.val(right, "child")?);
                    if left >= count || right >= count {
                        return Err(self.err("child index out of range"));
                    }
                    Node::Split {
                        feature,
                        threshold: self.val(thr, "threshold")?,
                        left,
                        right,
                    }
                }
                _ => return Err(self.err(format!("bad node line {l:?}"))),
            };
            nodes.push(node);
        }
        Ok(TreeModel { nodes, config, subsla })
    }

    fn optionals(&self, parts: &[&str], n: usize, what: &str) -> Result<Vec<Option<f64>>> {
        if parts.len() != n {
            return Err(self.err(format!("expected {n} values for {what}, found {}", parts.len())));
        }
        parts
            .iter()
            .map(|p| if *p == "-" { Ok(None) } else { self.val(p, what).map(Some) })
            .collect()
    }

    fn throughputs(&self, parts: &[&str]) -> Result<[Option<f64>; ConsistencyLevel::COUNT]> {
        let v = self.optionals(parts, ConsistencyLevel::COUNT, "throughput")?;
        Ok(v.try_into().expect("length checked"))
    }

    fn logistic(&mut self, subsla: SubSla) -> Result<LogisticModel> {
        let m = self.config_map()?;
        let config = LogisticConfig {
            lambda: self.field(&m, "lambda")?,
            alpha: self.field(&m, "alpha")?,
            cut: self.field(&m, "cut")?,
            max_iter: self.field(&m, "max_iter")?,
            tol: self.field(&m, "tol")?,
        };
        let mut logit = |name: &str| -> Result<Logit> {
            let c = self.keyed(name)?;
            let coef = self.floats(c, COEF_COUNT, "coefficients")?;
            let s = self.keyed(&format!("{name}_se"))?;
            let std_err = self.optionals(&s.split_whitespace().collect::<Vec<_>>(), COEF_COUNT, "standard error")?;
            Ok(Logit { coef, std_err })
        };
        let latency = logit("latency")?;
        let staleness = logit("staleness")?;
        let mut scale = [(0.0, 1.0); 3];
        for (i, s) in scale.iter_mut().enumerate() {
            let rest = self.keyed("scale")?;
            let (name, nums) = rest.split_once(' ').ok_or_else(|| self.err("bad scale line"))?;
            if name != FEATURE_NAMES[i] {
                return Err(self.err(format!("expected scale for {}", FEATURE_NAMES[i])));
            }
            let v = self.floats(nums, 2, "scale")?;
            *s = (v[0], v[1]);
        }
        let rw_step = {
            let s = self.keyed("rw_step")?;
            self.val(s, "rw_step")?
        };
        let p_cuts = {
            let s = self.keyed("p_cuts")?;
            self.floats(s, usize::MAX, "p_cuts")?
        };
        let global_throughput = {
            let s = self.keyed("global")?;
            self.throughputs(&s.split_whitespace().collect::<Vec<_>>())?
        };
        let cells: usize = {
            let s = self.keyed("cells")?;
            self.val(s, "cell count")?
        };
        let mut cell_throughput = BTreeMap::new();
        for _ in 0..cells {
            let l = self.next()?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() < 3 {
                return Err(self.err("bad cell line"));
            }
            let key = CellKey {
                rw: self.val(parts[0], "cell rw")?,
                tc: self.val(parts[1], "cell tc")?,
                p: self.val(parts[2], "cell p")?,
            };
            cell_throughput.insert(key, self.throughputs(&parts[3..])?);
        }
        Ok(LogisticModel {
            latency,
            staleness,
            scale,
            quantizer: CellQuantizer { rw_step, p_cuts },
            cell_throughput,
            global_throughput,
            config,
            subsla,
        })
    }
}

pub fn parse_model(text: &str, path: impl AsRef<Path>) -> Result<Model> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
        line: 0,
        path: path.as_ref().to_path_buf(),
    };
    let version: u32 = {
        let v = r.keyed(MAGIC)?;
        r.val(v, "version")?
    };
    if version != VERSION {
        return Err(r.err(format!("unsupported model version {version}")));
    }
    let kind = r.keyed("kind")?;
    if !["tree", "forest", "logistic"].contains(&kind) {
        return Err(r.err(format!("unknown model kind {kind:?}")));
    }
    let subsla = {
        let s = r.keyed("sla")?;
        s.parse::<SubSla>().map_err(|e| r.err(e.to_string()))?
    };
    let model = match kind {
        "tree" => Model::Tree(r.tree(subsla)?),
        "forest" => {
            let n: usize = {
                let s = r.keyed("trees")?;
                r.val(s, "tree count")?
            };
            let trees = (0..n).map(|_| r.tree(subsla)).collect::<Result<Vec<_>>>()?;
            Model::Forest(ForestModel { trees, subsla })
        }
        _ => Model::Logistic(r.logistic(subsla)?),
    };
    if let Some((i, l)) = r.lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(&r.path, i + 1, format!("trailing content {l:?}")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{train, LabelConfig, LearnerKind};
    use crate::logger::TrainingRow;
    use rand::Rng;

    fn corpus() -> Vec<TrainingRow> {
        let mut rng = crate::rng::stream(3, &[]);
        let mut rows = Vec::new();
        for i in 0..300 {
            let c = ConsistencyLevel::from_index(i % 12).unwrap();
            let rw = (rng.random_range(1..=10) as f64) / 10.0;
            let strong = c.is_strong(5);
            rows.push(TrainingRow {
                rw,
                tc: [4, 16][i % 2],
                p: rng.random_range(1000..5000),
                c,
                l_ms: if c.read.acks(5) == 5 { 300.0 } else { 40.0 + rng.random_range(0.0..10.0) },
                s_ms: if strong || rw < 0.3 { 0.0 } else { 8.0 },
                t_ops: 1000.0 - 20.0 * c.index() as f64 + rng.random_range(0.0..5.0),
            });
        }
        rows
    }

    #[test]
    fn round_trips_every_kind() {
        let rows = corpus();
        let sla = SubSla::new(250.0, 5.0).unwrap();
        for kind in ["tree", "forest", "logistic"] {
            let mut k: LearnerKind = kind.parse().unwrap();
            if let LearnerKind::Forest(c) = &mut k {
                c.tree_count = 5;
            }
            let m = train(&k, &rows, &sla, &LabelConfig::default()).unwrap();
            let text = model_to_string(&m);
            let back = parse_model(&text, "m.txt").unwrap();
            assert_eq!(back, m, "{kind}");
            assert_eq!(model_to_string(&back), text);
        }
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let text = "qtune-model 1\nkind tree\nsla 250 5\nconfig confidence=0.25 seed=1 min_leaf=2 max_depth=none prune=true\nnodes 3\nrw,0.45,1,2\nONE/ANY\nINFEASIBLE\n";
        std::fs::write(&path, text).unwrap();
        let m = load_model(&path).unwrap();
        let Model::Tree(t) = &m else { panic!() };
        assert_eq!(t.leaf_count(), 2);
        save_model(&m, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);

        let bad = [
            ("qtune-model 2\n", 1),
            ("qtune-model 1\nkind bush\nsla 1 1\n", 2),
            ("qtune-model 1\nkind tree\nsla 250 5\nconfig confidence=0.25 seed=1 min_leaf=2 max_depth=none prune=true\nnodes 2\nrw,0.5,1,7\nONE/ANY\n", 6),
            ("qtune-model 1\nkind tree\nsla 250 5\nconfig confidence=0.25 seed=1 min_leaf=2 max_depth=none prune=true\nnodes 1\nSOME/ANY\n", 6),
            ("qtune-model 1\nkind tree\nsla 250 5\nconfig confidence=0.25 seed=1 min_leaf=2 max_depth=none prune=true\nnodes 2\nONE/ANY\n", 7),
            ("qtune-model 1\nkind tree\nsla 250 5\nconfig confidence=0.25 seed=1 min_leaf=2 max_depth=none prune=true\nnodes 1\nONE/ANY\nextra\n", 7),
        ];
        for (text, line) in bad {
            match parse_model(text, "x") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(load_model(dir.path().join("missing")).is_err());
    }
}
