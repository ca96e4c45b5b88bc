//! Groups training rows into feature cells and labels each cell with the
//! throughput-maximising level that meets the subSLA.

use std::collections::BTreeMap;

use super::{Features, Label, LabelledRow};
use crate::error::{Error, Result};
use crate::level::ConsistencyLevel;
use crate::logger::TrainingRow;
use crate::sla::SubSla;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelConfig {
    /// Read proportions are rounded to multiples of this step.
    pub rw_step: f64,
    /// Packet counts are bucketed into this many corpus quantiles.
    pub p_buckets: usize,
    /// Fraction of a level's observations in a cell that must meet the subSLA for
    /// the level to be a candidate there.
    pub min_success: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            rw_step: 0.05,
            p_buckets: 10,
            min_success: 1.0,
        }
    }
}

/// Identifies a feature cell: quantised read proportion, thread count, packet bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub rw: i64,
    pub tc: i64,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellQuantizer {
    pub rw_step: f64,
    /// Ascending bucket boundaries; bucket `i` holds `p` with `i` cuts `<= p`.
    pub p_cuts: Vec<f64>,
}

impl CellQuantizer {
    /// Uses the corpus's `p_buckets`-quantiles as packet-count boundaries.
    pub fn fit(rows: &[TrainingRow], cfg: &LabelConfig) -> Result<Self> {
        if !(cfg.rw_step > 0.0) {
            return Err(Error::Config("rw_step must be positive".into()));
        }
        if cfg.p_buckets == 0 {
            return Err(Error::Config("p_buckets must be positive".into()));
        }
        let mut ps: Vec<u64> = rows.iter().map(|r| r.p).collect();
        ps.sort_unstable();
        let mut p_cuts: Vec<f64> = (1..cfg.p_buckets)
            .filter_map(|i| {
                let rank = (i * ps.len()).div_ceil(cfg.p_buckets);
                (rank > 0 && rank < ps.len()).then(|| ps[rank] as f64)
            })
            .collect();
        p_cuts.dedup();
        Ok(CellQuantizer {
            rw_step: cfg.rw_step,
            p_cuts,
        })
    }

    pub fn key(&self, f: &Features) -> CellKey {
        CellKey {
            rw: (f.rw / self.rw_step).round() as i64,
            tc: f.tc.round() as i64,
            p: self.p_cuts.partition_point(|&c| c <= f.p),
        }
    }
}

/// Observations of one level inside one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LevelStats {
    pub count: usize,
    pub satisfied: usize,
    pub mean_t_ops: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub levels: [Option<LevelStats>; ConsistencyLevel::COUNT],
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labelling {
    pub rows: Vec<LabelledRow>,
    pub quantizer: CellQuantizer,
    pub cells: BTreeMap<CellKey, CellSummary>,
}

/// Picks the feasible level with the highest mean throughput; ties go to the
/// weakest level.
pub fn best_level(levels: &[Option<LevelStats>; ConsistencyLevel::COUNT], min_success: f64) -> Label {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in levels.iter().enumerate() {
        let Some(s) = s else { continue };
        if s.count == 0 || (s.satisfied as f64) < min_success * s.count as f64 {
            continue;
        }
        if best.is_none_or(|(_, t)| s.mean_t_ops > t) {
            best = Some((i, s.mean_t_ops));
        }
    }
    match best {
        Some((i, _)) => Label::Level(ConsistencyLevel::from_index(i).unwrap()),
        None => Label::Infeasible,
    }
}

pub fn label_dataset(rows: &[TrainingRow], subsla: &SubSla, cfg: &LabelConfig) -> Result<Labelling> {
    if rows.is_empty() {
        return Err(Error::Empty("no rows to label"));
    }
    let quantizer = CellQuantizer::fit(rows, cfg)?;
    let keys: Vec<CellKey> = rows.iter().map(|r| quantizer.key(&Features::of(r))).collect();

    let mut acc: BTreeMap<CellKey, [Option<LevelStats>; ConsistencyLevel::COUNT]> = BTreeMap::new();
    for (row, key) in rows.iter().zip(&keys) {
        let slot = &mut acc.entry(*key).or_insert([None; ConsistencyLevel::COUNT])[row.c.index()];
        let s = slot.get_or_insert_with(LevelStats::default);
        s.count += 1;
        s.satisfied += subsla.satisfied_by(row.l_ms, row.s_ms) as usize;
        // running mean
        s.mean_t_ops += (row.t_ops - s.mean_t_ops) / s.count as f64;
    }
    let cells: BTreeMap<CellKey, CellSummary> = acc
        .into_iter()
        .map(|(k, levels)| {
            let label = best_level(&levels, cfg.min_success);
            (k, CellSummary { levels, label })
        })
        .collect();
    let rows = rows
        .iter()
        .zip(&keys)
        .map(|(r, k)| LabelledRow {
            features: Features::of(r),
            label: cells[k].label,
        })
        .collect();
    Ok(Labelling {
        rows,
        quantizer,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rw: f64, c: &str, l: f64, s: f64, t: f64) -> TrainingRow {
        TrainingRow {
            rw,
            tc: 4,
            p: 1000,
            c: c.parse().unwrap(),
            l_ms: l,
            s_ms: s,
            t_ops: t,
        }
    }

    fn sla(l: f64, s: f64) -> SubSla {
        SubSla::new(l, s).unwrap()
    }

    fn one_cell(cfg: &LabelConfig) -> LabelConfig {
        LabelConfig {
            p_buckets: 1,
            ..cfg.clone()
        }
    }

    #[test]
    fn single_candidate() {
        let rows = vec![
            row(0.5, "ONE/ANY", 100.0, 2.0, 900.0),
            row(0.5, "ALL/ALL", 400.0, 0.0, 100.0),
        ];
        let l = label_dataset(&rows, &sla(250.0, 5.0), &one_cell(&LabelConfig::default())).unwrap();
        assert!(l.rows.iter().all(|r| r.label == Label::Level("ONE/ANY".parse().unwrap())));
    }

    #[test]
    fn max_throughput_wins() {
        let rows = vec![
            row(0.5, "QUORUM/QUORUM", 100.0, 0.0, 400.0),
            row(0.5, "ONE/ANY", 100.0, 2.0, 900.0),
        ];
        let l = label_dataset(&rows, &sla(250.0, 5.0), &one_cell(&LabelConfig::default())).unwrap();
        assert_eq!(l.rows[0].label, Label::Level("ONE/ANY".parse().unwrap()));
    }

    #[test]
    fn tie_goes_to_weakest() {
        let rows = vec![
            row(0.5, "QUORUM/QUORUM", 100.0, 0.0, 400.0),
            row(0.5, "ONE/ALL", 100.0, 0.0, 400.0),
        ];
        let l = label_dataset(&rows, &sla(250.0, 5.0), &one_cell(&LabelConfig::default())).unwrap();
        assert_eq!(l.rows[0].label, Label::Level("ONE/ALL".parse().unwrap()));
    }

    #[test]
    fn nothing_feasible() {
        let rows: Vec<_> = ConsistencyLevel::all()
            .iter()
            .map(|c| row(0.5, &c.to_string(), 40.0 + c.index() as f64, 0.0, 10.0))
            .collect();
        let l = label_dataset(&rows, &sla(20.0, 0.0), &one_cell(&LabelConfig::default())).unwrap();
        assert!(l.rows.iter().all(|r| r.label == Label::Infeasible));
    }

    #[test]
    fn one_bad_observation_disqualifies_by_default() {
        let rows = vec![
            row(0.5, "ONE/ANY", 100.0, 2.0, 900.0),
            row(0.5, "ONE/ANY", 100.0, 9.0, 900.0),
            row(0.5, "ALL/ONE", 100.0, 0.0, 300.0),
        ];
        let strict = label_dataset(&rows, &sla(250.0, 5.0), &one_cell(&LabelConfig::default())).unwrap();
        assert_eq!(strict.rows[0].label, Label::Level("ALL/ONE".parse().unwrap()));
        let lax = LabelConfig {
            min_success: 0.5,
            ..one_cell(&LabelConfig::default())
        };
        let lax = label_dataset(&rows, &sla(250.0, 5.0), &lax).unwrap();
        assert_eq!(lax.rows[0].label, Label::Level("ONE/ANY".parse().unwrap()));
    }

    #[test]
    fn cells_split_on_rw() {
        let rows = vec![
            row(0.1, "ONE/ANY", 100.0, 0.0, 900.0),
            row(0.9, "ONE/ANY", 100.0, 50.0, 900.0),
            row(0.9, "ALL/ONE", 100.0, 0.0, 300.0),
        ];
        let l = label_dataset(&rows, &sla(250.0, 5.0), &LabelConfig::default()).unwrap();
        assert_eq!(l.rows[0].label, Label::Level("ONE/ANY".parse().unwrap()));
        assert_eq!(l.rows[1].label, Label::Level("ALL/ONE".parse().unwrap()));
        assert_eq!(l.cells.len(), 2);
    }

    #[test]
    fn decile_cuts() {
        let rows: Vec<_> = (0..100)
            .map(|i| TrainingRow {
                p: i,
                ..row(0.5, "ONE/ANY", 1.0, 0.0, 1.0)
            })
            .collect();
        let q = CellQuantizer::fit(&rows, &LabelConfig::default()).unwrap();
        assert_eq!(q.p_cuts.len(), 9);
        let bucket = |p: f64| q.key(&Features { rw: 0.5, tc: 4.0, p }).p;
        assert_eq!(bucket(0.0), 0);
        assert_eq!(bucket(9.0), 0);
        assert_eq!(bucket(10.0), 1);
        assert_eq!(bucket(99.0), 9);
        assert_eq!(bucket(1e9), 9);
    }

    #[test]
    fn empty_rejected() {
        assert!(label_dataset(&[], &sla(1.0, 1.0), &LabelConfig::default()).is_err());
    }
}
