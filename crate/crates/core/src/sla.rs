//! Service level agreements: rows of (latency, staleness) thresholds.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One SLA row. Both thresholds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubSla {
    pub latency_ms: f64,
    pub staleness_ms: f64,
}

impl SubSla {
    pub fn new(latency_ms: f64, staleness_ms: f64) -> Result<Self> {
        if !latency_ms.is_finite() || latency_ms <= 0.0 {
            return Err(Error::Config(format!(
                "latency threshold must be positive, got {latency_ms}"
            )));
        }
        if !staleness_ms.is_finite() || staleness_ms < 0.0 {
            return Err(Error::Config(format!(
                "staleness threshold must be non-negative, got {staleness_ms}"
            )));
        }
        Ok(SubSla {
            latency_ms,
            staleness_ms,
        })
    }

    pub fn satisfied_by(&self, l_ms: f64, s_ms: f64) -> bool {
        satisfies(self, l_ms, s_ms)
    }
}

impl FromStr for SubSla {
    type Err = Error;

    /// `"<latency_ms> <staleness_ms>"`, whitespace separated.
    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let (Some(l), Some(st), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Config(format!(
                "expected `latency_ms staleness_ms`, got {s:?}"
            )));
        };
        let l = l
            .parse()
            .map_err(|_| Error::Config(format!("bad latency threshold {l:?}")))?;
        let st = st
            .parse()
            .map_err(|_| Error::Config(format!("bad staleness threshold {st:?}")))?;
        SubSla::new(l, st)
    }
}

impl fmt::Display for SubSla {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.latency_ms, self.staleness_ms)
    }
}

/// An ordered, non-empty list of subSLAs. Rows need not be sorted by strictness.
#[derive(Debug, Clone, PartialEq)]
pub struct Sla {
    rows: Vec<SubSla>,
}

impl Sla {
    pub fn new(rows: Vec<SubSla>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("SLA has no rows"));
        }
        Ok(Sla { rows })
    }

    pub fn rows(&self) -> &[SubSla] {
        &self.rows
    }

    pub fn parse_str(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .parse()
                .map_err(|e: Error| Error::parse(path, i + 1, e.to_string()))?;
            rows.push(row);
        }
        Sla::new(rows)
    }
}

/// Reads an SLA file: one `latency_ms staleness_ms` pair per line, order preserved.
pub fn parse_sla(path: impl AsRef<Path>) -> Result<Sla> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Sla::parse_str(&text, path)
}

pub fn satisfies(sla: &SubSla, l_ms: f64, s_ms: f64) -> bool {
    l_ms <= sla.latency_ms && s_ms <= sla.staleness_ms
}

/// Percentage of `(latency, staleness)` outcomes that meet `sla`.
pub fn m_statistic(outcomes: &[(f64, f64)], sla: &SubSla) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("no outcomes for M-statistic"));
    }
    let ok = outcomes
        .iter()
        .filter(|(l, s)| satisfies(sla, *l, *s))
        .count();
    Ok(100.0 * ok as f64 / outcomes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sla(l: f64, s: f64) -> SubSla {
        SubSla::new(l, s).unwrap()
    }

    #[test]
    fn satisfies_examples() {
        assert!(satisfies(&sla(100.0, 5.0), 80.0, 3.0));
        assert!(satisfies(&sla(100.0, 5.0), 100.0, 5.0));
        assert!(!satisfies(&sla(25.0, 15.0), 26.0, 0.0));
    }

    #[test]
    fn m_statistic_extremes() {
        let s = sla(10.0, 1.0);
        assert_eq!(m_statistic(&[(1.0, 0.0), (2.0, 1.0)], &s).unwrap(), 100.0);
        assert_eq!(m_statistic(&[(11.0, 0.0), (2.0, 1.5)], &s).unwrap(), 0.0);
        assert_eq!(m_statistic(&[(1.0, 0.0), (20.0, 0.0)], &s).unwrap(), 50.0);
        assert!(m_statistic(&[], &s).is_err());
    }

    #[test]
    fn parses_example_table() {
        let s = Sla::parse_str("100 5\n50 10\n25 15", "t").unwrap();
        assert_eq!(s.rows(), &[sla(100.0, 5.0), sla(50.0, 10.0), sla(25.0, 15.0)]);
        assert_eq!("250 5".parse::<SubSla>().unwrap(), sla(250.0, 5.0));
        assert!(Sla::parse_str("", "t").is_err());
        let err = Sla::parse_str("100 5\n50\n", "t").unwrap_err();
        assert!(err.to_string().contains("t:2"), "{err}");
        assert!("0 5".parse::<SubSla>().is_err());
    }

    proptest! {
        #[test]
        fn antitone(l in 0.0..300.0f64, s in 0.0..30.0f64, dl in 0.0..50.0f64, ds in 0.0..5.0f64) {
            let t = sla(150.0, 10.0);
            if !satisfies(&t, l, s) {
                prop_assert!(!satisfies(&t, l + dl, s + ds));
            }
        }

        #[test]
        fn m_is_permutation_invariant(mut v in proptest::collection::vec((0.0..200.0f64, 0.0..20.0f64), 1..40)) {
            let t = sla(100.0, 10.0);
            let a = m_statistic(&v, &t).unwrap();
            v.reverse();
            let half = v.len() / 2;
            v.rotate_left(half);
            prop_assert_eq!(a, m_statistic(&v, &t).unwrap());
        }
    }
}
