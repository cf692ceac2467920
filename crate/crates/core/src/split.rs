//! Train/calibration/evaluation split manifests.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreTable;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Train,
    Cal,
    Eval,
}

impl Assignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assignment::Train => "train",
            Assignment::Cal => "cal",
            Assignment::Eval => "eval",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Assignment::Train),
            "cal" => Some(Assignment::Cal),
            "eval" => Some(Assignment::Eval),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Every source is shuffled and divided on its own.
    IntraSource,
    /// Whole sources are held out for evaluation.
    InterSource,
}

/// Share of each source sent to train and calibration; the rest is evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub cal: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, cal: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitManifest {
    pub strategy: SplitStrategy,
    /// One entry per record, in table order.
    pub assignments: Vec<(String, Assignment)>,
    pub held_out_sources: Vec<String>,
    pub seed: Option<u64>,
    pub fractions: Option<SplitFractions>,
}

/// Rows of a table after applying a manifest.
#[derive(Debug, Clone)]
pub struct SplitTables<T: Scalar> {
    pub train: ScoreTable<T>,
    pub cal: ScoreTable<T>,
    pub eval: ScoreTable<T>,
}

// floor with slack for products like 0.29 * 100 = 28.999999999999996
fn floor_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction) + 1e-9).floor() as usize
}

pub fn make_split<T: Scalar>(
    table: &ScoreTable<T>,
    strategy: SplitStrategy,
    fractions: SplitFractions,
    held_out_sources: &[String],
    seed: u64,
) -> Result<SplitManifest> {
    let mut assign = vec![Assignment::Eval; table.len()];
    let manifest_fractions;
    let manifest_seed;
    match strategy {
        SplitStrategy::IntraSource => {
            let SplitFractions { train, cal } = fractions;
            if !(train > 0.0 && train < 1.0 && cal >= 0.0 && train + cal < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "fractions train={train} cal={cal} must satisfy 0 < train, 0 <= cal, train + cal < 1"
                )));
            }
            for (si, (_, rows)) in table.source_indices().into_iter().enumerate() {
                let mut rows = rows;
                rows.shuffle(&mut seed::stream(seed, si as u64));
                let n_train = floor_count(rows.len(), train);
                let n_cal = floor_count(rows.len(), cal);
                for (pos, &i) in rows.iter().enumerate() {
                    assign[i] = if pos < n_train {
                        Assignment::Train
                    } else if pos < n_train + n_cal {
                        Assignment::Cal
                    } else {
                        Assignment::Eval
                    };
                }
            }
            manifest_fractions = Some(fractions);
            manifest_seed = Some(seed);
        }
        SplitStrategy::InterSource => {
            if held_out_sources.is_empty() {
                return Err(Error::InvalidConfig("inter-source split needs held-out sources".into()));
            }
            let present: HashSet<String> = table.sources().into_iter().collect();
            for s in held_out_sources {
                if !present.contains(s) {
                    return Err(Error::UnknownSource(s.clone()));
                }
            }
            let held: HashSet<&str> = held_out_sources.iter().map(String::as_str).collect();
            for (i, r) in table.records().iter().enumerate() {
                assign[i] = if held.contains(r.source.as_str()) { Assignment::Eval } else { Assignment::Train };
            }
            manifest_fractions = None;
            manifest_seed = None;
        }
    }

    let count = |a: Assignment| assign.iter().filter(|&&x| x == a).count();
    if count(Assignment::Train) == 0 {
        return Err(Error::DegenerateSplit("training side is empty".into()));
    }
    if count(Assignment::Eval) == 0 {
        return Err(Error::DegenerateSplit("evaluation side is empty".into()));
    }
    if fractions.cal > 0.0 && strategy == SplitStrategy::IntraSource && count(Assignment::Cal) == 0 {
        return Err(Error::DegenerateSplit("calibration side is empty".into()));
    }

    Ok(SplitManifest {
        strategy,
        assignments: table.records().iter().map(|r| r.sample_id.clone()).zip(assign).collect(),
        held_out_sources: held_out_sources.to_vec(),
        seed: manifest_seed,
        fractions: manifest_fractions,
    })
}

impl SplitManifest {
    pub fn count(&self, a: Assignment) -> usize {
        self.assignments.iter().filter(|(_, x)| *x == a).count()
    }

    /// Splits a table by this manifest; every record must be assigned exactly once.
    pub fn partition<T: Scalar>(&self, table: &ScoreTable<T>) -> Result<SplitTables<T>> {
        let lookup: HashMap<&str, Assignment> = self.assignments.iter().map(|(id, a)| (id.as_str(), *a)).collect();
        if lookup.len() != self.assignments.len() || lookup.len() != table.len() {
            return Err(Error::ShapeMismatch("manifest does not partition the table".into()));
        }
        let mut rows: HashMap<Assignment, Vec<usize>> = HashMap::new();
        for (i, r) in table.records().iter().enumerate() {
            let a = lookup
                .get(r.sample_id.as_str())
                .ok_or_else(|| Error::ShapeMismatch(format!("`{}` missing from manifest", r.sample_id)))?;
            rows.entry(*a).or_default().push(i);
        }
        let get = |a| table.subset(rows.get(&a).map(Vec::as_slice).unwrap_or(&[]));
        Ok(SplitTables { train: get(Assignment::Train), cal: get(Assignment::Cal), eval: get(Assignment::Eval) })
    }

    /// `sample_id,assignment`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "assignment"])?;
        for (id, a) in &self.assignments {
            w.write_record([id.as_str(), a.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<manifest csv>", e))?;
        Ok(())
    }

    /// Reads assignments only; strategy metadata lives in the run record.
    pub fn read_assignments<R: Read>(input: R) -> Result<Vec<(String, Assignment)>> {
        let mut rd = csv::Reader::from_reader(input);
        let mut out = Vec::new();
        for (n, rec) in rd.records().enumerate() {
            let rec = rec?;
            let a = rec.get(1).and_then(Assignment::parse).ok_or_else(|| Error::Parse {
                line: n + 2,
                message: format!("bad assignment `{}`", rec.get(1).unwrap_or("")),
            })?;
            out.push((rec.get(0).unwrap_or("").to_string(), a));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_table, ClassSchema, RawRecord};

    fn table(sources: &[(&str, usize)]) -> ScoreTable<f64> {
        let mut raw = Vec::new();
        for (s, n) in sources {
            for i in 0..*n {
                raw.push(RawRecord {
                    sample_id: format!("{s}-{i}"),
                    source: s.to_string(),
                    probs: vec![0.5],
                    labels: vec![0.0],
                });
            }
        }
        validate_table(raw, ClassSchema::with_default_boundary(["a"]).unwrap()).unwrap()
    }

    #[test]
    fn eighty_twenty_of_ten() {
        let t = table(&[("x", 10)]);
        let m = make_split(&t, SplitStrategy::IntraSource, SplitFractions::default(), &[], 1).unwrap();
        assert_eq!((m.count(Assignment::Train), m.count(Assignment::Eval)), (8, 2));
    }

    #[test]
    fn hold_out_filters_by_source() {
        let t = table(&[("A", 5), ("B", 4), ("C", 3)]);
        let m = make_split(&t, SplitStrategy::InterSource, SplitFractions::default(), &["C".into()], 0).unwrap();
        let parts = m.partition(&t).unwrap();
        assert_eq!(parts.eval.len(), 3);
        assert!(parts.eval.records().iter().all(|r| r.source == "C"));
        assert_eq!(parts.train.len(), 9);
        assert_eq!(m.seed, None);
    }

    #[test]
    fn split_is_deterministic() {
        let t = table(&[("A", 50), ("B", 31)]);
        let f = SplitFractions { train: 0.6, cal: 0.2 };
        let a = make_split(&t, SplitStrategy::IntraSource, f, &[], 9).unwrap();
        assert_eq!(a, make_split(&t, SplitStrategy::IntraSource, f, &[], 9).unwrap());
        assert_ne!(a, make_split(&t, SplitStrategy::IntraSource, f, &[], 10).unwrap());
        assert_eq!(a.count(Assignment::Cal), 10 + 6);
    }

    #[test]
    fn split_errors() {
        let t = table(&[("A", 5), ("B", 4)]);
        let f = SplitFractions::default();
        assert_eq!(
            make_split(&t, SplitStrategy::InterSource, f, &["Z".into()], 0).unwrap_err().code(),
            "UNKNOWN_SOURCE"
        );
        assert_eq!(
            make_split(&t, SplitStrategy::InterSource, f, &["A".into(), "B".into()], 0).unwrap_err().code(),
            "DEGENERATE_SPLIT"
        );
        let tiny = table(&[("A", 1)]);
        assert_eq!(make_split(&tiny, SplitStrategy::IntraSource, f, &[], 0).unwrap_err().code(), "DEGENERATE_SPLIT");
        assert!(make_split(&t, SplitStrategy::IntraSource, SplitFractions { train: 1.0, cal: 0.0 }, &[], 0).is_err());
    }

    #[test]
    fn manifest_csv_round_trip() {
        let t = table(&[("A", 7)]);
        let m = make_split(&t, SplitStrategy::IntraSource, SplitFractions::default(), &[], 3).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"sample_id,assignment\n"));
        assert_eq!(SplitManifest::read_assignments(buf.as_slice()).unwrap(), m.assignments);
    }
}
