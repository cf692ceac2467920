//! Before/after reports, bootstrap F1 distributions and mechanism comparison.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifact::ThresholdArtifact;
use crate::calibration::quantile;
use crate::error::{Error, Result};
use crate::metrics::{ClassMetrics, Confusion};
use crate::model::{Mechanism, ScoreTable};
use crate::rejection::{apply, SelectionMask};
use crate::scalar::{mean_defined, Scalar};
use crate::seed;

/// Dataset label used for rows pooled over all sources.
pub const ALL_SOURCES: &str = "all";
/// Class label of the unweighted class-mean row.
pub const AVERAGE_ROW: &str = "average";

/// Metrics for one (dataset, class) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ReportRow<T: Scalar> {
    pub dataset: String,
    pub class: String,
    pub threshold: Option<T>,
    pub auc_baseline: Option<T>,
    pub auc_selective: Option<T>,
    pub f1_baseline: Option<T>,
    pub f1_selective: Option<T>,
    pub rejection_rate: T,
    pub n_total: usize,
    pub n_retained: usize,
}

/// Unweighted class means of the pooled rows, skipping undefined values.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct AverageRow<T: Scalar> {
    pub auc_baseline: Option<T>,
    pub auc_selective: Option<T>,
    pub f1_baseline: Option<T>,
    pub f1_selective: Option<T>,
    pub rejection_rate: T,
    /// Classes whose selective AUC was undefined and left out of the mean.
    pub n_auc_selective_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct EvaluationReport<T: Scalar> {
    pub mechanism: Mechanism,
    pub scope: crate::model::Scope,
    pub mode: crate::model::Mode,
    pub theta: T,
    /// Per (source, class), sources in order of first appearance.
    pub rows: Vec<ReportRow<T>>,
    /// Per class, all sources pooled.
    pub aggregate: Vec<ReportRow<T>>,
    pub average: AverageRow<T>,
}

fn row_for<T: Scalar>(
    table: &ScoreTable<T>,
    mask: &SelectionMask,
    rows: &[usize],
    class: usize,
    dataset: &str,
    threshold: T,
) -> Result<ReportRow<T>> {
    let probs: Vec<T> = rows.iter().map(|&i| table.prob(i, class)).collect();
    let labels: Vec<bool> = rows.iter().map(|&i| table.label(i, class)).collect();
    let accepted: Vec<bool> = rows.iter().map(|&i| mask.is_accepted(i, class)).collect();
    let theta = table.schema().theta();
    let base = ClassMetrics::compute(&probs, &labels, &vec![true; rows.len()], theta)?;
    let sel = ClassMetrics::compute(&probs, &labels, &accepted, theta)?;
    Ok(ReportRow {
        dataset: dataset.to_string(),
        class: table.schema().class_names()[class].clone(),
        threshold: Some(threshold),
        auc_baseline: base.auc,
        auc_selective: sel.auc,
        f1_baseline: base.f1,
        f1_selective: sel.f1,
        rejection_rate: sel.rejection_rate,
        n_total: sel.n_total,
        n_retained: sel.n_retained,
    })
}

/// Applies the artifact to `table` and reports baseline vs selective metrics.
pub fn evaluate<T: Scalar>(table: &ScoreTable<T>, artifact: &ThresholdArtifact<T>) -> Result<EvaluationReport<T>> {
    let mask = apply(table, artifact)?;
    evaluate_with_mask(table, artifact, &mask)
}

pub fn evaluate_with_mask<T: Scalar>(
    table: &ScoreTable<T>,
    artifact: &ThresholdArtifact<T>,
    mask: &SelectionMask,
) -> Result<EvaluationReport<T>> {
    artifact.check_schema(table.schema())?;
    if mask.n_samples() != table.len() || mask.n_classes() != table.n_classes() {
        return Err(Error::ShapeMismatch("mask and table disagree".into()));
    }
    let k = table.n_classes();
    let mut rows = Vec::new();
    for (source, idx) in table.source_indices() {
        for c in 0..k {
            rows.push(row_for(table, mask, &idx, c, &source, artifact.threshold_for(c))?);
        }
    }
    let all: Vec<usize> = (0..table.len()).collect();
    let aggregate = (0..k)
        .map(|c| row_for(table, mask, &all, c, ALL_SOURCES, artifact.threshold_for(c)))
        .collect::<Result<Vec<_>>>()?;
    let rate_sum: T = aggregate.iter().map(|r| r.rejection_rate).sum();
    let average = AverageRow {
        auc_baseline: mean_defined(aggregate.iter().map(|r| r.auc_baseline)),
        auc_selective: mean_defined(aggregate.iter().map(|r| r.auc_selective)),
        f1_baseline: mean_defined(aggregate.iter().map(|r| r.f1_baseline)),
        f1_selective: mean_defined(aggregate.iter().map(|r| r.f1_selective)),
        rejection_rate: if k == 0 { T::zero() } else { rate_sum / T::lit(k as f64) },
        n_auc_selective_excluded: aggregate.iter().filter(|r| r.auc_selective.is_none()).count(),
    };
    Ok(EvaluationReport {
        mechanism: artifact.mechanism,
        scope: artifact.scope,
        mode: artifact.mode,
        theta: artifact.theta,
        rows,
        aggregate,
        average,
    })
}

fn opt<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl<T: Scalar> EvaluationReport<T> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Flat CSV: per-source rows, pooled rows, then the class-mean row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "dataset",
            "class",
            "threshold",
            "auc_baseline",
            "auc_selective",
            "f1_baseline",
            "f1_selective",
            "rejection_rate",
        ])?;
        for r in self.rows.iter().chain(&self.aggregate) {
            w.write_record([
                r.dataset.clone(),
                r.class.clone(),
                opt(r.threshold),
                opt(r.auc_baseline),
                opt(r.auc_selective),
                opt(r.f1_baseline),
                opt(r.f1_selective),
                r.rejection_rate.to_string(),
            ])?;
        }
        let a = &self.average;
        w.write_record([
            ALL_SOURCES.to_string(),
            AVERAGE_ROW.to_string(),
            String::new(),
            opt(a.auc_baseline),
            opt(a.auc_selective),
            opt(a.f1_baseline),
            opt(a.f1_selective),
            a.rejection_rate.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }

    /// Fixed-width table for terminals; AUC shown as percent.
    pub fn render(&self) -> String {
        let pct = |v: Option<T>| {
            v.map(|x| format!("{:.2}", x.to_f64().unwrap_or(f64::NAN) * 100.0)).unwrap_or_else(|| "-".into())
        };
        let f =
            |v: Option<T>| v.map(|x| format!("{:.2}", x.to_f64().unwrap_or(f64::NAN))).unwrap_or_else(|| "-".into());
        let mut s = format!(
            "{:<14} {:<16} {:>9} {:>15} {:>13} {:>9}\n",
            "dataset", "class", "threshold", "AUC base/sel", "F1 base/sel", "rejected"
        );
        for r in self.rows.iter().chain(&self.aggregate) {
            s.push_str(&format!(
                "{:<14} {:<16} {:>9} {:>15} {:>13} {:>8.2}%\n",
                r.dataset,
                r.class,
                f(r.threshold),
                format!("{}/{}", pct(r.auc_baseline), pct(r.auc_selective)),
                format!("{}/{}", f(r.f1_baseline), f(r.f1_selective)),
                r.rejection_rate.to_f64().unwrap_or(f64::NAN) * 100.0
            ));
        }
        s
    }
}

/// Bootstrap distributions for one (dataset, class) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct BootstrapCell<T: Scalar> {
    pub dataset: String,
    pub class: String,
    pub f1_baseline_point: Option<T>,
    pub f1_selective_point: Option<T>,
    #[serde(skip)]
    pub baseline: Vec<Option<T>>,
    #[serde(skip)]
    pub selective: Vec<Option<T>>,
    pub baseline_ci: Option<(T, T)>,
    pub selective_ci: Option<(T, T)>,
    /// Percentile CI of `selective - baseline` over resamples where both exist.
    pub gap_ci: Option<(T, T)>,
    /// Share of paired resamples where selective F1 beats baseline F1.
    pub exceedance: Option<T>,
    pub null_baseline: usize,
    pub null_selective: usize,
}

impl<T: Scalar> BootstrapCell<T> {
    pub fn gaps(&self) -> Vec<T> {
        self.baseline.iter().zip(&self.selective).filter_map(|(b, s)| Some((*s)? - (*b)?)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct BootstrapResult<T: Scalar> {
    pub iterations: usize,
    pub seed: Option<u64>,
    pub cells: Vec<BootstrapCell<T>>,
}

fn percentile_ci<T: Scalar>(values: &[T]) -> Option<(T, T)> {
    if values.is_empty() {
        return None;
    }
    Some((quantile(values, T::lit(2.5)).ok()?, quantile(values, T::lit(97.5)).ok()?))
}

/// Per-class F1, `None` where undefined.
type F1Row<T> = Vec<Option<T>>;

/// Sample-level bootstrap of baseline and selective F1 within each source.
///
/// Iteration `i`, source `s` draws from `seed::stream(child_seed(seed, i), s)`.
/// The mask is computed once; resampled rows look up their decisions.
pub fn bootstrap_f1<T: Scalar>(
    table: &ScoreTable<T>,
    artifact: &ThresholdArtifact<T>,
    iterations: usize,
    seed: u64,
) -> Result<BootstrapResult<T>> {
    let mut res = bootstrap_f1_with(table, artifact, iterations, |iter, source, n| {
        let mut rng = seed::stream(seed::child_seed(seed, iter as u64), source as u64);
        (0..n).map(|_| rng.random_range(0..n)).collect()
    })?;
    res.seed = Some(seed);
    Ok(res)
}

/// Bootstrap driven by a caller-supplied resampler
/// `(iteration, source index, source size) -> row positions within the source`.
pub fn bootstrap_f1_with<T, R>(
    table: &ScoreTable<T>,
    artifact: &ThresholdArtifact<T>,
    iterations: usize,
    resample: R,
) -> Result<BootstrapResult<T>>
where
    T: Scalar,
    R: Fn(usize, usize, usize) -> Vec<usize> + Sync,
{
    if iterations == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one iteration".into()));
    }
    let mask = apply(table, artifact)?;
    let theta = table.schema().theta();
    let k = table.n_classes();
    let names = table.schema().class_names();
    let mut cells = Vec::new();

    for (si, (source, rows)) in table.source_indices().into_iter().enumerate() {
        let f1s = |picks: &mut dyn Iterator<Item = usize>| {
            let mut base = vec![Confusion::default(); k];
            let mut sel = vec![Confusion::default(); k];
            for i in picks {
                for c in 0..k {
                    let (p, l) = (table.prob(i, c), table.label(i, c));
                    base[c].add(p, l, theta);
                    if mask.is_accepted(i, c) {
                        sel[c].add(p, l, theta);
                    }
                }
            }
            let base: F1Row<T> = base.iter().map(Confusion::f1).collect();
            let sel: F1Row<T> = sel.iter().map(Confusion::f1).collect();
            (base, sel)
        };
        let point = f1s(&mut rows.iter().copied());
        let per_iter: Vec<(F1Row<T>, F1Row<T>)> = (0..iterations)
            .into_par_iter()
            .map(|it| {
                let picks = resample(it, si, rows.len());
                f1s(&mut picks.into_iter().map(|j| rows[j]))
            })
            .collect();
        for c in 0..k {
            let baseline: Vec<Option<T>> = per_iter.iter().map(|(b, _)| b[c]).collect();
            let selective: Vec<Option<T>> = per_iter.iter().map(|(_, s)| s[c]).collect();
            let defined = |v: &[Option<T>]| v.iter().flatten().copied().collect::<Vec<T>>();
            let mut cell = BootstrapCell {
                dataset: source.clone(),
                class: names[c].clone(),
                f1_baseline_point: point.0[c],
                f1_selective_point: point.1[c],
                baseline_ci: percentile_ci(&defined(&baseline)),
                selective_ci: percentile_ci(&defined(&selective)),
                gap_ci: None,
                exceedance: None,
                null_baseline: baseline.iter().filter(|v| v.is_none()).count(),
                null_selective: selective.iter().filter(|v| v.is_none()).count(),
                baseline,
                selective,
            };
            let gaps = cell.gaps();
            cell.gap_ci = percentile_ci(&gaps);
            cell.exceedance =
                (!gaps.is_empty()).then(|| T::ratio(gaps.iter().filter(|&&g| g > T::zero()).count(), gaps.len()));
            cells.push(cell);
        }
    }
    Ok(BootstrapResult { iterations, seed: None, cells })
}

impl<T: Scalar> BootstrapResult<T> {
    /// `iteration,dataset,class,f1_baseline,f1_selective`; nulls as empty fields.
    pub fn write_iterations_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "dataset", "class", "f1_baseline", "f1_selective"])?;
        for cell in &self.cells {
            for (i, (b, s)) in cell.baseline.iter().zip(&cell.selective).enumerate() {
                w.write_record([i.to_string(), cell.dataset.clone(), cell.class.clone(), opt(*b), opt(*s)])?;
            }
        }
        w.flush().map_err(|e| Error::io("<bootstrap csv>", e))?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// One class of a mechanism comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ComparisonRow<T: Scalar> {
    pub class: String,
    pub auc_baseline: Option<T>,
    pub auc_interval: Option<T>,
    pub auc_entropy: Option<T>,
    pub rejection_interval: Option<T>,
    pub rejection_entropy: Option<T>,
}

/// Baseline, interval-selective and entropy-selective AUC per class, plus the
/// unweighted class mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ComparisonReport<T: Scalar> {
    pub rows: Vec<ComparisonRow<T>>,
    /// Mean row as stated in a parsed file, if it had one.
    pub stated_average: Option<[Option<T>; 3]>,
}

const COMPARISON_HEADER: [&str; 4] = ["class", "auc_baseline", "auc_interval", "auc_entropy"];

pub fn compare_mechanisms<T: Scalar>(
    table: &ScoreTable<T>,
    artifact_entropy: &ThresholdArtifact<T>,
    artifact_interval: &ThresholdArtifact<T>,
) -> Result<ComparisonReport<T>> {
    for (art, want) in [(artifact_entropy, Mechanism::Entropy), (artifact_interval, Mechanism::Interval)] {
        if art.mechanism != want {
            return Err(Error::MechanismMismatch { expected: want.to_string(), found: art.mechanism.to_string() });
        }
        art.check_schema(table.schema())?;
    }
    let ent = evaluate(table, artifact_entropy)?;
    let int = evaluate(table, artifact_interval)?;
    let rows = ent
        .aggregate
        .iter()
        .zip(&int.aggregate)
        .map(|(e, i)| ComparisonRow {
            class: e.class.clone(),
            auc_baseline: e.auc_baseline,
            auc_interval: i.auc_selective,
            auc_entropy: e.auc_selective,
            rejection_interval: Some(i.rejection_rate),
            rejection_entropy: Some(e.rejection_rate),
        })
        .collect();
    Ok(ComparisonReport { rows, stated_average: None })
}

impl<T: Scalar> ComparisonReport<T> {
    /// Unweighted means over classes: baseline, interval, entropy.
    pub fn average(&self) -> [Option<T>; 3] {
        [
            mean_defined(self.rows.iter().map(|r| r.auc_baseline)),
            mean_defined(self.rows.iter().map(|r| r.auc_interval)),
            mean_defined(self.rows.iter().map(|r| r.auc_entropy)),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COMPARISON_HEADER)?;
        for r in &self.rows {
            w.write_record([r.class.clone(), opt(r.auc_baseline), opt(r.auc_interval), opt(r.auc_entropy)])?;
        }
        let [b, i, e] = self.average();
        w.write_record([AVERAGE_ROW.to_string(), opt(b), opt(i), opt(e)])?;
        w.flush().map_err(|e| Error::io("<comparison csv>", e))?;
        Ok(())
    }

    /// Parses the CSV written by [`write_csv`](Self::write_csv). A trailing
    /// `average` row is kept as `stated_average` and not treated as a class.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        for col in COMPARISON_HEADER {
            if !header.iter().any(|h| h == col) {
                return Err(Error::MissingColumn(col.to_string()));
            }
        }
        let idx = |name: &str| header.iter().position(|h| h == name).expect("checked above");
        let (ci, bi, ii, ei) = (idx("class"), idx("auc_baseline"), idx("auc_interval"), idx("auc_entropy"));
        let mut rows = Vec::new();
        let mut stated_average = None;
        for (n, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = n + 2;
            let num = |i: usize| -> Result<Option<T>> {
                let s = rec.get(i).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<T>().map(Some).map_err(|_| Error::Parse { line, message: format!("`{s}` is not a number") })
            };
            let vals = [num(bi)?, num(ii)?, num(ei)?];
            let class = rec.get(ci).unwrap_or("").to_string();
            if class == AVERAGE_ROW {
                stated_average = Some(vals);
            } else {
                rows.push(ComparisonRow {
                    class,
                    auc_baseline: vals[0],
                    auc_interval: vals[1],
                    auc_entropy: vals[2],
                    rejection_interval: None,
                    rejection_entropy: None,
                });
            }
        }
        Ok(Self { rows, stated_average })
    }

    pub fn to_value(&self) -> Value {
        json!({ "rows": self.rows, "average": self.average() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_table, ClassSchema, Mode, RawRecord};

    fn table() -> ScoreTable<f64> {
        let probs = [[0.9, 0.2], [0.8, 0.6], [0.3, 0.1], [0.45, 0.55], [0.2, 0.9], [0.7, 0.4], [0.1, 0.35], [0.6, 0.8]];
        let labels = [[1, 0], [1, 1], [0, 0], [1, 0], [0, 1], [0, 0], [0, 1], [1, 1]];
        let raw = probs
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (p, l))| RawRecord {
                sample_id: format!("s{i}"),
                source: if i < 4 { "a" } else { "b" }.into(),
                probs: p.to_vec(),
                labels: l.iter().map(|&x| x as f64).collect(),
            })
            .collect::<Vec<_>>();
        validate_table(raw, ClassSchema::with_default_boundary(["x", "y"]).unwrap()).unwrap()
    }

    #[test]
    fn accept_all_matches_baseline() {
        let t = table();
        let art = ThresholdArtifact::accept_all(t.schema(), Mechanism::Entropy, Mode::PerClass);
        let rep = evaluate(&t, &art).unwrap();
        for r in rep.rows.iter().chain(&rep.aggregate) {
            assert_eq!(r.auc_baseline, r.auc_selective);
            assert_eq!(r.f1_baseline, r.f1_selective);
            assert_eq!(r.rejection_rate, 0.0);
            assert_eq!(r.n_retained, r.n_total);
        }
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.rows[0].dataset, "a");
    }

    #[test]
    fn zero_threshold_rejects_everything() {
        let t = table();
        let art = ThresholdArtifact::fixed(t.schema(), Mechanism::Entropy, Mode::PerClass, vec![0.0]).unwrap();
        let rep = evaluate(&t, &art).unwrap();
        for r in &rep.aggregate {
            assert_eq!((r.auc_selective, r.f1_selective, r.rejection_rate), (None, None, 1.0));
        }
        assert_eq!(rep.average.n_auc_selective_excluded, 2);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "dataset,class,threshold,auc_baseline,auc_selective,f1_baseline,f1_selective,rejection_rate\n"
        ));
        assert!(text.trim_end().ends_with(",1"));
    }

    #[test]
    fn schema_mismatch() {
        let t = table();
        let other = ClassSchema::<f64>::with_default_boundary(["y", "x"]).unwrap();
        let art = ThresholdArtifact::accept_all(&other, Mechanism::Entropy, Mode::PerClass);
        assert_eq!(evaluate(&t, &art).unwrap_err().code(), "SCHEMA_MISMATCH");
    }

    #[test]
    fn identity_bootstrap_reproduces_point_estimates() {
        let t = table();
        let art = ThresholdArtifact::fixed(t.schema(), Mechanism::Interval, Mode::PerClass, vec![0.15]).unwrap();
        let res = bootstrap_f1_with(&t, &art, 3, |_, _, n| (0..n).collect()).unwrap();
        for cell in &res.cells {
            assert!(cell.baseline.iter().all(|&b| b == cell.f1_baseline_point));
            assert!(cell.selective.iter().all(|&s| s == cell.f1_selective_point));
        }
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let t = table();
        let art = ThresholdArtifact::fixed(t.schema(), Mechanism::Entropy, Mode::ImageLevel, vec![0.6]).unwrap();
        let a = bootstrap_f1(&t, &art, 50, 7).unwrap();
        let b = bootstrap_f1(&t, &art, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells[0].baseline.len(), 50);
        let c = bootstrap_f1(&t, &art, 50, 8).unwrap();
        assert_ne!(a, c);
        assert_eq!(bootstrap_f1(&t, &art, 0, 7).unwrap_err().code(), "INVALID_CONFIG");
    }

    #[test]
    fn comparison_of_accept_all_artifacts() {
        let t = table();
        let e = ThresholdArtifact::accept_all(t.schema(), Mechanism::Entropy, Mode::PerClass);
        let i = ThresholdArtifact::accept_all(t.schema(), Mechanism::Interval, Mode::PerClass);
        let rep = compare_mechanisms(&t, &e, &i).unwrap();
        for r in &rep.rows {
            assert_eq!(r.auc_baseline, r.auc_interval);
            assert_eq!(r.auc_baseline, r.auc_entropy);
        }
        assert_eq!(compare_mechanisms(&t, &i, &e).unwrap_err().code(), "MECHANISM_MISMATCH");

        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let back = ComparisonReport::<f64>::from_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.stated_average, Some(rep.average()));
    }
}
