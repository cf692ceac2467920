//! Quantile calibration of rejection thresholds.
//!
//! For each candidate percentile the thresholds are read off the distribution
//! of uncertainty values on correctly classified cells, applied to the
//! calibration table, and scored by selective AUC and rejection rate. The
//! winner maximizes AUC among candidates whose rejection stays within budget.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::artifact::{Fingerprint, Flag, ThresholdArtifact};
use crate::error::{Error, Result};
use crate::metrics::{ClassMetrics, RankedScores};
use crate::model::{Mechanism, Mode, Scope, ScoreTable};
use crate::rejection::{mask_from_thresholds, score_uncertainty, UncertaintyMatrix};
use crate::scalar::{mean_defined, Scalar};

/// Evenly spaced percentiles `start, start + step, ..., <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct PercentileGrid<T: Scalar> {
    pub start: T,
    pub end: T,
    pub step: T,
}

impl<T: Scalar> Default for PercentileGrid<T> {
    fn default() -> Self {
        Self { start: T::lit(75.0), end: T::lit(95.0), step: T::lit(2.5) }
    }
}

impl<T: Scalar> PercentileGrid<T> {
    pub fn new(start: T, end: T, step: T) -> Result<Self> {
        let g = Self { start, end, step };
        g.validate()?;
        Ok(g)
    }

    /// Grid holding a single percentile.
    pub fn single(q: T) -> Self {
        Self { start: q, end: q, step: T::one() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.start > T::zero() && self.start <= self.end && self.end <= T::lit(100.0) && self.step > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "percentile grid {}..{} step {} needs 0 < start <= end <= 100 and step > 0",
                self.start, self.end, self.step
            )))
        }
    }

    pub fn points(&self) -> Vec<T> {
        let tol = self.step * T::lit(1e-9);
        let mut out = Vec::new();
        let mut i = 0usize;
        loop {
            let q = self.start + self.step * T::lit(i as f64);
            if q > self.end + tol {
                break;
            }
            out.push(q.min(self.end));
            i += 1;
        }
        out
    }
}

/// Calibration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct CalibrationConfig<T: Scalar> {
    pub mechanism: Mechanism,
    pub scope: Scope,
    pub mode: Mode,
    pub grid: PercentileGrid<T>,
    /// Maximum tolerated rejection rate.
    pub budget: T,
    pub theta: T,
}

impl<T: Scalar> CalibrationConfig<T> {
    /// Defaults: per-class mode, 75..95 step 2.5 grid, budget 0.25, boundary 0.5.
    pub fn new(mechanism: Mechanism, scope: Scope) -> Self {
        Self {
            mechanism,
            scope,
            mode: Mode::PerClass,
            grid: PercentileGrid::default(),
            budget: T::lit(0.25),
            theta: T::lit(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.budget > T::zero() && self.budget <= T::one()) {
            return Err(Error::InvalidConfig(format!("budget {} not in (0, 1]", self.budget)));
        }
        if !(self.theta > T::zero() && self.theta < T::one()) {
            return Err(Error::InvalidConfig(format!("theta {} not in (0, 1)", self.theta)));
        }
        Ok(())
    }
}

/// One row of a risk-coverage sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct RiskCoveragePoint<T: Scalar> {
    /// `None` for the accept-all endpoint.
    pub percentile: Option<T>,
    /// Threshold applied to each class.
    pub thresholds: Vec<T>,
    pub coverage: T,
    pub rejection_rate: T,
    pub class_rejection: Vec<T>,
    pub class_auc: Vec<Option<T>>,
    pub mean_auc: Option<T>,
    /// Classes left out of `mean_auc` because their AUC was undefined.
    pub n_auc_excluded: usize,
    pub class_f1: Vec<Option<T>>,
}

/// Sorted uncertainty values of correctly classified cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectPools<T> {
    pub class_names: Vec<String>,
    pub per_class: Vec<Vec<T>>,
    pub pooled: Vec<T>,
}

fn sort_values<T: Scalar>(v: &mut [T]) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
}

/// Collects, per class, the uncertainty of each cell whose prediction
/// `p >= theta` agrees with its label.
pub fn correct_prediction_pool<T: Scalar>(
    table: &ScoreTable<T>,
    uncertainty: &UncertaintyMatrix<T>,
) -> CorrectPools<T> {
    let theta = table.schema().theta();
    let k = table.n_classes();
    let mut per_class = vec![Vec::new(); k];
    for (i, rec) in table.records().iter().enumerate() {
        for (c, pool) in per_class.iter_mut().enumerate() {
            if (rec.probs[c] >= theta) == rec.labels[c] {
                pool.push(uncertainty.get(i, c));
            }
        }
    }
    let mut pooled: Vec<T> = per_class.iter().flatten().copied().collect();
    for pool in &mut per_class {
        sort_values(pool);
    }
    sort_values(&mut pooled);
    CorrectPools { class_names: table.schema().class_names().to_vec(), per_class, pooled }
}

/// Linear-interpolation quantile at rank `h = (n - 1) q / 100`.
pub fn quantile<T: Scalar>(values: &[T], q: T) -> Result<T> {
    let mut sorted = values.to_vec();
    sort_values(&mut sorted);
    quantile_sorted(&sorted, q)
}

/// [`quantile`] on input already sorted ascending.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: T) -> Result<T> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(q >= T::zero() && q <= T::lit(100.0)) {
        return Err(Error::Domain { what: "q", value: q.to_f64().unwrap_or(f64::NAN) });
    }
    let h = T::lit((sorted.len() - 1) as f64) * q / T::lit(100.0);
    let lo = h.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    let hi_idx = (lo_idx + 1).min(sorted.len() - 1);
    let frac = h - lo;
    Ok(sorted[lo_idx] + frac * (sorted[hi_idx] - sorted[lo_idx]))
}

/// Percentile applied to a pool: `q` for entropy, `100 - q` for margins.
fn pool_percentile<T: Scalar>(q: T, mechanism: Mechanism) -> T {
    match mechanism {
        Mechanism::Entropy => q,
        Mechanism::Interval => T::lit(100.0) - q,
    }
}

/// Candidate thresholds at percentile `q`: one value for global scope, one
/// per class otherwise.
pub fn threshold_from_percentile<T: Scalar>(
    pools: &CorrectPools<T>,
    q: T,
    mechanism: Mechanism,
    scope: Scope,
) -> Result<Vec<T>> {
    let pq = pool_percentile(q, mechanism);
    match scope {
        Scope::Global => {
            if pools.pooled.is_empty() {
                return Err(Error::EmptyPool("<all classes>".into()));
            }
            Ok(vec![quantile_sorted(&pools.pooled, pq)?])
        }
        Scope::ClassSpecific => pools
            .per_class
            .iter()
            .zip(&pools.class_names)
            .map(
                |(pool, name)| {
                    if pool.is_empty() {
                        Err(Error::EmptyPool(name.clone()))
                    } else {
                        quantile_sorted(pool, pq)
                    }
                },
            )
            .collect(),
    }
}

/// Per-class thresholds at `q`, substituting the pooled quantile for classes
/// whose own pool is empty.
fn expanded_thresholds<T: Scalar>(pools: &CorrectPools<T>, q: T, mechanism: Mechanism, scope: Scope) -> Result<Vec<T>> {
    let k = pools.per_class.len();
    let global = threshold_from_percentile(pools, q, mechanism, Scope::Global)?[0];
    match scope {
        Scope::Global => Ok(vec![global; k]),
        Scope::ClassSpecific => {
            let pq = pool_percentile(q, mechanism);
            pools
                .per_class
                .iter()
                .map(|pool| if pool.is_empty() { Ok(global) } else { quantile_sorted(pool, pq) })
                .collect()
        }
    }
}

/// A grid point together with the per-class metrics it was built from.
type SweepEntry<T> = (RiskCoveragePoint<T>, Vec<ClassMetrics<T>>);

/// Precomputed per-table state reused across grid points.
struct SweepContext<'a, T: Scalar> {
    uncertainty: UncertaintyMatrix<T>,
    pools: CorrectPools<T>,
    ranked: Vec<RankedScores<T>>,
    labels: Vec<Vec<bool>>,
    theta: T,
    config: &'a CalibrationConfig<T>,
}

impl<'a, T: Scalar> SweepContext<'a, T> {
    fn new(table: &ScoreTable<T>, config: &'a CalibrationConfig<T>) -> Result<Self> {
        config.validate()?;
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        if table.schema().theta() != config.theta {
            return Err(Error::SchemaMismatch(format!(
                "table boundary {} differs from configured boundary {}",
                table.schema().theta(),
                config.theta
            )));
        }
        let uncertainty = score_uncertainty(table, config.mechanism);
        let pools = correct_prediction_pool(table, &uncertainty);
        if pools.pooled.is_empty() {
            return Err(Error::EmptyPool("<all classes>".into()));
        }
        let k = table.n_classes();
        let ranked = (0..k).map(|c| RankedScores::new(&table.probs_column(c))).collect();
        let labels = (0..k).map(|c| table.labels_column(c)).collect();
        Ok(Self { uncertainty, pools, ranked, labels, theta: table.schema().theta(), config })
    }

    fn class_metrics(&self, thresholds: &[T], mode: Mode) -> Result<(Vec<ClassMetrics<T>>, T)> {
        let mask = mask_from_thresholds(&self.uncertainty, thresholds, mode)?;
        let metrics = (0..thresholds.len())
            .map(|c| {
                ClassMetrics::from_ranked(&self.ranked[c], &self.labels[c], self.theta, |i| mask.is_accepted(i, c))
            })
            .collect();
        Ok((metrics, mask.cell_rejection_rate()?))
    }

    fn point(&self, percentile: Option<T>, thresholds: Vec<T>) -> Result<(RiskCoveragePoint<T>, Vec<ClassMetrics<T>>)> {
        let (metrics, rejection_rate) = self.class_metrics(&thresholds, self.config.mode)?;
        let class_auc: Vec<Option<T>> = metrics.iter().map(|m| m.auc).collect();
        let point = RiskCoveragePoint {
            percentile,
            coverage: T::one() - rejection_rate,
            rejection_rate,
            class_rejection: metrics.iter().map(|m| m.rejection_rate).collect(),
            mean_auc: mean_defined(class_auc.iter().copied()),
            n_auc_excluded: class_auc.iter().filter(|a| a.is_none()).count(),
            class_auc,
            class_f1: metrics.iter().map(|m| m.f1).collect(),
            thresholds,
        };
        // Class-specific thresholds are chosen on each class's own cells; with
        // image-level acceptance those decisions would be coupled across classes.
        let selection = if self.config.scope == Scope::ClassSpecific && self.config.mode == Mode::ImageLevel {
            self.class_metrics(&point.thresholds, Mode::PerClass)?.0
        } else {
            metrics
        };
        Ok((point, selection))
    }

    fn sweep(&self) -> Result<Vec<SweepEntry<T>>> {
        let cfg = self.config;
        cfg.grid
            .points()
            .into_par_iter()
            .map(|q| {
                let th = expanded_thresholds(&self.pools, q, cfg.mechanism, cfg.scope)?;
                self.point(Some(q), th)
            })
            .collect()
    }
}

/// A candidate for winner selection: (objective, coverage, rejection).
struct Candidate<T> {
    index: usize,
    objective: Option<T>,
    coverage: T,
    rejection: T,
}

/// Picks the feasible candidate with the best objective, breaking ties toward
/// higher coverage and then lower grid index. Returns `(index, feasible, defined)`.
fn select<T: Scalar>(cands: &[Candidate<T>], budget: T) -> (usize, bool, bool) {
    let feasible: Vec<&Candidate<T>> = cands.iter().filter(|c| c.rejection <= budget).collect();
    if feasible.is_empty() {
        let best = cands
            .iter()
            .min_by(|a, b| a.rejection.partial_cmp(&b.rejection).unwrap_or(Ordering::Equal).then(a.index.cmp(&b.index)))
            .expect("non-empty grid");
        return (best.index, false, best.objective.is_some());
    }
    let key = |c: &Candidate<T>| (c.objective.is_some(), c.objective.unwrap_or(T::zero()), c.coverage);
    let mut best = feasible[0];
    for c in &feasible[1..] {
        let (a, b) = (key(c), key(best));
        let better = match a.0.cmp(&b.0) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => a.2 > b.2,
            },
        };
        if better {
            best = c;
        }
    }
    (best.index, true, best.objective.is_some())
}

/// Calibrated thresholds together with the sweep they were selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration<T: Scalar> {
    pub artifact: ThresholdArtifact<T>,
    pub sweep: Vec<RiskCoveragePoint<T>>,
    /// Winning grid index, one entry (global) or one per class.
    pub winners: Vec<usize>,
}

/// Selects thresholds on `table` per `config`.
///
/// Global scope constrains the mean per-class rejection rate and maximizes the
/// unweighted mean selective AUC. Class-specific scope treats every class on
/// its own: its own rejection rate against the budget, its own AUC as objective.
pub fn calibrate<T: Scalar>(table: &ScoreTable<T>, config: &CalibrationConfig<T>) -> Result<Calibration<T>> {
    let ctx = SweepContext::new(table, config)?;
    let k = table.n_classes();
    let names = table.schema().class_names();

    let baseline: Vec<Option<T>> = (0..k).map(|c| ctx.ranked[c].auc_where(&ctx.labels[c], |_| true)).collect();
    if baseline.iter().all(Option::is_none) {
        return Err(Error::CalibrationDegenerate);
    }

    let evaluated = ctx.sweep()?;
    if evaluated.iter().all(|(p, _)| p.mean_auc.is_none()) {
        return Err(Error::CalibrationDegenerate);
    }
    let grid = config.grid.points();

    let mut flags: Vec<Flag> = ctx
        .pools
        .per_class
        .iter()
        .zip(names)
        .filter(|(p, _)| p.is_empty())
        .map(|(_, n)| Flag::EmptyPool { class: n.clone() })
        .collect();

    let (thresholds, percentiles, winners) = match config.scope {
        Scope::Global => {
            let cands: Vec<Candidate<T>> = evaluated
                .iter()
                .enumerate()
                .map(|(index, (p, sel))| Candidate {
                    index,
                    objective: mean_defined(sel.iter().map(|m| m.auc)),
                    coverage: p.coverage,
                    rejection: mean_rate(sel),
                })
                .collect();
            let (w, feasible, _) = select(&cands, config.budget);
            if !feasible {
                flags.push(Flag::BudgetInfeasible { class: None });
            }
            (vec![evaluated[w].0.thresholds[0]], vec![Some(grid[w])], vec![w])
        }
        Scope::ClassSpecific => {
            let mut th = Vec::with_capacity(k);
            let mut pct = Vec::with_capacity(k);
            let mut wins = Vec::with_capacity(k);
            for c in 0..k {
                let cands: Vec<Candidate<T>> = evaluated
                    .iter()
                    .enumerate()
                    .map(|(index, (_, sel))| Candidate {
                        index,
                        objective: sel[c].auc,
                        coverage: T::one() - sel[c].rejection_rate,
                        rejection: sel[c].rejection_rate,
                    })
                    .collect();
                let (w, feasible, defined) = select(&cands, config.budget);
                if !feasible {
                    flags.push(Flag::BudgetInfeasible { class: Some(names[c].clone()) });
                }
                if !defined {
                    flags.push(Flag::AucUndefined { class: names[c].clone() });
                }
                th.push(evaluated[w].0.thresholds[c]);
                pct.push(Some(grid[w]));
                wins.push(w);
            }
            (th, pct, wins)
        }
    };

    let artifact = ThresholdArtifact {
        mechanism: config.mechanism,
        scope: config.scope,
        mode: config.mode,
        theta: config.theta,
        epsilon: config.budget,
        percentiles,
        thresholds,
        flags,
        fingerprint: Fingerprint::of(table),
    };
    artifact.validate()?;
    Ok(Calibration { artifact, sweep: evaluated.into_iter().map(|(p, _)| p).collect(), winners })
}

fn mean_rate<T: Scalar>(metrics: &[ClassMetrics<T>]) -> T {
    let sum: T = metrics.iter().map(|m| m.rejection_rate).sum();
    sum / T::lit(metrics.len() as f64)
}

/// Full grid evaluated on `table` with thresholds derived from the same table.
pub fn risk_coverage_sweep<T: Scalar>(
    table: &ScoreTable<T>,
    config: &CalibrationConfig<T>,
) -> Result<Vec<RiskCoveragePoint<T>>> {
    let ctx = SweepContext::new(table, config)?;
    Ok(ctx.sweep()?.into_iter().map(|(p, _)| p).collect())
}

/// Baseline row of a sweep: every cell retained, percentile `None`.
pub fn accept_all_point<T: Scalar>(
    table: &ScoreTable<T>,
    config: &CalibrationConfig<T>,
) -> Result<RiskCoveragePoint<T>> {
    config.validate()?;
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let k = table.n_classes();
    let theta = table.schema().theta();
    let metrics: Vec<ClassMetrics<T>> = (0..k)
        .map(|c| {
            let ranked = RankedScores::new(&table.probs_column(c));
            ClassMetrics::from_ranked(&ranked, &table.labels_column(c), theta, |_| true)
        })
        .collect();
    let class_auc: Vec<Option<T>> = metrics.iter().map(|m| m.auc).collect();
    let bound = crate::artifact::threshold_upper_bound(config.mechanism, theta);
    let all = match config.mechanism {
        Mechanism::Entropy => bound,
        Mechanism::Interval => T::zero(),
    };
    Ok(RiskCoveragePoint {
        percentile: None,
        thresholds: vec![all; k],
        coverage: T::one(),
        rejection_rate: T::zero(),
        class_rejection: vec![T::zero(); k],
        mean_auc: mean_defined(class_auc.iter().copied()),
        n_auc_excluded: class_auc.iter().filter(|a| a.is_none()).count(),
        class_auc,
        class_f1: metrics.iter().map(|m| m.f1).collect(),
    })
}

fn opt<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per point; undefined metrics are written as empty fields.
pub fn write_sweep_csv<T: Scalar, W: Write>(
    points: &[RiskCoveragePoint<T>],
    class_names: &[String],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["percentile".to_string()];
    header.extend(class_names.iter().map(|c| format!("threshold_{c}")));
    header.extend(["coverage", "rejection_rate", "mean_auc", "n_auc_excluded"].map(String::from));
    header.extend(class_names.iter().map(|c| format!("auc_{c}")));
    header.extend(class_names.iter().map(|c| format!("f1_{c}")));
    header.extend(class_names.iter().map(|c| format!("rejection_{c}")));
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![opt(p.percentile)];
        row.extend(p.thresholds.iter().map(|t| t.to_string()));
        row.push(p.coverage.to_string());
        row.push(p.rejection_rate.to_string());
        row.push(opt(p.mean_auc));
        row.push(p.n_auc_excluded.to_string());
        row.extend(p.class_auc.iter().map(|&a| opt(a)));
        row.extend(p.class_f1.iter().map(|&a| opt(a)));
        row.extend(p.class_rejection.iter().map(|r| r.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}
