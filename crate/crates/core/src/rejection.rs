//! Accept/reject decisions from per-class uncertainty.

use std::io::Write;

use rayon::prelude::*;

use crate::artifact::{threshold_upper_bound, ThresholdArtifact};
use crate::error::{Error, Result};
use crate::metrics::entropy_unchecked;
use crate::model::{Mechanism, Mode, ScoreTable};
use crate::scalar::Scalar;

/// Per-cell uncertainty, row-major `[n_samples x n_classes]`.
///
/// Holds entropy (nats) for the entropy mechanism and the margin `|p - theta|`
/// for the interval mechanism, where a larger value means more confident.
///
/// Interval matrices built from a table also keep the probabilities, so the
/// decision is the interval test `p - delta > theta || p + delta < theta`
/// itself; comparing the rounded margin against `delta` can disagree with it
/// in the last bit.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMatrix<T> {
    mechanism: Mechanism,
    n_classes: usize,
    values: Vec<T>,
    interval: Option<IntervalSource<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct IntervalSource<T> {
    probs: Vec<T>,
    theta: T,
}

impl<T: Scalar> UncertaintyMatrix<T> {
    pub fn new(mechanism: Mechanism, n_classes: usize, values: Vec<T>) -> Result<Self> {
        if n_classes == 0 || !values.len().is_multiple_of(n_classes) {
            return Err(Error::ShapeMismatch(format!("{} values do not fill rows of {n_classes}", values.len())));
        }
        Ok(Self { mechanism, n_classes, values, interval: None })
    }

    fn confident(&self, idx: usize, threshold: T) -> bool {
        match &self.interval {
            Some(src) => {
                let p = src.probs[idx];
                p - threshold > src.theta || p + threshold < src.theta
            }
            None => class_confident(self.values[idx], threshold, self.mechanism),
        }
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn n_samples(&self) -> usize {
        self.values.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, sample: usize, class: usize) -> T {
        self.values[sample * self.n_classes + class]
    }

    pub fn row(&self, sample: usize) -> &[T] {
        &self.values[sample * self.n_classes..(sample + 1) * self.n_classes]
    }

    pub fn column(&self, class: usize) -> Vec<T> {
        (0..self.n_samples()).map(|i| self.get(i, class)).collect()
    }
}

/// Fills the uncertainty matrix for a validated table.
pub fn score_uncertainty<T: Scalar>(table: &ScoreTable<T>, mechanism: Mechanism) -> UncertaintyMatrix<T> {
    let theta = table.schema().theta();
    let probs: Vec<T> = table.records().iter().flat_map(|r| r.probs.iter().copied()).collect();
    let (values, interval) = match mechanism {
        Mechanism::Entropy => (probs.into_iter().map(entropy_unchecked).collect(), None),
        Mechanism::Interval => {
            let margins = probs.iter().map(|&p| (p - theta).abs()).collect();
            (margins, Some(IntervalSource { probs, theta }))
        }
    };
    UncertaintyMatrix { mechanism, n_classes: table.n_classes(), values, interval }
}

/// Strict confidence test: `H < tau` for entropy, `margin > delta` for interval.
#[inline]
pub fn class_confident<T: Scalar>(value: T, threshold: T, mechanism: Mechanism) -> bool {
    match mechanism {
        Mechanism::Entropy => value < threshold,
        Mechanism::Interval => value > threshold,
    }
}

/// Accept/reject matrix, row-major `[n_samples x n_classes]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    mode: Mode,
    n_classes: usize,
    accepted: Vec<bool>,
}

/// Output of [`rejection_rate`].
#[derive(Debug, Clone, PartialEq)]
pub enum RejectionRate<T> {
    PerClass(Vec<T>),
    Image(T),
}

impl SelectionMask {
    pub fn new(mode: Mode, n_classes: usize, accepted: Vec<bool>) -> Result<Self> {
        if n_classes == 0 || !accepted.len().is_multiple_of(n_classes) {
            return Err(Error::ShapeMismatch("mask does not fill whole rows".into()));
        }
        if mode == Mode::ImageLevel {
            for row in accepted.chunks(n_classes) {
                if row.iter().any(|&a| a != row[0]) {
                    return Err(Error::ShapeMismatch("image-level row is mixed".into()));
                }
            }
        }
        Ok(Self { mode, n_classes, accepted })
    }

    /// Every cell accepted.
    pub fn full(mode: Mode, n_samples: usize, n_classes: usize) -> Self {
        Self { mode, n_classes, accepted: vec![true; n_samples * n_classes] }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_samples(&self) -> usize {
        self.accepted.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    #[inline]
    pub fn is_accepted(&self, sample: usize, class: usize) -> bool {
        self.accepted[sample * self.n_classes + class]
    }

    pub fn row(&self, sample: usize) -> &[bool] {
        &self.accepted[sample * self.n_classes..(sample + 1) * self.n_classes]
    }

    /// A sample counts as accepted while at least one of its cells is.
    pub fn image_accepted(&self, sample: usize) -> bool {
        self.row(sample).iter().any(|&a| a)
    }

    pub fn column(&self, class: usize) -> Vec<bool> {
        (0..self.n_samples()).map(|i| self.is_accepted(i, class)).collect()
    }

    pub fn accepted_cells(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    /// Fraction of rejected cells in each column.
    pub fn class_rejection_rates<T: Scalar>(&self) -> Result<Vec<T>> {
        let n = self.n_samples();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok((0..self.n_classes).map(|c| T::ratio((0..n).filter(|&i| !self.is_accepted(i, c)).count(), n)).collect())
    }

    /// Fraction of rows with no accepted cell.
    pub fn image_rejection_rate<T: Scalar>(&self) -> Result<T> {
        let n = self.n_samples();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(T::ratio((0..n).filter(|&i| !self.image_accepted(i)).count(), n))
    }

    /// Fraction of rejected cells over the whole mask.
    pub fn cell_rejection_rate<T: Scalar>(&self) -> Result<T> {
        if self.accepted.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(T::ratio(self.accepted.len() - self.accepted_cells(), self.accepted.len()))
    }

    /// CSV with `sample_id`, one 0/1 column per class, then `image_accepted`.
    pub fn write_csv<T: Scalar, W: Write>(&self, table: &ScoreTable<T>, out: W) -> Result<()> {
        if table.len() != self.n_samples() || table.n_classes() != self.n_classes {
            return Err(Error::ShapeMismatch("mask and table disagree".into()));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample_id".to_string()];
        header.extend(table.schema().class_names().iter().cloned());
        header.push("image_accepted".into());
        w.write_record(&header)?;
        for (i, rec) in table.records().iter().enumerate() {
            let mut row = vec![rec.sample_id.clone()];
            row.extend(self.row(i).iter().map(|&a| if a { "1" } else { "0" }.to_string()));
            row.push(if self.image_accepted(i) { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<mask csv>", e))?;
        Ok(())
    }
}

/// Per-class or image-level rejection rate of a mask.
pub fn rejection_rate<T: Scalar>(mask: &SelectionMask, per_class: bool) -> Result<RejectionRate<T>> {
    if per_class {
        mask.class_rejection_rates().map(RejectionRate::PerClass)
    } else {
        mask.image_rejection_rate().map(RejectionRate::Image)
    }
}

/// Mask from per-class thresholds (one entry per class).
pub fn mask_from_thresholds<T: Scalar>(
    uncertainty: &UncertaintyMatrix<T>,
    thresholds: &[T],
    mode: Mode,
) -> Result<SelectionMask> {
    let k = uncertainty.n_classes();
    if thresholds.len() != k {
        return Err(Error::ShapeMismatch(format!("{} thresholds for {k} classes", thresholds.len())));
    }
    let mut accepted: Vec<bool> = (0..uncertainty.n_samples())
        .into_par_iter()
        .flat_map_iter(|i| thresholds.iter().enumerate().map(move |(c, &t)| uncertainty.confident(i * k + c, t)))
        .collect();
    if mode == Mode::ImageLevel {
        accepted.par_chunks_mut(k).for_each(|row| {
            let any = row.iter().any(|&a| a);
            row.fill(any);
        });
    }
    Ok(SelectionMask { mode, n_classes: k, accepted })
}

/// Applies an artifact's thresholds in the requested mode.
pub fn build_mask<T: Scalar>(
    uncertainty: &UncertaintyMatrix<T>,
    thresholds: &ThresholdArtifact<T>,
    mode: Mode,
) -> Result<SelectionMask> {
    if uncertainty.mechanism() != thresholds.mechanism {
        return Err(Error::MechanismMismatch {
            expected: thresholds.mechanism.to_string(),
            found: uncertainty.mechanism().to_string(),
        });
    }
    if uncertainty.n_classes() != thresholds.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "uncertainty has {} classes, thresholds {}",
            uncertainty.n_classes(),
            thresholds.n_classes()
        )));
    }
    let hi = threshold_upper_bound(thresholds.mechanism, thresholds.theta) + T::lit(1e-9);
    if thresholds.thresholds.iter().any(|&t| !(t >= T::zero() && t <= hi)) {
        return Err(Error::InvalidConfig("threshold outside the mechanism's legal range".into()));
    }
    mask_from_thresholds(uncertainty, &thresholds.expanded_thresholds(), mode)
}

/// Scores the table and applies the artifact in its own mode.
pub fn apply<T: Scalar>(table: &ScoreTable<T>, artifact: &ThresholdArtifact<T>) -> Result<SelectionMask> {
    artifact.check_schema(table.schema())?;
    let u = score_uncertainty(table, artifact.mechanism);
    build_mask(&u, artifact, artifact.mode)
}
