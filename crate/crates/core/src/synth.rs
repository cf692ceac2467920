//! Synthetic multi-label score tables with a known error structure.
//!
//! Each cell is drawn from one of two logit-normal components. The confident
//! component sits `offset` logits on the label's side of the boundary; the
//! boundary component is centred on the boundary and ignores the label, so
//! its cells carry high entropy and are right only by chance.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_table, ClassSchema, RawRecord, ScoreTable};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub prevalence: f64,
    /// Overrides the spec-wide boundary weight for this class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidentComponent {
    /// Mean logit distance from the boundary, on the label's side.
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryComponent {
    /// Logit spread around the boundary.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    /// Added to the boundary weight of every class for this source.
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub classes: Vec<ClassSpec>,
    pub boundary_weight: f64,
    pub confident: ConfidentComponent,
    pub boundary: BoundaryComponent,
    pub n_samples: usize,
    pub sources: Vec<SourceSpec>,
    pub theta: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let classes = [("cardiomegaly", 0.097), ("effusion", 0.076), ("edema", 0.016), ("consolidation", 0.021)]
            .into_iter()
            .map(|(name, prevalence)| ClassSpec { name: name.into(), prevalence, boundary_weight: None })
            .collect();
        let sources = [("padchest", 0.0), ("nih", 0.05), ("mimic", -0.05)]
            .into_iter()
            .map(|(name, shift)| SourceSpec { name: name.into(), shift })
            .collect();
        Self {
            classes,
            boundary_weight: 0.2,
            confident: ConfidentComponent { offset: 2.5, scale: 1.0 },
            boundary: BoundaryComponent { scale: 0.4 },
            n_samples: 20_000,
            sources,
            theta: 0.5,
            seed: 0,
        }
    }
}

/// Generated table plus which cells came from the boundary component.
#[derive(Debug, Clone)]
pub struct Generated<T: Scalar> {
    pub table: ScoreTable<T>,
    /// Row-major `[n_samples x n_classes]`.
    pub boundary_cells: Vec<bool>,
    /// Effective boundary weight per (source, class), sources in spec order.
    pub effective_weights: Vec<Vec<f64>>,
}

impl<T: Scalar> Generated<T> {
    pub fn is_boundary(&self, sample: usize, class: usize) -> bool {
        self.boundary_cells[sample * self.table.n_classes() + class]
    }

    /// `sample_id,boundary_<class>...` as 0/1.
    pub fn write_truth_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let names = self.table.schema().class_names();
        let mut header = vec!["sample_id".to_string()];
        header.extend(names.iter().map(|c| format!("boundary_{c}")));
        w.write_record(&header)?;
        for (i, r) in self.table.records().iter().enumerate() {
            let mut row = vec![r.sample_id.clone()];
            row.extend((0..names.len()).map(|c| if self.is_boundary(i, c) { "1" } else { "0" }.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<truth csv>", e))?;
        Ok(())
    }
}

impl GeneratorSpec {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        for c in &self.classes {
            if !(c.prevalence > 0.0 && c.prevalence < 1.0) {
                return bad(format!("prevalence of `{}` must be in (0, 1)", c.name));
            }
            if let Some(w) = c.boundary_weight {
                if !(0.0..=1.0).contains(&w) {
                    return bad(format!("boundary weight of `{}` must be in [0, 1]", c.name));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.boundary_weight) {
            return bad("boundary weight must be in [0, 1]".into());
        }
        if !(self.confident.scale > 0.0 && self.boundary.scale > 0.0 && self.confident.offset.is_finite()) {
            return bad("component scales must be positive".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.sources.is_empty() {
            return bad("at least one source is required".into());
        }
        let names: HashSet<&str> = self.sources.iter().map(|s| s.name.as_str()).collect();
        if names.len() != self.sources.len() {
            return bad("duplicate source names".into());
        }
        if !self.sources.iter().all(|s| s.shift.is_finite()) {
            return bad("source shifts must be finite".into());
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must be in (0, 1)".into());
        }
        Ok(())
    }

    fn weight(&self, class: usize, source: usize) -> f64 {
        let w = self.classes[class].boundary_weight.unwrap_or(self.boundary_weight);
        (w + self.sources[source].shift).clamp(0.0, 1.0)
    }

    /// Source of sample `i`: contiguous, near-equal blocks in spec order.
    fn source_of(&self, i: usize) -> usize {
        i * self.sources.len() / self.n_samples
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws a table; sample `i` uses its own stream derived from `(seed, i)`.
pub fn generate<T: Scalar>(spec: &GeneratorSpec) -> Result<Generated<T>> {
    spec.validate()?;
    let k = spec.classes.len();
    let theta = spec.theta;
    let centre = (theta / (1.0 - theta)).ln();

    let rows: Vec<(RawRecord<T>, Vec<bool>)> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(spec.seed, i as u64);
            let s = spec.source_of(i);
            let mut probs = Vec::with_capacity(k);
            let mut labels = Vec::with_capacity(k);
            let mut boundary = Vec::with_capacity(k);
            for c in 0..k {
                let label = rng.random_bool(spec.classes[c].prevalence);
                let on_boundary = rng.random_bool(spec.weight(c, s));
                let z: f64 = StandardNormal.sample(&mut rng);
                let logit = if on_boundary {
                    centre + spec.boundary.scale * z
                } else {
                    let side = if label { 1.0 } else { -1.0 };
                    centre + side * (spec.confident.offset + spec.confident.scale * z)
                };
                probs.push(T::lit(sigmoid(logit)));
                labels.push(if label { T::one() } else { T::zero() });
                boundary.push(on_boundary);
            }
            let rec =
                RawRecord { sample_id: format!("syn-{i:06}"), source: spec.sources[s].name.clone(), probs, labels };
            (rec, boundary)
        })
        .collect();

    let schema = ClassSchema::new(spec.classes.iter().map(|c| c.name.clone()), T::lit(theta))?;
    let mut boundary_cells = Vec::with_capacity(spec.n_samples * k);
    let mut raw = Vec::with_capacity(spec.n_samples);
    for (rec, b) in rows {
        raw.push(rec);
        boundary_cells.extend(b);
    }
    let table = validate_table(raw, schema)?;
    let effective_weights = (0..spec.sources.len()).map(|s| (0..k).map(|c| spec.weight(c, s)).collect()).collect();
    Ok(Generated { table, boundary_cells, effective_weights })
}
