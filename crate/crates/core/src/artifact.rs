//! Calibrated thresholds and their JSON document form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{ClassSchema, Mechanism, Mode, Scope, ScoreTable};
use crate::scalar::Scalar;

/// Condition raised during calibration and carried with the artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    /// The class had no correct predictions; the pooled distribution was used.
    EmptyPool { class: String },
    /// No grid point met the rejection budget (for `class`, or globally).
    BudgetInfeasible {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class: Option<String>,
    },
    /// Selective AUC was undefined at every feasible grid point for the class.
    AucUndefined { class: String },
}

/// Identifies the table a set of thresholds was calibrated on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub record_count: usize,
    pub schema_hash: String,
    pub class_names: Vec<String>,
}

impl Fingerprint {
    pub fn of<T: Scalar>(table: &ScoreTable<T>) -> Self {
        Self::from_schema(table.schema(), table.len())
    }

    pub fn from_schema<T: Scalar>(schema: &ClassSchema<T>, record_count: usize) -> Self {
        Self { record_count, schema_hash: schema.hash(), class_names: schema.class_names().to_vec() }
    }
}

/// Thresholds for one mechanism and scope.
///
/// `thresholds` and `percentiles` hold a single value for global scope and
/// one value per class (schema order) for class-specific scope.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdArtifact<T: Scalar> {
    pub mechanism: Mechanism,
    pub scope: Scope,
    pub mode: Mode,
    pub theta: T,
    pub epsilon: T,
    pub percentiles: Vec<Option<T>>,
    pub thresholds: Vec<T>,
    pub flags: Vec<Flag>,
    pub fingerprint: Fingerprint,
}

/// Largest legal threshold for a mechanism at boundary `theta`.
pub fn threshold_upper_bound<T: Scalar>(mechanism: Mechanism, theta: T) -> T {
    match mechanism {
        Mechanism::Entropy => T::lit(std::f64::consts::LN_2),
        Mechanism::Interval => theta.max(T::one() - theta),
    }
}

const GLOBAL_KEY: &str = "global";

impl<T: Scalar> ThresholdArtifact<T> {
    /// Checks shape and range invariants.
    pub fn validate(&self) -> Result<()> {
        let n_classes = self.fingerprint.class_names.len();
        let expected = match self.scope {
            Scope::Global => 1,
            Scope::ClassSpecific => n_classes,
        };
        if self.thresholds.len() != expected || self.percentiles.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} scope needs {expected} threshold(s), found {}",
                self.scope,
                self.thresholds.len()
            )));
        }
        let hi = threshold_upper_bound(self.mechanism, self.theta) + T::lit(1e-9);
        for &t in &self.thresholds {
            if !(t >= T::zero() && t <= hi) {
                return Err(Error::InvalidConfig(format!("{} threshold {t} outside [0, {hi}]", self.mechanism)));
            }
        }
        if !(self.epsilon >= T::zero() && self.epsilon <= T::one()) {
            return Err(Error::InvalidConfig(format!("budget {} not in [0, 1]", self.epsilon)));
        }
        if !(self.theta > T::zero() && self.theta < T::one()) {
            return Err(Error::InvalidConfig(format!("theta {} not in (0, 1)", self.theta)));
        }
        Ok(())
    }

    /// Artifact with fixed thresholds and no calibration provenance.
    pub fn fixed(schema: &ClassSchema<T>, mechanism: Mechanism, mode: Mode, thresholds: Vec<T>) -> Result<Self> {
        let scope = if thresholds.len() == 1 { Scope::Global } else { Scope::ClassSpecific };
        let art = Self {
            mechanism,
            scope,
            mode,
            theta: schema.theta(),
            epsilon: T::one(),
            percentiles: vec![None; thresholds.len()],
            thresholds,
            flags: Vec::new(),
            fingerprint: Fingerprint::from_schema(schema, 0),
        };
        art.validate()?;
        Ok(art)
    }

    /// Widest thresholds the strict rule allows: only cells exactly at maximal
    /// uncertainty are rejected.
    pub fn accept_all(schema: &ClassSchema<T>, mechanism: Mechanism, mode: Mode) -> Self {
        let t = match mechanism {
            Mechanism::Entropy => T::lit(std::f64::consts::LN_2),
            Mechanism::Interval => T::zero(),
        };
        Self::fixed(schema, mechanism, mode, vec![t]).expect("accept-all thresholds are legal")
    }

    pub fn n_classes(&self) -> usize {
        self.fingerprint.class_names.len()
    }

    /// Threshold applied to class `c`.
    pub fn threshold_for(&self, class: usize) -> T {
        match self.scope {
            Scope::Global => self.thresholds[0],
            Scope::ClassSpecific => self.thresholds[class],
        }
    }

    /// Per-class threshold vector, expanding global scope.
    pub fn expanded_thresholds(&self) -> Vec<T> {
        (0..self.n_classes()).map(|c| self.threshold_for(c)).collect()
    }

    pub fn has_budget_infeasible(&self) -> bool {
        self.flags.iter().any(|f| matches!(f, Flag::BudgetInfeasible { .. }))
    }

    /// Requires the table to share the calibrated class list and boundary.
    pub fn check_schema(&self, schema: &ClassSchema<T>) -> Result<()> {
        if schema.class_names() != self.fingerprint.class_names.as_slice() {
            return Err(Error::SchemaMismatch(format!(
                "table classes {:?} differ from artifact classes {:?}",
                schema.class_names(),
                self.fingerprint.class_names
            )));
        }
        if schema.theta() != self.theta {
            return Err(Error::SchemaMismatch(format!(
                "table boundary {} differs from artifact boundary {}",
                schema.theta(),
                self.theta
            )));
        }
        Ok(())
    }

    fn keyed(&self, values: Vec<Value>) -> Value {
        let mut map = Map::new();
        match self.scope {
            Scope::Global => {
                map.insert(GLOBAL_KEY.into(), values.into_iter().next().unwrap_or(Value::Null));
            }
            Scope::ClassSpecific => {
                for (name, v) in self.fingerprint.class_names.iter().zip(values) {
                    map.insert(name.clone(), v);
                }
            }
        }
        Value::Object(map)
    }

    pub fn to_value(&self) -> Value {
        let num = |v: T| serde_json::to_value(v).unwrap_or(Value::Null);
        let thresholds = self.keyed(self.thresholds.iter().map(|&t| num(t)).collect());
        let percentile = match self.scope {
            Scope::Global => self.percentiles[0].map(num).unwrap_or(Value::Null),
            Scope::ClassSpecific => {
                self.keyed(self.percentiles.iter().map(|p| p.map(num).unwrap_or(Value::Null)).collect())
            }
        };
        let semantics = match self.mechanism {
            Mechanism::Entropy => "entropy_nats_upper_bound: confident iff H(p) < threshold",
            Mechanism::Interval => {
                "margin_half_width: confident iff p - threshold > theta or p + threshold < theta; \
                 calibrated as a quantile of correct-prediction margins, not a statistical interval"
            }
        };
        json!({
            "mechanism": self.mechanism,
            "scope": self.scope,
            "mode": self.mode,
            "theta": num(self.theta),
            "epsilon": num(self.epsilon),
            "budget_semantics": match self.scope {
                Scope::Global => "mean_class_rejection_rate",
                Scope::ClassSpecific => "per_class_rejection_rate",
            },
            "percentile": percentile,
            "thresholds": thresholds,
            "threshold_semantics": semantics,
            "flags": self.flags,
            "calibration_fingerprint": self.fingerprint,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let bad = |msg: &str| Error::InvalidConfig(format!("threshold document: {msg}"));
        let field = |name: &str| v.get(name).cloned().ok_or_else(|| bad(&format!("missing `{name}`")));
        let mechanism: Mechanism = serde_json::from_value(field("mechanism")?)?;
        let scope: Scope = serde_json::from_value(field("scope")?)?;
        let mode: Mode = serde_json::from_value(field("mode")?)?;
        let theta: T = serde_json::from_value(field("theta")?)?;
        let epsilon: T = serde_json::from_value(field("epsilon")?)?;
        let flags: Vec<Flag> = serde_json::from_value(field("flags")?)?;
        let fingerprint: Fingerprint = serde_json::from_value(field("calibration_fingerprint")?)?;

        let keys: Vec<String> = match scope {
            Scope::Global => vec![GLOBAL_KEY.to_string()],
            Scope::ClassSpecific => fingerprint.class_names.clone(),
        };
        let thresholds_obj = field("thresholds")?;
        let thresholds = keys
            .iter()
            .map(|k| {
                let t = thresholds_obj.get(k).ok_or_else(|| bad(&format!("no threshold for `{k}`")))?;
                Ok(serde_json::from_value::<T>(t.clone())?)
            })
            .collect::<Result<Vec<T>>>()?;
        let pct = field("percentile")?;
        let percentiles = match scope {
            Scope::Global => vec![serde_json::from_value::<Option<T>>(pct)?],
            Scope::ClassSpecific => keys
                .iter()
                .map(|k| Ok(serde_json::from_value::<Option<T>>(pct.get(k).cloned().unwrap_or(Value::Null))?))
                .collect::<Result<Vec<_>>>()?,
        };
        let art = Self { mechanism, scope, mode, theta, epsilon, percentiles, thresholds, flags, fingerprint };
        art.validate()?;
        Ok(art)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Schema implied by the artifact's class list and boundary.
    pub fn schema(&self) -> Result<ClassSchema<T>> {
        ClassSchema::new(self.fingerprint.class_names.clone(), self.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ClassSchema<f64> {
        ClassSchema::with_default_boundary(["a", "b", "c"]).unwrap()
    }

    #[test]
    fn json_round_trip_class_specific() {
        let mut art =
            ThresholdArtifact::fixed(&schema(), Mechanism::Interval, Mode::PerClass, vec![0.1, 0.2, 0.3]).unwrap();
        art.percentiles = vec![Some(75.0), Some(80.0), None];
        art.flags.push(Flag::EmptyPool { class: "c".into() });
        art.flags.push(Flag::BudgetInfeasible { class: None });
        let back = ThresholdArtifact::<f64>::from_json(&art.to_json()).unwrap();
        assert_eq!(art, back);
        let v = art.to_value();
        assert_eq!(v["thresholds"]["b"], json!(0.2));
        assert_eq!(v["flags"][0], json!({"code": "EMPTY_POOL", "class": "c"}));
    }

    #[test]
    fn global_scope_has_one_value() {
        let art = ThresholdArtifact::accept_all(&schema(), Mechanism::Entropy, Mode::ImageLevel);
        assert_eq!(art.scope, Scope::Global);
        assert_eq!(art.expanded_thresholds().len(), 3);
        let v = art.to_value();
        assert_eq!(v["thresholds"].as_object().unwrap().len(), 1);
        let back = ThresholdArtifact::<f64>::from_json(&art.to_json()).unwrap();
        assert_eq!(back, art);
    }

    #[test]
    fn out_of_range_thresholds_are_rejected() {
        assert!(ThresholdArtifact::fixed(&schema(), Mechanism::Entropy, Mode::PerClass, vec![0.8]).is_err());
        assert!(ThresholdArtifact::fixed(&schema(), Mechanism::Interval, Mode::PerClass, vec![0.6]).is_err());
        assert!(ThresholdArtifact::fixed(&schema(), Mechanism::Interval, Mode::PerClass, vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn schema_check() {
        let art = ThresholdArtifact::accept_all(&schema(), Mechanism::Entropy, Mode::PerClass);
        assert!(art.check_schema(&schema()).is_ok());
        let other = ClassSchema::<f64>::with_default_boundary(["a", "c", "b"]).unwrap();
        assert_eq!(art.check_schema(&other).unwrap_err().code(), "SCHEMA_MISMATCH");
    }
}
