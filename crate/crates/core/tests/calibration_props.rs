mod common;

use common::arb_table;
use proptest::prelude::*;
use rejectkit::calibration::{
    calibrate, correct_prediction_pool, quantile, risk_coverage_sweep, threshold_from_percentile, CalibrationConfig,
    PercentileGrid,
};
use rejectkit::model::{validate_table, ScoreTable};
use rejectkit::rejection::score_uncertainty;
use rejectkit::{Mechanism, Scope};

fn doubled(t: &ScoreTable<f64>) -> ScoreTable<f64> {
    let mut raw = t.to_raw();
    let mut copy = t.to_raw();
    for r in &mut copy {
        r.sample_id.push_str("-dup");
    }
    raw.extend(copy);
    validate_table(raw, t.schema().clone()).unwrap()
}

fn mechanisms() -> impl Strategy<Value = Mechanism> {
    prop_oneof![Just(Mechanism::Entropy), Just(Mechanism::Interval)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn candidate_thresholds_move_monotonically_in_q(t in arb_table(80, 3), mech in mechanisms()) {
        let pools = correct_prediction_pool(&t, &score_uncertainty(&t, mech));
        prop_assume!(!pools.pooled.is_empty());
        let mut last: Option<f64> = None;
        for q in PercentileGrid::<f64>::default().points() {
            let v = threshold_from_percentile(&pools, q, mech, Scope::Global).unwrap()[0];
            if let Some(prev) = last {
                match mech {
                    Mechanism::Entropy => prop_assert!(v >= prev),
                    Mechanism::Interval => prop_assert!(v <= prev),
                }
            }
            last = Some(v);
        }
    }

    #[test]
    fn coverage_non_decreasing_in_q(t in arb_table(80, 3), mech in mechanisms(), class_specific in any::<bool>()) {
        let scope = if class_specific { Scope::ClassSpecific } else { Scope::Global };
        let mut cfg = CalibrationConfig::new(mech, scope);
        cfg.theta = t.schema().theta();
        let Ok(sweep) = risk_coverage_sweep(&t, &cfg) else { return Ok(()); };
        for w in sweep.windows(2) {
            prop_assert!(w[1].coverage >= w[0].coverage);
            for c in 0..t.n_classes() {
                prop_assert!(w[1].class_rejection[c] <= w[0].class_rejection[c]);
            }
        }
    }

    #[test]
    fn winner_meets_budget_when_any_point_does(
        t in arb_table(120, 3),
        mech in mechanisms(),
        class_specific in any::<bool>(),
        budget in 0.0f64..0.6,
    ) {
        let scope = if class_specific { Scope::ClassSpecific } else { Scope::Global };
        let mut cfg = CalibrationConfig::new(mech, scope);
        cfg.theta = t.schema().theta();
        cfg.budget = budget;
        let Ok(cal) = calibrate(&t, &cfg) else { return Ok(()); };
        let k = t.n_classes();
        if class_specific {
            for c in 0..k {
                let feasible = cal.sweep.iter().any(|p| p.class_rejection[c] <= budget);
                let chosen = cal.sweep[cal.winners[c]].class_rejection[c];
                prop_assert_eq!(feasible, chosen <= budget);
            }
        } else {
            let feasible = cal.sweep.iter().any(|p| p.rejection_rate <= budget);
            prop_assert_eq!(feasible, cal.sweep[cal.winners[0]].rejection_rate <= budget);
            prop_assert_eq!(!feasible, cal.artifact.has_budget_infeasible());
        }
    }

    #[test]
    fn calibrate_is_deterministic(t in arb_table(80, 3), mech in mechanisms()) {
        let mut cfg = CalibrationConfig::new(mech, Scope::ClassSpecific);
        cfg.theta = t.schema().theta();
        let a = calibrate(&t, &cfg).map(|c| c.artifact.to_json());
        let b = calibrate(&t, &cfg).map(|c| c.artifact.to_json());
        prop_assert_eq!(a.ok(), b.ok());
    }

    // Self-concatenation keeps each quantile between the same two order
    // statistics it came from; exact equality does not hold for this estimator.
    #[test]
    fn doubled_table_thresholds_stay_bracketed(t in arb_table(60, 2), mech in mechanisms()) {
        let d = doubled(&t);
        let pools = correct_prediction_pool(&t, &score_uncertainty(&t, mech));
        let pools2 = correct_prediction_pool(&d, &score_uncertainty(&d, mech));
        prop_assume!(!pools.pooled.is_empty());
        for q in PercentileGrid::<f64>::default().points() {
            let a = threshold_from_percentile(&pools, q, mech, Scope::Global).unwrap()[0];
            let b = threshold_from_percentile(&pools2, q, mech, Scope::Global).unwrap()[0];
            let s = &pools.pooled;
            let pq = if mech == Mechanism::Entropy { q } else { 100.0 - q };
            let h = (s.len() - 1) as f64 * pq / 100.0;
            let lo = s[h.floor() as usize];
            let hi = s[(h.floor() as usize + 1).min(s.len() - 1)];
            prop_assert!(lo <= a && a <= hi && lo <= b && b <= hi);
        }
    }
}

#[test]
fn exact_duplication_invariance_fails_for_linear_interpolation() {
    // Two points: rank 0.75 interpolates, rank 2.25 of the doubled list lands on b.
    assert_eq!(quantile(&[0.0, 1.0], 75.0).unwrap(), 0.75);
    assert_eq!(quantile(&[0.0, 0.0, 1.0, 1.0], 75.0).unwrap(), 1.0);
}
