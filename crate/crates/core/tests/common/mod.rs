#![allow(dead_code)]

use proptest::prelude::*;
use rejectkit::model::{validate_table, ClassSchema, RawRecord, ScoreTable};

pub fn table_from(cells: &[(Vec<f64>, Vec<bool>)], theta: f64) -> ScoreTable<f64> {
    let k = cells.first().map_or(1, |c| c.0.len());
    let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
    let raw: Vec<RawRecord<f64>> = cells
        .iter()
        .enumerate()
        .map(|(i, (p, l))| RawRecord {
            sample_id: format!("s{i}"),
            source: ["a", "b"][i % 2].into(),
            probs: p.clone(),
            labels: l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        })
        .collect();
    validate_table(raw, ClassSchema::new(names, theta).unwrap()).unwrap()
}

/// Probabilities on a coarse grid so ties and boundary hits are common.
pub fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..=40).prop_map(|x| x as f64 / 40.0), 0.0f64..=1.0]
}

pub fn arb_table(max_n: usize, max_k: usize) -> impl Strategy<Value = ScoreTable<f64>> {
    (1..=max_k, prop_oneof![Just(0.5), 0.05f64..0.95]).prop_flat_map(move |(k, theta)| {
        prop::collection::vec((prop::collection::vec(prob(), k), prop::collection::vec(any::<bool>(), k)), 1..=max_n)
            .prop_map(move |cells| table_from(&cells, theta))
    })
}

/// O(n^2) Mann-Whitney: ties count one half.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

pub fn f1_oracle(probs: &[f64], labels: &[bool], theta: f64) -> Option<f64> {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &l) in probs.iter().zip(labels) {
        match (p >= theta, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let d = 2.0 * tp + fp + fn_;
    (d > 0.0).then(|| 2.0 * tp / d)
}
