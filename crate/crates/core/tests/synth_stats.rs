mod common;

use common::pair_count_auc;
use rejectkit::metrics::{auc, binary_entropy};
use rejectkit::synth::{generate, GeneratorSpec};

fn spec(w: f64, n: usize) -> GeneratorSpec {
    let mut s = GeneratorSpec { boundary_weight: w, n_samples: n, seed: 11, ..Default::default() };
    for src in &mut s.sources {
        src.shift = 0.0;
    }
    s
}

#[test]
fn no_boundary_weight_gives_high_auc() {
    let g = generate::<f64>(&spec(0.0, 10_000)).unwrap();
    for c in 0..g.table.n_classes() {
        let a = auc(&g.table.probs_column(c), &g.table.labels_column(c)).unwrap().unwrap();
        assert!(a > 0.95, "class {c}: {a}");
    }
    assert!(g.boundary_cells.iter().all(|&b| !b));
}

#[test]
fn full_boundary_weight_gives_chance_auc() {
    let g = generate::<f64>(&spec(1.0, 10_000)).unwrap();
    for c in 0..g.table.n_classes() {
        let a = auc(&g.table.probs_column(c), &g.table.labels_column(c)).unwrap().unwrap();
        assert!((a - 0.5).abs() <= 0.03, "class {c}: {a}");
    }
    assert!(g.boundary_cells.iter().all(|&b| b));
}

#[test]
fn full_boundary_auc_on_common_classes_matches_oracle() {
    let g = generate::<f64>(&spec(1.0, 2_000)).unwrap();
    let p = g.table.probs_column(0);
    let l = g.table.labels_column(0);
    let fast = auc(&p, &l).unwrap().unwrap();
    assert!((fast - pair_count_auc(&p, &l).unwrap()).abs() < 1e-12);
}

#[test]
fn prevalences_match_spec() {
    let s = spec(0.2, 50_000);
    let g = generate::<f64>(&s).unwrap();
    for (c, cls) in s.classes.iter().enumerate() {
        let pos = g.table.labels_column(c).iter().filter(|&&b| b).count() as f64 / 50_000.0;
        assert!((pos / cls.prevalence - 1.0).abs() <= 0.15, "{}: {pos}", cls.name);
    }
}

#[test]
fn misclassified_cells_carry_more_entropy() {
    for w in [0.3, 0.5] {
        let g = generate::<f64>(&spec(w, 10_000)).unwrap();
        let (mut wrong, mut right) = (Vec::new(), Vec::new());
        for r in g.table.records() {
            for (&p, &l) in r.probs.iter().zip(&r.labels) {
                let h = binary_entropy(p).unwrap();
                if (p >= 0.5) == l {
                    right.push(h)
                } else {
                    wrong.push(h)
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&wrong) > mean(&right), "w={w}");
    }
}

#[test]
fn boundary_cells_follow_their_weight() {
    let mut s = spec(0.3, 30_000);
    s.sources[1].shift = 0.2;
    let g = generate::<f64>(&s).unwrap();
    for (si, (_, rows)) in g.table.source_indices().into_iter().enumerate() {
        let share = rows.iter().filter(|&&i| g.is_boundary(i, 0)).count() as f64 / rows.len() as f64;
        let want = g.effective_weights[si][0];
        assert!((share - want).abs() < 0.03, "source {si}: {share} vs {want}");
    }
}
