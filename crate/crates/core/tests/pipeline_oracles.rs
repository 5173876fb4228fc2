use fedfap_core::pipeline::folds::plan_divergence;
use fedfap_core::pipeline::{knn_impute, plan_folds, prune_features, FoldPlan, PreprocessConfig};
use fedfap_core::sensing::{FeatureRow, FeatureTable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Exhaustive neighbor search: score every candidate row, sort by (distance, index), average the first k.
fn brute_force_impute(m: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let f = m[0].len();
    let dist = |a: &[f64], b: &[f64]| {
        let pairs: Vec<(f64, f64)> =
            a.iter().zip(b).filter(|(x, y)| !x.is_nan() && !y.is_nan()).map(|(x, y)| (*x, *y)).collect();
        if pairs.is_empty() {
            None
        } else {
            let mut s = 0.0;
            for (x, y) in &pairs {
                s += (x - y) * (x - y);
            }
            Some(f as f64 / pairs.len() as f64 * s)
        }
    };
    let mut out = m.to_vec();
    for i in 0..m.len() {
        for j in 0..f {
            if !m[i][j].is_nan() {
                continue;
            }
            let mut cands: Vec<(f64, usize)> = (0..m.len())
                .filter(|&r| r != i && !m[r][j].is_nan())
                .filter_map(|r| dist(&m[i], &m[r]).map(|d| (d, r)))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands.truncate(k);
            out[i][j] = if cands.is_empty() {
                let obs: Vec<f64> = m.iter().map(|r| r[j]).filter(|v| !v.is_nan()).collect();
                obs.iter().sum::<f64>() / obs.len() as f64
            } else {
                let mut s = 0.0;
                for &(_, r) in &cands {
                    s += m[r][j];
                }
                s / cands.len() as f64
            };
        }
    }
    out
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, f: usize, missing: f64) -> Vec<Vec<f64>> {
    loop {
        let m: Vec<Vec<f64>> =
            (0..n)
                .map(|_| {
                    (0..f)
                        .map(|_| {
                            if rng.random_bool(missing) {
                                f64::NAN
                            } else {
                                rng.random_range(-3.0..3.0f64).round() / 2.0
                            }
                        })
                        .collect()
                })
                .collect();
        if (0..f).all(|j| m.iter().any(|r| !r[j].is_nan())) {
            return m;
        }
    }
}

#[test]
fn knn_equals_brute_force_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        // half-integer values force many distance ties
        let m = random_matrix(&mut rng, 20, 6, 0.15);
        let got = knn_impute(&m, 5).unwrap();
        let want = brute_force_impute(&m, 5);
        for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
            assert_eq!(g.to_bits(), w.to_bits());
        }
    }
}

#[test]
fn knn_keeps_observed_cells_and_stays_in_column_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 30, 5, 0.3);
        let out = knn_impute(&m, 3).unwrap();
        for j in 0..5 {
            let obs: Vec<f64> = m.iter().map(|r| r[j]).filter(|v| !v.is_nan()).collect();
            let (lo, hi) = obs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            for (orig, filled) in m.iter().zip(&out) {
                if orig[j].is_nan() {
                    assert!(filled[j] >= lo && filled[j] <= hi);
                } else {
                    assert_eq!(orig[j].to_bits(), filled[j].to_bits());
                }
            }
        }
    }
}

/// Structural equality treating NaN cells as equal.
fn same_table(a: &FeatureTable, b: &FeatureTable) -> bool {
    a.columns == b.columns
        && a.rows.len() == b.rows.len()
        && a.rows.iter().zip(&b.rows).all(|(x, y)| {
            x.user_id == y.user_id && x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

fn table_from_columns(cols: &[Vec<f64>]) -> FeatureTable {
    let n = cols[0].len();
    let rows = (0..n)
        .map(|i| FeatureRow {
            user_id: format!("p{i}"),
            start_time: 0,
            end_time: 1,
            label: 3,
            values: cols.iter().map(|c| c[i]).collect(),
        })
        .collect();
    FeatureTable::new((0..cols.len()).map(|j| format!("f{j}")).collect(), rows).unwrap()
}

#[test]
fn ten_feature_fixture_retains_exact_set() {
    // missing counts per column out of 10 rows, counted by hand
    let missing = [0, 8, 7, 10, 9, 2, 5, 8, 1, 6];
    let cols: Vec<Vec<f64>> =
        missing.iter().map(|&m| (0..10).map(|i| if i < m { f64::NAN } else { i as f64 }).collect()).collect();
    let (pruned, report) = prune_features(&table_from_columns(&cols), &PreprocessConfig::default()).unwrap();
    assert_eq!(pruned.columns, ["f0", "f2", "f5", "f6", "f8", "f9"]);
    assert_eq!(report.iter().filter(|e| e.dropped).count(), 4);
    let (again, report2) = prune_features(&pruned, &PreprocessConfig::default()).unwrap();
    assert!(same_table(&again, &pruned));
    assert!(report2.iter().all(|e| !e.dropped));
}

#[test]
fn pruning_is_idempotent_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let cols: Vec<Vec<f64>> = (0..8)
            .map(|_| {
                let rate = rng.random_range(0.0..1.0);
                (0..n).map(|i| if rng.random_bool(rate) { f64::NAN } else { i as f64 }).collect()
            })
            .collect();
        let Ok((once, _)) = prune_features(&table_from_columns(&cols), &PreprocessConfig::default()) else { continue };
        let (twice, _) = prune_features(&once, &PreprocessConfig::default()).unwrap();
        assert!(same_table(&once, &twice));
    }
}

fn random_cohort(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<usize>) {
    let participants = rng.random_range(5..40);
    let mut pids = Vec::new();
    let mut labels = Vec::new();
    for p in 0..participants {
        for _ in 0..rng.random_range(1..30) {
            pids.push(format!("p{p:02}"));
            labels.push(rng.random_range(0..3));
        }
    }
    (pids, labels)
}

#[test]
fn fold_plans_never_leak_participants() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for seed in 0..100 {
        let (pids, labels) = random_cohort(&mut rng);
        let plan = plan_folds(&pids, &labels, 5, seed).unwrap();
        let sizes: Vec<usize> = (0..5).map(|f| plan.participants_in(f).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..5 {
            let (train, test) = plan.split(&pids, f).unwrap();
            assert_eq!(train.len() + test.len(), pids.len());
            let tr: BTreeSet<&str> = train.iter().map(|&i| pids[i].as_str()).collect();
            let te: BTreeSet<&str> = test.iter().map(|&i| pids[i].as_str()).collect();
            assert!(tr.is_disjoint(&te));
            let rows: BTreeSet<usize> = train.iter().chain(&test).copied().collect();
            assert_eq!(rows.len(), pids.len());
        }
    }
}

#[test]
fn skewed_fixture_beats_median_random_grouping() {
    // 12 participants with strongly skewed label mixes and uneven sizes
    let mixes: [(usize, [usize; 3]); 12] = [
        (40, [36, 3, 1]),
        (35, [5, 25, 5]),
        (30, [2, 3, 25]),
        (28, [20, 8, 0]),
        (25, [0, 5, 20]),
        (22, [10, 10, 2]),
        (20, [18, 1, 1]),
        (15, [1, 13, 1]),
        (12, [4, 4, 4]),
        (10, [0, 0, 10]),
        (8, [8, 0, 0]),
        (5, [1, 2, 2]),
    ];
    let mut pids = Vec::new();
    let mut labels = Vec::new();
    for (p, (_, mix)) in mixes.iter().enumerate() {
        for (c, &count) in mix.iter().enumerate() {
            for _ in 0..count {
                pids.push(format!("p{p:02}"));
                labels.push(c);
            }
        }
    }
    let plan = plan_folds(&pids, &labels, 5, 3).unwrap();
    let ours = plan_divergence(&plan, &pids, &labels, 3);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let names: Vec<String> = (0..12).map(|p| format!("p{p:02}")).collect();
    let mut baseline: Vec<f64> = (0..1000)
        .map(|_| {
            let mut order = names.clone();
            order.shuffle(&mut rng);
            let assignment: BTreeMap<String, usize> = order.into_iter().enumerate().map(|(i, p)| (p, i % 5)).collect();
            plan_divergence(&FoldPlan { n_folds: 5, assignment }, &pids, &labels, 3)
        })
        .collect();
    baseline.sort_by(f64::total_cmp);
    let median = (baseline[499] + baseline[500]) / 2.0;
    assert!(ours <= median, "greedy {ours} vs random median {median}");
}
