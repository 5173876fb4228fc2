use fedfap_core::cohort::{default_cohort, CohortSpec, CORE_FEATURES};
use fedfap_core::models::{build_centralized, CentralizedKind};
use fedfap_core::pipeline::{class_index, plan_folds};
use fedfap_core::sensing::registry::feature_index;
use fedfap_core::Tensor;

fn classes(spec_table: &fedfap_core::sensing::FeatureTable) -> Vec<usize> {
    spec_table.rows.iter().map(|r| class_index(r.label).unwrap()).collect()
}

fn columns(table: &fedfap_core::sensing::FeatureTable, rows: &[usize], cols: &[usize]) -> Tensor {
    let data = rows.iter().flat_map(|&i| cols.iter().map(move |&j| table.rows[i].values[j])).collect();
    Tensor::matrix(rows.len(), cols.len(), data).unwrap()
}

/// Unweighted softmax regression by full-batch gradient descent on standardized inputs.
fn softmax_regression_accuracy(x_train: &Tensor, y_train: &[usize], x_test: &Tensor, y_test: &[usize]) -> f64 {
    let f = x_train.row_width();
    let mut mean = vec![0.0; f];
    let mut sd = vec![0.0; f];
    for i in 0..x_train.rows() {
        for (j, v) in x_train.row(i).iter().enumerate() {
            mean[j] += v / x_train.rows() as f64;
        }
    }
    for i in 0..x_train.rows() {
        for (j, v) in x_train.row(i).iter().enumerate() {
            sd[j] += (v - mean[j]).powi(2) / x_train.rows() as f64;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|s| s.sqrt().max(1e-12)).collect();
    let z = |row: &[f64]| -> Vec<f64> { row.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect() };
    let mut w = vec![vec![0.0; f + 1]; 3];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter().map(|wc| wc[f] + wc[..f].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).collect()
    };
    let train: Vec<Vec<f64>> = (0..x_train.rows()).map(|i| z(x_train.row(i))).collect();
    for _ in 0..300 {
        let mut g = vec![vec![0.0; f + 1]; 3];
        for (x, &y) in train.iter().zip(y_train) {
            let l = logits(&w, x);
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..3 {
                let d = e[c] / s - if c == y { 1.0 } else { 0.0 };
                for j in 0..f {
                    g[c][j] += d * x[j];
                }
                g[c][f] += d;
            }
        }
        for c in 0..3 {
            for j in 0..=f {
                w[c][j] -= 0.5 * g[c][j] / train.len() as f64;
            }
        }
    }
    let correct = (0..x_test.rows())
        .filter(|&i| {
            let l = logits(&w, &z(x_test.row(i)));
            let pred = (0..3).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            pred == y_test[i]
        })
        .count();
    correct as f64 / y_test.len() as f64
}

#[test]
fn generated_counts_match_the_spec() {
    let spec = default_cohort().scaled(0.2);
    let cohort = spec.generate().unwrap();
    for (c, g) in spec.countries.iter().zip(&cohort) {
        assert_eq!(c.code, g.code);
        assert_eq!(g.table.rows.len(), c.instances);
        let mut pids: Vec<&str> = g.table.rows.iter().map(|r| r.user_id.as_str()).collect();
        pids.dedup();
        assert_eq!(pids.len(), c.participants);
    }
}

#[test]
fn reference_sizes_and_cn_mask() {
    let spec = default_cohort();
    let uk = spec.country("UK").unwrap();
    assert_eq!((uk.participants, uk.instances), (52, 18832));
    let ind = spec.country("IN").unwrap();
    assert_eq!((ind.participants, ind.instances), (19, 3071));
    let cn = spec.country("CN").unwrap();
    assert_eq!(cn.mask.len(), 59 - 17);
    assert!(spec.countries.iter().all(|c| c.mask.len() >= cn.mask.len()));
}

#[test]
fn shared_intersection_is_non_empty_and_strictly_smaller_than_every_mask() {
    let spec = default_cohort();
    let shared = spec.shared_features();
    assert!(!shared.is_empty());
    assert!(spec.countries.iter().all(|c| c.mask.len() > shared.len()));
    let core: Vec<usize> = {
        let mut v: Vec<usize> = CORE_FEATURES.iter().map(|n| feature_index(n).unwrap()).collect();
        v.sort_unstable();
        v
    };
    assert_eq!(shared, core);
}

#[test]
fn empirical_class_frequencies_follow_the_priors() {
    let spec = default_cohort();
    let cohort = spec.generate_complete().unwrap();
    for (c, g) in spec.countries.iter().zip(&cohort).filter(|(c, _)| c.instances >= 5000) {
        let y = classes(&g.table);
        for k in 0..3 {
            let freq = y.iter().filter(|&&v| v == k).count() as f64 / y.len() as f64;
            assert!((freq - c.class_prior[k]).abs() <= 0.02, "{} class {k}: {freq} vs {}", c.code, c.class_prior[k]);
        }
    }
}

#[test]
fn noiseless_shared_signal_is_linearly_separable() {
    let mut spec = default_cohort().scaled(0.05);
    spec.noise_scale = 0.0;
    spec.local_signal_dim = 0;
    let shared = spec.shared_features();
    for g in spec.generate_complete().unwrap() {
        let rows: Vec<usize> = (0..g.table.rows.len()).collect();
        let x = columns(&g.table, &rows, &shared);
        let y = classes(&g.table);
        let mut probe = build_centralized(CentralizedKind::LogReg, 0);
        probe.fit(&x, &y).unwrap();
        let p = probe.predict_proba(&x).unwrap();
        let correct = (0..y.len())
            .filter(|&i| {
                let r = p.row(i);
                (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap() == y[i]
            })
            .count();
        let acc = correct as f64 / y.len() as f64;
        assert!(acc >= 0.99, "{}: probe accuracy {acc}", g.code);
    }
}

#[test]
fn local_only_features_beat_the_prior_by_ten_points() {
    let spec = default_cohort().scaled(0.2);
    let shared = spec.shared_features();
    let mut failures = Vec::new();
    for (c, g) in spec.countries.iter().zip(spec.generate_complete().unwrap()) {
        let local: Vec<usize> =
            c.mask.iter().map(|n| feature_index(n).unwrap()).filter(|j| !shared.contains(j)).collect();
        let y = classes(&g.table);
        let pids: Vec<String> = g.table.rows.iter().map(|r| r.user_id.clone()).collect();
        let plan = plan_folds(&pids, &y, 5, 0).unwrap();
        let (train, test) = plan.split(&pids, 0).unwrap();
        let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let y_test: Vec<usize> = test.iter().map(|&i| y[i]).collect();
        let acc = softmax_regression_accuracy(
            &columns(&g.table, &train, &local),
            &y_train,
            &columns(&g.table, &test, &local),
            &y_test,
        );
        let majority =
            (0..3).map(|k| y_test.iter().filter(|&&v| v == k).count()).max().unwrap() as f64 / y_test.len() as f64;
        if acc < majority + 0.10 {
            failures.push(format!("{}: local-only accuracy {acc:.3} vs prior baseline {majority:.3}", c.code));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn identical_seed_gives_identical_cohort() {
    let spec = default_cohort().scaled(0.05);
    let a = spec.generate().unwrap();
    let b = spec.generate().unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.table.rows.len(), y.table.rows.len());
        for (r, s) in x.table.rows.iter().zip(&y.table.rows) {
            assert_eq!((&r.user_id, r.start_time, r.label), (&s.user_id, s.start_time, s.label));
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&r.values), bits(&s.values));
        }
    }
    let mut other = spec.clone();
    other.seed = 1;
    let first = |s: &CohortSpec| s.generate_complete().unwrap()[0].table.rows[0].values[0];
    assert_ne!(first(&spec).to_bits(), first(&other).to_bits());
}

#[test]
fn spec_errors_name_the_key() {
    let mut spec = default_cohort();
    spec.countries[1].instances = 3;
    let err = spec.validate().unwrap_err().to_string();
    assert!(err.contains("countries[DK].instances"), "{err}");
    let mut spec: CohortSpec = default_cohort();
    spec.countries[0].mask = vec!["no_such_feature".into()];
    assert!(spec.validate().unwrap_err().to_string().contains("mask"));
}
