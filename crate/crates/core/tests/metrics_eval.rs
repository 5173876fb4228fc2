use fedfap_core::fed::{
    derive_seed, handshake, run_federation, Channel, Client, ClientData, FeatureAvailabilityVector, RunConfig,
};
use fedfap_core::metrics::protocol::centralized_split;
use fedfap_core::metrics::{
    accuracy, auroc_ovr, binary_auroc, confusion_matrix, evaluate_federated_with, f1_weighted, EvalOptions, FoldMetrics,
};
use fedfap_core::models::{build_client_model, FedFapVariant, Method, Standardizer};
use fedfap_core::nn::SeededRng;
use fedfap_core::pipeline::{plan_folds, ClientDataset, FoldPlan};
use fedfap_core::sensing::feature_names;
use fedfap_core::Tensor;
use rand::{Rng, SeedableRng};

/// Pairwise Mann–Whitney count: positive-above-negative is 1, ties ½.
fn pairwise_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn random_instance(rng: &mut SeededRng) -> (Tensor, Vec<usize>) {
    let n = rng.random_range(2..=200);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    // Two-decimal scores force plenty of ties.
    let data: Vec<f64> = (0..n * 3).map(|_| (rng.random::<f64>() * 100.0).round() / 100.0).collect();
    (Tensor::matrix(n, 3, data).unwrap(), labels)
}

fn column(t: &Tensor, k: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.row(i)[k]).collect()
}

#[test]
fn macro_auroc_matches_the_pairwise_oracle() {
    let mut rng = SeededRng::seed_from_u64(1);
    for _ in 0..100 {
        let (scores, labels) = random_instance(&mut rng);
        let report = auroc_ovr(&scores, &labels).unwrap();
        let per: Vec<Option<f64>> = (0..3)
            .map(|k| pairwise_auroc(&column(&scores, k), &labels.iter().map(|&y| y == k).collect::<Vec<_>>()))
            .collect();
        for (a, b) in report.per_class.iter().zip(&per) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9),
                (None, None) => {}
                _ => panic!("presence mismatch"),
            }
        }
        let present: Vec<f64> = per.iter().flatten().copied().collect();
        let expect = (present.len() >= 2).then(|| present.iter().sum::<f64>() / present.len() as f64);
        match (report.macro_auroc, expect) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn auroc_is_invariant_under_monotone_maps() {
    let mut rng = SeededRng::seed_from_u64(2);
    for _ in 0..20 {
        let (scores, labels) = random_instance(&mut rng);
        let base = auroc_ovr(&scores, &labels).unwrap();
        for map in [|v: f64| v.exp(), |v: f64| 3.0 * v - 7.0] {
            let mapped = Tensor::matrix(scores.rows(), 3, scores.data().iter().map(|&v| map(v)).collect()).unwrap();
            let other = auroc_ovr(&mapped, &labels).unwrap();
            for (a, b) in base.per_class.iter().zip(&other.per_class) {
                if let (Some(a), Some(b)) = (a, b) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn flipping_the_positive_class_gives_the_complement() {
    let mut rng = SeededRng::seed_from_u64(3);
    for _ in 0..20 {
        let (scores, labels) = random_instance(&mut rng);
        for k in 0..3 {
            let s = column(&scores, k);
            let pos: Vec<bool> = labels.iter().map(|&y| y == k).collect();
            let neg: Vec<bool> = pos.iter().map(|p| !p).collect();
            if let (Some(a), Some(b)) = (binary_auroc(&s, &pos), binary_auroc(&s, &neg)) {
                assert!((a + b - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn auroc_edge_cases() {
    let labels = vec![0, 1, 2, 0, 1, 2];
    let perfect: Vec<f64> = labels.iter().flat_map(|&y| (0..3).map(move |k| if k == y { 0.8 } else { 0.1 })).collect();
    let r = auroc_ovr(&Tensor::matrix(6, 3, perfect).unwrap(), &labels).unwrap();
    assert_eq!(r.macro_auroc, Some(1.0));
    let flat = auroc_ovr(&Tensor::filled(vec![6, 3], 1.0 / 3.0), &labels).unwrap();
    assert!(flat.per_class.iter().all(|a| *a == Some(0.5)));
    let single = auroc_ovr(&Tensor::filled(vec![4, 3], 0.2), &[1, 1, 1, 1]).unwrap();
    assert_eq!(single.macro_auroc, None);
    assert_eq!(single.absent_classes, vec![0, 2]);
}

#[test]
fn weighted_f1_matches_hand_confusion_matrices() {
    // F1_c = 2TP / (2TP + FP + FN), weighted by support / n.
    // Fixture 1: F1 = (0.75, 0.5, 0.5), supports (4, 2, 2) → 0.625.
    let labels = [0, 0, 0, 0, 1, 1, 2, 2];
    let preds = [0, 0, 0, 1, 1, 2, 2, 0];
    assert_eq!(confusion_matrix(&preds, &labels, 3).unwrap(), vec![vec![3, 1, 0], vec![0, 1, 1], vec![1, 0, 1]]);
    assert_eq!(f1_weighted(&preds, &labels).unwrap(), 0.625);
    // Fixture 2: class 2 is never hit; F1 = (0.25, 0.5, 0) → 0.25.
    let preds = [2, 2, 0, 1, 0, 1, 0, 0];
    assert_eq!(f1_weighted(&preds, &labels).unwrap(), 0.25);
    // Fixture 3: one class, all correct.
    assert_eq!(f1_weighted(&[1, 1, 1], &[1, 1, 1]).unwrap(), 1.0);
    assert!(f1_weighted(&[], &[]).is_err());
}

#[test]
fn accuracy_is_the_confusion_trace_over_n() {
    let mut rng = SeededRng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.random_range(1..100);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let cm = confusion_matrix(&preds, &labels, 3).unwrap();
        let trace = (0..3).map(|k| cm[k][k]).sum::<u64>() as f64;
        assert!((accuracy(&preds, &labels).unwrap() - trace / n as f64).abs() <= 1e-12);
        for (k, row) in cm.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>() as usize, labels.iter().filter(|&&y| y == k).count());
        }
    }
}

fn tiny_client(code: &str, names: &[&str], participants: usize, per: usize, seed: u64) -> ClientDataset {
    let mut rng = SeededRng::seed_from_u64(seed);
    let n = participants * per;
    let y: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 3).collect();
    let x: Vec<f64> = y.iter().flat_map(|&c| (0..names.len()).map(move |j| (c * (j + 1)) as f64)).collect();
    let x = x.into_iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    let pids = (0..n).map(|i| format!("{code}_{}", i / per)).collect();
    ClientDataset::new(code, x, y, pids, names.iter().map(|s| s.to_string()).collect()).unwrap()
}

#[test]
fn centralized_split_counts_and_columns() {
    let all = feature_names();
    let a = tiny_client("AA", &[all[0], all[1], all[2]], 5, 4, 0);
    let b = tiny_client("BB", &[all[1], all[2], all[3]], 6, 3, 1);
    let plans: Vec<_> = [&a, &b].iter().map(|c| plan_folds(&c.participant_ids, &c.y, 5, 0).unwrap()).collect();
    let clients = vec![a.clone(), b.clone()];
    for fold in 0..5 {
        let split = centralized_split("AA", &clients, &plans, fold).unwrap();
        let fold_rows = a.participant_ids.iter().filter(|p| plans[0].fold_of(p) == Some(fold)).count();
        assert_eq!(split.train_y.len(), b.n_rows() + a.n_rows() - fold_rows);
        assert_eq!(split.test_y.len(), fold_rows);
        assert_eq!(split.features, vec![1, 2]);
        assert_eq!(split.train_x.row_width(), 2);
    }
    assert!(centralized_split("ZZ", &clients, &plans, 0).is_err());
}

/// Drives one fold by hand: handshake, per-client standardization on training rows,
/// federation, then metrics on each client's fold rows.
fn direct_fold(
    cfg: &RunConfig,
    method: &Method,
    clients: &[ClientDataset],
    plans: &[FoldPlan],
    fold: usize,
) -> Vec<(String, FoldMetrics)> {
    let vectors: Vec<_> = clients
        .iter()
        .map(|c| FeatureAvailabilityVector::new(c.country_code.clone(), c.availability_mask()).unwrap())
        .collect();
    let hs = handshake(&vectors).unwrap();
    let seed = derive_seed(cfg.seed, &[fold as u64]);
    let mut fed = Vec::new();
    let mut tests = Vec::new();
    for (i, (c, plan)) in clients.iter().zip(plans).enumerate() {
        let (train, test) = plan.split(&c.participant_ids, fold).unwrap();
        let pair = |cols: &[usize]| {
            let a = c.select(&train, cols).unwrap();
            let st = Standardizer::fit(&a);
            (st.apply(&a), st.apply(&c.select(&test, cols).unwrap()))
        };
        let (xs, xs_test) = pair(&hs.shared.0);
        let (xl, xl_test) = pair(hs.local_for(&c.country_code).unwrap());
        let data = ClientData::new(xs, Some(xl), c.labels(&train)).unwrap();
        tests.push(ClientData::new(xs_test, Some(xl_test), c.labels(&test)).unwrap());
        let model = build_client_model(method, data.shared_dim(), data.local_dim(), seed, i).unwrap();
        fed.push(Client { id: c.country_code.clone(), data, model });
    }
    run_federation(&RunConfig { seed, ..*cfg }, &mut fed, &mut Channel::new(), |_, _| Ok(())).unwrap();
    fed.iter_mut()
        .zip(&tests)
        .map(|(c, t)| {
            (c.id.clone(), FoldMetrics::compute(fold, &c.model.predict_proba(t).unwrap(), &t.labels).unwrap())
        })
        .collect()
}

#[test]
fn single_fold_report_equals_direct_metrics() {
    let all = feature_names();
    let clients = vec![
        tiny_client("AA", &[all[0], all[1], all[2]], 5, 6, 2),
        tiny_client("BB", &[all[1], all[2], all[4]], 5, 6, 3),
    ];
    let plans: Vec<_> = clients.iter().map(|c| plan_folds(&c.participant_ids, &c.y, 5, 1).unwrap()).collect();
    let cfg = RunConfig { local_epochs: 1, rounds: 2, batch_size: 8, seed: 5, ..RunConfig::default() };
    let opts = EvalOptions { folds: Some(vec![2]), ..EvalOptions::default() };
    let method = Method::FedFap(FedFapVariant::Feedforward);
    let eval = evaluate_federated_with(&cfg, &method, &clients, &plans, &opts).unwrap();
    let report = &eval.reports[0].1;
    for (code, direct) in direct_fold(&cfg, &method, &clients, &plans, 2) {
        let c = report.country(&code).unwrap();
        assert_eq!(c.folds, vec![direct.clone()]);
        assert_eq!(c.macro_auroc, direct.macro_auroc);
    }
    let other = evaluate_federated_with(&RunConfig { seed: 6, ..cfg }, &method, &clients, &plans, &opts).unwrap();
    let other = &other.reports[0].1;
    let codes =
        |r: &fedfap_core::metrics::MetricsReport| r.countries.iter().map(|c| c.country.clone()).collect::<Vec<_>>();
    assert_eq!(codes(other), codes(report));
    assert_ne!(other.seed, report.seed);
}
