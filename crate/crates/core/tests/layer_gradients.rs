use fedfap_core::nn::gradcheck::{check, LayerProbe};
use fedfap_core::nn::{Init, LayerSpec, SeededRng};
use rand::SeedableRng;

fn all_kinds() -> Vec<(LayerSpec, Vec<usize>)> {
    vec![
        (LayerSpec::dense(5, 4), vec![6, 5]),
        (LayerSpec::Dense { inputs: 3, outputs: 2, init: Init::Xavier }, vec![4, 3]),
        (LayerSpec::conv1d(5, 4), vec![6, 5]),
        (LayerSpec::conv1d(3, 4), vec![5, 3, 2]),
        (LayerSpec::batchnorm(4), vec![7, 4]),
        (LayerSpec::batchnorm(3), vec![4, 3, 2]),
        (LayerSpec::dropout(0.3), vec![6, 5]),
        (LayerSpec::Relu, vec![5, 4]),
        (LayerSpec::Sigmoid, vec![5, 4]),
        (LayerSpec::Softmax, vec![5, 3]),
        (LayerSpec::AttentionResidual { dim: 6, hidden: 3 }, vec![5, 6]),
        (LayerSpec::GatedFusion { shared_dim: 4, local_dim: 3, out_dim: 5 }, vec![6, 7]),
    ]
}

#[test]
fn every_layer_kind_matches_central_differences_over_20_seeds() {
    for (spec, shape) in all_kinds() {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let mut rng = SeededRng::seed_from_u64(seed);
            let mut probe = LayerProbe::new(spec.clone(), shape.clone(), &mut rng).unwrap();
            let report = check(&mut probe, usize::MAX, &mut rng).unwrap();
            assert!(
                report.max_relative_error < 1e-4,
                "{} seed {seed}: {:e} at {:?}",
                spec.kind_name(),
                report.max_relative_error,
                report.worst
            );
            worst = worst.max(report.max_relative_error);
        }
        eprintln!("{:<20} max rel err {worst:.3e}", spec.kind_name());
    }
}

// Detach is defined to have zero derivative, so finite differences of its
// identity forward are not the reference; the reference is exact zero.
#[test]
fn detach_gradient_is_exactly_zero_over_20_seeds() {
    for seed in 0..20 {
        let mut rng = SeededRng::seed_from_u64(seed);
        let probe = LayerProbe::new(LayerSpec::Detach, vec![3, 4], &mut rng).unwrap();
        let grad = probe.input_grad().to_vec();
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}
