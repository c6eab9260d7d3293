//! The synthetic generator produces a real spurious-correlation failure.

use fairdp::data::{generate_synthetic, SyntheticSpec};
use fairdp::{evaluate_groups, train, MetricKind, Model, Objective, TrainConfig};

#[test]
fn strong_spurious_feature_hurts_the_minority_cell() {
    let spec = SyntheticSpec {
        core_mean: 0.3,
        spurious_mean: 2.5,
        extra_noise_dims: 2,
        ..SyntheticSpec::default()
    };
    let train_ds = generate_synthetic(&spec).unwrap();
    let test = generate_synthetic(&spec.with_sizes([1000; 4], 17)).unwrap();
    let model = Model::logistic(train_ds.dim());
    let sizes = spec.group_sizes;
    let majority = (0..4).max_by_key(|&g| sizes[g]).unwrap();
    let minority = (0..4).min_by_key(|&g| sizes[g]).unwrap();
    for seed in 0..10 {
        let cfg = TrainConfig::new(Objective::Erm, 300, 0.2, 128, seed);
        let (params, _) = train(&model, &train_ds, &cfg).unwrap();
        let acc = evaluate_groups(&model, &params, &test, MetricKind::Accuracy).unwrap().per_group;
        assert!(
            acc[majority] - acc[minority] >= 0.1,
            "seed {seed}: majority {} minority {}",
            acc[majority],
            acc[minority]
        );
    }
}
