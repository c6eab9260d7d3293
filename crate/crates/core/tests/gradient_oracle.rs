//! Analytic gradients against central finite differences.

use fairdp::{Example, Model, ModelParams, RngStream, TaskKind};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-5;
const PROBES: usize = 100;

fn probe(model: Model, rng: &mut RngStream) {
    let params = ModelParams::new(
        model,
        (0..model.num_params()).map(|_| rng.uniform_in(-1.5, 1.5)).collect(),
    )
    .unwrap();
    let features: Vec<f64> = (0..model.input_dim).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    let label = match model.task {
        TaskKind::Classification => f64::from(u8::from(rng.bernoulli(0.5))),
        TaskKind::Regression => rng.uniform_in(-2.0, 2.0),
    };
    let ex = Example::new(features, 0, label);
    let analytic = model.grad(&params, &ex).unwrap();
    for j in 0..params.values.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.values[j] += H;
        minus.values[j] -= H;
        let fd = (model.loss(&plus, &ex).unwrap() - model.loss(&minus, &ex).unwrap()) / (2.0 * H);
        let scale = analytic[j].abs().max(fd.abs()).max(1e-3);
        assert!(
            (fd - analytic[j]).abs() <= REL_TOL * scale,
            "{:?} coordinate {j}: finite difference {fd} vs analytic {}",
            model.family,
            analytic[j]
        );
    }
}

#[test]
fn linear_regressor_matches_finite_differences() {
    let mut rng = RngStream::new(1, "fd/linear");
    for _ in 0..PROBES {
        probe(Model::linear(5), &mut rng);
    }
}

#[test]
fn logistic_classifier_matches_finite_differences() {
    let mut rng = RngStream::new(2, "fd/logistic");
    for _ in 0..PROBES {
        probe(Model::logistic(5), &mut rng);
    }
}

#[test]
fn mlp_matches_finite_differences_for_both_heads() {
    let mut rng = RngStream::new(3, "fd/mlp");
    for _ in 0..PROBES {
        probe(Model::mlp(4, 6, TaskKind::Classification), &mut rng);
        probe(Model::mlp(4, 6, TaskKind::Regression), &mut rng);
    }
}
