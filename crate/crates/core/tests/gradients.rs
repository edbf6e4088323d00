use fedakd_core::data_gen::Dataset;
use fedakd_core::rng::seeded;
use fedakd_core::{Classifier, ModelKind};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;
const REL: f64 = 1e-5;

fn random_data(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let features = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(dim, classes, features, labels).unwrap()
}

fn random_model(kind: ModelKind, dim: usize, classes: usize, tau: f64, seed: u64) -> Classifier {
    let mut rng = seeded(seed);
    let n = Classifier::zeros(kind, dim, classes).params().len();
    let params = (0..n)
        .map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Classifier::from_params(kind, dim, classes, params, tau).unwrap()
}

fn central_difference(model: &Classifier, loss: impl Fn(&Classifier) -> f64) -> Vec<f64> {
    (0..model.params().len())
        .map(|i| {
            let mut up = model.clone();
            up.params_mut()[i] += H;
            let mut down = model.clone();
            down.params_mut()[i] -= H;
            (loss(&up) - loss(&down)) / (2.0 * H)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64]) {
    let scale = numeric
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-3);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert!(
            (a - n).abs() <= REL * scale,
            "param {i}: analytic {a} numeric {n}"
        );
    }
}

fn kinds() -> [ModelKind; 2] {
    [ModelKind::Linear, ModelKind::Mlp1 { hidden: 5 }]
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    for (s, kind) in kinds().into_iter().enumerate() {
        for tau in [1.0, 2.5] {
            let d = random_data(12, 3, 4, 10 + s as u64);
            let m = random_model(kind, 3, 4, tau, 20 + s as u64);
            let g = m.grad_ce(&d).unwrap();
            let fd = central_difference(&m, |w| w.ce_loss(&d).unwrap());
            assert_close(g.as_slice(), &fd);
        }
    }
}

#[test]
fn distillation_gradient_matches_finite_differences() {
    for (s, kind) in kinds().into_iter().enumerate() {
        for tau in [1.0, 0.7] {
            let d = random_data(10, 2, 3, 30 + s as u64);
            let m = random_model(kind, 2, 3, tau, 40 + s as u64);
            let teacher = random_model(ModelKind::Mlp1 { hidden: 3 }, 2, 3, tau, 50 + s as u64);
            let g = m.grad_kd(&teacher, &d).unwrap();
            let fd = central_difference(&m, |w| w.kd_loss(&teacher, &d).unwrap());
            assert_close(g.as_slice(), &fd);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_for_random_problems(seed in 0u64..10_000, mlp in any::<bool>(), classes in 2usize..5) {
        let kind = if mlp { ModelKind::Mlp1 { hidden: 4 } } else { ModelKind::Linear };
        let d = random_data(8, 3, classes, seed);
        let m = random_model(kind, 3, classes, 1.0, seed + 1);
        let t = random_model(ModelKind::Linear, 3, classes, 1.0, seed + 2);
        assert_close(m.grad_ce(&d).unwrap().as_slice(), &central_difference(&m, |w| w.ce_loss(&d).unwrap()));
        assert_close(m.grad_kd(&t, &d).unwrap().as_slice(), &central_difference(&m, |w| w.kd_loss(&t, &d).unwrap()));
    }
}
