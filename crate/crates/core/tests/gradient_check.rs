//! Analytic gradients against central finite differences.

use fednoil::localtrain::{combined_loss_and_grad, LabeledExample, SslConfig, UnlabeledExample};
use fednoil::model::{loss_and_grad, WeightedExample};
use fednoil::{Activation, Architecture, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_params(arch: Architecture, rng: &mut ChaCha8Rng) -> ModelParams {
    let v = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModelParams::from_values(arch, v).unwrap()
}

fn random_x(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn max_rel_err(params: &ModelParams, analytic: &[f64], loss: impl Fn(&ModelParams) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[j] += H;
        let mut minus = params.clone();
        minus.values_mut()[j] -= H;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
        worst = worst.max(rel_err(analytic[j], numeric));
    }
    worst
}

fn archs() -> [Architecture; 2] {
    [
        Architecture::linear(5, 3),
        Architecture {
            input_dim: 5,
            hidden: 6,
            num_classes: 3,
            activation: Activation::Tanh,
        },
    ]
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for arch in archs() {
        for trial in 0..50 {
            let params = random_params(arch, &mut rng);
            let xs: Vec<Vec<f64>> = (0..4).map(|_| random_x(arch.input_dim, &mut rng)).collect();
            let batch: Vec<WeightedExample> = xs
                .iter()
                .map(|x| WeightedExample {
                    x,
                    label: rng.random_range(0..arch.num_classes),
                    weight: rng.random_range(0.1..1.0),
                })
                .collect();
            let tau = if trial % 2 == 0 { 1.0 } else { 0.5 };
            let (_, grad) = loss_and_grad(&params, &batch, tau).unwrap();
            let err = max_rel_err(&params, &grad, |p| loss_and_grad(p, &batch, tau).unwrap().0);
            assert!(err < TOL, "arch {arch:?} trial {trial}: rel err {err}");
        }
    }
}

#[test]
fn combined_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for arch in archs() {
        for trial in 0..50 {
            let local = random_params(arch, &mut rng);
            // a sharp global model so some pseudo-labels pass the gate
            let mut global = random_params(arch, &mut rng);
            global.values_mut().iter_mut().for_each(|v| *v *= 4.0);
            let labeled: Vec<LabeledExample> = (0..3)
                .map(|_| LabeledExample {
                    x: random_x(arch.input_dim, &mut rng),
                    label: rng.random_range(0..arch.num_classes),
                })
                .collect();
            let unlabeled: Vec<UnlabeledExample> = (0..5)
                .map(|_| {
                    let x = random_x(arch.input_dim, &mut rng);
                    UnlabeledExample {
                        weak_views: vec![x.clone()],
                        strong: x.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect(),
                    }
                })
                .collect();
            let cfg = SslConfig {
                threshold: if trial % 2 == 0 { 0.6 } else { 0.95 },
                lambda_u: 0.7,
                ..SslConfig::default()
            };
            let out = combined_loss_and_grad(&local, &global, &labeled, &unlabeled, &cfg).unwrap();
            let err = max_rel_err(&local, &out.grad, |p| {
                combined_loss_and_grad(p, &global, &labeled, &unlabeled, &cfg).unwrap().total
            });
            assert!(err < TOL, "arch {arch:?} trial {trial}: rel err {err}");
        }
    }
}
