//! Softmax classifier with at most one hidden layer, hand-written
//! backpropagation and SGD with momentum and coupled weight decay.
//!
//! Parameter layout (flat, row-major):
//! - linear (`hidden == 0`): `W [C x d]`, `b [C]`
//! - hidden: `W1 [h x d]`, `b1 [h]`, `W2 [C x h]`, `b2 [C]`

use rand::{Rng, SeedableRng};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::util::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden width; 0 selects the linear model.
    pub hidden: usize,
    pub num_classes: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: 0,
            num_classes,
            activation: Activation::Tanh,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden, self.num_classes);
        if h == 0 {
            c * d + c
        } else {
            h * d + h + c * h + c
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            values: vec![0.0; arch.param_count()],
            arch,
        }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Shape {
                expected: arch.param_count(),
                actual: values.len(),
            });
        }
        Ok(Self { arch, values })
    }

    /// Each layer uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases included.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = StreamRng::seed_from_u64(seed);
        let (d, h, c) = (arch.input_dim, arch.hidden, arch.num_classes);
        let layers: Vec<(usize, usize)> = if h == 0 {
            vec![(c * d + c, d)]
        } else {
            vec![(h * d + h, d), (c * h + c, h)]
        };
        let mut values = Vec::with_capacity(arch.param_count());
        for (count, fan_in) in layers {
            let bound = 1.0 / (fan_in as f64).sqrt();
            values.extend((0..count).map(|_| rng.random_range(-bound..=bound)));
        }
        Self { arch, values }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Shape {
                expected: self.arch.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations (pre, post) and logits.
    fn activations(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let Architecture {
            input_dim: d,
            hidden: h,
            num_classes: c,
            activation,
        } = self.arch;
        let v = &self.values;
        if h == 0 {
            let (w, b) = v.split_at(c * d);
            let logits = (0..c)
                .map(|j| dot(&w[j * d..(j + 1) * d], x) + b[j])
                .collect();
            return (Vec::new(), Vec::new(), logits);
        }
        let (w1, rest) = v.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        let pre: Vec<f64> = (0..h)
            .map(|u| dot(&w1[u * d..(u + 1) * d], x) + b1[u])
            .collect();
        let post: Vec<f64> = pre.iter().map(|&z| activation.apply(z)).collect();
        let logits = (0..c)
            .map(|j| dot(&w2[j * h..(j + 1) * h], &post) + b2[j])
            .collect();
        (pre, post, logits)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).2)
    }

    /// Accumulate `scale * d CE(label, softmax(logits / temperature)) / d params`
    /// into `grad`; returns the unscaled cross-entropy.
    pub fn accumulate_ce_grad(
        &self,
        x: &[f64],
        label: usize,
        temperature: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_input(x)?;
        if grad.len() != self.values.len() {
            return Err(Error::Shape {
                expected: self.values.len(),
                actual: grad.len(),
            });
        }
        let Architecture {
            input_dim: d,
            hidden: h,
            num_classes: c,
            activation,
        } = self.arch;
        if label >= c {
            return Err(Error::Config(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let (pre, post, logits) = self.activations(x);
        let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
        let lse = log_sum_exp(&scaled);
        let loss = lse - scaled[label];
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        if scale == 0.0 {
            return Ok(loss);
        }
        let delta: Vec<f64> = scaled
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let p = (s - lse).exp();
                let target = if j == label { 1.0 } else { 0.0 };
                scale * (p - target) / temperature
            })
            .collect();

        if h == 0 {
            let (gw, gb) = grad.split_at_mut(c * d);
            for j in 0..c {
                axpy(delta[j], x, &mut gw[j * d..(j + 1) * d]);
                gb[j] += delta[j];
            }
            return Ok(loss);
        }

        let w2 = &self.values[h * d + h..h * d + h + c * h];
        let (gw1, rest) = grad.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(c * h);
        let mut back = vec![0.0; h];
        for j in 0..c {
            axpy(delta[j], &post, &mut gw2[j * h..(j + 1) * h]);
            gb2[j] += delta[j];
            axpy(delta[j], &w2[j * h..(j + 1) * h], &mut back);
        }
        for u in 0..h {
            let g = back[u] * activation.derivative(pre[u]);
            if g != 0.0 {
                axpy(g, x, &mut gw1[u * d..(u + 1) * d]);
                gb1[u] += g;
            }
        }
        Ok(loss)
    }

    /// Flat little-endian checkpoint: 16-byte header then `f64` values.
    ///
    /// Header: magic `FNLM`, version `u8`, activation `u8`, classes `u16`,
    /// input dim `u32`, hidden width `u32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.values.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.push(match self.arch.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        out.extend_from_slice(&(self.arch.num_classes as u16).to_le_bytes());
        out.extend_from_slice(&(self.arch.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.arch.hidden as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: "checkpoint shorter than its 16-byte header".into(),
            });
        }
        if &bytes[..4] != BLOB_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        if bytes[4] != BLOB_VERSION {
            return Err(Error::Parse {
                offset: 4,
                message: format!("unsupported checkpoint version {}", bytes[4]),
            });
        }
        let activation = match bytes[5] {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            other => {
                return Err(Error::Parse {
                    offset: 5,
                    message: format!("unknown activation tag {other}"),
                })
            }
        };
        let arch = Architecture {
            num_classes: u16::from_le_bytes([bytes[6], bytes[7]]) as usize,
            input_dim: u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
            hidden: u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize,
            activation,
        };
        let body = &bytes[16..];
        if body.len() != 8 * arch.param_count() {
            return Err(Error::Parse {
                offset: 16,
                message: format!(
                    "expected {} parameter bytes, found {}",
                    8 * arch.param_count(),
                    body.len()
                ),
            });
        }
        let values = body
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
            .collect();
        Ok(Self { arch, values })
    }
}

const BLOB_MAGIC: &[u8; 4] = b"FNLM";
const BLOB_VERSION: u8 = 1;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class probabilities `softmax(logits(x) / temperature)`.
pub fn forward(params: &ModelParams, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    Ok(softmax(&params.logits(x)?, temperature))
}

/// One training example with a per-sample loss weight.
#[derive(Clone, Copy, Debug)]
pub struct WeightedExample<'a> {
    pub x: &'a [f64],
    pub label: usize,
    pub weight: f64,
}

/// Mean weighted cross-entropy over the batch and its gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[WeightedExample<'_>],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        if ex.weight < 0.0 {
            return Err(Error::Domain(format!(
                "negative sample weight {}",
                ex.weight
            )));
        }
        let ce =
            params.accumulate_ce_grad(ex.x, ex.label, temperature, ex.weight * inv, &mut grad)?;
        loss += ex.weight * ce * inv;
    }
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.5,
            weight_decay: 1e-4,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            velocity: vec![0.0; params.len()],
        }
    }
}

/// `v <- momentum * v + grad + wd * params; params <- params - lr * v`.
pub fn sgd_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    grad: &[f64],
    cfg: &OptimizerConfig,
) -> Result<()> {
    if grad.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::Shape {
            expected: params.len(),
            actual: if grad.len() != params.len() {
                grad.len()
            } else {
                state.velocity.len()
            },
        });
    }
    for ((p, v), g) in params
        .values
        .iter_mut()
        .zip(state.velocity.iter_mut())
        .zip(grad)
    {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
        *p -= cfg.learning_rate * *v;
    }
    Ok(())
}

pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    Ok(argmax(&forward(params, x, 1.0)?))
}

/// Fraction of samples whose arg-max prediction equals the true label.
pub fn evaluate_accuracy(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (i, &y) in dataset.true_labels().iter().enumerate() {
        if predict(params, dataset.row(i))? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_with_logits(logits_bias: &[f64], d: usize) -> ModelParams {
        let c = logits_bias.len();
        let mut p = ModelParams::zeros(Architecture::linear(d, c));
        p.values_mut()[c * d..].copy_from_slice(logits_bias);
        p
    }

    #[test]
    fn zero_model_is_uniform() {
        let p = ModelParams::zeros(Architecture::linear(3, 5));
        for tau in [0.1, 0.5, 1.0, 3.0] {
            let probs = forward(&p, &[0.3, -1.0, 2.0], tau).unwrap();
            assert!(probs.iter().all(|&q| (q - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn temperature_sharpens() {
        let p = linear_with_logits(&[2.0, 0.0], 2);
        let probs = forward(&p, &[0.0, 0.0], 0.5).unwrap();
        let e4 = 4f64.exp();
        assert!((probs[0] - e4 / (e4 + 1.0)).abs() < 1e-15);
        assert!((probs[0] - 0.98201).abs() < 5e-6);
        assert!((probs[1] - 0.01799).abs() < 5e-6);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = ModelParams::zeros(Architecture::linear(3, 2));
        assert!(matches!(forward(&p, &[1.0], 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn uniform_single_sample_loss_is_ln_c() {
        let p = ModelParams::zeros(Architecture::linear(2, 4));
        let x = [0.5, -0.5];
        let (loss, _) = loss_and_grad(
            &p,
            &[WeightedExample {
                x: &x,
                label: 2,
                weight: 1.0,
            }],
            1.0,
        )
        .unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn confident_model_has_zero_loss_and_grad() {
        let p = linear_with_logits(&[800.0, 0.0], 1);
        let x = [0.0];
        let (loss, grad) = loss_and_grad(
            &p,
            &[WeightedExample {
                x: &x,
                label: 0,
                weight: 1.0,
            }],
            1.0,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_weight_contributes_nothing() {
        let p = ModelParams::init(
            Architecture {
                input_dim: 3,
                hidden: 4,
                num_classes: 3,
                activation: Activation::Tanh,
            },
            1,
        );
        let (a, b) = ([0.1, 0.2, 0.3], [1.0, -2.0, 0.5]);
        let one = [WeightedExample {
            x: &a,
            label: 1,
            weight: 1.0,
        }];
        let two = [
            one[0],
            WeightedExample {
                x: &b,
                label: 2,
                weight: 0.0,
            },
        ];
        let (l1, g1) = loss_and_grad(&p, &one, 1.0).unwrap();
        let (l2, g2) = loss_and_grad(&p, &two, 1.0).unwrap();
        // the mean halves but the zero-weight sample adds nothing
        assert!((l2 - l1 / 2.0).abs() < 1e-15);
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x / 2.0 - y).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_zero_grad_is_fixed_point() {
        let mut p = ModelParams::init(Architecture::linear(2, 3), 4);
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let zero = vec![0.0; p.len()];
        sgd_step(&mut p, &mut s, &zero, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut p = ModelParams::init(Architecture::linear(2, 2), 4);
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let g: Vec<f64> = (0..p.len()).map(|i| i as f64 * 0.25 - 0.5).collect();
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 1,
        };
        sgd_step(&mut p, &mut s, &g, &cfg).unwrap();
        for i in 0..p.len() {
            assert_eq!(p.values()[i], before.values()[i] - 0.1 * g[i]);
        }
    }

    #[test]
    fn momentum_two_steps_displace_two_and_a_half_g() {
        let mut p = ModelParams::zeros(Architecture::linear(1, 2));
        let mut s = OptimizerState::new(&p);
        let g = vec![1.0, -2.0, 0.5, 4.0];
        let cfg = OptimizerConfig {
            learning_rate: 1.0,
            momentum: 0.5,
            weight_decay: 0.0,
            batch_size: 1,
        };
        sgd_step(&mut p, &mut s, &g, &cfg).unwrap();
        sgd_step(&mut p, &mut s, &g, &cfg).unwrap();
        for (pv, gv) in p.values().iter().zip(&g) {
            assert_eq!(*pv, -2.5 * gv);
        }
    }

    #[test]
    fn uniform_model_accuracy_follows_tie_rule() {
        let p = ModelParams::zeros(Architecture::linear(2, 2));
        let ds = Dataset::new(vec![0.0; 2 * 10], 2, vec![0, 0, 0, 1, 1, 1, 1, 1, 1, 1], 2).unwrap();
        assert!((evaluate_accuracy(&p, &ds).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn nearest_mean_model_is_perfect_on_zero_spread() {
        let ds = crate::data::generate_synthetic(4, 2, 5, 0.0, 0).unwrap();
        // logits = 2 mu_j . x - |mu_j|^2, with |mu_j| = 1
        let mut p = ModelParams::zeros(Architecture::linear(2, 4));
        for j in 0..4 {
            let a = 2.0 * std::f64::consts::PI * j as f64 / 4.0;
            p.values_mut()[j * 2] = 2.0 * a.cos();
            p.values_mut()[j * 2 + 1] = 2.0 * a.sin();
            p.values_mut()[8 + j] = -1.0;
        }
        assert_eq!(evaluate_accuracy(&p, &ds).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_matches_enumeration() {
        let arch = Architecture {
            input_dim: 3,
            hidden: 5,
            num_classes: 3,
            activation: Activation::Relu,
        };
        let p = ModelParams::init(arch, 99);
        let ds = crate::data::generate_synthetic(3, 3, 4, 1.0, 5).unwrap();
        let ds = Dataset::new(
            ds.features()[..30].to_vec(),
            3,
            ds.true_labels()[..10].to_vec(),
            3,
        )
        .unwrap();
        let mut hits = 0;
        for i in 0..10 {
            let l = p.logits(ds.row(i)).unwrap();
            let mut best = 0;
            for j in 1..3 {
                if l[j] > l[best] {
                    best = j;
                }
            }
            hits += usize::from(best == ds.true_labels()[i]);
        }
        assert_eq!(evaluate_accuracy(&p, &ds).unwrap(), hits as f64 / 10.0);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let p = ModelParams::init(
            Architecture {
                input_dim: 4,
                hidden: 3,
                num_classes: 2,
                activation: Activation::Relu,
            },
            1,
        );
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 16 + 8 * p.len());
        assert_eq!(ModelParams::from_bytes(&bytes).unwrap(), p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad).is_err());
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one_and_argmax_ignores_temperature(
            seed: u64, hidden in 0usize..6, tau in 0.05f64..5.0,
            x in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let arch = Architecture { input_dim: 4, hidden, num_classes: 5, activation: Activation::Tanh };
            let p = ModelParams::init(arch, seed);
            let a = forward(&p, &x, tau).unwrap();
            let b = forward(&p, &x, 1.0).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.iter().all(|&q| q > 0.0));
            prop_assert_eq!(argmax(&a), argmax(&b));
        }

        #[test]
        fn unit_weights_match_plain_mean_ce(seed: u64, labels in proptest::collection::vec(0usize..3, 1..8)) {
            let p = ModelParams::init(Architecture { input_dim: 2, hidden: 3, num_classes: 3, activation: Activation::Tanh }, seed);
            let xs: Vec<[f64; 2]> = (0..labels.len()).map(|i| [i as f64 * 0.3 - 1.0, 0.7 - i as f64 * 0.2]).collect();
            let batch: Vec<_> = xs.iter().zip(&labels).map(|(x, &y)| WeightedExample { x, label: y, weight: 1.0 }).collect();
            let (loss, _) = loss_and_grad(&p, &batch, 1.0).unwrap();
            let plain: f64 = xs.iter().zip(&labels)
                .map(|(x, &y)| -forward(&p, x, 1.0).unwrap()[y].ln())
                .sum::<f64>() / labels.len() as f64;
            prop_assert!((loss - plain).abs() < 1e-12);
        }

        #[test]
        fn sgd_all_zero_is_identity(n in 1usize..5, momentum in 0.0f64..0.99, lr in 0.0f64..1.0) {
            let mut p = ModelParams::zeros(Architecture::linear(n, 2));
            let mut s = OptimizerState::new(&p);
            let cfg = OptimizerConfig { learning_rate: lr, momentum, weight_decay: 1e-4, batch_size: 1 };
            let zero = vec![0.0; p.len()];
        sgd_step(&mut p, &mut s, &zero, &cfg).unwrap();
            prop_assert!(p.values().iter().all(|&v| v == 0.0));
            prop_assert!(s.velocity.iter().all(|&v| v == 0.0));
        }
    }
}
