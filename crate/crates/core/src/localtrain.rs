//! One client's local update for one round.
//!
//! Every epoch the client draws a labeled subset `D_x` by the global
//! model's confidence in each given label and treats the rest as unlabeled
//! data `D_u`. Labeled samples contribute cross-entropy on their given
//! labels; unlabeled samples contribute cross-entropy against the global
//! model's pseudo-label when its confidence clears the threshold.
//!
//! Mini-batches of `D_x` and `D_u` are paired one to one. An epoch runs
//! `max(ceil(|D_x|/B), ceil(|D_u|/B))` steps, the shorter list cycling,
//! and accounts `ceil(|D_x|/B) + ceil(|D_u|/B)` training batches.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{forward, sgd_step, ModelParams, OptimizerConfig, OptimizerState};
use crate::sampling::{confidence_scores, local_data_probabilities, sample_labeled_subset};
use crate::util::{argmax, round_count};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SslConfig {
    /// Pseudo-label confidence threshold.
    pub threshold: f64,
    /// Weight of the unlabeled loss.
    pub lambda_u: f64,
    pub weak_noise_std: f64,
    pub strong_noise_std: f64,
    pub strong_mask_fraction: f64,
    /// Weak views averaged before taking the pseudo-label.
    pub weak_views: usize,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            threshold: 0.95,
            lambda_u: 1.0,
            weak_noise_std: 0.05,
            strong_noise_std: 0.2,
            strong_mask_fraction: 0.2,
            weak_views: 1,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "ssl threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.lambda_u >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_u must be >= 0, got {}",
                self.lambda_u
            )));
        }
        if !(self.weak_noise_std >= 0.0) || !(self.strong_noise_std >= self.weak_noise_std) {
            return Err(Error::Config(format!(
                "need 0 <= weak_noise_std <= strong_noise_std, got {} and {}",
                self.weak_noise_std, self.strong_noise_std
            )));
        }
        if !(0.0..1.0).contains(&self.strong_mask_fraction) {
            return Err(Error::Config(format!(
                "strong_mask_fraction must be in [0, 1), got {}",
                self.strong_mask_fraction
            )));
        }
        if self.weak_views == 0 {
            return Err(Error::Config("weak_views must be at least 1".into()));
        }
        Ok(())
    }
}

/// `x + N(0, std^2 I)`. A zero std returns `x` without consuming randomness.
pub fn weak_augment<R: Rng + ?Sized>(x: &[f64], std: f64, rng: &mut R) -> Vec<f64> {
    if std == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + std * z
        })
        .collect()
}

/// Gaussian jitter, then `round(mask_fraction * d)` coordinates zeroed.
pub fn strong_augment<R: Rng + ?Sized>(
    x: &[f64],
    std: f64,
    mask_fraction: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = weak_augment(x, std, rng);
    let masked = round_count(mask_fraction * x.len() as f64).min(x.len());
    if masked > 0 {
        for i in rand::seq::index::sample(rng, x.len(), masked) {
            out[i] = 0.0;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabel {
    pub label: usize,
    pub confidence: f64,
    pub accepted: bool,
}

/// Arg-max of `probs` (ties to the smallest class), gated by `threshold`.
pub fn gate(probs: &[f64], threshold: f64) -> PseudoLabel {
    let label = argmax(probs);
    PseudoLabel {
        label,
        confidence: probs[label],
        accepted: probs[label] >= threshold,
    }
}

/// Pseudo-label from the global model averaged over weak views (no temperature).
pub fn pseudo_label_from_views(
    global: &ModelParams,
    views: &[Vec<f64>],
    threshold: f64,
) -> Result<PseudoLabel> {
    let c = global.arch().num_classes;
    let mut avg = vec![0.0; c];
    for v in views {
        for (a, q) in avg.iter_mut().zip(forward(global, v, 1.0)?) {
            *a += q;
        }
    }
    let inv = 1.0 / views.len().max(1) as f64;
    avg.iter_mut().for_each(|a| *a *= inv);
    Ok(gate(&avg, threshold))
}

pub fn pseudo_label<R: Rng + ?Sized>(
    global: &ModelParams,
    x: &[f64],
    cfg: &SslConfig,
    rng: &mut R,
) -> Result<PseudoLabel> {
    let views: Vec<Vec<f64>> = (0..cfg.weak_views)
        .map(|_| weak_augment(x, cfg.weak_noise_std, rng))
        .collect();
    pseudo_label_from_views(global, &views, cfg.threshold)
}

/// A labeled sample after weak augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub label: usize,
}

/// An unlabeled sample: weak views for the pseudo-label, one strong view
/// for the local model's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledExample {
    pub weak_views: Vec<Vec<f64>>,
    pub strong: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub labeled: f64,
    pub unlabeled: f64,
    pub accepted: usize,
    pub grad: Vec<f64>,
}

/// `L_x + lambda_u * L_u` and its gradient with respect to `local` only.
/// The pseudo-label gate is a constant mask computed on `global`.
pub fn combined_loss_and_grad(
    local: &ModelParams,
    global: &ModelParams,
    labeled: &[LabeledExample],
    unlabeled: &[UnlabeledExample],
    cfg: &SslConfig,
) -> Result<CombinedLoss> {
    if labeled.is_empty() {
        return Err(Error::Domain("labeled batch must not be empty".into()));
    }
    let mut grad = vec![0.0; local.len()];
    let inv_x = 1.0 / labeled.len() as f64;
    let mut loss_x = 0.0;
    for ex in labeled {
        loss_x += inv_x * local.accumulate_ce_grad(&ex.x, ex.label, 1.0, inv_x, &mut grad)?;
    }
    let mut loss_u = 0.0;
    let mut accepted = 0;
    if !unlabeled.is_empty() {
        let inv_u = 1.0 / unlabeled.len() as f64;
        for ex in unlabeled {
            let pl = pseudo_label_from_views(global, &ex.weak_views, cfg.threshold)?;
            if !pl.accepted {
                continue;
            }
            accepted += 1;
            let ce = local.accumulate_ce_grad(
                &ex.strong,
                pl.label,
                1.0,
                cfg.lambda_u * inv_u,
                &mut grad,
            )?;
            loss_u += inv_u * ce;
        }
    }
    let total = loss_x + cfg.lambda_u * loss_u;
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite local loss {total}")));
    }
    Ok(CombinedLoss {
        total,
        labeled: loss_x,
        unlabeled: loss_u,
        accepted,
        grad,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSampling {
    Confidence,
    Uniform,
}

/// Method-level switches for a local update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalPlan {
    pub data_sampling: DataSampling,
    pub clean_fraction: f64,
    /// Temperature used for the local-data sampling probabilities.
    pub temperature: f64,
    /// When false, `D_u` is dropped entirely.
    pub use_ssl: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdateReport {
    pub client_id: usize,
    pub epochs_run: u32,
    pub batches_run: u64,
    /// Shard-local indices of `D_x`, one list per epoch.
    pub labeled_indices: Vec<Vec<usize>>,
    pub pseudo_labels_seen: u64,
    pub pseudo_labels_accepted: u64,
    pub params: ModelParams,
}

impl LocalUpdateReport {
    pub fn pseudo_label_acceptance_rate(&self) -> Option<f64> {
        (self.pseudo_labels_seen > 0)
            .then(|| self.pseudo_labels_accepted as f64 / self.pseudo_labels_seen as f64)
    }
}

/// Run `epochs` local epochs starting from the global model.
pub fn local_update<R: Rng + ?Sized>(
    global: &ModelParams,
    shard: &ClientShard,
    epochs: u32,
    plan: &LocalPlan,
    ssl: &SslConfig,
    opt: &OptimizerConfig,
    rng: &mut R,
) -> Result<LocalUpdateReport> {
    if epochs == 0 {
        return Err(Error::Domain(
            "local update needs at least one epoch".into(),
        ));
    }
    let p = match plan.data_sampling {
        DataSampling::Confidence => {
            local_data_probabilities(&confidence_scores(global, shard, plan.temperature)?)
        }
        DataSampling::Uniform => vec![1.0 / shard.len().max(1) as f64; shard.len()],
    };
    let batch = opt.batch_size;
    let mut local = global.clone();
    let mut state = OptimizerState::new(&local);
    let mut report = LocalUpdateReport {
        client_id: shard.client_id,
        epochs_run: 0,
        batches_run: 0,
        labeled_indices: Vec::with_capacity(epochs as usize),
        pseudo_labels_seen: 0,
        pseudo_labels_accepted: 0,
        params: global.clone(),
    };

    for _ in 0..epochs {
        let split = sample_labeled_subset(&p, plan.clean_fraction, rng)?;
        let mut unlabeled = if plan.use_ssl {
            split.unlabeled
        } else {
            Vec::new()
        };
        unlabeled.shuffle(rng);
        let labeled_batches: Vec<&[usize]> = split.labeled.chunks(batch).collect();
        let unlabeled_batches: Vec<&[usize]> = unlabeled.chunks(batch).collect();
        let (nx, nu) = (labeled_batches.len(), unlabeled_batches.len());

        for step in 0..nx.max(nu) {
            let xs: Vec<LabeledExample> = labeled_batches[step % nx]
                .iter()
                .map(|&i| LabeledExample {
                    x: weak_augment(shard.row(i), ssl.weak_noise_std, rng),
                    label: shard.given_labels[i],
                })
                .collect();
            let us: Vec<UnlabeledExample> = if nu == 0 {
                Vec::new()
            } else {
                unlabeled_batches[step % nu]
                    .iter()
                    .map(|&i| {
                        let x = shard.row(i);
                        UnlabeledExample {
                            weak_views: (0..ssl.weak_views)
                                .map(|_| weak_augment(x, ssl.weak_noise_std, rng))
                                .collect(),
                            strong: strong_augment(
                                x,
                                ssl.strong_noise_std,
                                ssl.strong_mask_fraction,
                                rng,
                            ),
                        }
                    })
                    .collect()
            };
            let out =
                combined_loss_and_grad(&local, global, &xs, &us, ssl).map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("client {}: {msg}", shard.client_id))
                    }
                    other => other,
                })?;
            report.pseudo_labels_seen += us.len() as u64;
            report.pseudo_labels_accepted += out.accepted as u64;
            sgd_step(&mut local, &mut state, &out.grad, opt)?;
        }
        if !local.is_finite() {
            return Err(Error::Numeric(format!(
                "client {}: parameters diverged",
                shard.client_id
            )));
        }
        report.batches_run += (nx + nu) as u64;
        report.labeled_indices.push(split.labeled);
        report.epochs_run += 1;
    }
    report.params = local;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        generate_synthetic, inject_noise, partition, NoiseFlavor, PartitionMode, PartitionSpec,
    };
    use crate::model::{Activation, Architecture};
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    fn shards() -> Vec<ClientShard> {
        let ds = generate_synthetic(3, 4, 40, 0.4, 2).unwrap();
        let spec = PartitionSpec {
            mode: PartitionMode::Iid,
            beta: 1.0,
            num_clients: 2,
            samples_per_client: None,
        };
        partition(&ds, &spec, 1)
            .unwrap()
            .into_iter()
            .map(|s| inject_noise(&s, NoiseFlavor::Symmetric, 0.4, s.client_id as u64).unwrap())
            .collect()
    }

    fn arch() -> Architecture {
        Architecture {
            input_dim: 4,
            hidden: 6,
            num_classes: 3,
            activation: Activation::Tanh,
        }
    }

    fn plan() -> LocalPlan {
        LocalPlan {
            data_sampling: DataSampling::Confidence,
            clean_fraction: 0.35,
            temperature: 0.5,
            use_ssl: true,
        }
    }

    #[test]
    fn augmentations() {
        let mut rng = StreamRng::seed_from_u64(0);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(weak_augment(&x, 0.0, &mut rng), x.to_vec());
        assert_eq!(strong_augment(&x, 0.0, 0.0, &mut rng), x.to_vec());
        // round(0.9 * 4) = 4 -> everything masked; round(0.6 * 4) = 2
        let all = strong_augment(&x, 0.0, 0.9, &mut rng);
        assert!(all.iter().all(|&v| v == 0.0));
        let two = strong_augment(&x, 0.0, 0.6, &mut rng);
        assert_eq!(two.iter().filter(|&&v| v == 0.0).count(), 2);
        let a = strong_augment(&x, 0.3, 0.25, &mut StreamRng::seed_from_u64(5));
        let b = strong_augment(&x, 0.3, 0.25, &mut StreamRng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn gate_threshold() {
        assert_eq!(
            gate(&[0.97, 0.03], 0.95),
            PseudoLabel {
                label: 0,
                confidence: 0.97,
                accepted: true
            }
        );
        assert!(!gate(&[0.80, 0.20], 0.95).accepted);
        assert!(!gate(&[0.999, 0.001], 1.0).accepted);
        assert!(gate(&[1.0, 0.0], 1.0).accepted);
    }

    /// Two-class linear model with `logit_0 = w x + b`, `logit_1 = 0`.
    fn scalar_model(w: f64, b: f64) -> ModelParams {
        ModelParams::from_values(Architecture::linear(1, 2), vec![w, 0.0, b, 0.0]).unwrap()
    }

    /// Logit giving class 0 a cross-entropy of exactly `ce`.
    fn logit_for_ce(ce: f64) -> f64 {
        -(ce.exp() - 1.0).ln()
    }

    #[test]
    fn hand_combined_loss() {
        let b = logit_for_ce(0.5);
        let w = logit_for_ce(0.2) - b;
        let local = scalar_model(w, b);
        let global = scalar_model(0.0, 50.0);
        let cfg = SslConfig {
            lambda_u: 1.0,
            ..Default::default()
        };
        let labeled = [LabeledExample {
            x: vec![0.0],
            label: 0,
        }];
        let unlabeled = [UnlabeledExample {
            weak_views: vec![vec![0.0]],
            strong: vec![1.0],
        }];
        let out = combined_loss_and_grad(&local, &global, &labeled, &unlabeled, &cfg).unwrap();
        assert_eq!(out.accepted, 1);
        assert!((out.labeled - 0.5).abs() < 1e-12);
        assert!((out.unlabeled - 0.2).abs() < 1e-12);
        assert!((out.total - 0.7).abs() < 1e-12);

        let off = SslConfig {
            lambda_u: 0.0,
            ..cfg
        };
        let out0 = combined_loss_and_grad(&local, &global, &labeled, &unlabeled, &off).unwrap();
        assert!((out0.total - 0.5).abs() < 1e-12);

        // uncertain global model: gate fails, total is L_x exactly
        let unsure = scalar_model(0.0, 0.0);
        let out1 = combined_loss_and_grad(&local, &unsure, &labeled, &unlabeled, &cfg).unwrap();
        assert_eq!(out1.accepted, 0);
        assert_eq!(out1.total, out1.labeled);

        assert!(combined_loss_and_grad(&local, &global, &[], &unlabeled, &cfg).is_err());
        let empty_u = combined_loss_and_grad(&local, &global, &labeled, &[], &cfg).unwrap();
        assert_eq!(empty_u.unlabeled, 0.0);
    }

    #[test]
    fn oracle_pseudo_labels_recover_truth() {
        // perfect nearest-mean model on zero-spread data
        let ds = generate_synthetic(4, 2, 3, 0.0, 0).unwrap();
        let mut p = ModelParams::zeros(Architecture::linear(2, 4));
        for j in 0..4 {
            let a = 2.0 * std::f64::consts::PI * j as f64 / 4.0;
            p.values_mut()[j * 2] = 40.0 * a.cos();
            p.values_mut()[j * 2 + 1] = 40.0 * a.sin();
        }
        let cfg = SslConfig {
            weak_noise_std: 0.0,
            ..Default::default()
        };
        let mut rng = StreamRng::seed_from_u64(0);
        for i in 0..ds.len() {
            let pl = pseudo_label(&p, ds.row(i), &cfg, &mut rng).unwrap();
            assert!(pl.accepted);
            assert_eq!(pl.label, ds.true_labels()[i]);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_global() {
        let shard = &shards()[0];
        let global = ModelParams::init(arch(), 3);
        let opt = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let report = local_update(
            &global,
            shard,
            3,
            &plan(),
            &SslConfig::default(),
            &opt,
            &mut StreamRng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(report.params, global);
        assert_eq!(report.epochs_run, 3);
    }

    #[test]
    fn batch_accounting_closed_form() {
        let shard = &shards()[0];
        let global = ModelParams::init(arch(), 3);
        let opt = OptimizerConfig {
            batch_size: 8,
            ..Default::default()
        };
        let report = local_update(
            &global,
            shard,
            4,
            &plan(),
            &SslConfig::default(),
            &opt,
            &mut StreamRng::seed_from_u64(1),
        )
        .unwrap();
        let n = shard.len();
        let nx = crate::sampling::labeled_subset_size(n, 0.35);
        let per_epoch = nx.div_ceil(8) + (n - nx).div_ceil(8);
        assert_eq!(report.batches_run, 4 * per_epoch as u64);
        assert!(report.labeled_indices.iter().all(|l| l.len() == nx));

        let no_ssl = LocalPlan {
            use_ssl: false,
            ..plan()
        };
        let report = local_update(
            &global,
            shard,
            4,
            &no_ssl,
            &SslConfig::default(),
            &opt,
            &mut StreamRng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(report.batches_run, 4 * nx.div_ceil(8) as u64);
        assert_eq!(report.pseudo_labels_seen, 0);
    }

    #[test]
    fn clients_are_order_independent() {
        let shards = shards();
        let global = ModelParams::init(arch(), 3);
        let run = |s: &ClientShard| {
            let mut rng = crate::rng::stream(
                9,
                crate::rng::Purpose::LocalUpdate,
                &[1, s.client_id as u64],
            );
            local_update(
                &global,
                s,
                2,
                &plan(),
                &SslConfig::default(),
                &OptimizerConfig::default(),
                &mut rng,
            )
            .unwrap()
        };
        let forward_order: Vec<_> = shards.iter().map(run).collect();
        let mut reverse_order: Vec<_> = shards.iter().rev().map(run).collect();
        reverse_order.reverse();
        assert_eq!(forward_order, reverse_order);
    }

    #[test]
    fn degenerate_plan_is_plain_local_sgd() {
        // one epoch, everything labeled, no SSL, no augmentation: manual SGD over draw order
        let shard = &shards()[1];
        let global = ModelParams::init(arch(), 8);
        let opt = OptimizerConfig {
            batch_size: 16,
            ..Default::default()
        };
        let plan = LocalPlan {
            data_sampling: DataSampling::Uniform,
            clean_fraction: 1.0,
            temperature: 1.0,
            use_ssl: false,
        };
        let ssl = SslConfig {
            weak_noise_std: 0.0,
            strong_noise_std: 0.0,
            lambda_u: 0.0,
            ..Default::default()
        };
        let report = local_update(
            &global,
            shard,
            1,
            &plan,
            &ssl,
            &opt,
            &mut StreamRng::seed_from_u64(4),
        )
        .unwrap();

        let order = &report.labeled_indices[0];
        let mut manual = global.clone();
        let mut state = OptimizerState::new(&manual);
        for chunk in order.chunks(16) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| crate::model::WeightedExample {
                    x: shard.row(i),
                    label: shard.given_labels[i],
                    weight: 1.0,
                })
                .collect();
            let (_, g) = crate::model::loss_and_grad(&manual, &batch, 1.0).unwrap();
            sgd_step(&mut manual, &mut state, &g, &opt).unwrap();
        }
        for (a, b) in manual.values().iter().zip(report.params.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
