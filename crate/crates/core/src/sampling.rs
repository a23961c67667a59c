//! Two-level sampling driven by the global model's label confidence.
//!
//! Clients are drawn with probability proportional to the summed confidence
//! of their given labels; inside a client, samples are drawn into the
//! labeled subset with probability proportional to their own confidence.
//! Both draws are without replacement, by successive draw-and-renormalize.

use rand::Rng;

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::util::round_count;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    /// Softmax temperature for confidence scoring.
    pub temperature: f64,
    /// Per-client fraction of samples placed in the labeled subset.
    pub clean_fraction: f64,
    /// Fraction of clients trained each round.
    pub client_fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            clean_fraction: 0.35,
            client_fraction: 0.3,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.clean_fraction > 0.0 && self.clean_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "clean_fraction must be in (0, 1], got {}",
                self.clean_fraction
            )));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client_fraction must be in (0, 1], got {}",
                self.client_fraction
            )));
        }
        Ok(())
    }

    /// `ceil(client_fraction * K)`, at least one.
    pub fn clients_per_round(&self, num_clients: usize) -> usize {
        let raw = self.client_fraction * num_clients as f64;
        // guard against 0.3 * 20 = 6.000000000000001
        let count = (raw - 1e-9).ceil().max(1.0) as usize;
        count.min(num_clients)
    }
}

/// The scalar a client reports for selection: its summed label confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClientScore {
    pub client_id: usize,
    pub s_k: f64,
    pub n_k: usize,
}

impl ClientScore {
    pub fn from_scores(client_id: usize, scores: &[f64]) -> Self {
        Self {
            client_id,
            s_k: scores.iter().sum(),
            n_k: scores.len(),
        }
    }
}

/// Global-model probability of each sample's given label at temperature `tau`.
pub fn confidence_scores(global: &ModelParams, shard: &ClientShard, tau: f64) -> Result<Vec<f64>> {
    if shard.is_empty() {
        return Err(Error::Domain(format!(
            "client {} has no samples to score",
            shard.client_id
        )));
    }
    (0..shard.len())
        .map(|i| Ok(forward(global, shard.row(i), tau)?[shard.given_labels[i]]))
        .collect()
}

/// Normalize nonnegative weights; all-zero (or non-finite) input gives uniform.
pub fn normalize_or_uniform(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(total > 0.0) || !total.is_finite() {
        return vec![1.0 / weights.len() as f64; weights.len()];
    }
    weights.iter().map(|w| w / total).collect()
}

/// `p_k = s_k / sum_j s_j`.
pub fn client_probabilities(scores: &[ClientScore]) -> Vec<f64> {
    let s: Vec<f64> = scores.iter().map(|c| c.s_k).collect();
    normalize_or_uniform(&s)
}

/// `p_{k,i} = score_i / sum_j score_j` within one client.
pub fn local_data_probabilities(scores: &[f64]) -> Vec<f64> {
    normalize_or_uniform(scores)
}

/// Draw `count` distinct indices: each step picks an index with probability
/// proportional to its weight among those not yet drawn. When the positive
/// mass runs out the remaining picks are uniform over what is left.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    p: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = p.len();
    let count = count.min(n);
    let mut weights: Vec<f64> = p
        .iter()
        .map(|&w| if w > 0.0 && w.is_finite() { w } else { 0.0 })
        .collect();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    chosen = Some(i);
                    if target < acc {
                        break;
                    }
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        taken[pick] = true;
        weights[pick] = 0.0;
        out.push(pick);
    }
    out
}

/// Client ids in draw order.
pub fn sample_clients<R: Rng + ?Sized>(p: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > p.len() {
        return Err(Error::Domain(format!(
            "cannot sample {count} of {} clients",
            p.len()
        )));
    }
    Ok(weighted_sample_without_replacement(p, count, rng))
}

/// Labeled subset `D_x` (in draw order) and its complement `D_u` (ascending).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

pub fn labeled_subset_size(n: usize, clean_fraction: f64) -> usize {
    round_count(clean_fraction * n as f64).min(n)
}

pub fn sample_labeled_subset<R: Rng + ?Sized>(
    p: &[f64],
    clean_fraction: f64,
    rng: &mut R,
) -> Result<LabeledSplit> {
    let n = p.len();
    let size = labeled_subset_size(n, clean_fraction);
    if size == 0 {
        return Err(Error::Domain(format!(
            "clean fraction {clean_fraction} of {n} samples selects nothing"
        )));
    }
    let labeled = weighted_sample_without_replacement(p, size, rng);
    let mut in_labeled = vec![false; n];
    for &i in &labeled {
        in_labeled[i] = true;
    }
    let unlabeled = (0..n).filter(|&i| !in_labeled[i]).collect();
    Ok(LabeledSplit { labeled, unlabeled })
}
