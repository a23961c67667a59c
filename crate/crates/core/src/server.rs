//! Round orchestration: scoring, client selection, local training,
//! aggregation and convergence tracking.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{ClientSampling, DataSource, ExperimentConfig, Variant};
use crate::data::{generate_synthetic, inject_noise, load_idx, partition, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::localtrain::{local_update, DataSampling, LocalPlan, LocalUpdateReport, SslConfig};
use crate::model::{evaluate_accuracy, Architecture, ModelParams};
use crate::rng::{derive_seed, stream, Purpose};
use crate::sampling::{
    client_probabilities, confidence_scores, normalize_or_uniform, sample_clients, ClientScore,
};
use crate::telemetry::{avg_selected_noise_ratio, label_precision_recall, RoundRecord};

/// Accuracy deltas (in percentage points) must all stay below this.
pub const CONVERGENCE_DELTA_POINTS: f64 = 2.0;
/// Number of accuracies in the convergence window (five deltas).
pub const CONVERGENCE_WINDOW: usize = 6;

/// Sample-count weighted average over the sampled clients only.
pub fn aggregate(updates: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::Protocol("cannot aggregate an empty client set".into()))?;
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Protocol("aggregated clients hold no samples".into()));
    }
    let mut out = ModelParams::zeros(*first.arch());
    for (params, n) in updates {
        if params.arch() != first.arch() {
            return Err(Error::Shape {
                expected: first.len(),
                actual: params.len(),
            });
        }
        let w = *n as f64 / total as f64;
        for (o, v) in out.values_mut().iter_mut().zip(params.values()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// True when the last five consecutive accuracy changes are each below
/// two percentage points. Accuracies are fractions in `[0, 1]`.
pub fn window_converged(accuracies: &[f64]) -> bool {
    if accuracies.len() < CONVERGENCE_WINDOW {
        return false;
    }
    accuracies[accuracies.len() - CONVERGENCE_WINDOW..]
        .windows(2)
        .all(|w| ((w[1] - w[0]) * 100.0).abs() < CONVERGENCE_DELTA_POINTS)
}

/// Per-variant substitutions applied on top of the configured components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodPlan {
    pub client_sampling: ClientSampling,
    pub local: LocalPlan,
    pub ssl: SslConfig,
}

impl MethodPlan {
    pub fn for_config(config: &ExperimentConfig) -> Self {
        let mut plan = MethodPlan {
            client_sampling: config.client_sampling,
            local: LocalPlan {
                data_sampling: config.data_sampling,
                clean_fraction: config.sampling.clean_fraction,
                temperature: config.sampling.temperature,
                use_ssl: true,
            },
            ssl: config.ssl,
        };
        match config.variant {
            Variant::FedNoiL => {}
            Variant::VanillaFedAvg => {
                plan.client_sampling = ClientSampling::Uniform;
                plan.local.data_sampling = DataSampling::Uniform;
                plan.local.clean_fraction = 1.0;
                plan.local.use_ssl = false;
                plan.ssl.lambda_u = 0.0;
                plan.ssl.weak_noise_std = 0.0;
                plan.ssl.strong_noise_std = 0.0;
                plan.ssl.strong_mask_fraction = 0.0;
            }
            Variant::UniformClientSampling => plan.client_sampling = ClientSampling::Uniform,
            Variant::UniformLocalDataSampling => plan.local.data_sampling = DataSampling::Uniform,
            Variant::NoSsl => {
                plan.local.use_ssl = false;
                plan.ssl.lambda_u = 0.0;
            }
        }
        plan
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalState {
    /// Last completed round; 0 before training.
    pub round: u32,
    pub params: ModelParams,
    /// Latest `s_k` per client; empty when the variant skips scoring.
    pub client_scores: Vec<f64>,
    pub window: VecDeque<f64>,
    pub cumulative_batches: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub rounds_run: u32,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub max_accuracy: f64,
    /// Whether the convergence rule holds at the final round.
    pub converged: bool,
    /// First round at which the rule held.
    pub first_converged_round: Option<u32>,
}

impl ExperimentSummary {
    /// Final accuracy when converged, otherwise the best seen.
    pub fn reported_accuracy(&self) -> f64 {
        if self.converged {
            self.final_accuracy
        } else {
            self.max_accuracy
        }
    }
}

/// A simulated federation: clients, test set and server state.
pub struct Simulation {
    config: ExperimentConfig,
    plan: MethodPlan,
    shards: Vec<ClientShard>,
    test: Dataset,
    state: GlobalState,
    initial_accuracy: f64,
    accuracies: Vec<f64>,
    first_converged: Option<u32>,
    checkpoint_dir: Option<PathBuf>,
}

/// Build train and test sets for a configuration.
pub fn build_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.data {
        DataSource::Synthetic {
            num_classes,
            dim,
            train_per_class,
            test_per_class,
            cluster_spread,
        } => Ok((
            generate_synthetic(
                *num_classes,
                *dim,
                *train_per_class,
                *cluster_spread,
                derive_seed(config.seed, Purpose::TrainData, &[]),
            )?,
            generate_synthetic(
                *num_classes,
                *dim,
                *test_per_class,
                *cluster_spread,
                derive_seed(config.seed, Purpose::TestData, &[]),
            )?,
        )),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok((
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        )),
    }
}

/// Partition the training set and corrupt each shard at its nominal ratio.
pub fn build_shards(config: &ExperimentConfig, train: &Dataset) -> Result<Vec<ClientShard>> {
    let clean = partition(
        train,
        &config.partition,
        derive_seed(config.seed, Purpose::Partition, &[]),
    )?;
    clean
        .iter()
        .map(|s| {
            let ratio = config.noise.ratio_for_client(s.client_id);
            inject_noise(
                s,
                config.noise.flavor,
                ratio,
                derive_seed(config.seed, Purpose::Noise, &[s.client_id as u64]),
            )
        })
        .collect()
}

impl Simulation {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let (train, test) = build_datasets(&config)?;
        let shards = build_shards(&config, &train)?;
        Self::from_parts(config, shards, test)
    }

    /// Start from prepared shards and a test set.
    pub fn from_parts(
        config: ExperimentConfig,
        shards: Vec<ClientShard>,
        test: Dataset,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Config("no clients".into()));
        }
        if let Some(s) = shards.iter().find(|s| s.is_empty()) {
            return Err(Error::Config(format!(
                "client {} holds no samples",
                s.client_id
            )));
        }
        if shards
            .iter()
            .any(|s| s.dim != test.dim() || s.num_classes != test.num_classes())
        {
            return Err(Error::Config(
                "client shards and test set disagree on shape".into(),
            ));
        }
        let arch = Architecture {
            input_dim: test.dim(),
            hidden: config.model.hidden,
            num_classes: test.num_classes(),
            activation: config.model.activation,
        };
        let params = ModelParams::init(arch, derive_seed(config.seed, Purpose::Init, &[]));
        let initial_accuracy = evaluate_accuracy(&params, &test)?;
        Ok(Self {
            plan: MethodPlan::for_config(&config),
            config,
            shards,
            test,
            state: GlobalState {
                round: 0,
                params,
                client_scores: Vec::new(),
                window: VecDeque::with_capacity(CONVERGENCE_WINDOW),
                cumulative_batches: 0,
            },
            initial_accuracy,
            accuracies: Vec::new(),
            first_converged: None,
            checkpoint_dir: None,
        })
    }

    /// Write a model blob every `checkpoint_every` rounds into `dir`.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn plan(&self) -> &MethodPlan {
        &self.plan
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn global_params(&self) -> &ModelParams {
        &self.state.params
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracies
    }

    /// Sampling distribution over clients for the current global model.
    fn client_distribution(&mut self) -> Result<Vec<f64>> {
        match self.plan.client_sampling {
            ClientSampling::Uniform => Ok(normalize_or_uniform(&vec![0.0; self.shards.len()])),
            ClientSampling::Confidence => {
                let global = &self.state.params;
                let tau = self.config.sampling.temperature;
                let scores: Vec<ClientScore> = self
                    .shards
                    .par_iter()
                    .map(|s| {
                        Ok(ClientScore::from_scores(
                            s.client_id,
                            &confidence_scores(global, s, tau)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                self.state.client_scores = scores.iter().map(|c| c.s_k).collect();
                Ok(client_probabilities(&scores))
            }
        }
    }

    /// Execute the next round and return its record.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let started = Instant::now();
        let r = self.state.round + 1;
        let seed = self.config.seed;

        let p = self.client_distribution()?;
        let count = self.config.sampling.clients_per_round(self.shards.len());
        let mut selected = sample_clients(
            &p,
            count,
            &mut stream(seed, Purpose::ClientSelection, &[r as u64]),
        )?;
        selected.sort_unstable();

        let epochs = self.config.schedule.epochs(r);
        let global = &self.state.params;
        let plan = &self.plan;
        let opt = &self.config.optim;
        let outcomes: Vec<Result<LocalUpdateReport>> = selected
            .par_iter()
            .map(|&k| {
                let mut rng = stream(seed, Purpose::LocalUpdate, &[r as u64, k as u64]);
                local_update(
                    global,
                    &self.shards[k],
                    epochs,
                    &plan.local,
                    &plan.ssl,
                    opt,
                    &mut rng,
                )
            })
            .collect();

        let mut reports = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            match outcome {
                Ok(rep) => reports.push(rep),
                Err(Error::Numeric(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if reports.is_empty() {
            return Err(Error::Protocol(format!(
                "round {r}: every selected client diverged"
            )));
        }
        debug_assert!(reports.iter().all(|rep| rep.epochs_run == epochs));

        let updates: Vec<(&ModelParams, usize)> = reports
            .iter()
            .map(|rep| (&rep.params, self.shards[rep.client_id].len()))
            .collect();
        let next = aggregate(&updates)?;

        let batches: u64 = reports.iter().map(|rep| rep.batches_run).sum();
        let selected_shards: Vec<&ClientShard> =
            selected.iter().map(|&k| &self.shards[k]).collect();
        let selections: Vec<(&ClientShard, &[Vec<usize>])> = reports
            .iter()
            .map(|rep| (&self.shards[rep.client_id], rep.labeled_indices.as_slice()))
            .collect();
        let (precision, recall) = label_precision_recall(&selections);
        let seen: u64 = reports.iter().map(|rep| rep.pseudo_labels_seen).sum();
        let accepted: u64 = reports.iter().map(|rep| rep.pseudo_labels_accepted).sum();
        let noise_ratio = avg_selected_noise_ratio(&selected_shards);

        let accuracy = evaluate_accuracy(&next, &self.test)?;
        self.state.params = next;
        self.state.round = r;
        self.state.cumulative_batches += batches;
        if self.state.window.len() == CONVERGENCE_WINDOW {
            self.state.window.pop_front();
        }
        self.state.window.push_back(accuracy);
        self.accuracies.push(accuracy);
        if self.first_converged.is_none() && window_converged(self.state.window.make_contiguous()) {
            self.first_converged = Some(r);
        }
        self.maybe_checkpoint(r)?;

        Ok(RoundRecord {
            round: r,
            selected,
            epochs,
            accuracy,
            noise_ratio,
            precision,
            recall,
            cum_batches: self.state.cumulative_batches,
            pl_accept: (seen > 0).then(|| accepted as f64 / seen as f64),
            wall_ms: self
                .config
                .record_wall_time
                .then(|| started.elapsed().as_millis() as u64),
        })
    }

    fn maybe_checkpoint(&self, r: u32) -> Result<()> {
        let (Some(dir), every) = (&self.checkpoint_dir, self.config.checkpoint_every) else {
            return Ok(());
        };
        if every == 0 || !r.is_multiple_of(every) {
            return Ok(());
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = checkpoint_path(dir, r);
        std::fs::write(&path, self.state.params.to_bytes()).map_err(|e| Error::io(&path, e))
    }

    pub fn summary(&self) -> ExperimentSummary {
        let final_accuracy = self
            .accuracies
            .last()
            .copied()
            .unwrap_or(self.initial_accuracy);
        let max_accuracy = if self.accuracies.is_empty() {
            self.initial_accuracy
        } else {
            self.accuracies
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        ExperimentSummary {
            rounds_run: self.state.round,
            initial_accuracy: self.initial_accuracy,
            final_accuracy,
            max_accuracy,
            converged: window_converged(&self.accuracies),
            first_converged_round: self.first_converged,
        }
    }

    /// Run all configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        (self.state.round..self.config.rounds)
            .map(|_| self.run_round())
            .collect()
    }
}

pub fn checkpoint_path(dir: &Path, round: u32) -> PathBuf {
    dir.join(format!("checkpoint_r{round:04}.bin"))
}

/// Build the federation from `config` and run every round.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Vec<RoundRecord>, ExperimentSummary)> {
    let mut sim = Simulation::new(config.clone())?;
    let records = sim.run()?;
    Ok((records, sim.summary()))
}
