//! Experiment configuration.
//!
//! The file format is flat `key=value` text with `#` comment lines and
//! dotted section prefixes (`noise.flavor=pair`). Every key has a
//! documented default; unknown keys are rejected. [`ExperimentConfig::echo`]
//! writes the fully resolved configuration back in the same format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{NoiseFlavor, NoiseMode, NoiseSpec, PartitionMode, PartitionSpec};
use crate::error::{Error, Result};
use crate::localtrain::{DataSampling, SslConfig};
use crate::model::{Activation, OptimizerConfig};
use crate::sampling::SamplingConfig;
use crate::schedule::{budget_matched_constant, ScheduleKind, ScheduleSpec};

/// Every accepted key with its default, in echo order.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("rounds", "200"),
    ("trials", "1"),
    ("variant", "fednoil"),
    ("checkpoint_every", "0"),
    ("log.wall_time", "false"),
    ("data.source", "synthetic"),
    ("data.num_classes", "4"),
    ("data.dim", "10"),
    ("data.train_per_class", "600"),
    ("data.test_per_class", "250"),
    ("data.cluster_spread", "0.5"),
    ("data.train_images", ""),
    ("data.train_labels", ""),
    ("data.test_images", ""),
    ("data.test_labels", ""),
    ("partition.mode", "iid"),
    ("partition.beta", "0.5"),
    ("partition.num_clients", "20"),
    ("partition.samples_per_client", "auto"),
    ("noise.flavor", "symmetric"),
    ("noise.mode", "high"),
    ("noise.ratios", ""),
    ("noise.client_ratios", ""),
    ("model.hidden", "16"),
    ("model.activation", "tanh"),
    ("optim.lr", "0.05"),
    ("optim.momentum", "0.5"),
    ("optim.weight_decay", "0.0001"),
    ("optim.batch_size", "32"),
    ("sampling.temperature", "0.5"),
    ("sampling.clean_fraction", "auto"),
    ("sampling.client_fraction", "0.3"),
    ("sampling.client_sampling", "confidence"),
    ("sampling.data_sampling", "confidence"),
    ("ssl.threshold", "0.95"),
    ("ssl.lambda_u", "1"),
    ("ssl.weak_noise_std", "0.05"),
    ("ssl.strong_noise_std", "0.2"),
    ("ssl.strong_mask_fraction", "0.2"),
    ("ssl.weak_views", "1"),
    ("schedule.kind", "logarithm"),
    ("schedule.t_max", "100"),
    ("schedule.t_min", "20"),
    ("schedule.r_min", "80"),
    ("schedule.constant_epochs", "auto"),
    ("schedule.budget_reference", "cosine"),
];

/// Method variants: the full method, the plain baseline, and ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    FedNoiL,
    VanillaFedAvg,
    UniformClientSampling,
    UniformLocalDataSampling,
    NoSsl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::FedNoiL,
        Variant::VanillaFedAvg,
        Variant::UniformClientSampling,
        Variant::UniformLocalDataSampling,
        Variant::NoSsl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FedNoiL => "fednoil",
            Variant::VanillaFedAvg => "fedavg",
            Variant::UniformClientSampling => "uniform_client",
            Variant::UniformLocalDataSampling => "uniform_data",
            Variant::NoSsl => "no_ssl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fednoil" => Ok(Variant::FedNoiL),
            "fedavg" | "vanilla" => Ok(Variant::VanillaFedAvg),
            "uniform_client" => Ok(Variant::UniformClientSampling),
            "uniform_data" => Ok(Variant::UniformLocalDataSampling),
            "no_ssl" => Ok(Variant::NoSsl),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected fednoil, fedavg, uniform_client, uniform_data, no_ssl)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientSampling {
    Confidence,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        cluster_spread: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub activation: Activation,
}

/// How the schedule was requested, kept alongside the resolved spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleRequest {
    pub kind: ScheduleKind,
    pub t_max: u32,
    pub t_min: u32,
    pub r_min: u32,
    pub budget_reference: ScheduleKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: u32,
    pub trials: u32,
    pub variant: Variant,
    pub checkpoint_every: u32,
    pub record_wall_time: bool,
    pub data: DataSource,
    pub partition: PartitionSpec,
    pub noise: NoiseSpec,
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub sampling: SamplingConfig,
    pub client_sampling: ClientSampling,
    pub data_sampling: DataSampling,
    pub ssl: SslConfig,
    pub schedule_request: ScheduleRequest,
    pub schedule: ScheduleSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Entries(BTreeMap<String, Entry>);

fn key_error(key: &str, line: usize, message: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

impl Entries {
    fn raw(&self, key: &str) -> (&str, usize) {
        match self.0.get(key) {
            Some(e) => (e.value.as_str(), e.line),
            None => (
                DEFAULTS
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| *v)
                    .expect("key listed in DEFAULTS"),
                0,
            ),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.raw(key).1
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let (v, line) = self.raw(key);
        v.parse().map_err(|_| {
            key_error(
                key,
                line,
                format!("cannot parse `{v}` as {}", std::any::type_name::<T>()),
            )
        })
    }

    fn get_checked<T: FromStr + Copy>(
        &self,
        key: &str,
        ok: impl Fn(T) -> bool,
        rule: &str,
    ) -> Result<T> {
        let v = self.get(key)?;
        if ok(v) {
            Ok(v)
        } else {
            Err(key_error(
                key,
                self.line(key),
                format!("value `{}` violates {rule}", self.raw(key).0),
            ))
        }
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Result<T> {
        let (v, line) = self.raw(key);
        options
            .iter()
            .find(|(name, _)| *name == v)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                key_error(
                    key,
                    line,
                    format!("`{v}` is not one of {}", names.join(", ")),
                )
            })
    }

    fn auto_or<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key).0 == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let (v, line) = self.raw(key);
        if v.is_empty() {
            return Ok(None);
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| key_error(key, line, format!("cannot parse `{s}` as a number")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        let (v, line) = self.raw(key);
        if v.is_empty() {
            Err(key_error(key, line, "path required when data.source=idx"))
        } else {
            Ok(PathBuf::from(v))
        }
    }
}

fn parse_lines(
    text: &str,
    entries: &mut BTreeMap<String, Entry>,
    line_offset: usize,
) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = line_offset + i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| key_error(trimmed, line, "expected `key=value`"))?;
        insert(entries, key.trim(), value.trim(), line)?;
    }
    Ok(())
}

fn insert(
    entries: &mut BTreeMap<String, Entry>,
    key: &str,
    value: &str,
    line: usize,
) -> Result<()> {
    if !DEFAULTS.iter().any(|(k, _)| *k == key) {
        return Err(key_error(key, line, "unknown key"));
    }
    entries.insert(
        key.to_string(),
        Entry {
            value: value.to_string(),
            line,
        },
    );
    Ok(())
}

/// Parse configuration text with every default resolved.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(text, &[])
}

/// Parse file text, then apply `key=value` overrides in order (last wins).
/// Override errors report line 0.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut map = BTreeMap::new();
    parse_lines(text, &mut map, 0)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| key_error(o, 0, "override must look like `key=value`"))?;
        insert(&mut map, k.trim(), v.trim(), 0)?;
    }
    build(&Entries(map))
}

fn build(e: &Entries) -> Result<ExperimentConfig> {
    let rounds: u32 = e.get("rounds")?;
    let variant: Variant = {
        let (v, line) = e.raw("variant");
        v.parse()
            .map_err(|err: Error| key_error("variant", line, err.to_string()))?
    };

    let data = match e.choice("data.source", &[("synthetic", true), ("idx", false)])? {
        true => DataSource::Synthetic {
            num_classes: e.get_checked(
                "data.num_classes",
                |c: usize| c >= 2,
                "num_classes >= 2",
            )?,
            dim: e.get_checked("data.dim", |d: usize| d >= 2, "dim >= 2")?,
            train_per_class: e.get_checked(
                "data.train_per_class",
                |n: usize| n >= 1,
                "train_per_class >= 1",
            )?,
            test_per_class: e.get_checked(
                "data.test_per_class",
                |n: usize| n >= 1,
                "test_per_class >= 1",
            )?,
            cluster_spread: e.get_checked(
                "data.cluster_spread",
                |s: f64| s >= 0.0 && s.is_finite(),
                "cluster_spread >= 0",
            )?,
        },
        false => DataSource::Idx {
            train_images: e.path("data.train_images")?,
            train_labels: e.path("data.train_labels")?,
            test_images: e.path("data.test_images")?,
            test_labels: e.path("data.test_labels")?,
        },
    };

    let num_clients: usize = e.get_checked(
        "partition.num_clients",
        |k: usize| k >= 1,
        "num_clients >= 1",
    )?;
    let partition = PartitionSpec {
        mode: e.choice(
            "partition.mode",
            &[
                ("iid", PartitionMode::Iid),
                ("dirichlet_label", PartitionMode::DirichletLabel),
                ("dirichlet_size", PartitionMode::DirichletSize),
            ],
        )?,
        beta: e.get_checked(
            "partition.beta",
            |b: f64| b > 0.0 && b.is_finite(),
            "beta > 0",
        )?,
        num_clients,
        samples_per_client: match e.auto_or::<usize>("partition.samples_per_client")? {
            Some(0) => {
                return Err(key_error(
                    "partition.samples_per_client",
                    e.line("partition.samples_per_client"),
                    "must be positive or `auto`",
                ))
            }
            other => other,
        },
    };

    let flavor = e.choice(
        "noise.flavor",
        &[
            ("symmetric", NoiseFlavor::Symmetric),
            ("pair", NoiseFlavor::Pair),
        ],
    )?;
    let mode = e.choice(
        "noise.mode",
        &[
            ("high", NoiseMode::High),
            ("low", NoiseMode::Low),
            ("custom", NoiseMode::Custom),
        ],
    )?;
    let mut noise = NoiseSpec::preset(flavor, mode);
    match (mode, e.list("noise.ratios")?) {
        (NoiseMode::Custom, Some(r)) => noise.group_ratios = r,
        (NoiseMode::Custom, None) if e.list("noise.client_ratios")?.is_none() => {
            return Err(key_error(
                "noise.ratios",
                e.line("noise.mode"),
                "noise.mode=custom needs noise.ratios or noise.client_ratios",
            ))
        }
        (NoiseMode::Custom, None) => {}
        (_, Some(_)) => {
            return Err(key_error(
                "noise.ratios",
                e.line("noise.ratios"),
                "only allowed with noise.mode=custom",
            ))
        }
        (_, None) => {}
    }
    noise.custom_ratios = e.list("noise.client_ratios")?;
    noise.validate(num_clients).map_err(|err| {
        key_error(
            "noise",
            e.line("noise.ratios").max(e.line("noise.client_ratios")),
            err.to_string(),
        )
    })?;

    let model = ModelConfig {
        hidden: e.get("model.hidden")?,
        activation: e.choice(
            "model.activation",
            &[("tanh", Activation::Tanh), ("relu", Activation::Relu)],
        )?,
    };

    let optim = OptimizerConfig {
        learning_rate: e.get_checked("optim.lr", |v: f64| v >= 0.0 && v.is_finite(), "lr >= 0")?,
        momentum: e.get_checked(
            "optim.momentum",
            |v: f64| (0.0..1.0).contains(&v),
            "0 <= momentum < 1",
        )?,
        weight_decay: e.get_checked(
            "optim.weight_decay",
            |v: f64| v >= 0.0 && v.is_finite(),
            "weight_decay >= 0",
        )?,
        batch_size: e.get_checked("optim.batch_size", |b: usize| b >= 1, "batch_size >= 1")?,
    };

    let clean_fraction = match e.auto_or::<f64>("sampling.clean_fraction")? {
        Some(v) => v,
        None => match mode {
            NoiseMode::Low => 0.55,
            _ => 0.35,
        },
    };
    if !(clean_fraction > 0.0 && clean_fraction <= 1.0) {
        return Err(key_error(
            "sampling.clean_fraction",
            e.line("sampling.clean_fraction"),
            "must be in (0, 1]",
        ));
    }
    let sampling = SamplingConfig {
        temperature: e.get_checked(
            "sampling.temperature",
            |t: f64| t > 0.0 && t.is_finite(),
            "temperature > 0",
        )?,
        clean_fraction,
        client_fraction: e.get_checked(
            "sampling.client_fraction",
            |f: f64| f > 0.0 && f <= 1.0,
            "0 < client_fraction <= 1",
        )?,
    };
    let client_sampling = e.choice(
        "sampling.client_sampling",
        &[
            ("confidence", ClientSampling::Confidence),
            ("uniform", ClientSampling::Uniform),
        ],
    )?;
    let data_sampling = e.choice(
        "sampling.data_sampling",
        &[
            ("confidence", DataSampling::Confidence),
            ("uniform", DataSampling::Uniform),
        ],
    )?;

    let ssl = SslConfig {
        threshold: e.get_checked(
            "ssl.threshold",
            |t: f64| t > 0.0 && t <= 1.0,
            "0 < threshold <= 1",
        )?,
        lambda_u: e.get_checked(
            "ssl.lambda_u",
            |l: f64| l >= 0.0 && l.is_finite(),
            "lambda_u >= 0",
        )?,
        weak_noise_std: e.get_checked(
            "ssl.weak_noise_std",
            |s: f64| s >= 0.0 && s.is_finite(),
            "std >= 0",
        )?,
        strong_noise_std: e.get_checked(
            "ssl.strong_noise_std",
            |s: f64| s >= 0.0 && s.is_finite(),
            "std >= 0",
        )?,
        strong_mask_fraction: e.get_checked(
            "ssl.strong_mask_fraction",
            |m: f64| (0.0..1.0).contains(&m),
            "0 <= mask < 1",
        )?,
        weak_views: e.get_checked("ssl.weak_views", |v: usize| v >= 1, "weak_views >= 1")?,
    };
    if ssl.strong_noise_std < ssl.weak_noise_std {
        return Err(key_error(
            "ssl.strong_noise_std",
            e.line("ssl.strong_noise_std"),
            "must be >= ssl.weak_noise_std",
        ));
    }

    let kinds = [
        ("cosine", ScheduleKind::Cosine),
        ("logarithm", ScheduleKind::Logarithm),
        ("constant", ScheduleKind::Constant),
    ];
    let request = ScheduleRequest {
        kind: e.choice("schedule.kind", &kinds)?,
        t_max: e.get_checked("schedule.t_max", |t: u32| t >= 1, "t_max >= 1")?,
        t_min: e.get_checked("schedule.t_min", |t: u32| t >= 1, "t_min >= 1")?,
        r_min: e.get("schedule.r_min")?,
        budget_reference: e.choice("schedule.budget_reference", &kinds[..2])?,
    };
    let schedule = resolve_schedule(e, &request, rounds)?;

    Ok(ExperimentConfig {
        seed: e.get("seed")?,
        rounds,
        trials: e.get_checked("trials", |t: u32| t >= 1, "trials >= 1")?,
        variant,
        checkpoint_every: e.get("checkpoint_every")?,
        record_wall_time: e.get("log.wall_time")?,
        data,
        partition,
        noise,
        model,
        optim,
        sampling,
        client_sampling,
        data_sampling,
        ssl,
        schedule_request: request,
        schedule,
    })
}

fn resolve_schedule(e: &Entries, req: &ScheduleRequest, rounds: u32) -> Result<ScheduleSpec> {
    let decaying = |kind| {
        if req.t_min > req.t_max {
            return Err(key_error(
                "schedule.t_min",
                e.line("schedule.t_min"),
                "must not exceed schedule.t_max",
            ));
        }
        if req.t_max == req.t_min || req.r_min <= 1 || req.r_min > rounds {
            return Err(key_error(
                "schedule.r_min",
                e.line("schedule.r_min"),
                format!("decaying schedules need 1 < r_min <= rounds ({rounds}) and t_max > t_min"),
            ));
        }
        ScheduleSpec::decaying(kind, req.t_max, req.t_min, rounds, req.r_min)
            .map_err(|err| key_error("schedule", e.line("schedule.kind"), err.to_string()))
    };
    match req.kind {
        ScheduleKind::Constant => {
            let epochs = match e.auto_or::<u32>("schedule.constant_epochs")? {
                Some(0) => {
                    return Err(key_error(
                        "schedule.constant_epochs",
                        e.line("schedule.constant_epochs"),
                        "must be >= 1",
                    ))
                }
                Some(c) => c,
                None => budget_matched_constant(&decaying(req.budget_reference)?, |_| 1.0),
            };
            ScheduleSpec::constant(epochs, rounds)
        }
        kind => decaying(kind),
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn kind_name(k: ScheduleKind) -> &'static str {
    match k {
        ScheduleKind::Cosine => "cosine",
        ScheduleKind::Logarithm => "logarithm",
        ScheduleKind::Constant => "constant",
    }
}

impl ExperimentConfig {
    /// Resolved `(key, value)` pairs in [`DEFAULTS`] order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("seed", self.seed.to_string());
        m.insert("rounds", self.rounds.to_string());
        m.insert("trials", self.trials.to_string());
        m.insert("variant", self.variant.to_string());
        m.insert("checkpoint_every", self.checkpoint_every.to_string());
        m.insert("log.wall_time", self.record_wall_time.to_string());
        match &self.data {
            DataSource::Synthetic {
                num_classes,
                dim,
                train_per_class,
                test_per_class,
                cluster_spread,
            } => {
                m.insert("data.source", "synthetic".into());
                m.insert("data.num_classes", num_classes.to_string());
                m.insert("data.dim", dim.to_string());
                m.insert("data.train_per_class", train_per_class.to_string());
                m.insert("data.test_per_class", test_per_class.to_string());
                m.insert("data.cluster_spread", cluster_spread.to_string());
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                m.insert("data.source", "idx".into());
                m.insert("data.train_images", train_images.display().to_string());
                m.insert("data.train_labels", train_labels.display().to_string());
                m.insert("data.test_images", test_images.display().to_string());
                m.insert("data.test_labels", test_labels.display().to_string());
            }
        }
        m.insert(
            "partition.mode",
            match self.partition.mode {
                PartitionMode::Iid => "iid",
                PartitionMode::DirichletLabel => "dirichlet_label",
                PartitionMode::DirichletSize => "dirichlet_size",
            }
            .into(),
        );
        m.insert("partition.beta", self.partition.beta.to_string());
        m.insert(
            "partition.num_clients",
            self.partition.num_clients.to_string(),
        );
        m.insert(
            "partition.samples_per_client",
            self.partition
                .samples_per_client
                .map_or("auto".into(), |s| s.to_string()),
        );
        m.insert(
            "noise.flavor",
            match self.noise.flavor {
                NoiseFlavor::Symmetric => "symmetric",
                NoiseFlavor::Pair => "pair",
            }
            .into(),
        );
        m.insert(
            "noise.mode",
            match self.noise.mode {
                NoiseMode::High => "high",
                NoiseMode::Low => "low",
                NoiseMode::Custom => "custom",
            }
            .into(),
        );
        if self.noise.mode == NoiseMode::Custom {
            m.insert("noise.ratios", fmt_list(&self.noise.group_ratios));
        }
        if let Some(c) = &self.noise.custom_ratios {
            m.insert("noise.client_ratios", fmt_list(c));
        }
        m.insert("model.hidden", self.model.hidden.to_string());
        m.insert(
            "model.activation",
            match self.model.activation {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
            }
            .into(),
        );
        m.insert("optim.lr", self.optim.learning_rate.to_string());
        m.insert("optim.momentum", self.optim.momentum.to_string());
        m.insert("optim.weight_decay", self.optim.weight_decay.to_string());
        m.insert("optim.batch_size", self.optim.batch_size.to_string());
        m.insert(
            "sampling.temperature",
            self.sampling.temperature.to_string(),
        );
        m.insert(
            "sampling.clean_fraction",
            self.sampling.clean_fraction.to_string(),
        );
        m.insert(
            "sampling.client_fraction",
            self.sampling.client_fraction.to_string(),
        );
        m.insert(
            "sampling.client_sampling",
            match self.client_sampling {
                ClientSampling::Confidence => "confidence",
                ClientSampling::Uniform => "uniform",
            }
            .into(),
        );
        m.insert(
            "sampling.data_sampling",
            match self.data_sampling {
                DataSampling::Confidence => "confidence",
                DataSampling::Uniform => "uniform",
            }
            .into(),
        );
        m.insert("ssl.threshold", self.ssl.threshold.to_string());
        m.insert("ssl.lambda_u", self.ssl.lambda_u.to_string());
        m.insert("ssl.weak_noise_std", self.ssl.weak_noise_std.to_string());
        m.insert(
            "ssl.strong_noise_std",
            self.ssl.strong_noise_std.to_string(),
        );
        m.insert(
            "ssl.strong_mask_fraction",
            self.ssl.strong_mask_fraction.to_string(),
        );
        m.insert("ssl.weak_views", self.ssl.weak_views.to_string());
        let req = &self.schedule_request;
        m.insert("schedule.kind", kind_name(req.kind).into());
        m.insert("schedule.t_max", req.t_max.to_string());
        m.insert("schedule.t_min", req.t_min.to_string());
        m.insert("schedule.r_min", req.r_min.to_string());
        m.insert(
            "schedule.constant_epochs",
            if req.kind == ScheduleKind::Constant {
                self.schedule.constant_epochs.to_string()
            } else {
                "auto".into()
            },
        );
        m.insert(
            "schedule.budget_reference",
            kind_name(req.budget_reference).into(),
        );

        DEFAULTS
            .iter()
            .map(|(k, default)| {
                (
                    k.to_string(),
                    m.remove(k).unwrap_or_else(|| default.to_string()),
                )
            })
            .collect()
    }

    /// The resolved configuration as parseable text.
    pub fn echo(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn num_classes_hint(&self) -> Option<usize> {
        match self.data {
            DataSource::Synthetic { num_classes, .. } => Some(num_classes),
            DataSource::Idx { .. } => None,
        }
    }
}

/// Split a run-metadata sidecar into the configuration echo and the
/// `meta.*` entries.
pub fn parse_metadata(text: &str) -> Result<(ExperimentConfig, BTreeMap<String, String>)> {
    let mut meta = BTreeMap::new();
    let mut config_text = String::new();
    for line in text.lines() {
        match line.split_once('=') {
            Some((k, v)) if k.starts_with("meta.") => {
                meta.insert(k.to_string(), v.to_string());
            }
            _ => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }
    Ok((parse_config(&config_text)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.sampling.temperature, 0.5);
        assert_eq!(c.ssl.threshold, 0.95);
        assert_eq!(c.ssl.lambda_u, 1.0);
        assert_eq!(c.optim.batch_size, 32);
        assert_eq!(c.optim.learning_rate, 0.05);
        assert_eq!(c.optim.momentum, 0.5);
        assert_eq!(c.optim.weight_decay, 1e-4);
        assert_eq!(c.schedule.t_max, 100);
        assert_eq!(c.schedule.t_min, 20);
        assert_eq!(c.sampling.client_fraction, 0.3);
        assert_eq!(c.sampling.clean_fraction, 0.35);
        assert_eq!(c.variant, Variant::FedNoiL);
    }

    #[test]
    fn logarithm_psi_resolved() {
        let c = parse_config("schedule.kind=logarithm\nschedule.r_min=80\nrounds=200\n").unwrap();
        assert_eq!(c.schedule.psi2, 80f64.powf(1.0 / 80.0));
        assert_eq!(c.schedule.kind, ScheduleKind::Logarithm);
    }

    #[test]
    fn noise_presets_and_low_mode_clean_fraction() {
        let c = parse_config("noise.mode=high\nnoise.flavor=symmetric").unwrap();
        assert_eq!(c.noise.group_ratios, vec![0.5, 0.6, 0.7, 0.8]);
        let c = parse_config("noise.mode=low\nnoise.flavor=pair").unwrap();
        assert_eq!(c.noise.group_ratios, vec![0.3, 0.4, 0.5, 0.6]);
        assert_eq!(c.sampling.clean_fraction, 0.55);
        let c = parse_config("noise.mode=custom\nnoise.ratios=0,0.8").unwrap();
        assert_eq!(c.noise.group_ratios, vec![0.0, 0.8]);
    }

    #[test]
    fn errors_name_key_and_line() {
        let err = parse_config("# comment\nseed=1\nbogus.key=3\n").unwrap_err();
        assert!(
            matches!(err, Error::ConfigKey { ref key, line: 3, .. } if key == "bogus.key"),
            "{err}"
        );
        let err = parse_config("optim.lr=fast").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, line: 1, .. } if key == "optim.lr"));
        let err = parse_config("\noptim.momentum=1.5").unwrap_err();
        assert!(
            matches!(err, Error::ConfigKey { ref key, line: 2, .. } if key == "optim.momentum")
        );
        let err = parse_config("rounds=50\nschedule.r_min=80").unwrap_err();
        assert!(
            matches!(err, Error::ConfigKey { ref key, line: 2, .. } if key == "schedule.r_min")
        );
        let err = parse_config("noise.ratios=0.1").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { .. }));
        assert!(parse_config("just words").is_err());
        assert!(parse_config("data.source=idx").is_err());
    }

    #[test]
    fn overrides_are_last_wins() {
        let c = parse_config_with_overrides(
            "noise.mode=high",
            &["noise.mode=low".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!(c.noise.mode, NoiseMode::Low);
        assert_eq!(c.seed, 9);
        let err = parse_config_with_overrides("", &["nope=1".into()]).unwrap_err();
        assert!(matches!(err, Error::ConfigKey { line: 0, .. }));
    }

    #[test]
    fn budget_matched_constant_resolves() {
        let c = parse_config("rounds=4\nschedule.kind=constant\nschedule.budget_reference=logarithm\nschedule.r_min=2").unwrap();
        assert_eq!(c.schedule.constant_epochs, 40);
        let again = parse_config(&c.echo()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn echo_round_trips() {
        for text in [
            "",
            "variant=no_ssl\nnoise.flavor=pair\nschedule.kind=cosine\nrounds=60\nschedule.r_min=24\nschedule.t_max=20\nschedule.t_min=4",
            "noise.mode=custom\nnoise.client_ratios=0,0.1,0.2\npartition.num_clients=3\nmodel.activation=relu\nsampling.clean_fraction=1",
            "data.source=idx\ndata.train_images=a\ndata.train_labels=b\ndata.test_images=c\ndata.test_labels=d\npartition.samples_per_client=600",
        ] {
            let c = parse_config(text).unwrap();
            let echoed = c.echo();
            let again = parse_config(&echoed).unwrap();
            assert_eq!(again, c);
            assert_eq!(again.echo(), echoed);
        }
    }

    #[test]
    fn metadata_split() {
        let c = parse_config("seed=4").unwrap();
        let text = format!("{}meta.psi2=1.05\nmeta.build=abc\n", c.echo());
        let (parsed, meta) = parse_metadata(&text).unwrap();
        assert_eq!(parsed, c);
        assert_eq!(meta["meta.build"], "abc");
    }
}
