//! Datasets, client partitioning and label-noise injection.
//!
//! Features are stored row-major in a flat `Vec<f64>`. A [`ClientShard`]
//! keeps both the true and the given (possibly corrupted) labels so that
//! selection quality can be measured against ground truth.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::util::{apportion, round_count};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    true_labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        true_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {num_classes}"
            )));
        }
        if dim == 0 || features.len() != dim * true_labels.len() {
            return Err(Error::Shape {
                expected: dim * true_labels.len(),
                actual: features.len(),
            });
        }
        if let Some(&bad) = true_labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            dim,
            true_labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }
}

/// One client's local data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub features: Vec<f64>,
    pub true_labels: Vec<usize>,
    pub given_labels: Vec<usize>,
    pub nominal_noise_ratio: f64,
    /// Row indices into the dataset this shard was cut from.
    pub source_indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_clean(&self, i: usize) -> bool {
        self.given_labels[i] == self.true_labels[i]
    }

    pub fn clean_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_clean(i)).count()
    }

    /// Fraction of given labels that differ from the truth.
    pub fn realized_noise_ratio(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (self.len() - self.clean_count()) as f64 / self.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    DirichletLabel,
    DirichletSize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub beta: f64,
    pub num_clients: usize,
    /// `None` means "use every sample".
    pub samples_per_client: Option<usize>,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "partition beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.num_clients == 0 {
            return Err(Error::Config("partition needs at least one client".into()));
        }
        if self.samples_per_client == Some(0) {
            return Err(Error::Config("samples_per_client must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseFlavor {
    Symmetric,
    Pair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    High,
    Low,
    Custom,
}

/// Heterogeneous noise ratios. Client `k` belongs to group `k mod G`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub flavor: NoiseFlavor,
    pub mode: NoiseMode,
    pub group_ratios: Vec<f64>,
    /// Per-client ratios; takes precedence over groups when present.
    pub custom_ratios: Option<Vec<f64>>,
}

impl NoiseSpec {
    /// The four-group presets used in the heterogeneous-noise experiments.
    pub fn preset(flavor: NoiseFlavor, mode: NoiseMode) -> Self {
        let group_ratios = match (flavor, mode) {
            (NoiseFlavor::Symmetric, NoiseMode::High) => vec![0.5, 0.6, 0.7, 0.8],
            (NoiseFlavor::Pair, NoiseMode::High) => vec![0.3, 0.5, 0.6, 0.8],
            (_, NoiseMode::Low) => vec![0.3, 0.4, 0.5, 0.6],
            (_, NoiseMode::Custom) => vec![0.0],
        };
        Self {
            flavor,
            mode,
            group_ratios,
            custom_ratios: None,
        }
    }

    pub fn clean(flavor: NoiseFlavor) -> Self {
        Self {
            flavor,
            mode: NoiseMode::Custom,
            group_ratios: vec![0.0],
            custom_ratios: None,
        }
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        let all = self
            .group_ratios
            .iter()
            .chain(self.custom_ratios.iter().flatten());
        for &r in all {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("noise ratio {r} outside [0, 1]")));
            }
        }
        match &self.custom_ratios {
            Some(c) if c.len() != num_clients => Err(Error::Config(format!(
                "custom noise ratios list has {} entries for {num_clients} clients",
                c.len()
            ))),
            None if self.group_ratios.is_empty() => {
                Err(Error::Config("noise needs at least one group ratio".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn ratio_for_client(&self, client: usize) -> f64 {
        match &self.custom_ratios {
            Some(c) => c[client],
            None => self.group_ratios[client % self.group_ratios.len()],
        }
    }
}

/// Gaussian clusters whose means sit on the unit circle in the first two
/// coordinates; the remaining coordinates carry only noise. Samples are
/// emitted class by class.
pub fn generate_synthetic(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs num_classes >= 2 and dim >= 2 (got {num_classes}, {dim})"
        )));
    }
    if !(cluster_spread >= 0.0) || !cluster_spread.is_finite() {
        return Err(Error::Config(format!(
            "cluster_spread must be >= 0, got {cluster_spread}"
        )));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
        let mut mean = vec![0.0; dim];
        mean[0] = angle.cos();
        mean[1] = angle.sin();
        for _ in 0..samples_per_class {
            for &m in &mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + cluster_spread * z);
            }
            labels.push(class);
        }
    }
    Dataset::new(features, dim, labels, num_classes)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset,
            message: format!("truncated header (file is {} bytes)", bytes.len()),
        })
}

/// Parse an IDX image file: returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "truncated image data: expected {need} bytes after header, found {}",
                body.len()
            ),
        });
    }
    Ok((n, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "truncated label data: expected {n} bytes after header, found {}",
                body.len()
            ),
        });
    }
    Ok(&body[..n])
}

/// Build a dataset from in-memory IDX image and label files.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let label_bytes = parse_idx_labels(labels)?;
    if label_bytes.len() != n {
        return Err(Error::Parse {
            offset: 4,
            message: format!(
                "count mismatch: {n} images but {} labels",
                label_bytes.len()
            ),
        });
    }
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let true_labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let num_classes = true_labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, rows * cols, true_labels, num_classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    dataset_from_idx(&images, &labels)
}

/// Draw from a symmetric Dirichlet via normalized Gamma variates.
fn sample_dirichlet(rng: &mut StreamRng, beta: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated > 0");
    let mut q: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = q.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        q.iter_mut().for_each(|v| *v /= sum);
    } else {
        // every draw underflowed: the limit of a tiny beta is a one-hot
        q.iter_mut().for_each(|v| *v = 0.0);
        q[rng.random_range(0..k)] = 1.0;
    }
    q
}

fn class_pools(dataset: &Dataset, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.true_labels().iter().enumerate() {
        pools[y].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    pools
}

fn build_shard(dataset: &Dataset, client_id: usize, mut indices: Vec<usize>) -> ClientShard {
    indices.sort_unstable();
    let dim = dataset.dim();
    let mut features = Vec::with_capacity(indices.len() * dim);
    for &i in &indices {
        features.extend_from_slice(dataset.row(i));
    }
    let true_labels: Vec<usize> = indices.iter().map(|&i| dataset.true_labels()[i]).collect();
    ClientShard {
        client_id,
        dim,
        num_classes: dataset.num_classes(),
        features,
        given_labels: true_labels.clone(),
        true_labels,
        nominal_noise_ratio: 0.0,
        source_indices: indices,
    }
}

/// Split a dataset across clients. Given labels start equal to the truth.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    let k = spec.num_clients;
    let n = dataset.len();
    let total = match spec.samples_per_client {
        Some(m) => m.checked_mul(k).filter(|&t| t <= n).ok_or_else(|| {
            Error::Allocation(format!(
                "{k} clients x {m} samples exceeds the {n} available"
            ))
        })?,
        None => n,
    };
    if total < k {
        return Err(Error::Allocation(format!(
            "{total} samples cannot cover {k} clients"
        )));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut pools = class_pools(dataset, &mut rng);
    let class_sizes: Vec<f64> = pools.iter().map(|p| p.len() as f64).collect();
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); k];

    match spec.mode {
        PartitionMode::Iid => match spec.samples_per_client {
            None => {
                for pool in &pools {
                    let base = pool.len() / k;
                    let extra = pool.len() % k;
                    let mut cursor = 0;
                    for (client, slot) in assigned.iter_mut().enumerate() {
                        let take = base + usize::from(client < extra);
                        slot.extend_from_slice(&pool[cursor..cursor + take]);
                        cursor += take;
                    }
                }
            }
            Some(m) => {
                let per_class = apportion(&class_sizes, m);
                for (class, pool) in pools.iter().enumerate() {
                    let need = per_class[class] * k;
                    if need > pool.len() {
                        return Err(Error::Allocation(format!(
                            "class {class} has {} samples, IID split needs {need}",
                            pool.len()
                        )));
                    }
                    for (client, slot) in assigned.iter_mut().enumerate() {
                        let start = client * per_class[class];
                        slot.extend_from_slice(&pool[start..start + per_class[class]]);
                    }
                }
            }
        },
        PartitionMode::DirichletLabel => {
            let budget = apportion(&class_sizes, total);
            for (class, pool) in pools.iter_mut().enumerate() {
                pool.truncate(budget[class]);
                let q = sample_dirichlet(&mut rng, spec.beta, k);
                let counts = apportion(&q, pool.len());
                let mut cursor = 0;
                for (slot, c) in assigned.iter_mut().zip(counts) {
                    slot.extend_from_slice(&pool[cursor..cursor + c]);
                    cursor += c;
                }
            }
        }
        PartitionMode::DirichletSize => {
            let q = sample_dirichlet(&mut rng, spec.beta, k);
            let sizes = apportion(&q, total);
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let mut cursor = 0;
            for (slot, s) in assigned.iter_mut().zip(sizes) {
                slot.extend_from_slice(&all[cursor..cursor + s]);
                cursor += s;
            }
        }
    }

    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(client, idx)| build_shard(dataset, client, idx))
        .collect())
}

/// Corrupt exactly `round(ratio * n_k)` labels chosen uniformly without
/// replacement. Symmetric flips draw uniformly among the other classes;
/// pair flips map `y` to `(y + 1) mod C`.
pub fn inject_noise(
    shard: &ClientShard,
    flavor: NoiseFlavor,
    ratio: f64,
    seed: u64,
) -> Result<ClientShard> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("noise ratio {ratio} outside [0, 1]")));
    }
    let mut out = shard.clone();
    out.given_labels = out.true_labels.clone();
    out.nominal_noise_ratio = ratio;
    let n = out.len();
    let m = round_count(ratio * n as f64).min(n);
    let c = out.num_classes;
    let mut rng = StreamRng::seed_from_u64(seed);
    for i in rand::seq::index::sample(&mut rng, n, m) {
        let y = out.true_labels[i];
        out.given_labels[i] = match flavor {
            NoiseFlavor::Pair => (y + 1) % c,
            NoiseFlavor::Symmetric => {
                let r = rng.random_range(0..c - 1);
                if r < y {
                    r
                } else {
                    r + 1
                }
            }
        };
    }
    Ok(out)
}
