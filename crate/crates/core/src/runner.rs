//! Multi-trial runs and the per-variant comparison table.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::server::{run_experiment, ExperimentSummary};
use crate::telemetry::{write_metadata, write_run_log};

/// Build identifier baked in at compile time.
pub const BUILD_DESCRIBE: &str = env!("FEDNOIL_BUILD_DESCRIBE");

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub parallel: bool,
}

impl RunManifest {
    /// Seeds default to `seed, seed+1, ..` for `trials` runs; variants
    /// default to the configured one.
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seeds: (0..config.trials as u64)
                .map(|i| config.seed.wrapping_add(i))
                .collect(),
            variants: vec![config.variant],
            config,
            config_path: None,
            out_dir: out_dir.into(),
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        Ok(())
    }

    /// Configuration for one cell of the grid.
    pub fn trial_config(&self, variant: Variant, seed: u64) -> ExperimentConfig {
        let mut c = self.config.clone();
        c.variant = variant;
        c.seed = seed;
        c.trials = 1;
        c
    }
}

pub fn log_stem(variant: Variant, seed: u64) -> String {
    format!("{variant}_seed{seed}")
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub variant: Variant,
    pub seed: u64,
    pub result: std::result::Result<ExperimentSummary, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub trials_ok: usize,
    pub trials_failed: usize,
    /// Mean reported accuracy, as a fraction.
    pub mean: Option<f64>,
    /// Sample standard deviation; absent for fewer than two trials.
    pub std: Option<f64>,
    /// True if any trial did not converge.
    pub not_converged: bool,
}

#[derive(Clone, Debug)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub trials: Vec<TrialOutcome>,
}

impl SummaryTable {
    pub fn from_trials(variants: &[Variant], trials: Vec<TrialOutcome>) -> Self {
        let rows = variants
            .iter()
            .map(|&v| {
                let mine: Vec<&TrialOutcome> = trials.iter().filter(|t| t.variant == v).collect();
                let ok: Vec<&ExperimentSummary> =
                    mine.iter().filter_map(|t| t.result.as_ref().ok()).collect();
                let accs: Vec<f64> = ok.iter().map(|s| s.reported_accuracy()).collect();
                let mean = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
                let std = mean.filter(|_| accs.len() >= 2).map(|m| {
                    (accs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (accs.len() - 1) as f64)
                        .sqrt()
                });
                SummaryRow {
                    variant: v,
                    trials_ok: ok.len(),
                    trials_failed: mine.len() - ok.len(),
                    mean,
                    std,
                    not_converged: ok.iter().any(|s| !s.converged),
                }
            })
            .collect();
        Self { rows, trials }
    }

    pub fn any_failed(&self) -> bool {
        self.trials.iter().any(|t| t.result.is_err())
    }

    pub fn row(&self, variant: Variant) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>16}  trials", "variant", "accuracy (%)")?;
        for row in &self.rows {
            let mark = if row.not_converged { "*" } else { "" };
            let acc = match (row.mean, row.std) {
                (Some(m), Some(s)) => format!("{:.2}±{:.2}{mark}", m * 100.0, s * 100.0),
                (Some(m), None) => format!("{:.2}{mark}", m * 100.0),
                (None, _) => "error".to_string(),
            };
            write!(
                f,
                "{:<16} {:>16}  {}",
                row.variant.name(),
                acc,
                row.trials_ok
            )?;
            if row.trials_failed > 0 {
                write!(f, " ({} failed)", row.trials_failed)?;
            }
            writeln!(f)?;
        }
        if self.rows.iter().any(|r| r.not_converged) {
            writeln!(f, "* not converged; max accuracy reported")?;
        }
        for t in &self.trials {
            if let Err(e) = &t.result {
                writeln!(f, "error {} seed {}: {e}", t.variant, t.seed)?;
            }
        }
        Ok(())
    }
}

/// Config echo plus run metadata, as written beside each log.
pub fn metadata_entries(config: &ExperimentConfig) -> Vec<(String, String)> {
    let mut e = config.entries();
    let s = &config.schedule;
    e.push(("meta.psi1".into(), s.psi1.to_string()));
    e.push(("meta.psi2".into(), s.psi2.to_string()));
    e.push(("meta.seed".into(), config.seed.to_string()));
    e.push(("meta.build".into(), BUILD_DESCRIBE.to_string()));
    e.push(("meta.version".into(), env!("CARGO_PKG_VERSION").to_string()));
    e
}

fn run_one(manifest: &RunManifest, variant: Variant, seed: u64) -> TrialOutcome {
    let config = manifest.trial_config(variant, seed);
    let stem = log_stem(variant, seed);
    let dir = &manifest.out_dir;
    let result = (|| -> Result<ExperimentSummary> {
        let (records, summary) = run_experiment(&config)?;
        write_run_log(&records, &dir.join(format!("{stem}.csv")))?;
        write_metadata(
            &dir.join(format!("{stem}.meta")),
            &metadata_entries(&config),
        )?;
        Ok(summary)
    })();
    TrialOutcome {
        variant,
        seed,
        result: result.map_err(|e| e.to_string()),
    }
}

/// Run every (variant, seed) cell, writing one log per cell and
/// `summary.txt`. Cell failures are recorded, not propagated.
pub fn run(manifest: &RunManifest) -> Result<SummaryTable> {
    manifest.validate()?;
    create_out_dir(&manifest.out_dir)?;
    let cells: Vec<(Variant, u64)> = manifest
        .variants
        .iter()
        .flat_map(|&v| manifest.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let trials: Vec<TrialOutcome> = if manifest.parallel {
        cells
            .par_iter()
            .map(|&(v, s)| run_one(manifest, v, s))
            .collect()
    } else {
        cells
            .iter()
            .map(|&(v, s)| run_one(manifest, v, s))
            .collect()
    };
    let table = SummaryTable::from_trials(&manifest.variants, trials);
    let path = manifest.out_dir.join("summary.txt");
    std::fs::write(&path, table.to_string()).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
