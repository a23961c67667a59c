//! Per-round diagnostics and run logs.
//!
//! The CSV log has a fixed header and one row per round. Missing values
//! are empty fields; reals are written in shortest round-trip form so the
//! log parses back to identical records.

use std::io::Write;
use std::path::Path;

use crate::data::ClientShard;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "round",
    "selected",
    "epochs",
    "accuracy",
    "noise_ratio",
    "precision",
    "recall",
    "cum_batches",
    "pl_accept",
    "wall_ms",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub selected: Vec<usize>,
    pub epochs: u32,
    pub accuracy: f64,
    pub noise_ratio: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub cum_batches: u64,
    pub pl_accept: Option<f64>,
    pub wall_ms: Option<u64>,
}

/// Unweighted mean of the realized noise ratios of the selected clients.
pub fn avg_selected_noise_ratio(selected: &[&ClientShard]) -> Option<f64> {
    if selected.is_empty() {
        return None;
    }
    Some(
        selected
            .iter()
            .map(|s| s.realized_noise_ratio())
            .sum::<f64>()
            / selected.len() as f64,
    )
}

/// Label-selection quality for one client, counts pooled over its epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelectionCounts {
    pub selected: usize,
    pub selected_clean: usize,
    /// Truly clean samples available, summed over epochs.
    pub clean_available: usize,
}

impl SelectionCounts {
    pub fn from_epochs(shard: &ClientShard, labeled_per_epoch: &[Vec<usize>]) -> Self {
        let clean = shard.clean_count();
        let mut out = Self::default();
        for labeled in labeled_per_epoch {
            out.selected += labeled.len();
            out.selected_clean += labeled.iter().filter(|&&i| shard.is_clean(i)).count();
            out.clean_available += clean;
        }
        out
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            selected: self.selected + other.selected,
            selected_clean: self.selected_clean + other.selected_clean,
            clean_available: self.clean_available + other.clean_available,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        (self.selected > 0).then(|| self.selected_clean as f64 / self.selected as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.clean_available > 0).then(|| self.selected_clean as f64 / self.clean_available as f64)
    }
}

/// Micro-averaged precision and recall of the labeled subsets across the
/// selected clients.
pub fn label_precision_recall(
    selections: &[(&ClientShard, &[Vec<usize>])],
) -> (Option<f64>, Option<f64>) {
    let pooled = selections
        .iter()
        .map(|(shard, epochs)| SelectionCounts::from_epochs(shard, epochs))
        .fold(SelectionCounts::default(), SelectionCounts::merge);
    (pooled.precision(), pooled.recall())
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_to_csv(records: &[RoundRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Csv {
        path: "<memory>".into(),
        source: e,
    };
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in records {
        let selected = r
            .selected
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.round.to_string(),
            selected,
            r.epochs.to_string(),
            r.accuracy.to_string(),
            fmt_opt(r.noise_ratio),
            fmt_opt(r.precision),
            fmt_opt(r.recall),
            r.cum_batches.to_string(),
            fmt_opt(r.pl_accept),
            fmt_opt(r.wall_ms),
        ])
        .map_err(wrap)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, row: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Config(format!("row {row}: cannot parse {name} from {field:?}")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, name: &str, row: usize) -> Result<Option<T>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_field(field, name, row).map(Some)
    }
}

pub fn records_from_csv(text: &str) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let wrap = |e: csv::Error| Error::Csv {
        path: "<memory>".into(),
        source: e,
    };
    let header = rdr.headers().map_err(wrap)?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Config(format!(
            "unexpected run-log header {header:?}"
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(wrap)?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let selected = if f(1).is_empty() {
            Vec::new()
        } else {
            f(1).split(';')
                .map(|s| parse_field(s, "selected", row))
                .collect::<Result<_>>()?
        };
        out.push(RoundRecord {
            round: parse_field(f(0), "round", row)?,
            selected,
            epochs: parse_field(f(2), "epochs", row)?,
            accuracy: parse_field(f(3), "accuracy", row)?,
            noise_ratio: parse_opt(f(4), "noise_ratio", row)?,
            precision: parse_opt(f(5), "precision", row)?,
            recall: parse_opt(f(6), "recall", row)?,
            cum_batches: parse_field(f(7), "cum_batches", row)?,
            pl_accept: parse_opt(f(8), "pl_accept", row)?,
            wall_ms: parse_opt(f(9), "wall_ms", row)?,
        });
    }
    Ok(out)
}

pub fn write_run_log(records: &[RoundRecord], path: &Path) -> Result<()> {
    let text = records_to_csv(records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_run_log(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    records_from_csv(&text)
}

/// Flat `key=value` sidecar, one entry per line.
pub fn write_metadata(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (k, v) in entries {
        writeln!(f, "{k}={v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
