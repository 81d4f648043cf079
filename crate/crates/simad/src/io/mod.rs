//! File formats: CSV datasets and score files, the binary checkpoint, the
//! run configuration, metric reports, and the training log.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{BiasSpec, MetricReport, ThresholdSpec};
use crate::model::{ModelConfig, ModelError, ModelState, ScoreSeries};
use crate::tensor::{Elem, Tensor};
use crate::trainer::{TrainConfig, TrainRecord};


#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format { path: path.display().to_string(), msg: msg.into() }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

// ---------------------------------------------------------------- datasets

/// An in-memory dataset CSV: zero or more numeric channels and an optional
/// 0/1 label column. A `timestamp` column is written on emit and ignored on
/// parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    /// Channel-major values; every channel has the same length.
    pub channels: Vec<Vec<Elem>>,
    pub labels: Option<Vec<bool>>,
}

impl Dataset {
    pub fn from_series(values: &Tensor, labels: Option<&[bool]>) -> Dataset {
        let &[n, c] = values.shape() else {
            panic!("dataset series must be [timestamps, channels], got {:?}", values.shape())
        };
        if let Some(l) = labels {
            assert_eq!(l.len(), n, "labels must align with the series");
        }
        let channels = (0..c)
            .map(|ch| (0..n).map(|t| values.data()[t * c + ch]).collect())
            .collect();
        Dataset {
            channel_names: (0..c).map(|ch| format!("ch{ch}")).collect(),
            channels,
            labels: labels.map(<[bool]>::to_vec),
        }
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or_else(
            || self.labels.as_ref().map_or(0, Vec::len),
            Vec::len,
        )
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The channels as a `[timestamps, channels]` tensor.
    pub fn series(&self, path_for_errors: &Path) -> Result<Tensor, IoError> {
        if self.channels.is_empty() {
            return Err(format_err(path_for_errors, "dataset has no channel columns"));
        }
        let n = self.len();
        let c = self.channels.len();
        let mut data = Vec::with_capacity(n * c);
        for t in 0..n {
            for ch in &self.channels {
                data.push(ch[t]);
            }
        }
        Ok(Tensor::new(vec![n, c], data))
    }
}

/// Read a dataset CSV: header row, optional `timestamp` column (ignored),
/// numeric channel columns in order, optional trailing `label` column.
pub fn read_dataset(path: &Path) -> Result<Dataset, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;

    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut channel_cols = Vec::new();
    let mut channel_names = Vec::new();
    let mut label_col = None;
    for (i, name) in headers.iter().enumerate() {
        match name {
            "timestamp" => {}
            "label" => label_col = Some(i),
            _ => {
                channel_cols.push(i);
                channel_names.push(name.to_string());
            }
        }
    }

    let mut channels: Vec<Vec<Elem>> = vec![Vec::new(); channel_cols.len()];
    let mut labels: Vec<bool> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", headers.len(), record.len()),
            ));
        }
        for (slot, &col) in channels.iter_mut().zip(&channel_cols) {
            let cell = &record[col];
            let value: Elem = cell.parse().map_err(|_| {
                parse_err(path, line, format!("column {:?}: {cell:?} is not numeric", &headers[col]))
            })?;
            slot.push(value);
        }
        if let Some(col) = label_col {
            labels.push(match &record[col] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(path, line, format!("label {other:?} is not 0 or 1")))
                }
            });
        }
    }

    Ok(Dataset { channel_names, channels, labels: label_col.map(|_| labels) })
}

/// Write a dataset CSV with a `timestamp` index column; floats are printed
/// shortest-round-trip so a re-parse reproduces the values bitwise.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(dataset.channel_names.iter().cloned());
    if dataset.labels.is_some() {
        header.push("label".to_string());
    }
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;

    for t in 0..dataset.len() {
        let mut row = vec![t.to_string()];
        for ch in &dataset.channels {
            row.push(ch[t].to_string());
        }
        if let Some(labels) = &dataset.labels {
            row.push(if labels[t] { "1" } else { "0" }.to_string());
        }
        writer.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(file_err(path))?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = match e.position() {
        Some(p) => p.line(),
        None => 0,
    };
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::File { path: path.display().to_string(), source },
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

// ------------------------------------------------------------ score files

/// Per-timestamp anomaly scores with their two components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreRow {
    timestamp: usize,
    score: f64,
    mse: f64,
    sim: f64,
}

pub fn write_scores(path: &Path, scores: &ScoreSeries) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for t in 0..scores.total.len() {
        writer
            .serialize(ScoreRow {
                timestamp: t,
                score: scores.total[t],
                mse: scores.mse[t],
                sim: scores.sim[t],
            })
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(file_err(path))?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<ScoreSeries, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut series = ScoreSeries { total: Vec::new(), mse: Vec::new(), sim: Vec::new() };
    for row in reader.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        series.total.push(row.score);
        series.mse.push(row.mse);
        series.sim.push(row.sim);
    }
    Ok(series)
}

// ------------------------------------------------------------- checkpoints

const CHECKPOINT_MAGIC: &[u8; 8] = b"SIMADCK1";
/// Version 1 stores 32-bit float payloads; version 2 (the f64 build) stores
/// 64-bit. A build only loads checkpoints of its own element width, so the
/// bitwise round-trip guarantee holds in both modes.
#[cfg(not(feature = "f64"))]
const CHECKPOINT_VERSION: u32 = 1;
#[cfg(feature = "f64")]
const CHECKPOINT_VERSION: u32 = 2;

pub fn save_checkpoint(path: &Path, model: &ModelState) -> Result<(), IoError> {
    let config_text = toml::to_string(model.config())
        .map_err(|e| format_err(path, format!("config serialization failed: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(model.names().len() as u32).to_le_bytes());
    for (name, tensor) in model.entries() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(file_err(path))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let piece = self.bytes.get(self.offset..self.offset + n)?;
        self.offset += n;
        Some(piece)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    let mut cur = Cursor { bytes: &bytes, offset: 0 };
    let bad = |msg: String| format_err(path, msg);
    let truncated = || format_err(path, "checkpoint truncated");

    let magic = cur.take(8).ok_or_else(truncated)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}, not a checkpoint")));
    }
    let version = cur.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "checkpoint version {version} unsupported (this build reads {CHECKPOINT_VERSION})"
        )));
    }

    let config_len = cur.u32().ok_or_else(truncated)? as usize;
    let config_bytes = cur.take(config_len).ok_or_else(truncated)?;
    let config_text = std::str::from_utf8(config_bytes)
        .map_err(|e| bad(format!("config block is not UTF-8: {e}")))?;
    let config: ModelConfig =
        toml::from_str(config_text).map_err(|e| bad(format!("config block invalid: {e}")))?;

    let count = cur.u32().ok_or_else(truncated)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32().ok_or_else(truncated)? as usize;
        let name_bytes = cur.take(name_len).ok_or_else(truncated)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| bad(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.u32().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64().ok_or_else(truncated)? as usize);
        }
        let numel: usize = shape.iter().product();
        let elem_size = std::mem::size_of::<Elem>();
        let payload = cur.take(numel * elem_size).ok_or_else(truncated)?;
        let data: Vec<Elem> = payload
            .chunks_exact(elem_size)
            .map(|b| Elem::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(shape, data)));
    }
    if cur.offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes after tensors", bytes.len() - cur.offset)));
    }

    Ok(ModelState::from_entries(config, entries)?)
}

// ------------------------------------------------------------- run config

fn default_threshold() -> String {
    "best-f1".to_string()
}

fn default_bias() -> String {
    "empirical:20".to_string()
}

fn default_naff_beta() -> f64 {
    0.5
}

/// Evaluation options as they appear in config files and on the command
/// line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    /// `best-f1`, `quantile:Q`, or `value:V`.
    #[serde(default = "default_threshold")]
    pub threshold: String,
    /// `empirical`, `empirical:R`, `ideal`, or `constant:B`.
    #[serde(default = "default_bias")]
    pub bias: String,
    /// Reference baseline of the normalized affiliation score, in [0, 1).
    #[serde(default = "default_naff_beta")]
    pub naff_beta: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            threshold: default_threshold(),
            bias: default_bias(),
            naff_beta: default_naff_beta(),
        }
    }
}

/// `best-f1`, `quantile:Q`, or `value:V`.
pub fn parse_threshold_spec(text: &str) -> Result<ThresholdSpec, String> {
    if text == "best-f1" {
        return Ok(ThresholdSpec::BestF1);
    }
    if let Some(q) = text.strip_prefix("quantile:") {
        let q: f64 = q.parse().map_err(|_| format!("bad quantile in {text:?}"))?;
        if !(0.0..=1.0).contains(&q) {
            return Err(format!("quantile {q} outside [0, 1]"));
        }
        return Ok(ThresholdSpec::Quantile(q));
    }
    if let Some(v) = text.strip_prefix("value:") {
        let v: f64 = v.parse().map_err(|_| format!("bad threshold in {text:?}"))?;
        if !v.is_finite() {
            return Err(format!("threshold {v} is not finite"));
        }
        return Ok(ThresholdSpec::Value(v));
    }
    Err(format!("unknown threshold mode {text:?}; use best-f1, quantile:Q, or value:V"))
}

/// `empirical`, `empirical:R`, `ideal`, or `constant:B`.
pub fn parse_bias_spec(text: &str) -> Result<BiasSpec, String> {
    if text == "empirical" {
        return Ok(BiasSpec::Empirical { reps: 20 });
    }
    if let Some(r) = text.strip_prefix("empirical:") {
        let reps: usize = r.parse().map_err(|_| format!("bad repetition count in {text:?}"))?;
        if reps == 0 {
            return Err("empirical bias needs at least one repetition".to_string());
        }
        return Ok(BiasSpec::Empirical { reps });
    }
    if text == "ideal" {
        return Ok(BiasSpec::Ideal);
    }
    if let Some(b) = text.strip_prefix("constant:") {
        let b: f64 = b.parse().map_err(|_| format!("bad constant in {text:?}"))?;
        if !(0.0..1.0).contains(&b) {
            return Err(format!("bias constant {b} outside [0, 1)"));
        }
        return Ok(BiasSpec::Constant(b));
    }
    Err(format!("unknown bias mode {text:?}; use empirical[:R], ideal, or constant:B"))
}

/// Everything a run needs: model, training, and metric settings. Any
/// omitted field takes its default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        parse_threshold_spec(&self.metrics.threshold)?;
        parse_bias_spec(&self.metrics.bias)?;
        if !(0.0..1.0).contains(&self.metrics.naff_beta) {
            return Err(format!("naff_beta {} outside [0, 1)", self.metrics.naff_beta));
        }
        Ok(())
    }
}

pub fn read_run_config(path: &Path) -> Result<RunConfig, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    config.validate().map_err(|msg| format_err(path, msg))?;
    Ok(config)
}

pub fn write_run_config(path: &Path, config: &RunConfig) -> Result<(), IoError> {
    let text = toml::to_string_pretty(config)
        .map_err(|e| format_err(path, format!("config serialization failed: {e}")))?;
    fs::write(path, text).map_err(file_err(path))
}

// ----------------------------------------------------- reports and logs

pub fn write_report(path: &Path, report: &MetricReport) -> Result<(), IoError> {
    let text = toml::to_string_pretty(report)
        .map_err(|e| format_err(path, format!("report serialization failed: {e}")))?;
    fs::write(path, text).map_err(file_err(path))
}

pub fn read_report(path: &Path) -> Result<MetricReport, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

/// Training log as CSV, one line per iteration.
pub fn write_train_log(path: &Path, log: &[TrainRecord]) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for record in log {
        writer.serialize(record).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(file_err(path))?;
    Ok(())
}

pub fn read_train_log(path: &Path) -> Result<Vec<TrainRecord>, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<TrainRecord>, _>>()
        .map_err(|e| csv_err(path, e))
}
