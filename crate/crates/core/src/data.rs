//! Datasets: CSV ingestion, min-max scaling, stratified splitting and the
//! synthetic still/motion accelerometer generator.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            timestamp: None,
        }
    }
}

/// Raw reading from one sensor node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: String,
    pub timestamp: u64,
    pub values: Vec<f64>,
}

/// Observed `[min, max]` of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    /// Maps into `[0, 1]`, clamping values outside the observed range.
    /// A constant feature (`max == min`) maps to 0.
    #[inline]
    pub fn scale(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((v - self.min) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Applies stored ranges to a raw feature vector.
pub fn scale_features(ranges: &[FeatureRange], values: &[f64]) -> Result<Vec<f64>> {
    if ranges.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: ranges.len(),
            actual: values.len(),
        });
    }
    Ok(ranges.iter().zip(values).map(|(r, &v)| r.scale(v)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    normalization: Option<Vec<FeatureRange>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, feature_names: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        let width = feature_names.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != width {
                return Err(Error::MalformedRow {
                    line: i + 1,
                    message: format!("expected {width} features, found {}", s.features.len()),
                });
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {i}")));
            }
            if s.label >= class_names.len() {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: class_names.len(),
                });
            }
        }
        Ok(Self {
            samples,
            feature_names,
            class_names,
            normalization: None,
        })
    }

    /// Unnamed features `f0..` and classes `c0..`.
    pub fn from_samples(samples: Vec<Sample>, feature_count: usize, class_count: usize) -> Result<Self> {
        Self::new(
            samples,
            (0..feature_count).map(|i| format!("f{i}")).collect(),
            (0..class_count).map(|i| format!("c{i}")).collect(),
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn normalization(&self) -> Option<&[FeatureRange]> {
        self.normalization.as_deref()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order, keeping names and normalization.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Concatenation of two datasets with identical schemas.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.feature_names != other.feature_names || self.class_names != other.class_names {
            return Err(Error::ShapeMismatch("datasets have different schemas".into()));
        }
        let mut out = self.clone();
        out.samples.extend(other.samples.iter().cloned());
        Ok(out)
    }

    /// Rescales with previously computed ranges (e.g. train ranges on test data).
    pub fn apply_normalization(&self, ranges: &[FeatureRange]) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    features: scale_features(ranges, &s.features)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: Some(ranges.to_vec()),
        })
    }

    /// Order-sensitive fingerprint `(rows, crc32)` over labels and feature bits.
    pub fn fingerprint(&self) -> (usize, u32) {
        let mut h = crc32fast::Hasher::new();
        for s in &self.samples {
            h.update(&(s.label as u64).to_le_bytes());
            for v in &s.features {
                h.update(&v.to_bits().to_le_bytes());
            }
        }
        (self.len(), h.finalize())
    }
}

/// Per-feature `[0, 1]` scaling. The observed ranges are stored on the result.
pub fn normalize_minmax(data: &Dataset) -> Result<Dataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ranges = feature_ranges(data);
    data.apply_normalization(&ranges)
}

pub fn feature_ranges(data: &Dataset) -> Vec<FeatureRange> {
    (0..data.feature_count())
        .map(|j| {
            let (min, max) = data
                .samples
                .iter()
                .map(|s| s.features[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            FeatureRange { min, max }
        })
        .collect()
}

/// Column reference for [`CsvSchema`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Last,
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Comma,
    Tab,
    /// Any run of spaces or tabs.
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub has_header: bool,
    pub label_column: Column,
    /// `None` means every column except the label.
    #[serde(default)]
    pub feature_columns: Option<Vec<Column>>,
    #[serde(default = "default_delimiter")]
    pub delimiter: Delimiter,
    /// Rows containing this token in any used column are dropped.
    #[serde(default)]
    pub missing_token: Option<String>,
    /// Fixed class order; labels outside it are an error. `None`: first appearance.
    #[serde(default)]
    pub class_order: Option<Vec<String>>,
    /// Label rewrites applied before class lookup, e.g. collapsing `2` into `1`.
    #[serde(default)]
    pub label_map: Vec<(String, String)>,
}

fn default_delimiter() -> Delimiter {
    Delimiter::Comma
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            has_header: false,
            label_column: Column::Last,
            feature_columns: None,
            delimiter: Delimiter::Comma,
            missing_token: None,
            class_order: None,
            label_map: Vec::new(),
        }
    }
}

/// How the Cleveland heart-disease `num` field (0..=4) becomes a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeartLabels {
    FiveClass,
    /// 0 against 1..=4.
    Binary,
}

impl CsvSchema {
    pub fn iris() -> Self {
        Self {
            has_header: true,
            ..Self::default()
        }
    }

    /// `seeds_dataset.txt` (whitespace separated, class 1..=3 last).
    pub fn seeds() -> Self {
        Self {
            delimiter: Delimiter::Whitespace,
            class_order: Some(vec!["1".into(), "2".into(), "3".into()]),
            ..Self::default()
        }
    }

    /// 14-attribute `processed.cleveland.data`.
    pub fn cleveland(mode: HeartLabels) -> Self {
        let (class_order, label_map) = match mode {
            HeartLabels::FiveClass => ((0..5).map(|c| c.to_string()).collect(), Vec::new()),
            HeartLabels::Binary => (
                vec!["0".into(), "1".into()],
                (2..5).map(|c| (c.to_string(), "1".to_string())).collect(),
            ),
        };
        Self {
            has_header: false,
            label_column: Column::Index(13),
            feature_columns: Some((0..13).map(Column::Index).collect()),
            delimiter: Delimiter::Comma,
            missing_token: Some("?".into()),
            class_order: Some(class_order),
            label_map,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_missing: usize,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let (data, report) = load_csv_with_report(path, schema)?;
    if report.dropped_missing > 0 {
        log::warn!("dropped {} rows with missing values", report.dropped_missing);
    }
    Ok(data)
}

pub fn load_csv_with_report(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset, LoadReport)> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, schema)
}

fn split_rows(text: &str, delimiter: &Delimiter) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    match delimiter {
        Delimiter::Whitespace => {
            for (i, line) in text.lines().enumerate() {
                let fields: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
                if !fields.is_empty() {
                    rows.push((i + 1, fields));
                }
            }
        }
        Delimiter::Comma | Delimiter::Tab => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .delimiter(if *delimiter == Delimiter::Tab { b'\t' } else { b',' })
                .from_reader(text.as_bytes());
            for record in reader.records() {
                let record = record?;
                let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
                if record.iter().all(str::is_empty) {
                    continue;
                }
                rows.push((line, record.iter().map(str::to_owned).collect()));
            }
        }
    }
    Ok(rows)
}

pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<(Dataset, LoadReport)> {
    let mut rows = split_rows(text, &schema.delimiter)?.into_iter();
    let header = if schema.has_header {
        match rows.next() {
            Some((_, h)) => Some(h),
            None => return Err(Error::EmptyDataset),
        }
    } else {
        None
    };
    let mut rows = rows.peekable();
    let width = match (&header, rows.peek()) {
        (Some(h), _) => h.len(),
        (None, Some((_, r))) => r.len(),
        (None, None) => return Err(Error::EmptyDataset),
    };

    let resolve = |c: &Column| -> Result<usize> {
        match c {
            Column::Last => Ok(width - 1),
            Column::Index(i) if *i < width => Ok(*i),
            Column::Index(i) => Err(Error::UnknownColumn(format!("#{i}"))),
            Column::Name(n) => header
                .as_ref()
                .and_then(|h| h.iter().position(|x| x == n))
                .ok_or_else(|| Error::UnknownColumn(n.clone())),
        }
    };
    let label_idx = resolve(&schema.label_column)?;
    let feature_idx = match &schema.feature_columns {
        Some(cols) => cols.iter().map(resolve).collect::<Result<Vec<_>>>()?,
        None => (0..width).filter(|&i| i != label_idx).collect(),
    };
    let feature_names = feature_idx
        .iter()
        .map(|&i| header.as_ref().map(|h| h[i].clone()).unwrap_or_else(|| format!("f{i}")))
        .collect();

    let label_map: HashMap<&str, &str> = schema.label_map.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut class_names: Vec<String> = schema.class_order.clone().unwrap_or_default();
    let mut report = LoadReport::default();
    let mut samples = Vec::new();

    for (line, fields) in rows {
        report.rows_read += 1;
        if fields.len() != width {
            return Err(Error::MalformedRow {
                line,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        if let Some(tok) = &schema.missing_token {
            if feature_idx.iter().chain([&label_idx]).any(|&i| fields[i] == *tok) {
                report.dropped_missing += 1;
                continue;
            }
        }
        let features = feature_idx
            .iter()
            .map(|&i| {
                fields[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MalformedRow {
                        line,
                        message: format!("column {i}: `{}` is not a finite number", fields[i]),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let raw = fields[label_idx].as_str();
        let token = canonical_label(label_map.get(raw).copied().unwrap_or(raw));
        let label = match class_names.iter().position(|c| *c == token) {
            Some(i) => i,
            None if schema.class_order.is_some() => {
                return Err(Error::MalformedRow {
                    line,
                    message: format!("unexpected label `{raw}`"),
                })
            }
            None => {
                class_names.push(token);
                class_names.len() - 1
            }
        };
        samples.push(Sample::new(features, label));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((Dataset::new(samples, feature_names, class_names)?, report))
}

/// `"2.0"` and `"2"` name the same class.
fn canonical_label(token: &str) -> String {
    match token.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
        _ => token.to_owned(),
    }
}

/// Per-class proportional split. Each class keeps at least one sample on each side.
pub fn stratified_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in class_members(data).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class `{}` has {} sample(s), need at least 2",
                data.class_names()[class],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Sample indices grouped by class, in dataset order.
pub fn class_members(data: &Dataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); data.class_count()];
    for (i, s) in data.samples().iter().enumerate() {
        members[s.label].push(i);
    }
    members
}

pub const STILL: usize = 0;
pub const MOTION: usize = 1;

/// Two-cluster accelerometer model: x/y magnitudes are low and tight while the
/// user is still, higher and wider while moving. No z axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StillMotionConfig {
    pub still_fraction: f64,
    pub still_mean: f64,
    pub still_std: f64,
    pub motion_mean: f64,
    pub motion_std: f64,
}

impl Default for StillMotionConfig {
    fn default() -> Self {
        Self {
            still_fraction: 0.85,
            still_mean: 0.4,
            still_std: 0.2,
            motion_mean: 2.5,
            motion_std: 1.0,
        }
    }
}

impl StillMotionConfig {
    pub fn class_names() -> Vec<String> {
        vec!["still".into(), "motion".into()]
    }

    pub fn feature_names() -> Vec<String> {
        vec!["accel_x".into(), "accel_y".into()]
    }

    /// One `(x, y)` magnitude pair for `class`.
    pub fn draw(&self, class: usize, rng: &mut SplitMix64) -> Vec<f64> {
        let (mean, std) = if class == STILL {
            (self.still_mean, self.still_std)
        } else {
            (self.motion_mean, self.motion_std)
        };
        let normal = Normal::new(mean, std.max(1e-12)).expect("finite std");
        (0..2).map(|_| normal.sample(rng).abs()).collect()
    }
}

pub fn synth_still_motion(n: usize, seed: u64) -> Result<Dataset> {
    synth_still_motion_with(n, seed, &StillMotionConfig::default())
}

pub fn synth_still_motion_with(n: usize, seed: u64, cfg: &StillMotionConfig) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidConfig("still/motion generator needs n >= 2".into()));
    }
    if !(cfg.still_fraction > 0.0 && cfg.still_fraction < 1.0) {
        return Err(Error::InvalidConfig("still_fraction must be in (0, 1)".into()));
    }
    let n_still = ((n as f64 * cfg.still_fraction).round() as usize).clamp(1, n - 1);
    let mut labels: Vec<usize> = (0..n).map(|i| if i < n_still { STILL } else { MOTION }).collect();
    let mut rng = SplitMix64::new(seed);
    labels.shuffle(&mut rng);
    let samples = labels
        .into_iter()
        .map(|label| Sample::new(cfg.draw(label, &mut rng), label))
        .collect();
    Dataset::new(samples, StillMotionConfig::feature_names(), StillMotionConfig::class_names())
}
