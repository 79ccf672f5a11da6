//! Accuracy, confusion counts, binary outcome rates and prediction latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Outcome shares over all evaluated samples; class 1 is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryRates {
    pub tp_rate: f64,
    pub tn_rate: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

impl BinaryRates {
    /// `fn_rate` is the residual of the other three, so the four shares sum to
    /// exactly 1.0 when added in field order.
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let total = (tp + tn + fp + fn_) as f64;
        let tp_rate = tp as f64 / total;
        let tn_rate = tn as f64 / total;
        let fp_rate = fp as f64 / total;
        Self {
            tp_rate,
            tn_rate,
            fp_rate,
            fn_rate: 1.0 - (tp_rate + tn_rate + fp_rate),
        }
    }

    pub fn sum(&self) -> f64 {
        self.tp_rate + self.tn_rate + self.fp_rate + self.fn_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_micros(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean_us: 0.0,
                p95_us: 0.0,
                max_us: 0.0,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean_us: values.iter().sum::<f64>() / values.len() as f64,
            p95_us: percentile(&sorted, 0.95),
            max_us: *sorted.last().unwrap_or(&0.0),
        }
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub binary: Option<BinaryRates>,
    pub latency: LatencyStats,
    pub evaluated: usize,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>, latency: LatencyStats) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let binary = (confusion.len() == 2 && total > 0).then(|| {
            BinaryRates::from_counts(confusion[1][1], confusion[0][0], confusion[0][1], confusion[1][0])
        });
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            confusion,
            binary,
            latency,
            evaluated: total as usize,
        }
    }
}

/// Runs `predict` on every sample, timing each call.
pub fn evaluate<F>(mut predict: F, data: &Dataset) -> Result<Metrics>
where
    F: FnMut(&[f64]) -> Result<usize>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = data.class_count();
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut micros = Vec::with_capacity(data.len());
    for s in data.samples() {
        let start = Instant::now();
        let predicted = predict(&s.features)?;
        micros.push(start.elapsed().as_secs_f64() * 1e6);
        if predicted >= classes {
            return Err(Error::LabelOutOfRange {
                label: predicted,
                classes,
            });
        }
        confusion[s.label][predicted] += 1;
    }
    Ok(Metrics::from_confusion(confusion, LatencyStats::from_micros(&micros)))
}
