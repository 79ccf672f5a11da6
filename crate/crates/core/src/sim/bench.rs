//! Wall-clock execution time of the four algorithms on the still/motion task.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{percentile, LatencyStats};
use crate::nn::TrainingConfig;
use crate::sync::client::{predict_with, ClientAlgorithm};
use crate::sync::server::{train_bundle, RetrainConfig};
use crate::sync::ParameterBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    /// Hidden widths for DCL/ADCL; `None` applies the default-width rule.
    pub hidden: Option<Vec<usize>>,
    pub samples: usize,
    pub seed: u64,
    /// Timed prediction batches (at least 100).
    pub repetitions: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub train_repetitions: usize,
    pub cl_epochs: usize,
    pub dcl_epochs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::all(),
            hidden: None,
            samples: 2_000,
            seed: 1,
            repetitions: 200,
            batch_size: 500,
            warmup: 20,
            train_repetitions: 3,
            cl_epochs: TrainingConfig::CL_EPOCHS,
            dcl_epochs: TrainingConfig::DCL_EPOCHS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    /// `predict` (per prediction) or `train` (per training run).
    pub operation: &'static str,
    /// Layer widths, input to output.
    pub topology: String,
    pub mean_us: f64,
    pub p95_us: f64,
    pub runs: usize,
}

/// Times predictions in batches; each batch contributes its per-prediction mean.
pub fn bench_prediction(bundle: &ParameterBundle, rule: ClientAlgorithm, inputs: &[Vec<f64>], cfg: &BenchConfig) -> Result<LatencyStats> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut k = 0usize;
    let mut run_batch = || -> Result<f64> {
        let start = Instant::now();
        for _ in 0..cfg.batch_size {
            black_box(predict_with(black_box(bundle), rule, black_box(&inputs[k]))?);
            k = (k + 1) % inputs.len();
        }
        Ok(start.elapsed().as_secs_f64() * 1e6 / cfg.batch_size as f64)
    };
    for _ in 0..cfg.warmup {
        run_batch()?;
    }
    let per = (0..cfg.repetitions).map(|_| run_batch()).collect::<Result<Vec<_>>>()?;
    Ok(LatencyStats::from_micros(&per))
}

fn topology(b: &ParameterBundle) -> String {
    b.params.spec().layer_sizes().iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

pub fn bench_execution(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repetitions < 100 {
        return Err(Error::InvalidConfig("bench needs at least 100 repetitions".into()));
    }
    if cfg.batch_size == 0 || cfg.train_repetitions == 0 {
        return Err(Error::InvalidConfig("batch_size and train_repetitions must be positive".into()));
    }
    let all = data::synth_still_motion(cfg.samples, cfg.seed)?;
    let (train, test) = data::stratified_split(&all, 0.2, cfg.seed)?;
    let inputs: Vec<Vec<f64>> = test.samples().iter().map(|s| s.features.clone()).collect();

    let mut retrain = RetrainConfig::new(train.feature_names().to_vec(), train.class_names().to_vec());
    retrain.dcl = TrainingConfig::new(TrainingConfig::CLIENT_MODEL_LEARNING_RATE, cfg.dcl_epochs, cfg.seed);
    retrain.cl = TrainingConfig::new(TrainingConfig::SERVER_LEARNING_RATE, cfg.cl_epochs, cfg.seed);
    retrain.dcl_hidden = cfg.hidden.clone();

    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let mut rows = Vec::new();
    for alg in algorithms {
        if alg.is_client() {
            let bundle = train_bundle(alg.model_kind(), &train, &retrain, 0)?;
            let s = bench_prediction(&bundle, alg.decision_rule(), &inputs, cfg)?;
            rows.push(BenchRow {
                algorithm: alg,
                operation: "predict",
                topology: topology(&bundle),
                mean_us: s.mean_us,
                p95_us: s.p95_us,
                runs: cfg.repetitions,
            });
        } else {
            let (times, bundle) = time_training(alg, &train, &retrain, cfg.train_repetitions)?;
            let mut sorted = times.clone();
            sorted.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                algorithm: alg,
                operation: "train",
                topology: topology(&bundle),
                mean_us: times.iter().sum::<f64>() / times.len() as f64,
                p95_us: percentile(&sorted, 0.95),
                runs: times.len(),
            });
        }
    }
    Ok(rows)
}

fn time_training(alg: Algorithm, train: &Dataset, retrain: &RetrainConfig, reps: usize) -> Result<(Vec<f64>, ParameterBundle)> {
    // One untimed run warms caches and the allocator.
    let mut bundle = train_bundle(alg.model_kind(), train, retrain, 0)?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        bundle = black_box(train_bundle(alg.model_kind(), train, retrain, 0)?);
        times.push(start.elapsed().as_secs_f64() * 1e6);
    }
    Ok((times, bundle))
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
