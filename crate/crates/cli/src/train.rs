//! `edgectx train`: k-fold evaluation, final model bundle, optional sweep.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use edgectx_core::data::{self, Dataset};
use edgectx_core::learners::{self, ClModel, ClTrainer, DclTrainer, SweepCell};
use edgectx_core::metrics::{self, Metrics};
use edgectx_core::nn::{self, LayerSpec, TrainingConfig};
use edgectx_core::sync::client::{predict_with, ClientAlgorithm};
use edgectx_core::sync::{encode_bundle, ModelKind, ParameterBundle};
use serde::Serialize;

use crate::registry::LoadedDataset;
use crate::report::{DatasetFingerprint, RunReport, TimingRow};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct TrainOptions {
    pub kind: ModelKind,
    pub learning_rate: f64,
    /// Explicit hidden widths; when `None`, `hidden_layers` layers of default width.
    pub hidden: Option<Vec<usize>>,
    pub hidden_layers: usize,
    pub epochs: usize,
    pub kfold: usize,
    pub seed: u64,
    pub normalize: bool,
    pub sweep: Option<SweepSpec>,
    pub out: PathBuf,
}

impl TrainOptions {
    pub fn new(kind: ModelKind, out: impl Into<PathBuf>) -> Self {
        let (learning_rate, epochs) = match kind {
            ModelKind::Dcl => (TrainingConfig::CLIENT_MODEL_LEARNING_RATE, TrainingConfig::DCL_EPOCHS),
            ModelKind::Cl => (TrainingConfig::SERVER_LEARNING_RATE, TrainingConfig::CL_EPOCHS),
        };
        Self {
            kind,
            learning_rate,
            hidden: None,
            hidden_layers: 1,
            epochs,
            kfold: 5,
            seed: 1,
            normalize: true,
            sweep: None,
            out: out.into(),
        }
    }

    fn config(&self, learning_rate: f64) -> TrainingConfig {
        TrainingConfig::new(learning_rate, self.epochs, self.seed)
    }

    fn dcl_trainer(&self) -> DclTrainer {
        DclTrainer {
            hidden_sizes: self.hidden.clone(),
            hidden_layers: self.hidden_layers,
            normalize: self.normalize,
            ..DclTrainer::new(self.config(self.learning_rate))
        }
    }
}

/// Learning-rate × hidden-layer-count grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub learning_rates: Vec<f64>,
    pub hidden_layers: Vec<usize>,
}

/// Parses `lr=A..B[:STEP]` and `hidden=A..B` terms (whitespace or separate
/// arguments). The learning-rate step defaults to 0.1 and both ends are
/// inclusive. A single value (`lr=0.3`) is a one-point range.
pub fn parse_sweep(terms: &[String]) -> Result<SweepSpec, CliError> {
    let bad = |m: String| CliError::Usage(format!("bad sweep range: {m}"));
    let mut lrs = None;
    let mut hidden = None;
    for term in terms.iter().flat_map(|t| t.split_whitespace()) {
        let (key, range) = term.split_once('=').ok_or_else(|| bad(format!("`{term}` is not key=range")))?;
        match key {
            "lr" => {
                let (span, step) = match range.split_once(':') {
                    Some((s, st)) => (s, st.parse::<f64>().map_err(|_| bad(format!("step `{st}`")))?),
                    None => (range, 0.1),
                };
                let (a, b) = split_range(span).ok_or_else(|| bad(format!("`{span}`")))?;
                let a: f64 = a.parse().map_err(|_| bad(format!("`{a}`")))?;
                let b: f64 = b.parse().map_err(|_| bad(format!("`{b}`")))?;
                if !(a > 0.0 && b >= a && step > 0.0 && b.is_finite()) {
                    return Err(bad(format!("learning rates need 0 < {a} <= {b} and step > 0")));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize + 1;
                // Integer multiples keep values like 0.3 exact in decimal output.
                lrs = Some((0..n).map(|i| ((a + step * i as f64) * 1e9).round() / 1e9).collect::<Vec<_>>());
            }
            "hidden" => {
                let (a, b) = split_range(range).ok_or_else(|| bad(format!("`{range}`")))?;
                let a: usize = a.parse().map_err(|_| bad(format!("`{a}`")))?;
                let b: usize = b.parse().map_err(|_| bad(format!("`{b}`")))?;
                if a == 0 || b < a {
                    return Err(bad(format!("hidden layers need 1 <= {a} <= {b}")));
                }
                hidden = Some((a..=b).collect::<Vec<_>>());
            }
            other => return Err(bad(format!("unknown key `{other}` (expected lr or hidden)"))),
        }
    }
    match (lrs, hidden) {
        (Some(learning_rates), Some(hidden_layers)) => Ok(SweepSpec {
            learning_rates,
            hidden_layers,
        }),
        _ => Err(bad("both lr=..  and hidden=.. are required".into())),
    }
}

fn split_range(s: &str) -> Option<(&str, &str)> {
    match s.split_once("..") {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Some((a, b)),
        Some(_) => None,
        None => Some((s, s)),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub sweep: Vec<SweepCell>,
    pub bundle_path: Option<PathBuf>,
}

impl TrainOutcome {
    /// Headline accuracy: best sweep cell, else the cross-validated mean.
    pub fn accuracy(&self) -> f64 {
        self.report
            .best_sweep_cell
            .as_ref()
            .map(|c| c.mean_accuracy)
            .or(self.report.cross_validation.as_ref().map(|c| c.mean))
            .unwrap_or(0.0)
    }
}

pub fn cmd_train(ds: &LoadedDataset, opts: &TrainOptions, command: Vec<String>) -> Result<TrainOutcome, CliError> {
    let data = &ds.data;
    let mut timing = Vec::new();
    let fingerprint = DatasetFingerprint::of(&ds.name, &ds.source, data);
    let config = serde_json::to_value(opts).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&opts.out)?;

    if let Some(sweep) = &opts.sweep {
        if opts.kind != ModelKind::Dcl {
            return Err(CliError::Usage("--sweep applies to DCL only".into()));
        }
        let start = Instant::now();
        let cells = learners::sweep_grid(data, &sweep.learning_rates, &sweep.hidden_layers, opts.kfold, opts.epochs, opts.seed)?;
        timing.push(TimingRow {
            phase: "sweep".into(),
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        learners::write_sweep_csv(&cells, fs::File::create(opts.out.join("sweep.csv"))?)?;
        let best = cells
            .iter()
            .max_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy).then(b.learning_rate.total_cmp(&a.learning_rate)))
            .cloned();
        let report = RunReport {
            command,
            config,
            dataset: fingerprint,
            cross_validation: None,
            final_model: None,
            best_sweep_cell: best,
            loss_curve: Vec::new(),
            timing,
        };
        report.write(&opts.out)?;
        return Ok(TrainOutcome {
            report,
            sweep: cells,
            bundle_path: None,
        });
    }

    let start = Instant::now();
    let cv = match opts.kind {
        ModelKind::Dcl => learners::kfold_cross_validate(data, opts.kfold, &opts.dcl_trainer(), opts.seed)?,
        ModelKind::Cl => {
            let t = ClTrainer {
                normalize: opts.normalize,
                ..ClTrainer::new(opts.config(opts.learning_rate))
            };
            learners::kfold_cross_validate(data, opts.kfold, &t, opts.seed)?
        }
    };
    timing.push(TimingRow {
        phase: "cross_validation".into(),
        millis: start.elapsed().as_secs_f64() * 1e3,
    });

    let start = Instant::now();
    let (bundle, loss_curve) = train_final(data, opts)?;
    timing.push(TimingRow {
        phase: "final_training".into(),
        millis: start.elapsed().as_secs_f64() * 1e3,
    });
    let rule = match opts.kind {
        ModelKind::Dcl => ClientAlgorithm::Adcl,
        ModelKind::Cl => ClientAlgorithm::Lcl,
    };
    let final_metrics: Metrics = metrics::evaluate(|x| predict_with(&bundle, rule, x), data)?;
    let bundle_path = opts.out.join("model.bundle.json");
    fs::write(&bundle_path, encode_bundle(&bundle).map_err(edgectx_core::Error::from)?)?;

    let report = RunReport {
        command,
        config,
        dataset: fingerprint,
        cross_validation: Some(cv),
        final_model: Some(final_metrics),
        best_sweep_cell: None,
        loss_curve,
        timing,
    };
    report.write(&opts.out)?;
    Ok(TrainOutcome {
        report,
        sweep: Vec::new(),
        bundle_path: Some(bundle_path),
    })
}

/// Model trained on the whole dataset, with its per-epoch loss.
fn train_final(data: &Dataset, opts: &TrainOptions) -> Result<(ParameterBundle, Vec<f64>), CliError> {
    let (ranges, scaled) = if opts.normalize {
        let s = data::normalize_minmax(data)?;
        (s.normalization().map(<[_]>::to_vec), s)
    } else {
        (None, data.clone())
    };
    let cfg = opts.config(opts.learning_rate);
    let bundle = match opts.kind {
        ModelKind::Dcl => {
            let spec = opts.dcl_trainer().spec_for(data)?;
            if spec.is_single_layer() {
                return Err(CliError::Usage("DCL needs at least one hidden layer".into()));
            }
            let (params, loss) = nn::train(&nn::init_network(spec, cfg.seed)?, &scaled, &cfg)?;
            (ParameterBundle::dcl(params, 1, 0), loss)
        }
        ModelKind::Cl => {
            let spec = LayerSpec::new(data.feature_count(), Vec::new(), data.class_count())?;
            let (params, loss) = nn::train(&nn::init_network(spec, cfg.seed)?, &scaled, &cfg)?;
            let thresholds = learners::calibrate_thresholds(&params, &scaled)?;
            (ParameterBundle::cl(ClModel::new(params, thresholds)?, 1, 0), loss)
        }
    };
    let (b, loss) = bundle;
    Ok((
        b.with_normalization(ranges).with_class_names(data.class_names().to_vec()),
        loss,
    ))
}
