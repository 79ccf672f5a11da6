//! Server-side trainers (DCL, CL) and their client-side predictors (ADCL, LCL).
//!
//! DCL trains a network with at least one hidden layer; ADCL ships those
//! parameters to the device and runs the forward pass only. CL trains a
//! single-layer sigmoid network and derives per-class thresholds; LCL compares
//! the device-side outputs against those thresholds.
//!
//! LCL decision rule: among classes whose output exceeds its threshold, pick the
//! largest margin `output − threshold`. When no class clears its threshold, fall
//! back to the plain argmax of the outputs, so LCL always returns a class.

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, FeatureRange};
use crate::error::{Error, Result};
use crate::nn::{self, argmax, LayerSpec, NetworkParameters, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(Vec<f64>);

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidConfig(format!("threshold {bad} outside (0, 1)")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLabel {
    pub class_index: usize,
    pub name: String,
}

impl ContextLabel {
    /// Uses `names[index]` when available, `c<index>` otherwise.
    pub fn new(class_index: usize, names: &[String]) -> Self {
        let name = names
            .get(class_index)
            .cloned()
            .unwrap_or_else(|| format!("c{class_index}"));
        Self { class_index, name }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClModel {
    pub params: NetworkParameters,
    pub thresholds: ThresholdVector,
}

impl ClModel {
    pub fn new(params: NetworkParameters, thresholds: ThresholdVector) -> Result<Self> {
        if !params.spec().is_single_layer() {
            return Err(Error::InvalidSpec("CL model must not have hidden layers".into()));
        }
        if thresholds.len() != params.spec().output_count {
            return Err(Error::DimensionMismatch {
                expected: params.spec().output_count,
                actual: thresholds.len(),
            });
        }
        Ok(Self { params, thresholds })
    }
}

/// Trains the deep model shipped to ADCL clients.
pub fn dcl_train(data: &Dataset, spec: LayerSpec, cfg: &TrainingConfig) -> Result<NetworkParameters> {
    if spec.is_single_layer() {
        return Err(Error::InvalidSpec("DCL needs at least one hidden layer".into()));
    }
    let init = nn::init_network(spec, cfg.seed)?;
    Ok(nn::train(&init, data, cfg)?.0)
}

/// Default DCL topology for a dataset: one hidden layer of `floor((ι+ϱ)/2)` nodes.
pub fn dcl_default_spec(data: &Dataset) -> Result<LayerSpec> {
    LayerSpec::with_default_hidden(data.feature_count(), 1, data.class_count())
}

pub fn cl_train(data: &Dataset, cfg: &TrainingConfig) -> Result<ClModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = LayerSpec::new(data.feature_count(), Vec::new(), data.class_count())?;
    let init = nn::init_network(spec, cfg.seed)?;
    let (params, _) = nn::train(&init, data, cfg)?;
    let thresholds = calibrate_thresholds(&params, data)?;
    ClModel::new(params, thresholds)
}

/// Midpoint between the mean output on positives and on negatives, per class,
/// clamped into `[0.01, 0.99]`. Classes without positives or negatives get 0.5.
pub fn calibrate_thresholds(model: &NetworkParameters, data: &Dataset) -> Result<ThresholdVector> {
    if !model.spec().is_single_layer() {
        return Err(Error::InvalidSpec("thresholds are calibrated on single-layer models".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.spec().output_count;
    let mut pos = vec![(0.0, 0usize); classes];
    let mut neg = vec![(0.0, 0usize); classes];
    for s in data.samples() {
        let out = model.output(&s.features)?;
        for (c, &o) in out.iter().enumerate() {
            let acc = if s.label == c { &mut pos[c] } else { &mut neg[c] };
            acc.0 += o;
            acc.1 += 1;
        }
    }
    let values = pos
        .iter()
        .zip(&neg)
        .map(|(&(ps, pn), &(ns, nn))| {
            if pn == 0 || nn == 0 {
                0.5
            } else {
                midpoint_threshold(ps / pn as f64, ns / nn as f64)
            }
        })
        .collect();
    ThresholdVector::new(values)
}

fn midpoint_threshold(pos_mean: f64, neg_mean: f64) -> f64 {
    (0.5 * (pos_mean + neg_mean)).clamp(0.01, 0.99)
}

/// Forward pass plus argmax. No learning happens on the device.
pub fn adcl_predict(params: &NetworkParameters, s: &[f64]) -> Result<ContextLabel> {
    Ok(ContextLabel::new(adcl_class(params, s)?, &[]))
}

pub fn adcl_class(params: &NetworkParameters, s: &[f64]) -> Result<usize> {
    Ok(argmax(&params.output(s)?))
}

pub fn lcl_predict(model: &ClModel, s: &[f64]) -> Result<ContextLabel> {
    Ok(ContextLabel::new(lcl_class(model, s)?, &[]))
}

pub fn lcl_class(model: &ClModel, s: &[f64]) -> Result<usize> {
    let outputs = model.params.output(s)?;
    Ok(threshold_decision(&outputs, model.thresholds.as_slice()))
}

/// The LCL rule applied to precomputed outputs.
pub fn threshold_decision(outputs: &[f64], thresholds: &[f64]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (c, (&o, &t)) in outputs.iter().zip(thresholds).enumerate() {
        let margin = o - t;
        if margin > 0.0 && best.is_none_or(|(_, m)| margin > m) {
            best = Some((c, margin));
        }
    }
    best.map(|(c, _)| c).unwrap_or_else(|| argmax(outputs))
}

/// A network paired with the feature scaling it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaled<M> {
    pub ranges: Option<Vec<FeatureRange>>,
    pub model: M,
}

impl<M> Scaled<M> {
    fn scale(&self, features: &[f64]) -> Result<Vec<f64>> {
        match &self.ranges {
            Some(r) => data::scale_features(r, features),
            None => Ok(features.to_vec()),
        }
    }
}

/// Fit/predict pair used by cross-validation and sweeps.
pub trait Trainer {
    type Model;
    fn fit(&self, train: &Dataset) -> Result<Self::Model>;
    fn predict(&self, model: &Self::Model, features: &[f64]) -> Result<usize>;
}

/// DCL with min-max scaling fitted on the training split.
#[derive(Debug, Clone)]
pub struct DclTrainer {
    /// Hidden layer widths; `None` means `hidden_layers` layers of the default width.
    pub hidden_sizes: Option<Vec<usize>>,
    pub hidden_layers: usize,
    pub config: TrainingConfig,
    pub normalize: bool,
}

impl DclTrainer {
    pub fn new(config: TrainingConfig) -> Self {
        Self {
            hidden_sizes: None,
            hidden_layers: 1,
            config,
            normalize: true,
        }
    }

    pub fn spec_for(&self, data: &Dataset) -> Result<LayerSpec> {
        match &self.hidden_sizes {
            Some(h) => LayerSpec::new(data.feature_count(), h.clone(), data.class_count()),
            None => LayerSpec::with_default_hidden(data.feature_count(), self.hidden_layers, data.class_count()),
        }
    }
}

fn fit_scaling(train: &Dataset, normalize: bool) -> Result<(Option<Vec<FeatureRange>>, Dataset)> {
    if !normalize {
        return Ok((None, train.clone()));
    }
    let scaled = data::normalize_minmax(train)?;
    Ok((scaled.normalization().map(<[_]>::to_vec), scaled))
}

impl Trainer for DclTrainer {
    type Model = Scaled<NetworkParameters>;

    fn fit(&self, train: &Dataset) -> Result<Self::Model> {
        let (ranges, scaled) = fit_scaling(train, self.normalize)?;
        let model = dcl_train(&scaled, self.spec_for(train)?, &self.config)?;
        Ok(Scaled { ranges, model })
    }

    fn predict(&self, model: &Self::Model, features: &[f64]) -> Result<usize> {
        adcl_class(&model.model, &model.scale(features)?)
    }
}

/// CL training, LCL prediction.
#[derive(Debug, Clone)]
pub struct ClTrainer {
    pub config: TrainingConfig,
    pub normalize: bool,
}

impl ClTrainer {
    pub fn new(config: TrainingConfig) -> Self {
        Self { config, normalize: true }
    }
}

impl Trainer for ClTrainer {
    type Model = Scaled<ClModel>;

    fn fit(&self, train: &Dataset) -> Result<Self::Model> {
        let (ranges, scaled) = fit_scaling(train, self.normalize)?;
        Ok(Scaled {
            ranges,
            model: cl_train(&scaled, &self.config)?,
        })
    }

    fn predict(&self, model: &Self::Model, features: &[f64]) -> Result<usize> {
        lcl_class(&model.model, &model.scale(features)?)
    }
}

/// Fold assignment for `k`-fold cross-validation, stratified by class.
///
/// Members of each class are shuffled by `seed` and dealt round-robin, with the
/// starting fold rotating between classes so fold sizes stay within one of each
/// other. `k == data.len()` is plain leave-one-out.
pub fn stratified_folds(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    use rand::seq::SliceRandom;

    if k < 2 {
        return Err(Error::InvalidConfig(format!("k-fold needs k >= 2, got {k}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == data.len() {
        return Ok((0..k).map(|i| vec![i]).collect());
    }
    let members = data::class_members(data);
    let smallest = members.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
    if k > smallest {
        return Err(Error::Stratification(format!(
            "k = {k} exceeds the smallest class count {smallest}"
        )));
    }
    let mut rng = crate::rng::SplitMix64::new(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut class in members {
        class.shuffle(&mut rng);
        for idx in class {
            folds[next % k].push(idx);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std_dev: f64,
}

impl CvSummary {
    pub fn from_accuracies(fold_accuracies: Vec<f64>) -> Self {
        let n = fold_accuracies.len() as f64;
        let mean = fold_accuracies.iter().sum::<f64>() / n;
        let var = if fold_accuracies.len() > 1 {
            fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            fold_accuracies,
            mean,
            std_dev: var.sqrt(),
        }
    }
}

pub fn kfold_cross_validate<T: Trainer>(data: &Dataset, k: usize, trainer: &T, seed: u64) -> Result<CvSummary> {
    let folds = stratified_folds(data, k, seed)?;
    let mut in_test = vec![usize::MAX; data.len()];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            in_test[i] = f;
        }
    }
    let mut accuracies = Vec::with_capacity(k);
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| in_test[i] != f).collect();
        let model = trainer.fit(&data.subset(&train_idx))?;
        let correct = test_idx
            .iter()
            .map(|&i| {
                let s = &data.samples()[i];
                trainer.predict(&model, &s.features).map(|p| p == s.label)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|&ok| ok)
            .count();
        accuracies.push(correct as f64 / test_idx.len() as f64);
    }
    Ok(CvSummary::from_accuracies(accuracies))
}

/// One cell of a learning-rate × hidden-layer-count grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub learning_rate: f64,
    pub hidden_layers: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// DCL k-fold accuracy over every `(learning_rate, hidden_layers)` pair, rows in
/// learning-rate-major order. Each hidden layer has the default width.
pub fn sweep_grid(
    data: &Dataset,
    learning_rates: &[f64],
    hidden_layers: &[usize],
    k: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(learning_rates.len() * hidden_layers.len());
    for &lr in learning_rates {
        for &layers in hidden_layers {
            let trainer = DclTrainer {
                hidden_layers: layers,
                ..DclTrainer::new(TrainingConfig::new(lr, epochs, seed))
            };
            let cv = kfold_cross_validate(data, k, &trainer, seed)?;
            log::debug!("sweep lr={lr} layers={layers}: {:.4}", cv.mean);
            cells.push(SweepCell {
                learning_rate: lr,
                hidden_layers: layers,
                mean_accuracy: cv.mean,
                std_accuracy: cv.std_dev,
            });
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: std::io::Write>(cells: &[SweepCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["learning_rate", "hidden_layers", "mean_accuracy", "std_accuracy"])?;
    for c in cells {
        w.write_record([
            format!("{:.2}", c.learning_rate),
            c.hidden_layers.to_string(),
            format!("{:.6}", c.mean_accuracy),
            format!("{:.6}", c.std_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}
