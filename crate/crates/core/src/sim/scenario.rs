//! Discrete-event simulation of sensor nodes, an edge client, a lossy link and
//! a retraining server on a virtual millisecond clock.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::data::{self, CsvSchema, Dataset, SensorReading, StillMotionConfig, MOTION, STILL};
use crate::error::{Error, Result};
use crate::metrics::{LatencyStats, Metrics};
use crate::nn::TrainingConfig;
use crate::rng::SplitMix64;
use crate::sync::client::{client_sync_tick, predict_with, SyncOutcome, SyncPolicy, SyncState};
use crate::sync::protocol::{Request, Response};
use crate::sync::server::{retrain_round, DataSink, ModelStore, RetrainConfig, ServerCore};
use crate::sync::transport::{Transport, TransportError};
use crate::sync::upload::{SensorBatch, UploadQueue, Uploader};
use crate::sync::{ModelKind, ParameterBundle};

/// Where a node's labeled readings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Synthetic accelerometer magnitudes. The context persists for runs of
    /// `mean_run` readings on average.
    StillMotion {
        #[serde(default = "default_still_fraction")]
        still_fraction: f64,
        #[serde(default = "default_mean_run")]
        mean_run: u32,
    },
    /// Rows of a CSV file (label in the last column), replayed in a seeded order.
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
}

fn default_still_fraction() -> f64 {
    StillMotionConfig::default().still_fraction
}

fn default_mean_run() -> u32 {
    20
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::StillMotion {
            still_fraction: default_still_fraction(),
            mean_run: default_mean_run(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNodeConfig {
    pub sensor_id: String,
    /// Milliseconds between readings within a duty cycle.
    #[serde(default = "default_sensor_delay")]
    pub sensor_delay_ms: u64,
    /// Pause after each duty cycle.
    #[serde(default)]
    pub sleep_interval_ms: u64,
    /// Readings per duty cycle; 0 means the node never sleeps.
    #[serde(default)]
    pub duty_length: u32,
    #[serde(default)]
    pub start_ms: u64,
    #[serde(default)]
    pub source: SourceConfig,
}

fn default_sensor_delay() -> u64 {
    100
}

impl SensorNodeConfig {
    pub fn new(sensor_id: impl Into<String>) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            sensor_delay_ms: default_sensor_delay(),
            sleep_interval_ms: 0,
            duty_length: 0,
            start_ms: 0,
            source: SourceConfig::default(),
        }
    }

    /// Emission time of the `k`-th reading.
    pub fn emit_time(&self, k: u64) -> u64 {
        if self.duty_length == 0 || self.sleep_interval_ms == 0 {
            return self.start_ms + k * self.sensor_delay_ms;
        }
        let duty = self.duty_length as u64;
        let cycle = duty * self.sensor_delay_ms + self.sleep_interval_ms;
        self.start_ms + (k / duty) * cycle + (k % duty) * self.sensor_delay_ms
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    /// One-way delay.
    #[serde(default)]
    pub latency_ms: u64,
    /// Independent loss probability of each message in each direction.
    #[serde(default)]
    pub drop_probability: f64,
    /// Half-open `[start, end)` intervals during which nothing gets through.
    #[serde(default)]
    pub outage_windows: Vec<(u64, u64)>,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Scenario(format!("drop_probability {} outside [0, 1]", self.drop_probability)));
        }
        let mut prev_end = 0;
        for (i, &(s, e)) in self.outage_windows.iter().enumerate() {
            if s >= e {
                return Err(Error::Scenario(format!("outage window {i} is empty or reversed")));
            }
            if i > 0 && s < prev_end {
                return Err(Error::Scenario(format!("outage window {i} overlaps or precedes its predecessor")));
            }
            prev_end = e;
        }
        Ok(())
    }

    pub fn is_up(&self, t: u64) -> bool {
        !self.outage_windows.iter().any(|&(s, e)| s <= t && t < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimTraining {
    pub dcl_epochs: usize,
    pub dcl_learning_rate: f64,
    pub dcl_hidden: Option<Vec<usize>>,
    pub cl_epochs: usize,
    pub cl_learning_rate: f64,
}

impl Default for SimTraining {
    fn default() -> Self {
        Self {
            dcl_epochs: 200,
            dcl_learning_rate: TrainingConfig::CLIENT_MODEL_LEARNING_RATE,
            dcl_hidden: None,
            cl_epochs: 100,
            cl_learning_rate: TrainingConfig::SERVER_LEARNING_RATE,
        }
    }
}

/// Full scenario description; loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub duration_ms: u64,
    pub retrain_every_ms: u64,
    #[serde(default = "default_sync_period")]
    pub sync_period_ms: u64,
    #[serde(default = "default_sync_timeout")]
    pub sync_timeout_ms: u64,
    #[serde(default = "default_upload_every")]
    pub upload_every_ms: u64,
    #[serde(default = "default_report_every")]
    pub report_every_ms: u64,
    #[serde(default = "default_rolling_window")]
    pub rolling_window: usize,
    /// Labeled readings the server trains its first bundle on at time 0.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_samples: usize,
    #[serde(default = "Algorithm::all")]
    pub algorithms: Vec<Algorithm>,
    pub nodes: Vec<SensorNodeConfig>,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    /// Wall-clock prediction timing. Off by default so output stays reproducible.
    #[serde(default)]
    pub measure_latency: bool,
    #[serde(default)]
    pub training: SimTraining,
}

fn default_seed() -> u64 {
    1
}
fn default_sync_period() -> u64 {
    crate::sync::client::DEFAULT_SYNC_PERIOD.as_millis() as u64
}
fn default_sync_timeout() -> u64 {
    crate::sync::client::DEFAULT_SYNC_TIMEOUT.as_millis() as u64
}
fn default_upload_every() -> u64 {
    5_000
}
fn default_report_every() -> u64 {
    1_000
}
fn default_rolling_window() -> usize {
    100
}
fn default_bootstrap() -> usize {
    200
}
fn default_queue_capacity() -> usize {
    crate::sync::upload::DEFAULT_QUEUE_CAPACITY
}
fn default_max_retries() -> usize {
    crate::sync::upload::DEFAULT_MAX_RETRIES
}

impl ScenarioConfig {
    pub fn new(nodes: Vec<SensorNodeConfig>, link: LinkConfig, retrain_every_ms: u64, algorithms: Vec<Algorithm>, duration_ms: u64, seed: u64) -> Self {
        Self {
            seed,
            duration_ms,
            retrain_every_ms,
            sync_period_ms: default_sync_period(),
            sync_timeout_ms: default_sync_timeout(),
            upload_every_ms: default_upload_every(),
            report_every_ms: default_report_every(),
            rolling_window: default_rolling_window(),
            bootstrap_samples: default_bootstrap(),
            algorithms,
            nodes,
            link,
            queue_capacity: default_queue_capacity(),
            max_retries: default_max_retries(),
            measure_latency: false,
            training: SimTraining::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative CSV sources resolve against the scenario file.
        if let Some(base) = path.parent() {
            for n in &mut cfg.nodes {
                if let SourceConfig::Csv { path: p, .. } = &mut n.source {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Scenario(m.to_string()));
        if self.duration_ms == 0 {
            return fail("duration_ms must be positive");
        }
        if self.algorithms.is_empty() {
            return fail("algorithm set is empty");
        }
        if self.nodes.is_empty() {
            return fail("at least one sensor node is required");
        }
        for (name, v) in [
            ("retrain_every_ms", self.retrain_every_ms),
            ("sync_period_ms", self.sync_period_ms),
            ("upload_every_ms", self.upload_every_ms),
            ("report_every_ms", self.report_every_ms),
        ] {
            if v == 0 {
                return Err(Error::Scenario(format!("{name} must be positive")));
            }
        }
        if self.rolling_window == 0 {
            return fail("rolling_window must be positive");
        }
        for n in &self.nodes {
            if n.sensor_delay_ms == 0 {
                return Err(Error::Scenario(format!("node `{}`: sensor_delay_ms must be >= 1", n.sensor_id)));
            }
            if let SourceConfig::StillMotion { still_fraction, mean_run } = n.source {
                if !(still_fraction > 0.0 && still_fraction < 1.0) || mean_run == 0 {
                    return Err(Error::Scenario(format!("node `{}`: invalid still-motion source", n.sensor_id)));
                }
            }
        }
        self.link.validate()
    }
}

/// One row of the per-tick time series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub sim_time_ms: u64,
    pub algorithm: Algorithm,
    /// Version the algorithm decides with (client copy for LCL/ADCL).
    pub model_version: Option<u64>,
    pub staleness_ms: Option<u64>,
    pub rolling_accuracy: f64,
    /// Cumulative predictions made so far.
    pub predictions: u64,
    pub mean_prediction_latency_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub metrics: Metrics,
    pub predictions: u64,
    /// Readings that arrived before any bundle existed.
    pub unserved: u64,
    pub final_model_version: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScenarioTotals {
    pub readings_emitted: u64,
    /// Readings handed to the uploader.
    pub client_sent: u64,
    /// Distinct uploaded readings stored by the server (bootstrap excluded).
    pub server_received: u64,
    pub queue_dropped: u64,
    pub queued_at_end: u64,
    pub pending_at_end: u64,
    pub publishes: u64,
    pub sync_attempts: u64,
    pub sync_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VersionChange {
    pub sim_time_ms: u64,
    pub algorithm: Algorithm,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub ticks: Vec<TickRecord>,
    pub summaries: Vec<AlgorithmSummary>,
    pub totals: ScenarioTotals,
    /// Every bundle swap on the client, in time order.
    pub version_changes: Vec<VersionChange>,
}

impl ScenarioResult {
    pub fn ticks_for(&self, a: Algorithm) -> impl Iterator<Item = &TickRecord> {
        self.ticks.iter().filter(move |t| t.algorithm == a)
    }

    pub fn summary(&self, a: Algorithm) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == a)
    }

    pub fn write_ticks_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for t in &self.ticks {
            w.serialize(t)?;
        }
        if self.ticks.is_empty() {
            w.write_record([
                "sim_time_ms",
                "algorithm",
                "model_version",
                "staleness_ms",
                "rolling_accuracy",
                "predictions",
                "mean_prediction_latency_us",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "algorithm",
            "predictions",
            "unserved",
            "accuracy",
            "tp_rate",
            "tn_rate",
            "fp_rate",
            "fn_rate",
            "final_model_version",
            "mean_latency_us",
            "p95_latency_us",
        ])?;
        for s in &self.summaries {
            let m = &s.metrics;
            let rate = |f: fn(&crate::metrics::BinaryRates) -> f64| m.binary.as_ref().map(f).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                s.algorithm.as_str().to_string(),
                s.predictions.to_string(),
                s.unserved.to_string(),
                m.accuracy.to_string(),
                rate(|b| b.tp_rate),
                rate(|b| b.tn_rate),
                rate(|b| b.fp_rate),
                rate(|b| b.fn_rate),
                s.final_model_version.map(|v| v.to_string()).unwrap_or_default(),
                m.latency.mean_us.to_string(),
                m.latency.p95_us.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Source {
    Synth {
        cfg: StillMotionConfig,
        mean_run: u32,
        class: usize,
        rng: SplitMix64,
    },
    Rows {
        data: Dataset,
        order: Vec<usize>,
        next: usize,
        rng: SplitMix64,
    },
}

impl Source {
    fn open(cfg: &SourceConfig, rng: SplitMix64) -> Result<Self> {
        match cfg {
            &SourceConfig::StillMotion { still_fraction, mean_run } => {
                let cfg = StillMotionConfig {
                    still_fraction,
                    ..StillMotionConfig::default()
                };
                let mut rng = rng;
                let class = pick_class(&cfg, &mut rng);
                Ok(Source::Synth { cfg, mean_run, class, rng })
            }
            SourceConfig::Csv { path, has_header } => {
                let schema = CsvSchema {
                    has_header: *has_header,
                    ..CsvSchema::default()
                };
                let data = data::load_csv(path, &schema)?;
                if data.is_empty() {
                    return Err(Error::Scenario(format!("{}: no rows", path.display())));
                }
                let order = (0..data.len()).collect();
                let mut s = Source::Rows {
                    data,
                    order,
                    next: usize::MAX,
                    rng,
                };
                s.reshuffle();
                Ok(s)
            }
        }
    }

    fn reshuffle(&mut self) {
        if let Source::Rows { order, next, rng, .. } = self {
            use rand::seq::SliceRandom;
            order.shuffle(rng);
            *next = 0;
        }
    }

    fn feature_names(&self) -> Vec<String> {
        match self {
            Source::Synth { .. } => StillMotionConfig::feature_names(),
            Source::Rows { data, .. } => data.feature_names().to_vec(),
        }
    }

    fn class_names(&self) -> Vec<String> {
        match self {
            Source::Synth { .. } => StillMotionConfig::class_names(),
            Source::Rows { data, .. } => data.class_names().to_vec(),
        }
    }

    fn next(&mut self) -> (Vec<f64>, usize) {
        match self {
            Source::Synth { cfg, mean_run, class, rng } => {
                if *mean_run == 1 || (*mean_run > 1 && rng.next_unit() < 1.0 / *mean_run as f64) {
                    *class = pick_class(cfg, rng);
                }
                (cfg.draw(*class, rng), *class)
            }
            Source::Rows { .. } => {
                let exhausted = matches!(self, Source::Rows { order, next, .. } if *next >= order.len());
                if exhausted {
                    self.reshuffle();
                }
                let Source::Rows { data, order, next, .. } = self else {
                    unreachable!()
                };
                let s = &data.samples()[order[*next]];
                *next += 1;
                (s.features.clone(), s.label)
            }
        }
    }
}

fn pick_class(cfg: &StillMotionConfig, rng: &mut SplitMix64) -> usize {
    if rng.next_unit() < cfg.still_fraction {
        STILL
    } else {
        MOTION
    }
}

/// Server wrapped with its retraining schedule and prequential scoring of
/// uploads for the server-side algorithms.
struct SimServer {
    core: ServerCore,
    retrain: RetrainConfig,
    retrain_every: u64,
    next_retrain: u64,
    end: u64,
    publishes: u64,
    scored: Vec<(Algorithm, Tracker)>,
}

impl SimServer {
    fn advance_to(&mut self, t: u64) -> Result<()> {
        while self.next_retrain <= t && self.next_retrain < self.end {
            let at = self.next_retrain;
            self.publishes += retrain_round(&self.core, &self.retrain, at)?.len() as u64;
            self.next_retrain += self.retrain_every;
        }
        Ok(())
    }

    fn handle(&mut self, req: &Request, now: u64) -> Response {
        let before = self.core.data.len();
        let resp = self.core.handle(req.clone());
        if let Request::PushData { batch } = req {
            if self.core.data.len() > before {
                self.score(batch, now);
            }
        }
        resp
    }

    fn score(&mut self, batch: &SensorBatch, now: u64) {
        let Some(labels) = &batch.labels else {
            return;
        };
        for (alg, tracker) in &mut self.scored {
            let Some(p) = self.core.models.latest(alg.model_kind()) else {
                tracker.unserved += batch.len() as u64;
                continue;
            };
            let client_alg = alg.decision_rule();
            for (r, &label) in batch.readings.iter().zip(labels) {
                match predict_with(&p.bundle, client_alg, &r.values) {
                    Ok(pred) => tracker.record(label, pred, None),
                    Err(e) => log::warn!("server-side scoring failed at {now}: {e}"),
                }
            }
        }
    }

    fn latest(&self, kind: ModelKind) -> Option<std::sync::Arc<ParameterBundle>> {
        self.core.models.latest(kind).map(|p| p.bundle.clone())
    }
}

/// Link model applied to one request/response exchange. The round trip is
/// resolved when the request is sent; the server sees the request at
/// `now + latency` and the reply must survive the trip back.
struct SimTransport<'a> {
    server: &'a mut SimServer,
    link: &'a LinkConfig,
    rng: &'a mut SplitMix64,
    now: u64,
    error: Option<Error>,
}

impl Transport for SimTransport<'_> {
    fn request(&mut self, req: &Request, timeout: Duration) -> std::result::Result<Response, TransportError> {
        let lost_out = self.rng.next_unit() < self.link.drop_probability;
        let lost_back = self.rng.next_unit() < self.link.drop_probability;
        if !self.link.is_up(self.now) {
            return Err(TransportError::Unreachable("link down".into()));
        }
        let arrival = self.now + self.link.latency_ms;
        if lost_out || !self.link.is_up(arrival) {
            return Err(TransportError::Timeout);
        }
        if let Err(e) = self.server.advance_to(arrival) {
            self.error = Some(e);
            return Err(TransportError::Protocol("server failure".into()));
        }
        let resp = self.server.handle(req, arrival);
        let back = arrival + self.link.latency_ms;
        if lost_back || !self.link.is_up(back) || Duration::from_millis(2 * self.link.latency_ms) > timeout {
            return Err(TransportError::Timeout);
        }
        Ok(resp)
    }
}

#[derive(Debug, Clone)]
struct Tracker {
    window: VecDeque<bool>,
    window_cap: usize,
    confusion: Vec<Vec<u64>>,
    predictions: u64,
    unserved: u64,
    latencies: Vec<f64>,
    tick_latency_sum: f64,
    tick_latency_n: u64,
}

impl Tracker {
    fn new(classes: usize, window_cap: usize) -> Self {
        Self {
            window: VecDeque::with_capacity(window_cap),
            window_cap,
            confusion: vec![vec![0; classes]; classes],
            predictions: 0,
            unserved: 0,
            latencies: Vec::new(),
            tick_latency_sum: 0.0,
            tick_latency_n: 0,
        }
    }

    fn record(&mut self, label: usize, pred: usize, latency_us: Option<f64>) {
        if self.window.len() == self.window_cap {
            self.window.pop_front();
        }
        self.window.push_back(label == pred);
        if label < self.confusion.len() && pred < self.confusion.len() {
            self.confusion[label][pred] += 1;
        }
        self.predictions += 1;
        if let Some(us) = latency_us {
            self.latencies.push(us);
            self.tick_latency_sum += us;
            self.tick_latency_n += 1;
        }
    }

    fn rolling(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().filter(|&&c| c).count() as f64 / self.window.len() as f64
        }
    }

    fn take_tick_latency(&mut self) -> Option<f64> {
        let out = (self.tick_latency_n > 0).then(|| self.tick_latency_sum / self.tick_latency_n as f64);
        self.tick_latency_sum = 0.0;
        self.tick_latency_n = 0;
        out
    }

    fn metrics(&self) -> Metrics {
        Metrics::from_confusion(self.confusion.clone(), LatencyStats::from_micros(&self.latencies))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // Declaration order is the tie-break at equal times.
    Sync,
    Emit(usize),
    Upload,
    Report,
}

/// Runs a scenario given its individual parts; other settings take defaults.
pub fn run_scenario_with(
    nodes: Vec<SensorNodeConfig>,
    link: LinkConfig,
    retrain_every_ms: u64,
    algorithms: Vec<Algorithm>,
    duration_ms: u64,
    seed: u64,
) -> Result<ScenarioResult> {
    run_scenario(&ScenarioConfig::new(nodes, link, retrain_every_ms, algorithms, duration_ms, seed))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();

    let mut sources = cfg
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| Source::open(&n.source, SplitMix64::derive(cfg.seed, 1_000 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let feature_names = sources[0].feature_names();
    let class_names = sources[0].class_names();
    if sources.iter().any(|s| s.feature_names().len() != feature_names.len() || s.class_names() != class_names) {
        return Err(Error::Scenario("all nodes must produce the same features and classes".into()));
    }
    let classes = class_names.len();

    let mut served: Vec<ModelKind> = algorithms.iter().map(Algorithm::model_kind).collect();
    served.sort();
    served.dedup();
    let mut retrain = RetrainConfig::new(feature_names.clone(), class_names.clone());
    let t = &cfg.training;
    retrain.dcl = TrainingConfig::new(t.dcl_learning_rate, t.dcl_epochs, cfg.seed);
    retrain.cl = TrainingConfig::new(t.cl_learning_rate, t.cl_epochs, cfg.seed);
    retrain.dcl_hidden = t.dcl_hidden.clone();
    let mut server = SimServer {
        core: ServerCore::new(ModelStore::new(&served), DataSink::new()),
        retrain,
        retrain_every: cfg.retrain_every_ms,
        next_retrain: cfg.retrain_every_ms,
        end: cfg.duration_ms,
        publishes: 0,
        scored: algorithms
            .iter()
            .filter(|a| !a.is_client())
            .map(|&a| (a, Tracker::new(classes, cfg.rolling_window)))
            .collect(),
    };

    // Bootstrap corpus so a first bundle exists at time 0.
    let mut bootstrap_count = 0u64;
    if cfg.bootstrap_samples > 0 {
        let mut src = Source::open(&cfg.nodes[0].source, SplitMix64::derive(cfg.seed, 2))?;
        let (readings, labels): (Vec<_>, Vec<_>) = (0..cfg.bootstrap_samples)
            .map(|i| {
                let (values, label) = src.next();
                (
                    SensorReading {
                        sensor_id: "bootstrap".into(),
                        timestamp: i as u64,
                        values,
                    },
                    label,
                )
            })
            .unzip();
        bootstrap_count = readings.len() as u64;
        server.core.data.store(SensorBatch::new("bootstrap", 0, readings, Some(labels))?)?;
        server.publishes += retrain_round(&server.core, &server.retrain, 0)?.len() as u64;
    }

    // Client state: one sync stream per bundle kind the client predictors need.
    let client_algs: Vec<Algorithm> = algorithms.iter().copied().filter(Algorithm::is_client).collect();
    let mut client_kinds: Vec<ModelKind> = client_algs.iter().map(Algorithm::model_kind).collect();
    client_kinds.dedup();
    let mut sync_states: Vec<SyncState> = client_kinds.iter().map(|&k| SyncState::new(k)).collect();
    let policy = SyncPolicy {
        period: Duration::from_millis(cfg.sync_period_ms),
        timeout: Duration::from_millis(cfg.sync_timeout_ms),
    };
    let mut client_trackers: Vec<(Algorithm, Tracker)> = client_algs.iter().map(|&a| (a, Tracker::new(classes, cfg.rolling_window))).collect();
    let mut uploader = Uploader::new("edge-client", UploadQueue::in_memory(cfg.queue_capacity));
    uploader.max_retries = cfg.max_retries;
    uploader.timeout = policy.timeout;
    let mut pending: Vec<(SensorReading, usize)> = Vec::new();
    let mut link_rng = SplitMix64::derive(cfg.seed, 1);
    let mut totals = ScenarioTotals::default();
    let mut ticks = Vec::new();
    let mut version_changes = Vec::new();
    let mut emitted_per_node = vec![0u64; cfg.nodes.len()];

    let mut queue: BinaryHeap<Reverse<(u64, Event)>> = BinaryHeap::new();
    if !client_kinds.is_empty() {
        queue.push(Reverse((0, Event::Sync)));
    }
    for (i, n) in cfg.nodes.iter().enumerate() {
        let t0 = n.emit_time(0);
        if t0 < cfg.duration_ms {
            queue.push(Reverse((t0, Event::Emit(i))));
        }
    }
    queue.push(Reverse((cfg.upload_every_ms.min(cfg.duration_ms), Event::Upload)));
    queue.push(Reverse((cfg.report_every_ms.min(cfg.duration_ms), Event::Report)));

    while let Some(Reverse((now, ev))) = queue.pop() {
        server.advance_to(now)?;
        match ev {
            Event::Sync => {
                for state in sync_states.iter_mut() {
                    let held = state.model_version();
                    let mut tr = SimTransport {
                        server: &mut server,
                        link: &cfg.link,
                        rng: &mut link_rng,
                        now,
                        error: None,
                    };
                    let next = client_sync_tick(state.clone(), &mut tr, &policy, now);
                    if let Some(e) = tr.error.take() {
                        return Err(e);
                    }
                    totals.sync_attempts += 1;
                    if matches!(next.last_outcome, Some(SyncOutcome::Failed(_))) {
                        totals.sync_failures += 1;
                    }
                    if next.model_version() != held {
                        for &(a, _) in client_trackers.iter().filter(|(a, _)| a.model_kind() == next.model_kind) {
                            version_changes.push(VersionChange {
                                sim_time_ms: now,
                                algorithm: a,
                                model_version: next.model_version().expect("changed to some version"),
                            });
                        }
                    }
                    *state = next;
                }
                let t = now + cfg.sync_period_ms;
                if t < cfg.duration_ms {
                    queue.push(Reverse((t, Event::Sync)));
                }
            }
            Event::Emit(i) => {
                let node = &cfg.nodes[i];
                let (values, label) = sources[i].next();
                totals.readings_emitted += 1;
                for (alg, tracker) in client_trackers.iter_mut() {
                    let state = sync_states.iter().find(|s| s.model_kind == alg.model_kind()).expect("state per kind");
                    let Some(bundle) = &state.current_bundle else {
                        tracker.unserved += 1;
                        continue;
                    };
                    let rule = alg.decision_rule();
                    let (pred, us) = if cfg.measure_latency {
                        let start = Instant::now();
                        let p = predict_with(bundle, rule, &values)?;
                        (p, Some(start.elapsed().as_secs_f64() * 1e6))
                    } else {
                        (predict_with(bundle, rule, &values)?, None)
                    };
                    tracker.record(label, pred, us);
                }
                pending.push((
                    SensorReading {
                        sensor_id: node.sensor_id.clone(),
                        timestamp: now,
                        values,
                    },
                    label,
                ));
                emitted_per_node[i] += 1;
                let t = node.emit_time(emitted_per_node[i]);
                if t < cfg.duration_ms {
                    queue.push(Reverse((t, Event::Emit(i))));
                }
            }
            Event::Upload => {
                let mut tr = SimTransport {
                    server: &mut server,
                    link: &cfg.link,
                    rng: &mut link_rng,
                    now,
                    error: None,
                };
                if pending.is_empty() {
                    uploader.replay(&mut tr)?;
                } else {
                    let (readings, labels): (Vec<_>, Vec<_>) = std::mem::take(&mut pending).into_iter().unzip();
                    totals.client_sent += readings.len() as u64;
                    let batch = uploader.make_batch(readings, Some(labels))?;
                    uploader.upload_batch(&mut tr, batch)?;
                }
                if let Some(e) = tr.error.take() {
                    return Err(e);
                }
                if now < cfg.duration_ms {
                    queue.push(Reverse(((now + cfg.upload_every_ms).min(cfg.duration_ms), Event::Upload)));
                }
            }
            Event::Report => {
                for &alg in &algorithms {
                    let (version, staleness, tracker) = if alg.is_client() {
                        let state = sync_states.iter().find(|s| s.model_kind == alg.model_kind()).expect("state per kind");
                        let tracker = &mut client_trackers.iter_mut().find(|(a, _)| *a == alg).expect("tracker").1;
                        (state.model_version(), state.staleness(now), tracker)
                    } else {
                        let latest = server.latest(alg.model_kind());
                        let tracker = &mut server.scored.iter_mut().find(|(a, _)| *a == alg).expect("tracker").1;
                        (latest.as_ref().map(|b| b.model_version), latest.as_ref().map(|b| b.staleness(now)), tracker)
                    };
                    ticks.push(TickRecord {
                        sim_time_ms: now,
                        algorithm: alg,
                        model_version: version,
                        staleness_ms: staleness,
                        rolling_accuracy: tracker.rolling(),
                        predictions: tracker.predictions,
                        mean_prediction_latency_us: tracker.take_tick_latency(),
                    });
                }
                if now < cfg.duration_ms {
                    queue.push(Reverse(((now + cfg.report_every_ms).min(cfg.duration_ms), Event::Report)));
                }
            }
        }
    }

    totals.server_received = server.core.data.len() as u64 - bootstrap_count;
    totals.queue_dropped = uploader.queue().dropped();
    totals.queued_at_end = uploader.queue().len_readings() as u64;
    totals.pending_at_end = pending.len() as u64;
    totals.publishes = server.publishes;

    let mut summaries = Vec::new();
    for &alg in &algorithms {
        let (tracker, version) = if alg.is_client() {
            let t = &client_trackers.iter().find(|(a, _)| *a == alg).expect("tracker").1;
            let state = sync_states.iter().find(|s| s.model_kind == alg.model_kind()).expect("state");
            (t, state.model_version())
        } else {
            let t = &server.scored.iter().find(|(a, _)| *a == alg).expect("tracker").1;
            (t, server.latest(alg.model_kind()).map(|b| b.model_version))
        };
        summaries.push(AlgorithmSummary {
            algorithm: alg,
            metrics: tracker.metrics(),
            predictions: tracker.predictions,
            unserved: tracker.unserved,
            final_model_version: version,
        });
    }
    Ok(ScenarioResult {
        ticks,
        summaries,
        totals,
        version_changes,
    })
}
