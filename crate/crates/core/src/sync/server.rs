//! Tier-3 server: model store, upload sink, request handling and the TCP
//! accept loop.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::bundle::{decode_bundle, encode_bundle, ModelKind, ParameterBundle};
use super::protocol::{read_frame, write_message, ErrorCode, FrameError, Request, Response};
use super::upload::SensorBatch;
use crate::data::{Dataset, Sample, SensorReading};
use crate::error::{Error, Result};
use crate::learners::{ClTrainer, DclTrainer, Trainer};
use crate::nn::TrainingConfig;

/// An immutable published snapshot and its wire encoding.
#[derive(Debug)]
pub struct Published {
    pub bundle: Arc<ParameterBundle>,
    pub encoded: Arc<str>,
}

#[derive(Debug, Default)]
struct Slot {
    latest: Option<Arc<Published>>,
    high_water: u64,
}

/// Latest bundle per served model kind. Readers clone an `Arc` under a read
/// lock, so they see either the old or the new snapshot in full.
#[derive(Debug)]
pub struct ModelStore {
    served: Vec<ModelKind>,
    slots: RwLock<HashMap<ModelKind, Slot>>,
    dir: Option<PathBuf>,
}

const HIGH_WATER_FILE: &str = "high_water.json";

impl ModelStore {
    pub fn new(served: &[ModelKind]) -> Self {
        let slots = served.iter().map(|&k| (k, Slot::default())).collect();
        Self {
            served: served.to_vec(),
            slots: RwLock::new(slots),
            dir: None,
        }
    }

    /// Store persisted under `dir`: the version high-water mark and the latest
    /// bundle per kind survive restarts. Corrupt files are skipped with a warning.
    pub fn open(dir: impl AsRef<Path>, served: &[ModelKind]) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut store = Self::new(served);
        {
            let slots = store.slots.get_mut().expect("fresh lock");
            let hw_path = dir.join(HIGH_WATER_FILE);
            if hw_path.exists() {
                match fs::read_to_string(&hw_path)
                    .map_err(Error::from)
                    .and_then(|t| serde_json::from_str::<BTreeMap<ModelKind, u64>>(&t).map_err(|e| Error::InvalidConfig(e.to_string())))
                {
                    Ok(map) => {
                        for (k, v) in map {
                            if let Some(s) = slots.get_mut(&k) {
                                s.high_water = v;
                            }
                        }
                    }
                    Err(e) => log::warn!("{}: ignoring corrupt high-water file: {e}", hw_path.display()),
                }
            }
            for (&kind, slot) in slots.iter_mut() {
                let p = bundle_path(&dir, kind);
                if !p.exists() {
                    continue;
                }
                let loaded = fs::read(&p).map_err(Error::from).and_then(|b| {
                    let bundle = decode_bundle(&b)?;
                    Ok((bundle, b))
                });
                match loaded {
                    Ok((bundle, bytes)) if bundle.model_kind == kind => {
                        slot.high_water = slot.high_water.max(bundle.model_version);
                        slot.latest = Some(Arc::new(Published {
                            bundle: Arc::new(bundle),
                            encoded: String::from_utf8(bytes).expect("decoded documents are UTF-8").into(),
                        }));
                    }
                    Ok(_) => log::warn!("{}: bundle of the wrong kind, skipped", p.display()),
                    Err(e) => log::warn!("{}: skipping corrupt bundle: {e}", p.display()),
                }
            }
        }
        store.dir = Some(dir);
        Ok(store)
    }

    pub fn served(&self) -> &[ModelKind] {
        &self.served
    }

    pub fn serves(&self, kind: ModelKind) -> bool {
        self.served.contains(&kind)
    }

    pub fn latest(&self, kind: ModelKind) -> Option<Arc<Published>> {
        self.slots.read().expect("model store lock").get(&kind)?.latest.clone()
    }

    /// Highest model_version ever published for `kind`.
    pub fn high_water(&self, kind: ModelKind) -> u64 {
        self.slots
            .read()
            .expect("model store lock")
            .get(&kind)
            .map_or(0, |s| s.high_water)
    }

    /// Publishes `bundle` as version `high_water + 1`, returning that version.
    pub fn publish(&self, mut bundle: ParameterBundle) -> Result<u64> {
        let kind = bundle.model_kind;
        let mut slots = self.slots.write().expect("model store lock");
        let slot = slots.get_mut(&kind).ok_or_else(|| Error::KindMismatch {
            wanted: kind.to_string(),
            got: format!("{:?}", self.served),
        })?;
        let version = slot.high_water + 1;
        bundle.model_version = version;
        bundle.params = bundle.params.with_version(version);
        let bytes = encode_bundle(&bundle)?;
        if let Some(dir) = &self.dir {
            write_atomic(&bundle_path(dir, kind), &bytes)?;
            let mut hw: BTreeMap<ModelKind, u64> = slots_high_water(&slots);
            hw.insert(kind, version);
            let text = serde_json::to_string(&hw).map_err(std::io::Error::other)?;
            write_atomic(&dir.join(HIGH_WATER_FILE), text.as_bytes())?;
        }
        let slot = slots.get_mut(&kind).expect("checked above");
        slot.high_water = version;
        slot.latest = Some(Arc::new(Published {
            bundle: Arc::new(bundle),
            encoded: String::from_utf8(bytes).expect("encoder emits UTF-8").into(),
        }));
        Ok(version)
    }
}

fn slots_high_water(slots: &HashMap<ModelKind, Slot>) -> BTreeMap<ModelKind, u64> {
    slots.iter().map(|(&k, s)| (k, s.high_water)).collect()
}

fn bundle_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("{}.bundle.json", kind.as_str().to_ascii_lowercase()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// One uploaded reading with its optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredReading {
    pub client_id: String,
    pub reading: SensorReading,
    pub label: Option<usize>,
}

#[derive(Debug, Default)]
struct SinkInner {
    readings: Vec<StoredReading>,
    seen: HashSet<(String, u64)>,
    log: Option<File>,
}

/// Accumulates uploads, ignoring repeated `(client_id, seq)` pairs.
#[derive(Debug, Default)]
pub struct DataSink {
    inner: Mutex<SinkInner>,
}

const BATCH_LOG: &str = "batches.jsonl";

impl DataSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sink backed by an append-only batch log in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(BATCH_LOG);
        let mut inner = SinkInner::default();
        if path.exists() {
            let f = File::open(&path)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        log::warn!("{}:{}: unreadable line skipped: {e}", path.display(), i + 1);
                        continue;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<SensorBatch>(&line)
                    .map_err(|e| e.to_string())
                    .and_then(|b| b.validate().map(|_| b).map_err(|e| e.to_string()))
                {
                    Ok(b) => {
                        absorb(&mut inner, b);
                    }
                    Err(e) => log::warn!("{}:{}: skipping corrupt batch: {e}", path.display(), i + 1),
                }
            }
        }
        inner.log = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        Ok(Self {
            inner: Mutex::new(inner),
        })
    }

    /// Stores a validated batch; returns how many readings were new.
    pub fn store(&self, batch: SensorBatch) -> Result<usize> {
        let mut inner = self.inner.lock().expect("sink lock");
        if inner.seen.contains(&(batch.client_id.clone(), batch.seq)) {
            return Ok(0);
        }
        if let Some(f) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(&batch).map_err(std::io::Error::other)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        Ok(absorb(&mut inner, batch))
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("sink lock").readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<StoredReading> {
        self.inner.lock().expect("sink lock").readings.clone()
    }

    /// Labeled readings with the expected width as a training set.
    pub fn labeled_dataset(&self, feature_names: &[String], class_names: &[String]) -> Result<Option<Dataset>> {
        let inner = self.inner.lock().expect("sink lock");
        let mut skipped = 0usize;
        let samples: Vec<Sample> = inner
            .readings
            .iter()
            .filter_map(|r| {
                let label = r.label?;
                if label >= class_names.len() || r.reading.values.len() != feature_names.len() {
                    skipped += 1;
                    return None;
                }
                Some(Sample {
                    features: r.reading.values.clone(),
                    label,
                    timestamp: Some(r.reading.timestamp),
                })
            })
            .collect();
        drop(inner);
        if skipped > 0 {
            log::warn!("{skipped} labeled readings do not fit the model schema and were ignored");
        }
        if samples.is_empty() {
            return Ok(None);
        }
        Dataset::new(samples, feature_names.to_vec(), class_names.to_vec()).map(Some)
    }
}

fn absorb(inner: &mut SinkInner, batch: SensorBatch) -> usize {
    if !inner.seen.insert((batch.client_id.clone(), batch.seq)) {
        return 0;
    }
    let n = batch.readings.len();
    let labels = batch.labels.map(|l| l.into_iter().map(Some).collect::<Vec<_>>());
    let labels = labels.unwrap_or_else(|| vec![None; n]);
    for (reading, label) in batch.readings.into_iter().zip(labels) {
        inner.readings.push(StoredReading {
            client_id: batch.client_id.clone(),
            reading,
            label,
        });
    }
    n
}

/// Shared server state; cheap to clone into connection threads.
#[derive(Debug, Clone)]
pub struct ServerCore {
    pub models: Arc<ModelStore>,
    pub data: Arc<DataSink>,
}

impl ServerCore {
    pub fn new(models: ModelStore, data: DataSink) -> Self {
        Self {
            models: Arc::new(models),
            data: Arc::new(data),
        }
    }

    pub fn handle(&self, req: Request) -> Response {
        match req {
            Request::Ping => Response::Pong,
            Request::GetParams { model_kind } => {
                if !self.models.serves(model_kind) {
                    return Response::Error {
                        code: ErrorCode::UnsupportedKind,
                        message: format!("server does not train {model_kind} models"),
                    };
                }
                match self.models.latest(model_kind) {
                    Some(p) => Response::Params {
                        bundle: p.encoded.to_string(),
                    },
                    None => Response::NotReady { model_kind },
                }
            }
            Request::PushData { batch } => {
                if let Err(e) = batch.validate() {
                    return Response::Error {
                        code: ErrorCode::InvalidBatch,
                        message: e.to_string(),
                    };
                }
                let n = batch.len();
                match self.data.store(batch) {
                    Ok(_) => Response::Ack { stored: n },
                    Err(e) => Response::Error {
                        code: ErrorCode::Internal,
                        message: e.to_string(),
                    },
                }
            }
        }
    }

    pub fn handle_bytes(&self, body: &[u8]) -> Response {
        match serde_json::from_slice::<Request>(body) {
            Ok(req) => self.handle(req),
            Err(e) => Response::Error {
                code: ErrorCode::Malformed,
                message: e.to_string(),
            },
        }
    }
}

/// What a retraining round trains and how.
#[derive(Debug, Clone)]
pub struct RetrainConfig {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub dcl_hidden: Option<Vec<usize>>,
    pub dcl: TrainingConfig,
    pub cl: TrainingConfig,
    pub normalize: bool,
}

impl RetrainConfig {
    pub fn new(feature_names: Vec<String>, class_names: Vec<String>) -> Self {
        Self {
            feature_names,
            class_names,
            dcl_hidden: None,
            dcl: TrainingConfig::new(TrainingConfig::CLIENT_MODEL_LEARNING_RATE, TrainingConfig::DCL_EPOCHS, 1),
            cl: TrainingConfig::new(TrainingConfig::SERVER_LEARNING_RATE, TrainingConfig::CL_EPOCHS, 1),
            normalize: true,
        }
    }
}

/// Trains every served kind on all labeled uploads and publishes the
/// results. With no labeled data nothing is published.
pub fn retrain_round(core: &ServerCore, cfg: &RetrainConfig, now: u64) -> Result<Vec<(ModelKind, u64)>> {
    let Some(data) = core.data.labeled_dataset(&cfg.feature_names, &cfg.class_names)? else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for &kind in core.models.served() {
        let bundle = train_bundle(kind, &data, cfg, now)?;
        let v = core.models.publish(bundle)?;
        log::info!("published {kind} model_version {v} trained on {} samples", data.len());
        out.push((kind, v));
    }
    Ok(out)
}

/// Trains one bundle of `kind` (its model_version is assigned on publish).
pub fn train_bundle(kind: ModelKind, data: &Dataset, cfg: &RetrainConfig, now: u64) -> Result<ParameterBundle> {
    let bundle = match kind {
        ModelKind::Dcl => {
            let mut t = DclTrainer::new(cfg.dcl.clone());
            t.hidden_sizes = cfg.dcl_hidden.clone();
            t.normalize = cfg.normalize;
            let m = t.fit(data)?;
            ParameterBundle::dcl(m.model, 0, now).with_normalization(m.ranges)
        }
        ModelKind::Cl => {
            let mut t = ClTrainer::new(cfg.cl.clone());
            t.normalize = cfg.normalize;
            let m = t.fit(data)?;
            ParameterBundle::cl(m.model, 0, now).with_normalization(m.ranges)
        }
    };
    Ok(bundle.with_class_names(cfg.class_names.clone()))
}

/// Running TCP server; dropping the handle does not stop it, call [`stop`].
///
/// [`stop`]: ServerHandle::stop
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Stops accepting, closes open connections and joins the accept loop.
    pub fn stop(mut self) {
        self.shutdown();
    }

    /// Blocks until another holder of the stop flag raises it.
    pub fn wait(mut self) {
        while !self.stop.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(50));
        }
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.conns.lock().expect("conn list").drain(..) {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Binds `addr` and serves requests on a thread per connection.
pub fn server_serve(addr: &str, core: ServerCore) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
    let accept = {
        let stop = stop.clone();
        let conns = conns.clone();
        thread::Builder::new().name("edgectx-accept".into()).spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        if let Err(e) = stream.set_nonblocking(false) {
                            log::warn!("{peer}: {e}");
                            continue;
                        }
                        let _ = stream.set_nodelay(true);
                        if let Ok(c) = stream.try_clone() {
                            let mut list = conns.lock().expect("conn list");
                            list.retain(|s| s.peer_addr().is_ok());
                            list.push(c);
                        }
                        let core = core.clone();
                        let _ = thread::Builder::new()
                            .name(format!("edgectx-conn-{peer}"))
                            .spawn(move || serve_connection(stream, core));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        thread::sleep(Duration::from_millis(50));
                    }
                }
            }
        })?
    };
    log::info!("listening on {local}");
    Ok(ServerHandle {
        addr: local,
        stop,
        conns,
        accept: Some(accept),
    })
}

fn serve_connection(mut stream: TcpStream, core: ServerCore) {
    loop {
        let resp = match read_frame(&mut stream) {
            Ok(body) => core.handle_bytes(&body),
            Err(FrameError::Closed) => return,
            Err(FrameError::Oversized(n)) => {
                // The body was not consumed, so the stream cannot be resynced.
                let _ = write_message(
                    &mut stream,
                    &Response::Error {
                        code: ErrorCode::Oversized,
                        message: format!("frame of {n} bytes rejected"),
                    },
                );
                return;
            }
            Err(FrameError::Io(_)) => return,
        };
        if write_message(&mut stream, &resp).is_err() {
            return;
        }
    }
}

/// Background thread running [`retrain_round`] every `every`.
pub struct Retrainer {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Retrainer {
    pub fn spawn(core: ServerCore, cfg: RetrainConfig, every: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let tick = Duration::from_millis(20);
            let mut waited = Duration::ZERO;
            while !flag.load(Ordering::SeqCst) {
                thread::sleep(tick);
                waited += tick;
                if waited < every {
                    continue;
                }
                waited = Duration::ZERO;
                match retrain_round(&core, &cfg, super::now_ms()) {
                    Ok(v) if v.is_empty() => log::debug!("retrain: no labeled data yet"),
                    Ok(_) => {}
                    Err(e) => log::error!("retrain failed: {e}"),
                }
            }
        });
        Self {
            stop,
            handle: Some(handle),
        }
    }

    pub fn stop(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
