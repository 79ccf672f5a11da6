//! `edgectx client`: predicts each input line from the latest downloaded
//! bundle while a background thread keeps the bundle fresh.

use std::fs;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::mpsc;
use std::thread;

use edgectx_core::sync::client::{client_sync_tick, SyncOutcome};
use edgectx_core::sync::{decode_bundle, now_ms, BundleSlot, ClientAlgorithm, EdgePredictor, SyncPolicy, SyncState, TcpTransport};
use edgectx_core::Error;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub server: String,
    pub policy: SyncPolicy,
    pub algorithm: ClientAlgorithm,
    /// Last good bundle, loaded at start and rewritten on every update.
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub lines: u64,
    pub predicted: u64,
    pub not_ready: u64,
    pub errors: u64,
}

fn load_cache(opts: &ClientOptions) -> Option<SyncState> {
    let path = opts.cache.as_ref()?;
    let bytes = fs::read(path).ok()?;
    match decode_bundle(&bytes) {
        Ok(b) if b.model_kind == opts.algorithm.model_kind() => Some(SyncState::new(b.model_kind).with_bundle(b)),
        Ok(b) => {
            log::warn!("{}: cached {} bundle ignored", path.display(), b.model_kind);
            None
        }
        Err(e) => {
            log::warn!("{}: unusable cache: {e}", path.display());
            None
        }
    }
}

fn publish(slot: &BundleSlot, state: &SyncState, cache: Option<&PathBuf>) {
    let Some(b) = &state.current_bundle else {
        return;
    };
    if slot.offer(b) {
        log::info!("now using model_version {}", b.model_version);
        if let Some(p) = cache {
            match edgectx_core::sync::encode_bundle(b) {
                Ok(bytes) => {
                    if let Err(e) = fs::write(p, bytes) {
                        log::warn!("{}: cache write failed: {e}", p.display());
                    }
                }
                Err(e) => log::warn!("cache encode failed: {e}"),
            }
        }
    }
}

fn kind_mismatch(opts: &ClientOptions, message: &str) -> CliError {
    CliError::Runtime(Error::KindMismatch {
        wanted: format!("{} bundles for {:?}", opts.algorithm.model_kind(), opts.algorithm),
        got: message.to_string(),
    })
}

/// Parses one feature vector (comma and/or whitespace separated).
pub fn parse_features(line: &str) -> Result<Vec<f64>, String> {
    let values: Result<Vec<f64>, _> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect();
    let values = values?;
    if values.is_empty() {
        return Err("no values".into());
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(values)
}

pub fn cmd_client<R: BufRead, W: Write>(opts: &ClientOptions, input: R, output: W) -> Result<ClientStats, CliError> {
    let slot = BundleSlot::new();
    let mut state = load_cache(opts).unwrap_or_else(|| SyncState::new(opts.algorithm.model_kind()));
    publish(&slot, &state, None);

    let mut transport = TcpTransport::new(opts.server.clone());
    state = client_sync_tick(state, &mut transport, &opts.policy, now_ms());
    if let Some(SyncOutcome::KindMismatch(m)) = &state.last_outcome {
        return Err(kind_mismatch(opts, m));
    }
    if let Some(SyncOutcome::Failed(m)) = &state.last_outcome {
        log::warn!("initial sync failed: {m}");
    }
    publish(&slot, &state, opts.cache.as_ref());

    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let sync_thread = {
        let slot = slot.clone();
        let policy = opts.policy;
        let cache = opts.cache.clone();
        thread::spawn(move || {
            let mut state = state;
            while let Err(mpsc::RecvTimeoutError::Timeout) = stop_rx.recv_timeout(policy.period) {
                state = client_sync_tick(state, &mut transport, &policy, now_ms());
                match &state.last_outcome {
                    Some(SyncOutcome::KindMismatch(m)) => log::error!("server stopped serving this model kind: {m}"),
                    Some(SyncOutcome::Failed(m)) => {
                        log::warn!("sync failed ({} in a row): {m}", state.consecutive_failures)
                    }
                    _ => {}
                }
                publish(&slot, &state, cache.as_ref());
            }
        })
    };

    let predictor = EdgePredictor::new(slot, opts.algorithm);
    let mut w = csv::Writer::from_writer(output);
    let result = (|| -> Result<ClientStats, CliError> {
        let mut stats = ClientStats::default();
        w.write_record(["timestamp", "features", "predicted_class", "model_version", "staleness_ms"])
            .map_err(Error::from)?;
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            stats.lines += 1;
            let now = now_ms();
            let record: [String; 5] = match parse_features(&line) {
                Err(e) => {
                    stats.errors += 1;
                    [now.to_string(), line.trim().to_string(), format!("ERROR: {e}"), String::new(), String::new()]
                }
                Ok(x) => {
                    let shown = x.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
                    match predictor.predict(&x, now) {
                        Ok(p) => {
                            stats.predicted += 1;
                            [now.to_string(), shown, p.label.name, p.model_version.to_string(), p.staleness_ms.to_string()]
                        }
                        Err(Error::NotSynced) => {
                            stats.not_ready += 1;
                            [now.to_string(), shown, "NOT_READY".into(), String::new(), String::new()]
                        }
                        Err(e) => {
                            stats.errors += 1;
                            [now.to_string(), shown, format!("ERROR: {e}"), String::new(), String::new()]
                        }
                    }
                }
            };
            w.write_record(&record).map_err(Error::from)?;
            w.flush()?;
        }
        Ok(stats)
    })();
    drop(stop_tx);
    let _ = sync_thread.join();
    result
}
