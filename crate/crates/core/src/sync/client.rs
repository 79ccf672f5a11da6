//! Edge client: periodic parameter pull, the shared bundle slot, and
//! predictors that keep answering from the last bundle while offline.

use std::sync::{Arc, RwLock};
use std::time::Duration;

use super::bundle::{decode_bundle, ModelKind, ParameterBundle};
use super::protocol::{ErrorCode, Request, Response};
use super::transport::Transport;
use crate::data::scale_features;
use crate::error::{Error, Result};
use crate::learners::{adcl_class, threshold_decision, ContextLabel};
use crate::nn::argmax;

pub const DEFAULT_SYNC_PERIOD: Duration = Duration::from_secs(30);
pub const DEFAULT_SYNC_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncPolicy {
    pub period: Duration,
    pub timeout: Duration,
}

impl Default for SyncPolicy {
    fn default() -> Self {
        Self {
            period: DEFAULT_SYNC_PERIOD,
            timeout: DEFAULT_SYNC_TIMEOUT,
        }
    }
}

/// What the last sync attempt concluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncOutcome {
    Updated { from: Option<u64>, to: u64 },
    Unchanged,
    NotReady,
    /// The server does not train the requested kind.
    KindMismatch(String),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct SyncState {
    pub model_kind: ModelKind,
    pub current_bundle: Option<Arc<ParameterBundle>>,
    /// Time of the last successful exchange with the server.
    pub last_sync_at: Option<u64>,
    pub consecutive_failures: u32,
    pub last_outcome: Option<SyncOutcome>,
}

impl SyncState {
    pub fn new(model_kind: ModelKind) -> Self {
        Self {
            model_kind,
            current_bundle: None,
            last_sync_at: None,
            consecutive_failures: 0,
            last_outcome: None,
        }
    }

    pub fn with_bundle(mut self, bundle: ParameterBundle) -> Self {
        self.current_bundle = Some(Arc::new(bundle));
        self
    }

    pub fn model_version(&self) -> Option<u64> {
        self.current_bundle.as_ref().map(|b| b.model_version)
    }

    /// Age of the current bundle, if any.
    pub fn staleness(&self, now: u64) -> Option<u64> {
        self.current_bundle.as_ref().map(|b| b.staleness(now))
    }
}

/// One pull attempt. Failures are recorded in the returned state and never
/// touch the current bundle.
pub fn client_sync_tick<T: Transport + ?Sized>(state: SyncState, transport: &mut T, policy: &SyncPolicy, now: u64) -> SyncState {
    let mut next = state;
    let req = Request::GetParams {
        model_kind: next.model_kind,
    };
    let outcome = match transport.request(&req, policy.timeout) {
        Ok(Response::Params { bundle }) => match decode_bundle(bundle.as_bytes()) {
            Ok(b) if b.model_kind != next.model_kind => {
                Err(format!("asked for {} bundle, received {}", next.model_kind, b.model_kind))
            }
            Ok(b) => {
                let held = next.model_version();
                if held.is_none_or(|v| b.model_version > v) {
                    next.current_bundle = Some(Arc::new(b));
                    Ok(SyncOutcome::Updated {
                        from: held,
                        to: next.model_version().expect("just set"),
                    })
                } else {
                    Ok(SyncOutcome::Unchanged)
                }
            }
            Err(e) => Err(format!("rejected bundle: {e}")),
        },
        Ok(Response::NotReady { .. }) => Ok(SyncOutcome::NotReady),
        Ok(Response::Error {
            code: ErrorCode::UnsupportedKind,
            message,
        }) => Ok(SyncOutcome::KindMismatch(message)),
        Ok(other) => Err(format!("unexpected reply {other:?}")),
        Err(e) => Err(e.to_string()),
    };
    match outcome {
        Ok(o) => {
            next.last_sync_at = Some(now);
            next.consecutive_failures = 0;
            next.last_outcome = Some(o);
        }
        Err(msg) => {
            log::debug!("sync failed: {msg}");
            next.consecutive_failures = next.consecutive_failures.saturating_add(1);
            next.last_outcome = Some(SyncOutcome::Failed(msg));
        }
    }
    next
}

/// The only state shared between the sync loop and predictors.
#[derive(Debug, Clone, Default)]
pub struct BundleSlot(Arc<RwLock<Option<Arc<ParameterBundle>>>>);

impl BundleSlot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&self) -> Option<Arc<ParameterBundle>> {
        self.0.read().expect("bundle slot lock").clone()
    }

    pub fn store(&self, bundle: Arc<ParameterBundle>) {
        *self.0.write().expect("bundle slot lock") = Some(bundle);
    }

    /// Stores `bundle` only if it is newer than what the slot holds.
    pub fn offer(&self, bundle: &Arc<ParameterBundle>) -> bool {
        let mut g = self.0.write().expect("bundle slot lock");
        if g.as_ref().is_none_or(|b| bundle.model_version > b.model_version) {
            *g = Some(bundle.clone());
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientAlgorithm {
    Adcl,
    Lcl,
}

impl ClientAlgorithm {
    /// Bundle kind this predictor consumes.
    pub fn model_kind(&self) -> ModelKind {
        match self {
            ClientAlgorithm::Adcl => ModelKind::Dcl,
            ClientAlgorithm::Lcl => ModelKind::Cl,
        }
    }
}

impl std::str::FromStr for ClientAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adcl" => Ok(ClientAlgorithm::Adcl),
            "lcl" => Ok(ClientAlgorithm::Lcl),
            other => Err(format!("unknown client algorithm `{other}` (expected adcl or lcl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ContextLabel,
    pub model_version: u64,
    pub staleness_ms: u64,
}

/// Decides from exactly one bundle snapshot; raw features are scaled with the
/// bundle's own normalization.
pub fn predict_with(bundle: &ParameterBundle, algorithm: ClientAlgorithm, raw: &[f64]) -> Result<usize> {
    if bundle.model_kind != algorithm.model_kind() {
        return Err(Error::KindMismatch {
            wanted: algorithm.model_kind().to_string(),
            got: bundle.model_kind.to_string(),
        });
    }
    let scaled;
    let x = match &bundle.normalization {
        Some(r) => {
            scaled = scale_features(r, raw)?;
            &scaled[..]
        }
        None => raw,
    };
    match algorithm {
        ClientAlgorithm::Adcl => adcl_class(&bundle.params, x),
        ClientAlgorithm::Lcl => {
            let out = bundle.params.output(x)?;
            Ok(match &bundle.thresholds {
                Some(t) => threshold_decision(&out, t.as_slice()),
                None => argmax(&out),
            })
        }
    }
}

/// Predictor reading the shared slot; never touches the network.
#[derive(Debug, Clone)]
pub struct EdgePredictor {
    pub slot: BundleSlot,
    pub algorithm: ClientAlgorithm,
}

impl EdgePredictor {
    pub fn new(slot: BundleSlot, algorithm: ClientAlgorithm) -> Self {
        Self { slot, algorithm }
    }

    pub fn predict(&self, raw: &[f64], now: u64) -> Result<Prediction> {
        let bundle = self.slot.load().ok_or(Error::NotSynced)?;
        let class = predict_with(&bundle, self.algorithm, raw)?;
        Ok(Prediction {
            label: ContextLabel::new(class, &bundle.class_names),
            model_version: bundle.model_version,
            staleness_ms: bundle.staleness(now),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, LayerSpec};
    use crate::sync::bundle::encode_bundle;
    use crate::sync::transport::TransportError;

    struct Fixed(Vec<Result<Response, ()>>);

    impl Transport for Fixed {
        fn request(&mut self, _: &Request, _: Duration) -> Result<Response, TransportError> {
            match self.0.remove(0) {
                Ok(r) => Ok(r),
                Err(()) => Err(TransportError::Timeout),
            }
        }
    }

    fn params_reply(version: u64) -> Response {
        let p = init_network(LayerSpec::new(2, vec![2], 2).unwrap(), version).unwrap();
        let doc = encode_bundle(&ParameterBundle::dcl(p, version, 100 * version)).unwrap();
        Response::Params {
            bundle: String::from_utf8(doc).unwrap(),
        }
    }

    #[test]
    fn newer_version_swaps_same_version_refreshes() {
        let policy = SyncPolicy::default();
        let mut t = Fixed(vec![Ok(params_reply(4)), Ok(params_reply(5)), Ok(params_reply(5)), Ok(params_reply(3))]);
        let s = client_sync_tick(SyncState::new(ModelKind::Dcl), &mut t, &policy, 10);
        assert_eq!(s.model_version(), Some(4));
        let s = client_sync_tick(s, &mut t, &policy, 20);
        assert_eq!(s.model_version(), Some(5));
        let held = s.current_bundle.clone().unwrap();
        let s = client_sync_tick(s, &mut t, &policy, 30);
        assert_eq!(s.last_sync_at, Some(30));
        assert!(Arc::ptr_eq(&held, s.current_bundle.as_ref().unwrap()));
        let s = client_sync_tick(s, &mut t, &policy, 40);
        assert_eq!(s.model_version(), Some(5));
        assert_eq!(s.last_outcome, Some(SyncOutcome::Unchanged));
    }

    #[test]
    fn failures_keep_bundle_and_count() {
        let policy = SyncPolicy::default();
        let mut t = Fixed(vec![Ok(params_reply(1)), Err(()), Err(()), Err(()), Ok(Response::NotReady { model_kind: ModelKind::Dcl })]);
        let mut s = client_sync_tick(SyncState::new(ModelKind::Dcl), &mut t, &policy, 0);
        for i in 1..=3 {
            s = client_sync_tick(s, &mut t, &policy, i);
            assert_eq!(s.consecutive_failures, i as u32);
            assert_eq!(s.model_version(), Some(1));
            assert_eq!(s.last_sync_at, Some(0));
        }
        let s = client_sync_tick(s, &mut t, &policy, 9);
        assert_eq!(s.consecutive_failures, 0);
        assert_eq!(s.model_version(), Some(1));
    }

    #[test]
    fn wrong_kind_is_reported() {
        let mut t = Fixed(vec![
            Ok(Response::Error {
                code: ErrorCode::UnsupportedKind,
                message: "no CL".into(),
            }),
            Ok(params_reply(1)),
        ]);
        let s = client_sync_tick(SyncState::new(ModelKind::Cl), &mut t, &SyncPolicy::default(), 0);
        assert!(matches!(s.last_outcome, Some(SyncOutcome::KindMismatch(_))));
        let s = client_sync_tick(s, &mut t, &SyncPolicy::default(), 1);
        assert!(s.current_bundle.is_none());
        assert_eq!(s.consecutive_failures, 1);
    }

    #[test]
    fn predictor_states() {
        let slot = BundleSlot::new();
        let p = EdgePredictor::new(slot.clone(), ClientAlgorithm::Adcl);
        assert!(matches!(p.predict(&[0.1, 0.2], 0), Err(Error::NotSynced)));
        let params = init_network(LayerSpec::new(2, vec![2], 2).unwrap(), 3).unwrap();
        let b = Arc::new(ParameterBundle::dcl(params, 2, 100));
        assert!(slot.offer(&b));
        assert!(!slot.offer(&Arc::new(ParameterBundle::dcl(b.params.clone(), 1, 0))));
        let out = p.predict(&[0.1, 0.2], 250).unwrap();
        assert_eq!(out.model_version, 2);
        assert_eq!(out.staleness_ms, 150);
        let lcl = EdgePredictor::new(slot, ClientAlgorithm::Lcl);
        assert!(matches!(lcl.predict(&[0.1, 0.2], 0), Err(Error::KindMismatch { .. })));
    }
}
