//! Parameter bundles, the wire protocol, and the client/server halves of
//! parameter download and sensor-data upload.

pub mod bundle;
pub mod client;
pub mod protocol;
pub mod server;
pub mod transport;
pub mod upload;

pub use bundle::{decode_bundle, encode_bundle, BundleError, ModelKind, ParameterBundle};
pub use client::{client_sync_tick, BundleSlot, ClientAlgorithm, EdgePredictor, Prediction, SyncPolicy, SyncState};
pub use protocol::{Request, Response};
pub use server::{server_serve, DataSink, ModelStore, RetrainConfig, ServerCore};
pub use transport::{TcpTransport, Transport, TransportError};
pub use upload::{SensorBatch, UploadQueue, Uploader};

/// Wall-clock milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
