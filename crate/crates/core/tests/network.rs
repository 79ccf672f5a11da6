//! Server and client over real loopback TCP connections.

use std::io::Write;
use std::net::TcpStream;
use std::time::Duration;

use edgectx_core::data::SensorReading;
use edgectx_core::nn::{init_network, LayerSpec};
use edgectx_core::sync::protocol::{read_frame, write_frame, write_message, ErrorCode, MAX_FRAME_LEN};
use edgectx_core::sync::server::ServerHandle;
use edgectx_core::sync::{
    client_sync_tick, decode_bundle, server_serve, DataSink, ModelKind, ModelStore, ParameterBundle, Request, Response, SensorBatch,
    ServerCore, SyncPolicy, SyncState, TcpTransport, Transport,
};

const TIMEOUT: Duration = Duration::from_secs(5);

fn start(models: ModelStore) -> (ServerCore, ServerHandle) {
    let core = ServerCore::new(models, DataSink::new());
    let handle = server_serve("127.0.0.1:0", core.clone()).unwrap();
    (core, handle)
}

fn dcl_bundle(seed: u64) -> ParameterBundle {
    let spec = LayerSpec::new(2, vec![2], 2).unwrap();
    ParameterBundle::dcl(init_network(spec, seed).unwrap(), 0, 0)
}

fn readings(n: usize) -> Vec<SensorReading> {
    (0..n)
        .map(|i| SensorReading {
            sensor_id: "acc".into(),
            timestamp: i as u64,
            values: vec![0.1 * i as f64, 0.2],
        })
        .collect()
}

fn raw_exchange(stream: &mut TcpStream, payload: &[u8]) -> Response {
    write_frame(stream, payload).unwrap();
    serde_json::from_slice(&read_frame(stream).unwrap()).unwrap()
}

#[test]
fn get_params_before_training_is_not_ready() {
    let (_core, handle) = start(ModelStore::new(&[ModelKind::Dcl, ModelKind::Cl]));
    let mut t = TcpTransport::new(handle.local_addr().to_string());
    for kind in [ModelKind::Dcl, ModelKind::Cl] {
        let r = t.request(&Request::GetParams { model_kind: kind }, TIMEOUT).unwrap();
        assert_eq!(r, Response::NotReady { model_kind: kind });
    }
    assert_eq!(t.request(&Request::Ping, TIMEOUT).unwrap(), Response::Pong);
    handle.stop();
}

#[test]
fn push_fifty_readings_acks_fifty() {
    let (core, handle) = start(ModelStore::new(&[ModelKind::Dcl]));
    let mut t = TcpTransport::new(handle.local_addr().to_string());
    let batch = SensorBatch::new("phone", 0, readings(50), None).unwrap();
    let r = t.request(&Request::PushData { batch: batch.clone() }, TIMEOUT).unwrap();
    assert_eq!(r, Response::Ack { stored: 50 });
    assert_eq!(core.data.len(), 50);

    // A resent batch is acknowledged again but stored once.
    let r = t.request(&Request::PushData { batch }, TIMEOUT).unwrap();
    assert_eq!(r, Response::Ack { stored: 50 });
    assert_eq!(core.data.len(), 50);
    handle.stop();
}

#[test]
fn sequential_publishes_are_one_apart() {
    let (core, handle) = start(ModelStore::new(&[ModelKind::Dcl]));
    let mut t = TcpTransport::new(handle.local_addr().to_string());
    let policy = SyncPolicy {
        period: Duration::from_millis(10),
        timeout: TIMEOUT,
    };
    let mut state = SyncState::new(ModelKind::Dcl);
    let mut seen = Vec::new();
    for seed in 1..=3 {
        core.models.publish(dcl_bundle(seed)).unwrap();
        state = client_sync_tick(state, &mut t, &policy, 1_000 * seed);
        seen.push(state.model_version().unwrap());
    }
    assert_eq!(seen, vec![1, 2, 3]);
    assert_eq!(state.consecutive_failures, 0);

    // The delivered bundle matches the server's copy bit for bit.
    let served = core.models.latest(ModelKind::Dcl).unwrap();
    assert_eq!(state.current_bundle.as_deref(), Some(&*served.bundle));
    handle.stop();
}

#[test]
fn malformed_frame_leaves_connection_usable() {
    let (_core, handle) = start(ModelStore::new(&[ModelKind::Dcl]));
    let mut s = TcpStream::connect(handle.local_addr()).unwrap();
    s.set_read_timeout(Some(TIMEOUT)).unwrap();
    for junk in [&b"not json"[..], b"{\"type\":\"LAUNCH\"}", b"{\"type\":\"GET_PARAMS\"}", b""] {
        match raw_exchange(&mut s, junk) {
            Response::Error { code, .. } => assert_eq!(code, ErrorCode::Malformed),
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(raw_exchange(&mut s, br#"{"type":"PING"}"#), Response::Pong);
    let r = raw_exchange(&mut s, br#"{"type":"GET_PARAMS","model_kind":"CL"}"#);
    assert!(matches!(r, Response::Error { code: ErrorCode::UnsupportedKind, .. }), "{r:?}");
    handle.stop();
}

#[test]
fn oversized_frame_is_rejected() {
    let (_core, handle) = start(ModelStore::new(&[ModelKind::Dcl]));
    let mut s = TcpStream::connect(handle.local_addr()).unwrap();
    s.set_read_timeout(Some(TIMEOUT)).unwrap();
    s.write_all(&((MAX_FRAME_LEN as u32) + 1).to_be_bytes()).unwrap();
    let reply: Response = serde_json::from_slice(&read_frame(&mut s).unwrap()).unwrap();
    assert!(matches!(reply, Response::Error { code: ErrorCode::Oversized, .. }), "{reply:?}");

    // The server closes the stream; a fresh connection still works.
    let mut t = TcpTransport::new(handle.local_addr().to_string());
    assert_eq!(t.request(&Request::Ping, TIMEOUT).unwrap(), Response::Pong);
    handle.stop();
}

#[test]
fn restarted_server_continues_version_numbering() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (core, handle) = start(ModelStore::open(dir.path(), &[ModelKind::Dcl]).unwrap());
        core.models.publish(dcl_bundle(1)).unwrap();
        core.models.publish(dcl_bundle(2)).unwrap();
        handle.stop();
    }
    let (core, handle) = start(ModelStore::open(dir.path(), &[ModelKind::Dcl]).unwrap());
    let mut t = TcpTransport::new(handle.local_addr().to_string());
    match t.request(&Request::GetParams { model_kind: ModelKind::Dcl }, TIMEOUT).unwrap() {
        Response::Params { bundle } => assert_eq!(decode_bundle(bundle.as_bytes()).unwrap().model_version, 2),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(core.models.publish(dcl_bundle(3)).unwrap(), 3);
    handle.stop();
}

#[test]
fn unreachable_server_is_a_recorded_failure() {
    let (_core, handle) = start(ModelStore::new(&[ModelKind::Dcl]));
    let addr = handle.local_addr().to_string();
    handle.stop();
    let mut t = TcpTransport::new(addr);
    let state = SyncState::new(ModelKind::Dcl).with_bundle(dcl_bundle(1));
    let policy = SyncPolicy {
        period: Duration::from_millis(10),
        timeout: Duration::from_millis(200),
    };
    let after = (0..3).fold(state.clone(), |s, i| client_sync_tick(s, &mut t, &policy, i));
    assert_eq!(after.consecutive_failures, 3);
    assert_eq!(after.current_bundle, state.current_bundle);
}

#[test]
fn raw_request_layout_is_accepted() {
    let (_core, handle) = start(ModelStore::new(&[ModelKind::Dcl]));
    let mut s = TcpStream::connect(handle.local_addr()).unwrap();
    s.set_read_timeout(Some(TIMEOUT)).unwrap();
    write_message(&mut s, &Request::GetParams { model_kind: ModelKind::Dcl }).unwrap();
    let body = read_frame(&mut s).unwrap();
    assert_eq!(body, br#"{"type":"NOT_READY","model_kind":"DCL"}"#);
    handle.stop();
}
