//! End-to-end checks of the command implementations.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use edgectx_cli::client::{cmd_client, ClientOptions};
use edgectx_cli::registry::Registry;
use edgectx_cli::serve::{start_server, ServeOptions};
use edgectx_cli::train::{cmd_train, parse_sweep, TrainOptions};
use edgectx_cli::{CliError, EXIT_RUNTIME, EXIT_USAGE};
use edgectx_core::nn::{init_network, LayerSpec};
use edgectx_core::sync::{decode_bundle, ClientAlgorithm, ModelKind, ParameterBundle, SyncPolicy};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn quick(kind: ModelKind, out: PathBuf) -> TrainOptions {
    let mut o = TrainOptions::new(kind, out);
    o.epochs = 40;
    o.kfold = 3;
    o
}

fn server(kinds: &[ModelKind]) -> edgectx_cli::serve::RunningServer {
    start_server(&ServeOptions {
        addr: "127.0.0.1:0".into(),
        retrain_every: Duration::from_secs(3600),
        kinds: kinds.to_vec(),
        ..ServeOptions::default()
    })
    .unwrap()
}

fn client(addr: String, algorithm: ClientAlgorithm) -> ClientOptions {
    ClientOptions {
        server: addr,
        policy: SyncPolicy {
            period: Duration::from_millis(50),
            timeout: Duration::from_millis(500),
        },
        algorithm,
        cache: None,
    }
}

fn rows(out: &[u8]) -> Vec<Vec<String>> {
    csv::Reader::from_reader(out).records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn train_writes_a_decodable_bundle_and_report() {
    let ds = Registry::with_data_dir(data_dir()).load_dataset("synth-still-motion").unwrap();
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Dcl, ModelKind::Cl] {
        let out = dir.path().join(kind.as_str());
        let outcome = cmd_train(&ds, &quick(kind, out.clone()), vec!["train".into()]).unwrap();
        let bundle = decode_bundle(&fs::read(outcome.bundle_path.as_ref().unwrap()).unwrap()).unwrap();
        assert_eq!(bundle.model_kind, kind);
        assert_eq!(bundle.params.spec().input_count, ds.data.feature_count());
        for f in ["report.json", "report.csv", "loss.csv"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["cross_validation"]["fold_accuracies"].as_array().unwrap().len(), 3);
        assert_eq!(report["loss_curve"].as_array().unwrap().len(), 40);
        assert!(outcome.accuracy() > 0.8, "{kind}: {}", outcome.accuracy());
    }
}

#[test]
fn training_twice_gives_identical_files() {
    let ds = Registry::with_data_dir(data_dir()).load_dataset("iris").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_train(&ds, &quick(ModelKind::Dcl, a.clone()), Vec::new()).unwrap();
    cmd_train(&ds, &quick(ModelKind::Dcl, b.clone()), Vec::new()).unwrap();
    for f in ["model.bundle.json", "report.csv", "loss.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let ds = Registry::with_data_dir(data_dir()).load_dataset("iris").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut opts = quick(ModelKind::Dcl, dir.path().to_path_buf());
    opts.epochs = 5;
    opts.sweep = Some(parse_sweep(&["lr=0.1..0.3 hidden=1..2".into()]).unwrap());
    let outcome = cmd_train(&ds, &opts, Vec::new()).unwrap();
    assert_eq!(outcome.sweep.len(), 6);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(outcome.report.best_sweep_cell.is_some());
}

#[test]
fn sweep_terms_are_validated() {
    let spec = parse_sweep(&["lr=0.1..0.9".into(), "hidden=1..9".into()]).unwrap();
    assert_eq!(spec.learning_rates, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
    assert_eq!(spec.hidden_layers, (1..=9).collect::<Vec<_>>());
    assert_eq!(parse_sweep(&["lr=0.3 hidden=2".into()]).unwrap().learning_rates, vec![0.3]);
    for bad in ["lr=0.1..0.9", "lr=0.9..0.1 hidden=1", "lr=0..1 hidden=1", "lr=0.1 hidden=0..2", "depth=3 lr=0.1", "lr=x hidden=1", "lr=0.1.. hidden=1"] {
        let e = parse_sweep(&[bad.to_string()]).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USAGE, "{bad}");
    }
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = Registry::with_data_dir(dir.path()).load_dataset("seeds").unwrap_err();
    assert_eq!(e.exit_code(), EXIT_RUNTIME);
    assert!(e.to_string().contains("seeds"));
    let e = Registry::with_data_dir(dir.path()).load_dataset("no-such-thing").unwrap_err();
    assert_eq!(e.exit_code(), EXIT_USAGE);
}

#[test]
fn client_reports_not_ready_before_the_first_model() {
    let s = server(&[ModelKind::Dcl]);
    let opts = client(s.handle.local_addr().to_string(), ClientAlgorithm::Adcl);
    let mut out = Vec::new();
    let stats = cmd_client(&opts, "0.1,0.2\n\nnope\n0.5 0.5\n".as_bytes(), &mut out).unwrap();
    s.stop();
    assert_eq!((stats.lines, stats.predicted, stats.not_ready, stats.errors), (3, 0, 2, 1));
    let r = rows(&out);
    assert_eq!(r[0][2], "NOT_READY");
    assert!(r[1][2].starts_with("ERROR"));
    assert_eq!(r[2][1], "0.5 0.5");
}

#[test]
fn client_predicts_with_the_published_model() {
    let s = server(&[ModelKind::Dcl]);
    let spec = LayerSpec::new(2, vec![3], 2).unwrap();
    let bundle = ParameterBundle::dcl(init_network(spec, 4).unwrap(), 0, 0).with_class_names(vec!["still".into(), "motion".into()]);
    assert_eq!(s.core.models.publish(bundle).unwrap(), 1);
    let dir = tempfile::tempdir().unwrap();
    let mut opts = client(s.handle.local_addr().to_string(), ClientAlgorithm::Adcl);
    opts.cache = Some(dir.path().join("cache.json"));
    let mut out = Vec::new();
    let stats = cmd_client(&opts, "0.1,0.2\n0.9,0.8\n".as_bytes(), &mut out).unwrap();
    s.stop();
    assert_eq!(stats.predicted, 2);
    for r in rows(&out) {
        assert!(r[2] == "still" || r[2] == "motion", "{r:?}");
        assert_eq!(r[3], "1");
    }
    assert_eq!(decode_bundle(&fs::read(dir.path().join("cache.json")).unwrap()).unwrap().model_version, 1);

    // The cache alone serves predictions when the server is gone.
    let mut out = Vec::new();
    let stats = cmd_client(&opts, "0.3,0.3\n".as_bytes(), &mut out).unwrap();
    assert_eq!(stats.predicted, 1);
}

#[test]
fn client_refuses_a_server_without_its_model_kind() {
    let s = server(&[ModelKind::Cl]);
    let opts = client(s.handle.local_addr().to_string(), ClientAlgorithm::Adcl);
    let e = cmd_client(&opts, "0.1,0.2\n".as_bytes(), Vec::new()).unwrap_err();
    s.stop();
    assert!(matches!(e, CliError::Runtime(_)));
    assert_eq!(e.exit_code(), EXIT_RUNTIME);
}
