//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Datasets are looked up in
//! `EDGECTX_DATA_DIR`, else the workspace `data/` directory. A criterion whose
//! dataset is missing is reported as FAIL with the reason.
//!
//! Exit status is non-zero when any criterion fails on available data. A
//! missing dataset is reported as FAIL but only counts toward the exit status
//! with `EDGECTX_ACCEPTANCE_STRICT=1`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use edgectx_cli::registry::Registry;
use edgectx_core::data::{self, Dataset};
use edgectx_core::learners::{self, adcl_class, kfold_cross_validate, lcl_class, ClModel, DclTrainer, ThresholdVector};
use edgectx_core::metrics::evaluate;
use edgectx_core::nn::{backprop, one_hot, squared_error, LayerSpec, NetworkParameters, TrainingConfig};
use edgectx_core::rng::SplitMix64;
use edgectx_core::sim::{bench_execution, run_scenario, Algorithm, BenchConfig, LinkConfig, ScenarioConfig, SensorNodeConfig};
use edgectx_core::sync::server::{train_bundle, RetrainConfig};
use edgectx_core::sync::{client::predict_with, decode_bundle, encode_bundle, ClientAlgorithm, ModelKind};

const MISSING: &str = "dataset unavailable: ";

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    missing_data: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn run(id: u32, name: &'static str, budget_s: u64, f: impl FnOnce() -> Result<(bool, String), String>) -> Verdict {
    let start = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, e));
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_s);
    let verdict = Verdict {
        id,
        name,
        pass: pass && elapsed <= budget,
        missing_data: !pass && detail.starts_with(MISSING),
        detail: if elapsed > budget { format!("{detail}; over time budget") } else { detail },
        elapsed,
        budget,
    };
    println!(
        "{} {}. {:<28} {} [{:.1}s / {}s]",
        if verdict.pass { "PASS" } else { "FAIL" },
        verdict.id,
        verdict.name,
        verdict.detail,
        verdict.elapsed.as_secs_f64(),
        verdict.budget.as_secs()
    );
    verdict
}

fn registry() -> Registry {
    let dir = std::env::var_os("EDGECTX_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    Registry::with_data_dir(dir.canonicalize().unwrap_or(dir))
}

fn load(name: &str) -> Result<Dataset, String> {
    let r = registry();
    if let Err(e) = r.default_path(name) {
        return Err(format!("{MISSING}{e}"));
    }
    r.load_dataset(name).map(|d| d.data).map_err(|e| e.to_string())
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_unit()
}

fn random_params(rng: &mut SplitMix64, spec: LayerSpec, scale: f64) -> NetworkParameters {
    let flat: Vec<f64> = (0..spec.parameter_count()).map(|_| uniform(rng, -scale, scale)).collect();
    NetworkParameters::constant(spec, 0.0).unwrap().with_flat(&flat).unwrap()
}

fn size(rng: &mut SplitMix64) -> usize {
    1 + (rng.next() % 8) as usize
}

// Forward pass and decision rules written independently of the library.

fn oracle_forward(p: &NetworkParameters, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for (w, b) in p.weights().iter().zip(p.biases()) {
        a = w
            .iter()
            .zip(b)
            .map(|(row, bias)| {
                let z: f64 = bias + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
    }
    a
}

fn oracle_argmax(v: &[f64]) -> usize {
    (1..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

fn oracle_threshold_rule(out: &[f64], t: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for c in 0..out.len() {
        if out[c] > t[c] && best.is_none_or(|b| out[c] - t[c] > out[b] - t[b]) {
            best = Some(c);
        }
    }
    best.unwrap_or_else(|| oracle_argmax(out))
}

fn gradients() -> Result<(bool, String), String> {
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0.0f64;
    let mut entries = 0;
    for _ in 0..50 {
        let (i, o) = (size(&mut rng), size(&mut rng));
        let hidden: Vec<usize> = (0..1 + rng.next() % 2).map(|_| size(&mut rng)).collect();
        let p = random_params(&mut rng, LayerSpec::new(i, hidden, o).map_err(|e| e.to_string())?, 1.0);
        let x: Vec<f64> = (0..i).map(|_| uniform(&mut rng, 0.1, 1.0)).collect();
        let t = one_hot((rng.next() % o as u64) as usize, o).unwrap();
        let g = backprop(&p, &x, &t).map_err(|e| e.to_string())?.to_flat();
        let flat = p.to_flat();
        let loss = |f: &[f64]| squared_error(&t, &p.with_flat(f).unwrap().output(&x).unwrap()).unwrap();
        let h = 1e-5;
        for k in 0..flat.len() {
            let (mut up, mut down) = (flat.clone(), flat.clone());
            up[k] += h;
            down[k] -= h;
            let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
            worst = worst.max((g[k] - numeric).abs() / g[k].abs().max(numeric.abs()).max(1e-8));
            entries += 1;
        }
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.2e} < 1e-4 over {entries} entries")))
}

fn oracle_equivalence() -> Result<(bool, String), String> {
    let mut rng = SplitMix64::new(77);
    let (mut adcl_ok, mut lcl_ok) = (0, 0);
    let n = 1_000;
    for case in 0..n {
        let (i, o) = (size(&mut rng), 1 + size(&mut rng));
        let hidden: Vec<usize> = (0..1 + rng.next() % 3).map(|_| size(&mut rng)).collect();
        let dcl = random_params(&mut rng, LayerSpec::new(i, hidden, o).unwrap(), 3.0);
        let cl_params = random_params(&mut rng, LayerSpec::new(i, vec![], o).unwrap(), 3.0);
        let t: Vec<f64> = (0..o).map(|_| uniform(&mut rng, 0.01, 0.99)).collect();
        let cl = ClModel::new(cl_params, ThresholdVector::new(t.clone()).unwrap()).unwrap();
        let x: Vec<f64> = (0..i).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();

        // Half the cases go through the wire format first.
        let (dcl, cl) = if case % 2 == 0 {
            let d = decode_bundle(&encode_bundle(&edgectx_core::sync::ParameterBundle::dcl(dcl, 1, 0)).unwrap()).unwrap();
            let c = decode_bundle(&encode_bundle(&edgectx_core::sync::ParameterBundle::cl(cl, 1, 0)).unwrap()).unwrap();
            (d.params.clone(), c.cl_model().unwrap())
        } else {
            (dcl, cl)
        };
        adcl_ok += (adcl_class(&dcl, &x).unwrap() == oracle_argmax(&oracle_forward(&dcl, &x))) as usize;
        lcl_ok += (lcl_class(&cl, &x).unwrap() == oracle_threshold_rule(&oracle_forward(&cl.params, &x), &t)) as usize;
    }
    Ok((adcl_ok == n && lcl_ok == n, format!("ADCL {adcl_ok}/{n}, LCL {lcl_ok}/{n} agree with oracles")))
}

fn five_fold_dcl(name: &str, threshold: f64) -> Result<(bool, String), String> {
    let d = load(name)?;
    let cfg = TrainingConfig::new(TrainingConfig::CLIENT_MODEL_LEARNING_RATE, TrainingConfig::DCL_EPOCHS, 1);
    let cv = kfold_cross_validate(&d, 5, &DclTrainer::new(cfg), 1).map_err(|e| e.to_string())?;
    Ok((
        cv.mean >= threshold,
        format!("5-fold mean {:.2}% (std {:.2}) >= {:.1}%", 100.0 * cv.mean, 100.0 * cv.std_dev, 100.0 * threshold),
    ))
}

fn heart_sweep() -> Result<(bool, String), String> {
    let d = load("heart")?;
    let lrs: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let layers: Vec<usize> = (1..=9).collect();
    let cells = learners::sweep_grid(&d, &lrs, &layers, 5, 500, 1).map_err(|e| e.to_string())?;
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let csv = out.join("heart_sweep.csv");
    learners::write_sweep_csv(&cells, fs::File::create(&csv).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let best = cells.iter().max_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy)).ok_or("empty grid")?;
    Ok((
        best.mean_accuracy >= 0.75 && cells.len() == 81,
        format!(
            "best lr {:.1} x {} layer(s): {:.2}% >= 75.0%; {} cells in {}",
            best.learning_rate,
            best.hidden_layers,
            100.0 * best.mean_accuracy,
            cells.len(),
            csv.display()
        ),
    ))
}

fn still_motion_ordering() -> Result<(bool, String), String> {
    let all = data::synth_still_motion(2_000, 1).map_err(|e| e.to_string())?;
    let (train, test) = data::stratified_split(&all, 0.2, 1).map_err(|e| e.to_string())?;
    let mut rc = RetrainConfig::new(train.feature_names().to_vec(), train.class_names().to_vec());
    rc.dcl = TrainingConfig::new(TrainingConfig::CLIENT_MODEL_LEARNING_RATE, TrainingConfig::DCL_EPOCHS, 1);
    rc.cl = TrainingConfig::new(TrainingConfig::SERVER_LEARNING_RATE, TrainingConfig::CL_EPOCHS, 1);
    let dcl = train_bundle(ModelKind::Dcl, &train, &rc, 0).map_err(|e| e.to_string())?;
    let cl = train_bundle(ModelKind::Cl, &train, &rc, 0).map_err(|e| e.to_string())?;
    let adcl = decode_bundle(&encode_bundle(&dcl).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let lcl = decode_bundle(&encode_bundle(&cl).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    // DCL decides on the server from its in-memory model; ADCL and LCL on the
    // client from decoded bundles.
    let ranges = dcl.normalization.clone().ok_or("DCL bundle without normalization")?;
    let m_dcl = evaluate(|x| adcl_class(&dcl.params, &data::scale_features(&ranges, x)?), &test).map_err(|e| e.to_string())?;
    let m_adcl = evaluate(|x| predict_with(&adcl, ClientAlgorithm::Adcl, x), &test).map_err(|e| e.to_string())?;
    let m_lcl = evaluate(|x| predict_with(&lcl, ClientAlgorithm::Lcl, x), &test).map_err(|e| e.to_string())?;
    let sums: Vec<f64> = [&m_dcl, &m_adcl, &m_lcl].iter().map(|m| m.binary.as_ref().map_or(f64::NAN, |b| b.sum())).collect();
    let (d, a, l) = (m_dcl.accuracy, m_adcl.accuracy, m_lcl.accuracy);
    let pass = d >= 0.97 && d >= a && a >= l - 0.01 && sums.iter().all(|&s| s == 1.0);
    Ok((
        pass,
        format!(
            "DCL {:.2}% >= 97%, ADCL {:.2}%, LCL {:.2}%; rate sums {:?}",
            100.0 * d,
            100.0 * a,
            100.0 * l,
            sums
        ),
    ))
}

fn latency_ordering() -> Result<(bool, String), String> {
    let rows = bench_execution(&BenchConfig::default()).map_err(|e| e.to_string())?;
    let mean = |a: Algorithm| rows.iter().find(|r| r.algorithm == a).map(|r| r.mean_us).ok_or(format!("no {a} row"));
    let (lcl, adcl, cl, dcl) = (mean(Algorithm::Lcl)?, mean(Algorithm::Adcl)?, mean(Algorithm::Cl)?, mean(Algorithm::Dcl)?);
    let ratio = dcl / cl;
    Ok((
        lcl < adcl && adcl < 150_000.0 && ratio > 10.0,
        format!("predict LCL {lcl:.3} us < ADCL {adcl:.3} us < 150 ms; train DCL/CL = {ratio:.1}x > 10x"),
    ))
}

fn partition_liveness() -> Result<(bool, String), String> {
    let outage = (40_000, 70_000);
    let link = LinkConfig {
        latency_ms: 20,
        drop_probability: 0.0,
        outage_windows: vec![outage],
    };
    let mut cfg = ScenarioConfig::new(vec![SensorNodeConfig::new("acc")], link, 10_000, Algorithm::all(), 120_000, 42);
    cfg.sync_period_ms = 5_000;
    cfg.upload_every_ms = 5_000;
    let r = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let again = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    for a in [Algorithm::Lcl, Algorithm::Adcl] {
        let s = r.summary(a).ok_or("missing summary")?;
        if s.predictions != r.totals.readings_emitted {
            problems.push(format!("{a}: {} of {} readings predicted", s.predictions, r.totals.readings_emitted));
        }
        let during: Vec<Option<u64>> = r
            .ticks_for(a)
            .filter(|t| t.sim_time_ms >= outage.0 && t.sim_time_ms < outage.1)
            .map(|t| t.model_version)
            .collect();
        if during.is_empty() || during.iter().any(|v| v.is_none() || *v != during[0]) {
            problems.push(format!("{a}: version moved during outage"));
        }
        let frozen = during.first().copied().flatten().unwrap_or(0);
        let deadline = outage.1 + 2 * cfg.sync_period_ms;
        let recovered = r.version_changes.iter().any(|c| {
            c.algorithm == a && c.sim_time_ms >= outage.1 && c.sim_time_ms <= deadline && c.model_version > frozen
        });
        if !recovered {
            problems.push(format!("{a}: no newer version by {deadline} ms"));
        }
    }
    if r.totals.server_received != r.totals.client_sent {
        problems.push(format!("server received {} of {} sent", r.totals.server_received, r.totals.client_sent));
    }
    if r != again {
        problems.push("not deterministic".into());
    }
    let detail = if problems.is_empty() {
        format!(
            "{} readings all predicted, version frozen in outage, newer within 2 sync periods, {} of {} uploads received, repeatable",
            r.totals.readings_emitted, r.totals.server_received, r.totals.client_sent
        )
    } else {
        problems.join("; ")
    };
    Ok((problems.is_empty(), detail))
}

fn wire_stability() -> Result<(bool, String), String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/bundle_v1.json");
    let golden = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let b = decode_bundle(&golden).map_err(|e| e.to_string())?;
    let stable = (0..3).all(|_| encode_bundle(&b).is_ok_and(|bytes| bytes == golden));
    let frozen_crc = golden.ends_with(b",\"checksum\":\"fd597845\"}");
    let mut undetected = 0;
    let mut tried = 0;
    for pos in 0..golden.len() {
        for v in 0..=255u8 {
            if v != golden[pos] {
                let mut bad = golden.clone();
                bad[pos] = v;
                tried += 1;
                undetected += decode_bundle(&bad).is_ok() as usize;
            }
        }
    }
    Ok((
        stable && frozen_crc && undetected == 0,
        format!("re-encoding byte-identical: {stable}, checksum fd597845: {frozen_crc}; {undetected} of {tried} single-byte corruptions undetected"),
    ))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let verdicts = [
        run(1, "gradient correctness", 10, gradients),
        run(2, "client/server oracle", 5, oracle_equivalence),
        run(3, "iris reproduction", 120, || five_fold_dcl("iris", 0.93)),
        run(4, "wheat-seeds reproduction", 120, || five_fold_dcl("seeds", 0.88)),
        run(5, "heart-disease sweep", 1_800, heart_sweep),
        run(6, "still/motion ordering", 120, still_motion_ordering),
        run(7, "latency ordering", 120, latency_ordering),
        run(8, "partition liveness", 30, partition_liveness),
        run(9, "wire-format stability", 60, wire_stability),
    ];
    let strict = std::env::var_os("EDGECTX_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    let mut fatal = 0;
    for v in verdicts.iter().filter(|v| !v.pass) {
        if v.missing_data && !strict {
            println!("note {}: not evaluated here; supply the dataset to run it", v.id);
        } else {
            fatal += 1;
        }
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("{passed} of {} criteria passed", verdicts.len());
    if fatal > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
