//! Simulator scenarios: partitions, lossy links, conservation and staleness.

use edgectx_core::sim::{run_scenario, Algorithm, LinkConfig, ScenarioConfig, ScenarioResult, SensorNodeConfig};
use proptest::prelude::*;

const OUTAGE: (u64, u64) = (40_000, 70_000);

fn outage_scenario(seed: u64) -> ScenarioConfig {
    let link = LinkConfig {
        latency_ms: 20,
        drop_probability: 0.0,
        outage_windows: vec![OUTAGE],
    };
    let mut c = ScenarioConfig::new(vec![SensorNodeConfig::new("acc")], link, 10_000, Algorithm::all(), 120_000, seed);
    c.sync_period_ms = 5_000;
    c.upload_every_ms = 5_000;
    c
}

fn fast(mut c: ScenarioConfig) -> ScenarioConfig {
    c.training.dcl_epochs = 20;
    c.training.cl_epochs = 20;
    c
}

fn client_versions_between(r: &ScenarioResult, a: Algorithm, from: u64, to: u64) -> Vec<Option<u64>> {
    r.ticks_for(a).filter(|t| t.sim_time_ms >= from && t.sim_time_ms < to).map(|t| t.model_version).collect()
}

#[test]
fn outage_freezes_version_and_recovers() {
    let cfg = outage_scenario(3);
    let r = run_scenario(&cfg).unwrap();
    for a in [Algorithm::Lcl, Algorithm::Adcl] {
        let s = r.summary(a).unwrap();
        assert_eq!(s.predictions, r.totals.readings_emitted, "{a}: every reading predicted");
        assert_eq!(s.unserved, 0);

        let during = client_versions_between(&r, a, OUTAGE.0, OUTAGE.1);
        assert!(!during.is_empty());
        assert!(during.iter().all(|v| v.is_some() && *v == during[0]), "{a} changed version during the outage: {during:?}");
        assert!(r.version_changes.iter().filter(|c| c.algorithm == a).all(|c| c.sim_time_ms < OUTAGE.0 || c.sim_time_ms >= OUTAGE.1));

        let frozen = during[0].unwrap();
        let deadline = OUTAGE.1 + 2 * cfg.sync_period_ms;
        let recovered = r
            .version_changes
            .iter()
            .find(|c| c.algorithm == a && c.sim_time_ms >= OUTAGE.1)
            .expect("a version change after the outage");
        assert!(recovered.sim_time_ms <= deadline, "{a}: first post-outage update at {}", recovered.sim_time_ms);
        assert!(recovered.model_version > frozen);

        // Staleness grows through the partition while predictions continue.
        let st: Vec<u64> = r
            .ticks_for(a)
            .filter(|t| t.sim_time_ms >= OUTAGE.0 + cfg.retrain_every_ms && t.sim_time_ms < OUTAGE.1)
            .map(|t| t.staleness_ms.unwrap())
            .collect();
        assert!(st.windows(2).all(|w| w[1] > w[0]));
    }
    assert_eq!(r.totals.server_received, r.totals.client_sent);
    assert_eq!(r.totals.queue_dropped, 0);
    assert_eq!(r.totals.queued_at_end, 0);
    assert!(r.totals.sync_failures >= 5);
}

#[test]
fn same_seed_same_result() {
    let mut cfg = fast(outage_scenario(11));
    cfg.link.drop_probability = 0.2;
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a, b);
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    a.write_ticks_csv(&mut csv_a).unwrap();
    b.write_ticks_csv(&mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    cfg.seed = 12;
    assert_ne!(run_scenario(&cfg).unwrap().ticks, a.ticks);
}

#[test]
fn healthy_link_staleness_is_bounded() {
    let link = LinkConfig {
        latency_ms: 35,
        ..LinkConfig::default()
    };
    let mut cfg = fast(ScenarioConfig::new(vec![SensorNodeConfig::new("acc")], link, 7_000, Algorithm::all(), 90_000, 5));
    cfg.sync_period_ms = 3_000;
    let bound = cfg.retrain_every_ms + cfg.sync_period_ms + cfg.link.latency_ms;
    let r = run_scenario(&cfg).unwrap();
    for t in &r.ticks {
        let s = t.staleness_ms.expect("bootstrap bundle exists from time 0");
        assert!(s <= bound, "{} at {}: staleness {s} > {bound}", t.algorithm, t.sim_time_ms);
    }
}

#[test]
fn accuracy_is_high_on_still_motion() {
    let r = run_scenario(&outage_scenario(8)).unwrap();
    for s in &r.summaries {
        assert!(s.metrics.accuracy > 0.85, "{}: {}", s.algorithm, s.metrics.accuracy);
        let b = s.metrics.binary.unwrap();
        assert_eq!(b.sum(), 1.0);
    }
}

#[test]
fn two_nodes_with_duty_cycles() {
    let mut a = SensorNodeConfig::new("wrist");
    a.sensor_delay_ms = 50;
    a.duty_length = 10;
    a.sleep_interval_ms = 500;
    let mut b = SensorNodeConfig::new("hip");
    b.sensor_delay_ms = 200;
    b.start_ms = 30;
    let cfg = fast(ScenarioConfig::new(vec![a.clone(), b.clone()], LinkConfig::default(), 5_000, Algorithm::all(), 20_000, 2));
    let r = run_scenario(&cfg).unwrap();
    let expected = [a, b].iter().map(|n| (0..).take_while(|&k| n.emit_time(k) < 20_000).count() as u64).sum::<u64>();
    assert_eq!(r.totals.readings_emitted, expected);
    assert_eq!(r.totals.server_received, r.totals.client_sent);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_reading_gets_one_prediction(seed in any::<u64>(), drop in 0.0f64..0.5, latency in 0u64..300, outage_start in 5_000u64..25_000, outage_len in 1u64..15_000) {
        let link = LinkConfig {
            latency_ms: latency,
            drop_probability: drop,
            outage_windows: vec![(outage_start, outage_start + outage_len)],
        };
        let mut cfg = fast(ScenarioConfig::new(vec![SensorNodeConfig::new("acc")], link, 4_000, Algorithm::all(), 30_000, seed));
        cfg.sync_period_ms = 2_000;
        cfg.upload_every_ms = 1_500;
        let r = run_scenario(&cfg).unwrap();
        let t = r.totals;
        // Only readings emitted before the client's first bundle go unpredicted.
        let node = &cfg.nodes[0];
        for a in [Algorithm::Lcl, Algorithm::Adcl] {
            let s = r.summary(a).unwrap();
            prop_assert_eq!(s.predictions + s.unserved, t.readings_emitted);
            let first = r.version_changes.iter().find(|c| c.algorithm == a).map_or(u64::MAX, |c| c.sim_time_ms);
            let before = (0..t.readings_emitted).take_while(|&k| node.emit_time(k) < first).count() as u64;
            prop_assert_eq!(s.unserved, before);
        }
        // Server-side algorithms score each distinct stored reading once.
        for a in [Algorithm::Cl, Algorithm::Dcl] {
            prop_assert_eq!(r.summary(a).unwrap().predictions, t.server_received);
        }
        prop_assert_eq!(t.client_sent + t.pending_at_end, t.readings_emitted);
        prop_assert!(t.server_received <= t.client_sent);
        prop_assert!(t.server_received + t.queued_at_end + t.queue_dropped >= t.client_sent);

        for a in [Algorithm::Lcl, Algorithm::Adcl] {
            let v: Vec<u64> = r.ticks_for(a).filter_map(|x| x.model_version).collect();
            prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
