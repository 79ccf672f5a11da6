#![allow(dead_code)]

use edgectx_core::learners::{ClModel, ThresholdVector};
use edgectx_core::nn::{LayerSpec, NetworkParameters};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Layer sizes `(inputs, hidden, outputs)` with every count in `1..=max` and at
/// most `max_nodes` nodes in total.
pub fn topology(max: usize, max_hidden_layers: usize, max_nodes: usize) -> impl Strategy<Value = (usize, Vec<usize>, usize)> {
    (1..=max, prop::collection::vec(1..=max, 0..=max_hidden_layers), 1..=max)
        .prop_filter("too many nodes", move |(i, h, o)| i + h.iter().sum::<usize>() + o <= max_nodes)
}

/// Network with weights and biases drawn uniformly from `[-scale, scale]`.
pub fn random_net(input: usize, hidden: Vec<usize>, output: usize, seed: u64, scale: f64) -> NetworkParameters {
    let spec = LayerSpec::new(input, hidden, output).unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..spec.parameter_count()).map(|_| rng.random_range(-scale..=scale)).collect();
    NetworkParameters::constant(spec, 0.0).unwrap().with_flat(&flat).unwrap()
}

pub fn random_cl(input: usize, output: usize, seed: u64) -> ClModel {
    let params = random_net(input, Vec::new(), output, seed, 2.0);
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let t = (0..output).map(|_| rng.random_range(0.01..=0.99)).collect();
    ClModel::new(params, ThresholdVector::new(t).unwrap()).unwrap()
}

pub fn random_vec(len: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Forward pass written out independently of the library.
pub fn oracle_outputs(params: &NetworkParameters, input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    for (w, b) in params.weights().iter().zip(params.biases()) {
        let mut next = Vec::with_capacity(w.len());
        for j in 0..w.len() {
            let mut z = b[j];
            for i in 0..a.len() {
                z += w[j][i] * a[i];
            }
            next.push(1.0 / (1.0 + (-z).exp()));
        }
        a = next;
    }
    a
}

/// First index of the maximum.
pub fn oracle_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Largest positive margin over threshold; argmax when none is positive.
pub fn oracle_lcl(outputs: &[f64], thresholds: &[f64]) -> usize {
    let above: Vec<usize> = (0..outputs.len()).filter(|&c| outputs[c] > thresholds[c]).collect();
    if above.is_empty() {
        return oracle_argmax(outputs);
    }
    let mut best = above[0];
    for &c in &above[1..] {
        if outputs[c] - thresholds[c] > outputs[best] - thresholds[best] {
            best = c;
        }
    }
    best
}
