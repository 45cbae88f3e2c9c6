#![allow(dead_code)]

use loadbal::delay::{CommDelayModel, NodeDelayModel};
use loadbal::network::{Network, Node};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ASYMMETRIC: &str = r#"{
  "nodes": [
    {"id": "a", "arrival_rate": 1.5, "service_rate": 4.0},
    {"id": "b", "arrival_rate": 0.0, "service_rate": 4.0}
  ],
  "comm": {"model": "constant", "params": {"t": 0.05}}
}"#;

pub const SYMMETRIC: &str = r#"{
  "nodes": [
    {"id": "a", "arrival_rate": 0.5, "service_rate": 2.0},
    {"id": "b", "arrival_rate": 0.5, "service_rate": 2.0}
  ],
  "comm": {"model": "constant", "params": {"t": 0.1}}
}"#;

pub fn network(specs: &[(f64, f64)], comm: CommDelayModel) -> Network {
    let nodes = specs
        .iter()
        .enumerate()
        .map(|(i, &(phi, mu))| {
            Node::new(format!("n{i}"), phi, NodeDelayModel::mm1(mu).unwrap()).unwrap()
        })
        .collect();
    Network::new(nodes, comm).unwrap()
}

pub fn asymmetric(t: f64) -> Network {
    network(
        &[(1.5, 4.0), (0.0, 4.0)],
        CommDelayModel::constant(t).unwrap(),
    )
}

/// Which communication model a random instance uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommKind {
    Constant,
    Channel,
    Polynomial,
}

pub const COMM_KINDS: [CommKind; 3] = [CommKind::Constant, CommKind::Channel, CommKind::Polynomial];

fn comm_for(kind: CommKind, total: f64, forced: f64, u: [f64; 3]) -> CommDelayModel {
    match kind {
        CommKind::Constant => CommDelayModel::constant(0.3 * u[0]).unwrap(),
        CommKind::Channel => {
            let capacity = (total * (0.5 + 2.5 * u[1]) + 0.1).max(1.5 * forced + 0.1);
            CommDelayModel::mm1_channel(0.3 * u[0], capacity).unwrap()
        }
        CommKind::Polynomial => {
            CommDelayModel::polynomial(vec![0.2 * u[0], 0.2 * u[1], 0.05 * u[2]]).unwrap()
        }
    }
}

/// Random stable instance: `n` nodes, service rates in [0.5, 10], total
/// arrivals at most 80% of capacity, roughly one node in five idle.
pub fn random_network(rng: &mut impl Rng, n: usize, kind: CommKind) -> Network {
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..=10.0)).collect();
    let weights: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            }
        })
        .collect();
    let load = rng.random_range(0.05..=0.8);
    let capacity: f64 = mu.iter().sum();
    let wsum: f64 = weights.iter().sum();
    let specs: Vec<(f64, f64)> = mu
        .iter()
        .zip(&weights)
        .map(|(&m, &w)| {
            let phi = if wsum > 0.0 {
                load * capacity * w / wsum
            } else {
                0.0
            };
            (phi, m)
        })
        .collect();
    let total: f64 = specs.iter().map(|s| s.0).sum();
    let forced: f64 = specs.iter().map(|&(p, m)| (p - m).max(0.0)).sum();
    let u = [rng.random(), rng.random(), rng.random()];
    network(&specs, comm_for(kind, total, forced, u))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn arb_comm_kind() -> impl Strategy<Value = CommKind> {
    prop::sample::select(COMM_KINDS.to_vec())
}

/// Proptest strategy over random stable networks with 2 to 4 nodes.
pub fn arb_network() -> impl Strategy<Value = Network> {
    (2usize..=4, arb_comm_kind(), any::<u64>())
        .prop_map(|(n, kind, seed)| random_network(&mut seeded(seed), n, kind))
}
