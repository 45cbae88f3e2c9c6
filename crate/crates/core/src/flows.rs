//! Explicit transfer matrices: building one from a role partition, and the
//! relay-removing rewrite that shortcuts `l → k → m` into `l → m`.

use serde::Serialize;

use crate::delay::CommDelayModel;
use crate::error::{Error, Result};
use crate::network::{comm_term, relay_count, FlowMatrix, Network, NodePartition, NodeRole};

/// Greedy transportation fill: source surpluses `φ_i − β_i` are matched
/// against sink deficits `β_i − φ_i` in node-index order.
pub fn synthesize_flows(
    network: &Network,
    partition: &NodePartition,
    beta: &[f64],
) -> Result<FlowMatrix> {
    let n = network.len();
    if partition.roles.len() != n || beta.len() != n {
        return Err(Error::InvalidNetwork(format!(
            "partition covers {} nodes and beta {}, network has {n}",
            partition.roles.len(),
            beta.len()
        )));
    }
    let mut supply: Vec<(usize, f64)> = Vec::new();
    let mut demand: Vec<(usize, f64)> = Vec::new();
    for (i, (node, role)) in network.nodes().iter().zip(&partition.roles).enumerate() {
        if role.is_source() {
            supply.push((i, (node.arrival_rate - beta[i]).max(0.0)));
        } else if *role == NodeRole::Sink {
            demand.push((i, (beta[i] - node.arrival_rate).max(0.0)));
        }
    }
    let surplus: f64 = supply.iter().map(|s| s.1).sum();
    let deficit: f64 = demand.iter().map(|d| d.1).sum();
    let tol = 1e-8 * network.total_arrival().max(1.0);
    if (surplus - deficit).abs() > tol {
        return Err(Error::Imbalanced { surplus, deficit });
    }

    let mut flow = FlowMatrix::zeros(n);
    let (mut s, mut d) = (0, 0);
    while s < supply.len() && d < demand.len() {
        let (have, want) = (supply[s].1, demand[d].1);
        // Remainders equal up to rounding close both sides with the exact surplus.
        let closes_both = (have - want).abs() <= tol * 1e-4;
        let amount = if closes_both { have } else { have.min(want) };
        if amount > 0.0 {
            flow.add(supply[s].0, demand[d].0, amount);
        }
        supply[s].1 -= amount;
        demand[d].1 -= amount;
        if closes_both || supply[s].1 <= tol * 1e-4 {
            s += 1;
        }
        if closes_both || demand[d].1 <= tol * 1e-4 {
            d += 1;
        }
    }
    // Residual supply with no sink left is float noise from the check above.
    Ok(flow)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayElimination {
    pub flow: FlowMatrix,
    pub rewrites: usize,
    pub lambda_before: f64,
    pub lambda_after: f64,
    /// Network term of the mean response time before and after.
    pub comm_cost_before: f64,
    pub comm_cost_after: f64,
}

/// First relay in index order with its lowest-index inbound and outbound peers.
fn next_rewrite(flow: &FlowMatrix) -> Option<(usize, usize, usize)> {
    let n = flow.size();
    (0..n).find_map(|k| {
        let l = (0..n).find(|&l| flow.get(l, k) > 0.0)?;
        let m = (0..n).find(|&m| flow.get(k, m) > 0.0)?;
        Some((l, k, m))
    })
}

/// One shortcut step on `l → k → m`; returns the amount moved.
fn shortcut(flow: &mut FlowMatrix, l: usize, k: usize, m: usize) -> f64 {
    let delta = flow.get(l, k).min(flow.get(k, m));
    let (lk, km) = (flow.get(l, k), flow.get(k, m));
    // The smaller leg is set to exactly zero.
    flow.set(l, k, if lk == delta { 0.0 } else { lk - delta });
    flow.set(k, m, if km == delta { 0.0 } else { km - delta });
    if l != m {
        flow.add(l, m, delta);
    }
    delta
}

/// Rewrites `x` until no node both sends and receives.
///
/// Every step preserves each node's net flow and lowers `λ` by `δ` (or `2δ`
/// when `l = m`, i.e. a two-node cycle is cancelled).
pub fn eliminate_relays(flow: &FlowMatrix, comm: &CommDelayModel) -> RelayElimination {
    let mut out = flow.clone();
    let lambda_before = flow.total();
    let mut rewrites = 0;
    while let Some((l, k, m)) = next_rewrite(&out) {
        shortcut(&mut out, l, k, m);
        rewrites += 1;
    }
    debug_assert_eq!(relay_count(&out), 0);
    let lambda_after = out.total();
    RelayElimination {
        comm_cost_before: comm_term(comm, lambda_before),
        comm_cost_after: comm_term(comm, lambda_after),
        flow: out,
        rewrites,
        lambda_before,
        lambda_after,
    }
}
