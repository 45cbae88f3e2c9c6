//! Brute-force reference optimizer for small instances.
//!
//! Searches processing rates directly: `β_1..β_{n-1}` on a grid, `β_n` from
//! conservation, traffic `λ = Σ max(φ_i − β_i, 0)`. The objective is evaluated
//! from `F` and `G` only, so nothing here shares code with the price solver.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kkt::OptimalSolution;
use crate::network::{Allocation, Network, NodeRole};

pub const MAX_NODES: usize = 5;

/// Default objective gap tolerance (aggregate units) for [`compare_solutions`].
pub const GAP_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleConfig {
    pub grid: usize,
    pub refine_rounds: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            grid: 201,
            refine_rounds: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub allocation: Allocation,
    /// Net transfer `d_i = φ_i − β_i`.
    pub net_transfer: Vec<f64>,
    pub objective: f64,
    /// Largest grid spacing in the final round.
    pub resolution: f64,
    pub evaluations: u64,
}

impl OracleResult {
    /// Roles read off the net transfers, treating `|d_i| ≤ tol` as zero.
    pub fn roles(&self, tol: f64) -> Vec<NodeRole> {
        self.net_transfer
            .iter()
            .zip(&self.allocation.beta)
            .map(|(&d, &b)| {
                if d > tol {
                    if b <= tol {
                        NodeRole::IdleSource
                    } else {
                        NodeRole::ActiveSource
                    }
                } else if d < -tol {
                    NodeRole::Sink
                } else {
                    NodeRole::Neutral
                }
            })
            .collect()
    }
}

struct Evaluator<'a> {
    network: &'a Network,
    phi: Vec<f64>,
    total: f64,
}

impl Evaluator<'_> {
    fn objective(&self, beta: &[f64]) -> f64 {
        let mut node = 0.0;
        let mut lambda = 0.0;
        for ((n, &b), &p) in self.network.nodes().iter().zip(beta).zip(&self.phi) {
            if b < 0.0 {
                return f64::INFINITY;
            }
            if b > 0.0 {
                match n.delay.node_delay(b) {
                    Ok(f) if f.is_finite() => node += b * f,
                    _ => return f64::INFINITY,
                }
            }
            if p > b {
                lambda += p - b;
            }
        }
        if lambda > 0.0 {
            match self.network.comm().comm_delay(lambda) {
                Ok(g) => node + self.total * g,
                Err(_) => f64::INFINITY,
            }
        } else {
            node
        }
    }
}

#[derive(Clone)]
struct Candidate {
    objective: f64,
    net: Vec<f64>,
    beta: Vec<f64>,
}

/// Lower objective wins; ties go to the lexicographically smaller `d`.
fn better(a: &Candidate, b: &Candidate) -> bool {
    match a.objective.partial_cmp(&b.objective) {
        Some(Ordering::Less) => true,
        Some(Ordering::Greater) | None => false,
        Some(Ordering::Equal) => a
            .net
            .iter()
            .zip(&b.net)
            .find_map(|(x, y)| match x.partial_cmp(y) {
                Some(Ordering::Equal) => None,
                other => Some(other == Some(Ordering::Less)),
            })
            .unwrap_or(false),
    }
}

pub fn brute_force_optimum(network: &Network, cfg: &OracleConfig) -> Result<OracleResult> {
    let n = network.len();
    if n > MAX_NODES {
        return Err(Error::TooLarge { n, max: MAX_NODES });
    }
    if cfg.grid < 2 {
        return Err(Error::InvalidNetwork(
            "oracle grid needs at least 2 points per axis".into(),
        ));
    }
    let eval = Evaluator {
        network,
        phi: network.arrival_rates(),
        total: network.total_arrival(),
    };
    let make = |beta: Vec<f64>| -> Candidate {
        let objective = eval.objective(&beta);
        let net = eval.phi.iter().zip(&beta).map(|(p, b)| p - b).collect();
        Candidate {
            objective,
            net,
            beta,
        }
    };

    let mut best = make(eval.phi.clone());
    let mut evaluations = 1_u64;
    let free = n - 1;
    let total = eval.total;
    let upper: Vec<f64> = network.nodes()[..free]
        .iter()
        .map(|node| node.delay.service_rate().min(total))
        .collect();

    let mut center: Vec<f64> = upper.iter().map(|u| 0.5 * u).collect();
    let mut half: Vec<f64> = upper.iter().map(|u| 0.5 * u).collect();
    let mut resolution = 0.0;
    if free > 0 && total > 0.0 {
        for _ in 0..=cfg.refine_rounds {
            let axes: Vec<Vec<f64>> = (0..free)
                .map(|i| {
                    let lo = (center[i] - half[i]).max(0.0);
                    let hi = (center[i] + half[i]).min(upper[i]);
                    let steps = (cfg.grid - 1) as f64;
                    (0..cfg.grid)
                        .map(|k| lo + (hi - lo) * k as f64 / steps)
                        .collect()
                })
                .collect();
            resolution = (0..free)
                .map(|i| axes[i][1] - axes[i][0])
                .fold(0.0, f64::max);

            let mut index = vec![0_usize; free];
            let mut beta = vec![0.0; n];
            'grid: loop {
                let mut partial = 0.0;
                for i in 0..free {
                    beta[i] = axes[i][index[i]];
                    partial += beta[i];
                }
                let last = total - partial;
                if last >= 0.0 {
                    beta[free] = last;
                    evaluations += 1;
                    let objective = eval.objective(&beta);
                    if objective <= best.objective {
                        let c = make(beta.clone());
                        if better(&c, &best) {
                            best = c;
                        }
                    }
                }
                for i in (0..free).rev() {
                    index[i] += 1;
                    if index[i] < cfg.grid {
                        continue 'grid;
                    }
                    index[i] = 0;
                }
                break;
            }

            center.copy_from_slice(&best.beta[..free]);
            for h in half.iter_mut() {
                *h *= 0.5;
            }
        }
    }

    let lambda = best.net.iter().map(|d| d.max(0.0)).sum();
    Ok(OracleResult {
        allocation: Allocation {
            beta: best.beta,
            lambda,
        },
        net_transfer: best.net,
        objective: best.objective,
        resolution,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// Solver objective minus oracle objective (aggregate units).
    pub objective_gap: f64,
    pub max_beta_deviation: f64,
    pub solver_roles: Vec<NodeRole>,
    pub oracle_roles: Vec<NodeRole>,
    pub roles_agree: bool,
    pub pass: bool,
}

/// Compares solver and oracle; fails when the oracle beats the solver by
/// more than [`GAP_TOL`].
pub fn compare_solutions(
    solver_out: &OptimalSolution,
    oracle_out: &OracleResult,
    network: &Network,
) -> ComparisonReport {
    let objective_gap = solver_out.objective - oracle_out.objective;
    let max_beta_deviation = solver_out
        .allocation
        .beta
        .iter()
        .zip(&oracle_out.allocation.beta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let tol = (2.0 * oracle_out.resolution).max(network.total_arrival() * 1e-9);
    let oracle_roles = oracle_out.roles(tol);
    let solver_roles = solver_out.partition.roles.clone();
    let roles_agree = oracle_roles == solver_roles;
    ComparisonReport {
        objective_gap,
        max_beta_deviation,
        solver_roles,
        oracle_roles,
        roles_agree,
        pass: objective_gap <= GAP_TOL,
    }
}
