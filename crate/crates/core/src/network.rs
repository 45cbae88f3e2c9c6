//! Problem instance, flow matrices, allocations and node roles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::delay::{CommDelayModel, NodeDelayModel};
use crate::error::{Error, Result};

/// Relative tolerance on `Σβ = Φ`.
pub const BALANCE_TOL: f64 = 1e-9;

/// Absolute slack (scaled by `max(Φ, 1)`) below which a rate counts as zero.
pub(crate) const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    /// External arrival rate φ, jobs/second.
    pub arrival_rate: f64,
    pub delay: NodeDelayModel,
}

impl Node {
    pub fn new(id: impl Into<String>, arrival_rate: f64, delay: NodeDelayModel) -> Result<Self> {
        if !(arrival_rate.is_finite() && arrival_rate >= 0.0) {
            return Err(Error::Domain {
                what: "arrival rate",
                value: arrival_rate,
            });
        }
        Ok(Node {
            id: id.into(),
            arrival_rate,
            delay,
        })
    }
}

/// A heterogeneous system: nodes plus one network-wide communication delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    comm: CommDelayModel,
    total_arrival: f64,
}

impl Network {
    /// Builds an instance, rejecting it unless `Φ < Σ μ_i`.
    pub fn new(nodes: Vec<Node>, comm: CommDelayModel) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidNetwork(
                "at least one node is required".into(),
            ));
        }
        for (i, node) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|other| other.id == node.id) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate node id {:?}",
                    node.id
                )));
            }
        }
        comm.validate()?;
        let total_arrival: f64 = nodes.iter().map(|n| n.arrival_rate).sum();
        let total_capacity: f64 = nodes.iter().map(|n| n.delay.service_rate()).sum();
        if total_arrival >= total_capacity {
            return Err(Error::Unstable {
                total_arrival,
                total_capacity,
            });
        }
        Ok(Network {
            nodes,
            comm,
            total_arrival,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn comm(&self) -> &CommDelayModel {
        &self.comm
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Φ = Σ φ_i.
    pub fn total_arrival(&self) -> f64 {
        self.total_arrival
    }

    pub fn arrival_rates(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.arrival_rate).collect()
    }

    pub fn with_arrival_rate(&self, index: usize, arrival_rate: f64) -> Result<Network> {
        let mut nodes = self.nodes.clone();
        let node = nodes
            .get_mut(index)
            .ok_or_else(|| Error::InvalidNetwork(format!("no node at index {index}")))?;
        *node = Node::new(node.id.clone(), arrival_rate, node.delay)?;
        Network::new(nodes, self.comm.clone())
    }

    pub fn with_comm(&self, comm: CommDelayModel) -> Result<Network> {
        Network::new(self.nodes.clone(), comm)
    }

    pub(crate) fn zero_tol(&self) -> f64 {
        ZERO_TOL * self.total_arrival.max(1.0)
    }
}

/// Transfer rates `x_ij` between nodes, row = sender.
///
/// The constructor only requires a square matrix of finite numbers; sign and
/// diagonal constraints are reported by [`check_feasibility`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct FlowMatrix {
    n: usize,
    x: Vec<f64>,
}

impl FlowMatrix {
    pub fn zeros(n: usize) -> Self {
        FlowMatrix {
            n,
            x: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut x = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidNetwork(format!(
                    "flow row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "flow row {i} holds non-finite {v}"
                )));
            }
            x.extend(row);
        }
        Ok(FlowMatrix { n, x })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.x[i * self.n + j] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        self.x[i * self.n + j] += value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.x.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// λ = Σ_ij x_ij.
    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }

    pub fn outflow(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    pub fn inflow(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.get(j, i)).sum()
    }

    pub fn has_outflow(&self, i: usize) -> bool {
        self.row(i).iter().any(|v| *v > 0.0)
    }

    pub fn has_inflow(&self, i: usize) -> bool {
        (0..self.n).any(|j| self.get(j, i) > 0.0)
    }

    pub fn positive_entries(&self) -> usize {
        self.x.iter().filter(|v| **v > 0.0).count()
    }
}

impl TryFrom<Vec<Vec<f64>>> for FlowMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        FlowMatrix::from_rows(rows)
    }
}

impl From<FlowMatrix> for Vec<Vec<f64>> {
    fn from(flow: FlowMatrix) -> Self {
        flow.rows()
    }
}

/// Per-node processing rates and the total transfer traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub beta: Vec<f64>,
    pub lambda: f64,
}

impl Allocation {
    /// Everyone keeps their own arrivals.
    pub fn no_transfer(network: &Network) -> Self {
        Allocation {
            beta: network.arrival_rates(),
            lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DimensionMismatch {
        expected: usize,
        got: usize,
    },
    NegativeFlow {
        from: usize,
        to: usize,
        value: f64,
    },
    SelfTransfer {
        node: usize,
        value: f64,
    },
    NegativeProcessing {
        node: usize,
        beta: f64,
    },
    Conservation {
        total: f64,
        expected: f64,
    },
    NodeSaturated {
        node: usize,
        beta: f64,
        service_rate: f64,
    },
    ChannelSaturated {
        lambda: f64,
        capacity: f64,
    },
}

impl Violation {
    /// Saturation makes the objective infinite but the flow is still well formed.
    pub fn is_saturation(&self) -> bool {
        matches!(
            self,
            Violation::NodeSaturated { .. } | Violation::ChannelSaturated { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { expected, got } => {
                write!(f, "flow has {got} nodes, network has {expected}")
            }
            Violation::NegativeFlow { from, to, value } => {
                write!(f, "x[{from}][{to}] = {value} < 0")
            }
            Violation::SelfTransfer { node, value } => {
                write!(f, "x[{node}][{node}] = {value} != 0")
            }
            Violation::NegativeProcessing { node, beta } => {
                write!(f, "node {node}: beta = {beta} < 0")
            }
            Violation::Conservation { total, expected } => {
                write!(f, "sum of beta = {total}, expected {expected}")
            }
            Violation::NodeSaturated {
                node,
                beta,
                service_rate,
            } => write!(
                f,
                "node {node}: beta = {beta} >= service rate {service_rate}"
            ),
            Violation::ChannelSaturated { lambda, capacity } => {
                write!(f, "traffic {lambda} >= channel capacity {capacity}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations other than saturation.
    pub fn is_well_formed(&self) -> bool {
        self.violations.iter().all(Violation::is_saturation)
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "feasible");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `β_i = φ_i + Σ_j x_ji − Σ_j x_ij`.
pub fn implied_beta(network: &Network, flow: &FlowMatrix) -> Vec<f64> {
    network
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, node)| node.arrival_rate + flow.inflow(i) - flow.outflow(i))
        .collect()
}

fn check_rates(network: &Network, beta: &[f64], lambda: f64, report: &mut FeasibilityReport) {
    let eps = network.zero_tol();
    let phi = network.total_arrival();
    for (i, (node, &b)) in network.nodes().iter().zip(beta).enumerate() {
        if b < -eps {
            report
                .violations
                .push(Violation::NegativeProcessing { node: i, beta: b });
        } else if b >= node.delay.service_rate() {
            report.violations.push(Violation::NodeSaturated {
                node: i,
                beta: b,
                service_rate: node.delay.service_rate(),
            });
        }
    }
    let total: f64 = beta.iter().sum();
    if (total - phi).abs() > BALANCE_TOL * phi.max(f64::MIN_POSITIVE) + eps {
        report.violations.push(Violation::Conservation {
            total,
            expected: phi,
        });
    }
    let capacity = network.comm().max_traffic();
    if lambda >= capacity {
        report
            .violations
            .push(Violation::ChannelSaturated { lambda, capacity });
    }
}

pub fn check_feasibility(network: &Network, flow: &FlowMatrix) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    if flow.size() != network.len() {
        report.violations.push(Violation::DimensionMismatch {
            expected: network.len(),
            got: flow.size(),
        });
        return report;
    }
    let n = flow.size();
    for i in 0..n {
        for j in 0..n {
            let v = flow.get(i, j);
            if i == j {
                if v != 0.0 {
                    report
                        .violations
                        .push(Violation::SelfTransfer { node: i, value: v });
                }
            } else if v < 0.0 {
                report.violations.push(Violation::NegativeFlow {
                    from: i,
                    to: j,
                    value: v,
                });
            }
        }
    }
    check_rates(
        network,
        &implied_beta(network, flow),
        flow.total(),
        &mut report,
    );
    report
}

pub fn check_allocation(network: &Network, allocation: &Allocation) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    if allocation.beta.len() != network.len() {
        report.violations.push(Violation::DimensionMismatch {
            expected: network.len(),
            got: allocation.beta.len(),
        });
        return report;
    }
    check_rates(network, &allocation.beta, allocation.lambda, &mut report);
    report
}

fn node_term(network: &Network, beta: &[f64]) -> f64 {
    network
        .nodes()
        .iter()
        .zip(beta)
        .map(|(node, &b)| {
            let b = b.max(0.0);
            if b == 0.0 {
                0.0
            } else {
                b * node.delay.node_delay(b).unwrap_or(f64::INFINITY)
            }
        })
        .sum()
}

/// Mean delay of a transferred job; zero when nothing moves.
pub fn comm_term(comm: &CommDelayModel, lambda: f64) -> f64 {
    if lambda > 0.0 {
        comm.comm_delay(lambda).unwrap_or(f64::INFINITY)
    } else {
        0.0
    }
}

/// `Σ (β_i/Φ) F_i(β_i) + G(λ)` with the network term taken as 0 when `λ = 0`.
pub fn mean_response_time(network: &Network, flow: &FlowMatrix) -> Result<f64> {
    let report = check_feasibility(network, flow);
    if !report.is_well_formed() {
        return Err(Error::Infeasible(report));
    }
    let phi = network.total_arrival();
    if phi == 0.0 {
        return Ok(0.0);
    }
    let beta = implied_beta(network, flow);
    Ok(node_term(network, &beta) / phi + comm_term(network.comm(), flow.total()))
}

/// `Σ β_i F_i(β_i) + Φ G(λ)`, the mean response time scaled by Φ.
pub fn aggregate_objective(network: &Network, allocation: &Allocation) -> Result<f64> {
    let report = check_allocation(network, allocation);
    if !report.is_well_formed() {
        return Err(Error::Infeasible(report));
    }
    Ok(node_term(network, &allocation.beta)
        + network.total_arrival() * comm_term(network.comm(), allocation.lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    IdleSource,
    ActiveSource,
    Neutral,
    Sink,
    /// Both sends and receives; never part of an optimal partition.
    Relay,
}

impl NodeRole {
    pub fn code(self) -> char {
        match self {
            NodeRole::IdleSource => 'I',
            NodeRole::ActiveSource => 'A',
            NodeRole::Neutral => 'N',
            NodeRole::Sink => 'S',
            NodeRole::Relay => 'R',
        }
    }

    pub fn is_source(self) -> bool {
        matches!(self, NodeRole::IdleSource | NodeRole::ActiveSource)
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            NodeRole::IdleSource => "idle_source",
            NodeRole::ActiveSource => "active_source",
            NodeRole::Neutral => "neutral",
            NodeRole::Sink => "sink",
            NodeRole::Relay => "relay",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePartition {
    pub roles: Vec<NodeRole>,
}

impl NodePartition {
    pub fn members(&self, role: NodeRole) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Role codes joined by commas, e.g. `A,S,N`.
    pub fn compact(&self) -> String {
        self.roles
            .iter()
            .map(|r| r.code().to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn classify_roles(network: &Network, flow: &FlowMatrix) -> Result<NodePartition> {
    let report = check_feasibility(network, flow);
    if !report.is_well_formed() {
        return Err(Error::Infeasible(report));
    }
    let eps = network.zero_tol();
    let beta = implied_beta(network, flow);
    let roles = (0..network.len())
        .map(|i| match (flow.has_inflow(i), flow.has_outflow(i)) {
            (true, true) => NodeRole::Relay,
            (true, false) => NodeRole::Sink,
            (false, true) if beta[i] <= eps => NodeRole::IdleSource,
            (false, true) => NodeRole::ActiveSource,
            (false, false) => NodeRole::Neutral,
        })
        .collect();
    Ok(NodePartition { roles })
}

/// Number of nodes with both positive inflow and positive outflow.
pub fn relay_count(flow: &FlowMatrix) -> usize {
    (0..flow.size())
        .filter(|&i| flow.has_inflow(i) && flow.has_outflow(i))
        .count()
}
