//! Price-based solver for the optimal static allocation.
//!
//! At the optimum every sink runs at the common marginal delay `α`, every
//! active source at `α + Φ G'(λ)`, neutral nodes sit between the two prices
//! and idle sources cannot go below the upper one even with zero load. For a
//! fixed communication price the total processed load is monotone in `α`, so
//! `α` comes from bisection on the flow residual. The traffic `λ` that sets
//! the price is in turn a fixed point of a non-increasing map, which is
//! located by a shrinking bracket.
//!
//! Because the network term of the objective is defined as zero when nothing
//! is transferred, the objective jumps at `λ = 0` whenever `G(0) > 0`. The
//! price conditions cannot see that jump, so the solver always compares the
//! interior candidate with the no-transfer allocation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{aggregate_objective, Allocation, Network, NodePartition, NodeRole};

/// Tolerance used by [`solve`] when it verifies its own output.
pub const KKT_TOL: f64 = 1e-8;

/// Relative agreement required between the price used and the price implied
/// by the realized traffic.
const PRICE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Relative bracket width at which the `α` bisection may stop.
    pub alpha_tol: f64,
    /// Fixed-point tolerance on `λ`, relative to Φ.
    pub lambda_tol: f64,
    pub max_outer: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha_tol: 1e-10,
            lambda_tol: 1e-9,
            max_outer: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_tol", self.alpha_tol),
            ("lambda_tol", self.lambda_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "solver {name} must be positive, got {v}"
                )));
            }
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidNetwork(
                "solver max_outer must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// How the returned allocation was selected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// The price conditions hold with `comm_price = Φ G'(λ)`.
    Interior,
    /// Keeping all load local beat the best transferring allocation, whose
    /// objective is recorded. `alpha` and `comm_price` are then the tightest
    /// prices that make every node neutral.
    NoTransfer { interior_objective: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalSolution {
    pub allocation: Allocation,
    pub partition: NodePartition,
    /// Common marginal delay of the sinks.
    pub alpha: f64,
    /// Extra marginal delay paid by sources, `Φ G'(λ)`.
    pub comm_price: f64,
    pub regime: Regime,
    /// `Σ β_i F_i(β_i) + Φ G(λ)`.
    pub objective: f64,
    pub iterations: usize,
    /// `|T(λ) − λ| / Φ` at the accepted iterate.
    pub fixed_point_residual: f64,
}

impl OptimalSolution {
    pub fn mean_response_time(&self, network: &Network) -> f64 {
        let phi = network.total_arrival();
        if phi > 0.0 {
            self.objective / phi
        } else {
            0.0
        }
    }
}

fn check_price(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}

/// Role and processing rate of every node for given prices.
///
/// Ties at either price boundary classify the node as neutral. Nodes without
/// external arrivals whose idle marginal delay exceeds the upper price are
/// neutral as well: they neither send nor receive.
pub fn partition_for_prices(
    network: &Network,
    alpha: f64,
    comm_price: f64,
) -> Result<(NodePartition, Vec<f64>)> {
    check_price("alpha", alpha)?;
    check_price("communication price", comm_price)?;
    if alpha <= 0.0 {
        return Err(Error::Domain {
            what: "alpha",
            value: alpha,
        });
    }
    let upper = alpha + comm_price;
    let floor = network
        .nodes()
        .iter()
        .map(|n| n.delay.marginal_at_zero())
        .fold(f64::INFINITY, f64::min);
    if network.total_arrival() > 0.0 && upper < floor {
        return Err(Error::NoSolution(format!(
            "upper price {upper} is below the smallest idle marginal delay {floor}"
        )));
    }

    let mut roles = Vec::with_capacity(network.len());
    let mut beta = Vec::with_capacity(network.len());
    for node in network.nodes() {
        let phi = node.arrival_rate;
        let model = &node.delay;
        let at_phi = model.marginal_node_delay(phi)?;
        let (role, b) = if at_phi < alpha {
            (NodeRole::Sink, model.inverse_marginal_delay(alpha).rate)
        } else if at_phi <= upper || phi == 0.0 {
            (NodeRole::Neutral, phi)
        } else if model.marginal_at_zero() < upper {
            (
                NodeRole::ActiveSource,
                model.inverse_marginal_delay(upper).rate,
            )
        } else {
            (NodeRole::IdleSource, 0.0)
        };
        roles.push(role);
        beta.push(b);
    }
    Ok((NodePartition { roles }, beta))
}

/// `Σ β_i(α) − Φ` for the allocation chosen by [`partition_for_prices`].
pub fn flow_residual(network: &Network, alpha: f64, comm_price: f64) -> Result<f64> {
    let (_, beta) = partition_for_prices(network, alpha, comm_price)?;
    Ok(beta.iter().sum::<f64>() - network.total_arrival())
}

#[derive(Debug, Clone)]
struct PricePoint {
    alpha: f64,
    partition: NodePartition,
    beta: Vec<f64>,
    residual: f64,
}

fn min_idle_marginal(network: &Network) -> f64 {
    network
        .nodes()
        .iter()
        .map(|n| n.delay.marginal_at_zero())
        .fold(f64::INFINITY, f64::min)
}

/// Bisection for the `α` that balances total load at a fixed price.
fn find_alpha(network: &Network, comm_price: f64, cfg: &SolverConfig) -> Result<PricePoint> {
    let phi = network.total_arrival();
    let point = |alpha: f64| -> Result<PricePoint> {
        let (partition, beta) = partition_for_prices(network, alpha, comm_price)?;
        let residual = beta.iter().sum::<f64>() - phi;
        Ok(PricePoint {
            alpha,
            partition,
            beta,
            residual,
        })
    };

    let mut lo = point(min_idle_marginal(network))?;
    if lo.residual >= 0.0 {
        return Ok(lo);
    }
    let mut hi_alpha = lo.alpha * 2.0;
    let mut hi = point(hi_alpha)?;
    while hi.residual < 0.0 {
        hi_alpha *= 2.0;
        if !hi_alpha.is_finite() {
            return Err(Error::NoSolution("no upper bracket for alpha".into()));
        }
        hi = point(hi_alpha)?;
    }
    let small = 1e-12 * phi;
    for _ in 0..256 {
        let width = hi.alpha - lo.alpha;
        if width <= cfg.alpha_tol * hi.alpha && lo.residual.abs().min(hi.residual) <= small {
            break;
        }
        let mid = lo.alpha + 0.5 * width;
        if mid <= lo.alpha || mid >= hi.alpha {
            break;
        }
        let m = point(mid)?;
        if m.residual == 0.0 {
            return Ok(m);
        }
        if m.residual < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(if lo.residual.abs() <= hi.residual.abs() {
        lo
    } else {
        hi
    })
}

/// Sink surplus `Σ_S (β_i − φ_i)`.
fn sink_surplus(network: &Network, partition: &NodePartition, beta: &[f64]) -> f64 {
    partition
        .roles
        .iter()
        .zip(network.nodes())
        .zip(beta)
        .filter(|((r, _), _)| **r == NodeRole::Sink)
        .map(|((_, n), b)| b - n.arrival_rate)
        .sum()
}

struct Iterate {
    lambda: f64,
    price: f64,
    point: PricePoint,
    realized: f64,
}

fn iterate_at(network: &Network, lambda: f64, cfg: &SolverConfig) -> Result<Iterate> {
    let price = network.total_arrival() * network.comm().comm_delay_derivative(lambda)?;
    let point = find_alpha(network, price, cfg)?;
    let realized = sink_surplus(network, &point.partition, &point.beta);
    Ok(Iterate {
        lambda,
        price,
        point,
        realized,
    })
}

fn price_gap(network: &Network, it: &Iterate) -> f64 {
    let realized_price = network
        .comm()
        .comm_delay_derivative(it.realized)
        .map(|g| g * network.total_arrival())
        .unwrap_or(f64::INFINITY);
    (realized_price - it.price).abs() / (it.point.alpha + it.price)
}

fn no_transfer_solution(
    network: &Network,
    regime: Regime,
    iterations: usize,
) -> Result<OptimalSolution> {
    let allocation = Allocation::no_transfer(network);
    let objective = aggregate_objective(network, &allocation)?;
    let marginals: Vec<f64> = network
        .nodes()
        .iter()
        .map(|n| n.delay.marginal_node_delay(n.arrival_rate))
        .collect::<Result<_>>()?;
    let alpha = marginals.iter().copied().fold(f64::INFINITY, f64::min);
    let top = marginals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(OptimalSolution {
        partition: NodePartition {
            roles: vec![NodeRole::Neutral; network.len()],
        },
        allocation,
        alpha,
        comm_price: top - alpha,
        regime,
        objective,
        iterations,
        fixed_point_residual: 0.0,
    })
}

fn finish(network: &Network, it: Iterate, iterations: usize) -> Result<OptimalSolution> {
    let phi = network.total_arrival();
    let fixed_point_residual = (it.realized - it.lambda).abs() / phi;
    if it.realized <= network.zero_tol() {
        let allocation = Allocation::no_transfer(network);
        let objective = aggregate_objective(network, &allocation)?;
        return Ok(OptimalSolution {
            allocation,
            partition: NodePartition {
                roles: vec![NodeRole::Neutral; network.len()],
            },
            alpha: it.point.alpha,
            comm_price: it.price,
            regime: Regime::Interior,
            objective,
            iterations,
            fixed_point_residual,
        });
    }

    let allocation = Allocation {
        beta: it.point.beta,
        lambda: it.realized,
    };
    let interior_objective = aggregate_objective(network, &allocation)?;
    let local_objective = aggregate_objective(network, &Allocation::no_transfer(network))?;
    if local_objective <= interior_objective {
        log::debug!("no-transfer objective {local_objective} beats interior {interior_objective}");
        return no_transfer_solution(
            network,
            Regime::NoTransfer { interior_objective },
            iterations,
        );
    }
    Ok(OptimalSolution {
        allocation,
        partition: it.point.partition,
        alpha: it.point.alpha,
        comm_price: it.price,
        regime: Regime::Interior,
        objective: interior_objective,
        iterations,
        fixed_point_residual,
    })
}

fn checked(network: &Network, solution: OptimalSolution) -> Result<OptimalSolution> {
    let report = verify_optimality(network, &solution, KKT_TOL);
    if report.holds() {
        Ok(solution)
    } else {
        log::warn!(
            "solution failed verification: worst residual {}",
            report.worst()
        );
        Err(Error::NonConvergence {
            iterations: solution.iterations,
            best: Box::new(solution),
        })
    }
}

/// Computes the allocation minimizing the mean response time.
pub fn solve(network: &Network, cfg: &SolverConfig) -> Result<OptimalSolution> {
    cfg.validate()?;
    let phi = network.total_arrival();
    if phi == 0.0 || network.len() == 1 {
        let mut s = no_transfer_solution(network, Regime::Interior, 0)?;
        s.comm_price = phi * network.comm().comm_delay_derivative(0.0)?;
        s.alpha = s.alpha.max(f64::MIN_POSITIVE);
        return checked(network, s);
    }

    let cap = network.comm().max_traffic();
    let forced: f64 = network
        .nodes()
        .iter()
        .map(|n| (n.arrival_rate - n.delay.service_rate()).max(0.0))
        .sum();
    if forced >= cap {
        return Err(Error::InvalidNetwork(format!(
            "channel capacity {cap} cannot carry the {forced} that overloaded nodes must ship"
        )));
    }

    if network.comm().has_flat_delay() {
        let it = iterate_at(network, 0.0, cfg)?;
        let s = finish(network, it, 1)?;
        return checked(network, s);
    }

    let tol = cfg.lambda_tol * phi;
    let mut lo = 0.0_f64;
    let mut hi = if cap.is_finite() {
        phi.min(cap * (1.0 - 1e-12))
    } else {
        phi
    };
    let mut lambda = 0.0;
    let mut best: Option<(f64, Iterate)> = None;
    for k in 1..=cfg.max_outer {
        let it = iterate_at(network, lambda, cfg)?;
        let step = it.realized - it.lambda;
        log::debug!(
            "outer {k}: lambda {lambda:.12e} -> {:.12e}, alpha {:.12e}, price {:.6e}",
            it.realized,
            it.point.alpha,
            it.price
        );
        let gap = price_gap(network, &it);
        if (step.abs() <= tol && gap <= PRICE_TOL)
            || it.realized <= network.zero_tol() && step.abs() <= tol
        {
            let s = finish(network, it, k)?;
            return checked(network, s);
        }
        if step > 0.0 {
            lo = it.lambda;
            hi = hi.min(it.realized);
        } else {
            hi = it.lambda;
            lo = lo.max(it.realized);
        }
        let next = lo + 0.5 * (hi - lo);
        let stalled = next <= lo || next >= hi;
        if best.as_ref().is_none_or(|(s, _)| step.abs() < *s) {
            best = Some((step.abs(), it));
        }
        if stalled {
            let (_, it) = best.take().expect("at least one iterate");
            if (it.realized - it.lambda).abs() <= tol {
                let s = finish(network, it, k)?;
                return checked(network, s);
            }
            let solution = finish(network, it, k)?;
            return Err(Error::NonConvergence {
                iterations: k,
                best: Box::new(solution),
            });
        }
        lambda = next;
    }
    let (_, it) = best.expect("at least one iterate");
    let solution = finish(network, it, cfg.max_outer)?;
    Err(Error::NonConvergence {
        iterations: cfg.max_outer,
        best: Box::new(solution),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    /// Nodes (or identities) the condition applies to.
    pub checked: usize,
    pub worst: f64,
    pub holds: bool,
}

impl ConditionCheck {
    fn new(name: &'static str) -> Self {
        ConditionCheck {
            name,
            checked: 0,
            worst: 0.0,
            holds: true,
        }
    }

    fn record(&mut self, residual: f64, tol: f64) {
        self.checked += 1;
        let residual = if residual.is_nan() {
            f64::INFINITY
        } else {
            residual
        };
        self.worst = self.worst.max(residual);
        self.holds = self.worst <= tol;
    }
}

/// Worst relative residual of every optimality condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub tol: f64,
    pub conditions: Vec<ConditionCheck>,
}

impl KktReport {
    pub fn holds(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn worst(&self) -> f64 {
        self.conditions.iter().map(|c| c.worst).fold(0.0, f64::max)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Checks the price conditions, role bounds and flow identities of a solution.
pub fn verify_optimality(network: &Network, solution: &OptimalSolution, tol: f64) -> KktReport {
    let alpha = solution.alpha;
    let upper = alpha + solution.comm_price;
    let phi_total = network.total_arrival();
    let scale = phi_total.max(f64::MIN_POSITIVE);
    let beta = &solution.allocation.beta;

    let mut sink = ConditionCheck::new("sink_price");
    let mut active = ConditionCheck::new("active_source_price");
    let mut neutral = ConditionCheck::new("neutral_interval");
    let mut idle = ConditionCheck::new("idle_source_floor");
    let mut bounds = ConditionCheck::new("role_bounds");
    let mut balance = ConditionCheck::new("load_balance");
    let mut lambda_sinks = ConditionCheck::new("lambda_sink_surplus");
    let mut lambda_sources = ConditionCheck::new("lambda_source_deficit");

    let mut surplus = 0.0;
    let mut deficit = 0.0;
    let shape_ok = beta.len() == network.len() && solution.partition.roles.len() == network.len();
    if !shape_ok {
        bounds.record(f64::INFINITY, tol);
    } else {
        for ((node, &b), &role) in network
            .nodes()
            .iter()
            .zip(beta)
            .zip(&solution.partition.roles)
        {
            let phi = node.arrival_rate;
            let f = |x: f64| {
                node.delay
                    .marginal_node_delay(x.max(0.0))
                    .unwrap_or(f64::INFINITY)
            };
            match role {
                NodeRole::Sink => {
                    sink.record((f(b) - alpha).abs() / alpha, tol);
                    bounds.record((phi - b).max(0.0) / scale, tol);
                    surplus += b - phi;
                }
                NodeRole::ActiveSource => {
                    active.record((f(b) - upper).abs() / upper, tol);
                    bounds.record((-b).max(b - phi).max(0.0) / scale, tol);
                    deficit += phi - b;
                }
                NodeRole::Neutral => {
                    let at = f(phi);
                    let below = (alpha - at).max(0.0) / alpha;
                    let above = if phi == 0.0 {
                        0.0
                    } else {
                        (at - upper).max(0.0) / upper
                    };
                    neutral.record(below.max(above), tol);
                    bounds.record((b - phi).abs() / scale, tol);
                }
                NodeRole::IdleSource => {
                    idle.record(
                        (upper - node.delay.marginal_at_zero()).max(0.0) / upper,
                        tol,
                    );
                    bounds.record(b.abs() / scale, tol);
                    deficit += phi - b;
                }
                NodeRole::Relay => bounds.record(f64::INFINITY, tol),
            }
        }
    }

    let total: f64 = beta.iter().sum();
    balance.record((total - phi_total).abs() / scale, tol);
    let lambda = solution.allocation.lambda;
    lambda_sinks.record((lambda - surplus).abs() / scale, tol);
    lambda_sources.record((lambda - deficit).abs() / scale, tol);

    let mut conditions = vec![
        sink,
        active,
        neutral,
        idle,
        bounds,
        balance,
        lambda_sinks,
        lambda_sources,
    ];
    match solution.regime {
        Regime::Interior => {
            let mut price = ConditionCheck::new("comm_price");
            let implied = network
                .comm()
                .comm_delay_derivative(lambda)
                .map(|g| g * phi_total)
                .unwrap_or(f64::INFINITY);
            price.record((implied - solution.comm_price).abs() / upper, tol);
            conditions.push(price);
        }
        Regime::NoTransfer { interior_objective } => {
            let mut guard = ConditionCheck::new("no_transfer_guard");
            let local = aggregate_objective(network, &solution.allocation).unwrap_or(f64::INFINITY);
            guard.record(
                (local - interior_objective).max(0.0)
                    / interior_objective.abs().max(f64::MIN_POSITIVE),
                tol,
            );
            conditions.push(guard);
        }
    }
    KktReport { tol, conditions }
}
