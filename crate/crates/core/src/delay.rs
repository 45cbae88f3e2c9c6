//! Node and communication delay models.
//!
//! A node's mean delay `F(β)` is a function of the rate `β` of jobs it
//! processes. The solver works with the marginal delay of the node's
//! aggregate contribution, `f(β) = d/dβ [β F(β)] = F(β) + β F'(β)`, and with
//! its inverse. The network delay `G(λ)` depends only on the total transfer
//! traffic `λ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

/// Delay model of a single processing node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeDelayModel {
    /// M/M/1 server: `F(β) = 1 / (μ − β)` for `0 ≤ β < μ`.
    Mm1 { service_rate: f64 },
}

/// Result of inverting the marginal delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseMarginal {
    pub rate: f64,
    /// The requested marginal delay was below `f(0)`; `rate` is clamped to 0.
    pub at_lower_bound: bool,
}

fn check_rate(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}

impl NodeDelayModel {
    pub fn mm1(service_rate: f64) -> Result<Self> {
        if !(service_rate.is_finite() && service_rate > 0.0) {
            return Err(Error::InvalidModel(format!(
                "service rate must be positive and finite, got {service_rate}"
            )));
        }
        Ok(NodeDelayModel::Mm1 { service_rate })
    }

    /// Largest sustainable processing rate (exclusive).
    pub fn service_rate(&self) -> f64 {
        match *self {
            NodeDelayModel::Mm1 { service_rate } => service_rate,
        }
    }

    /// Mean delay `F(β)`; `+∞` at or beyond saturation.
    pub fn node_delay(&self, beta: f64) -> Result<f64> {
        check_rate("processing rate", beta)?;
        Ok(match *self {
            NodeDelayModel::Mm1 { service_rate: mu } => {
                if beta >= mu {
                    f64::INFINITY
                } else {
                    1.0 / (mu - beta)
                }
            }
        })
    }

    /// Marginal delay `f(β) = F(β) + β F'(β)`; `+∞` at or beyond saturation.
    pub fn marginal_node_delay(&self, beta: f64) -> Result<f64> {
        check_rate("processing rate", beta)?;
        Ok(match *self {
            NodeDelayModel::Mm1 { service_rate: mu } => {
                if beta >= mu {
                    f64::INFINITY
                } else {
                    let slack = mu - beta;
                    mu / (slack * slack)
                }
            }
        })
    }

    /// `f(0)`, the smallest marginal delay the node can offer.
    pub fn marginal_at_zero(&self) -> f64 {
        match *self {
            NodeDelayModel::Mm1 { service_rate: mu } => 1.0 / mu,
        }
    }

    /// `f⁻¹(y)`. Values of `y` below `f(0)` clamp to zero with the
    /// `at_lower_bound` flag set.
    pub fn inverse_marginal_delay(&self, y: f64) -> InverseMarginal {
        match *self {
            NodeDelayModel::Mm1 { service_rate: mu } => {
                if y.is_nan() || y <= 1.0 / mu {
                    return InverseMarginal {
                        rate: 0.0,
                        at_lower_bound: y < 1.0 / mu || y.is_nan(),
                    };
                }
                if y.is_infinite() {
                    return InverseMarginal {
                        rate: mu,
                        at_lower_bound: false,
                    };
                }
                let rate = (mu - (mu / y).sqrt()).max(0.0);
                InverseMarginal {
                    rate,
                    at_lower_bound: false,
                }
            }
        }
    }
}

/// Network delay as a function of total transfer traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CommDelayModel {
    /// `G(λ) = t`.
    Constant { t: f64 },
    /// `G(λ) = t / (1 − λ/c)` for `λ < c`.
    Mm1Channel { t: f64, capacity: f64 },
    /// `G(λ) = Σ a_k λ^k` with `a_k ≥ 0`.
    Polynomial { coefficients: Vec<f64> },
}

impl CommDelayModel {
    pub fn constant(t: f64) -> Result<Self> {
        let model = CommDelayModel::Constant { t };
        model.validate()?;
        Ok(model)
    }

    pub fn mm1_channel(t: f64, capacity: f64) -> Result<Self> {
        let model = CommDelayModel::Mm1Channel { t, capacity };
        model.validate()?;
        Ok(model)
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        let model = CommDelayModel::Polynomial { coefficients };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        match self {
            CommDelayModel::Constant { t } => {
                if !(t.is_finite() && *t >= 0.0) {
                    return bad(format!("constant delay must be non-negative, got {t}"));
                }
            }
            CommDelayModel::Mm1Channel { t, capacity } => {
                if !(t.is_finite() && *t >= 0.0) {
                    return bad(format!(
                        "channel transfer time must be non-negative, got {t}"
                    ));
                }
                if !(capacity.is_finite() && *capacity > 0.0) {
                    return bad(format!("channel capacity must be positive, got {capacity}"));
                }
            }
            CommDelayModel::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return bad("polynomial needs at least one coefficient".into());
                }
                if let Some(a) = coefficients.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
                    return bad(format!(
                        "polynomial coefficients must be non-negative, got {a}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Supremum of admissible traffic; `+∞` for models without a capacity.
    pub fn max_traffic(&self) -> f64 {
        match self {
            CommDelayModel::Mm1Channel { capacity, .. } => *capacity,
            _ => f64::INFINITY,
        }
    }

    /// True when `G'` vanishes everywhere, so the communication price is zero.
    pub fn has_flat_delay(&self) -> bool {
        match self {
            CommDelayModel::Constant { .. } => true,
            CommDelayModel::Mm1Channel { t, .. } => *t == 0.0,
            CommDelayModel::Polynomial { coefficients } => {
                coefficients.iter().skip(1).all(|a| *a == 0.0)
            }
        }
    }

    fn check_traffic(&self, lambda: f64) -> Result<()> {
        check_rate("traffic", lambda)?;
        if let CommDelayModel::Mm1Channel { capacity, .. } = self {
            if lambda >= *capacity {
                return Err(Error::Saturated {
                    lambda,
                    capacity: *capacity,
                });
            }
        }
        Ok(())
    }

    /// `G(λ)`.
    pub fn comm_delay(&self, lambda: f64) -> Result<f64> {
        self.check_traffic(lambda)?;
        Ok(match self {
            CommDelayModel::Constant { t } => *t,
            CommDelayModel::Mm1Channel { t, capacity } => t / (1.0 - lambda / capacity),
            CommDelayModel::Polynomial { coefficients } => coefficients
                .iter()
                .rev()
                .fold(0.0, |acc, a| acc * lambda + a),
        })
    }

    /// `G'(λ)`.
    pub fn comm_delay_derivative(&self, lambda: f64) -> Result<f64> {
        self.check_traffic(lambda)?;
        Ok(match self {
            CommDelayModel::Constant { .. } => 0.0,
            CommDelayModel::Mm1Channel { t, capacity } => {
                let slack = 1.0 - lambda / capacity;
                t / (capacity * slack * slack)
            }
            CommDelayModel::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, a)| acc * lambda + k as f64 * a),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeAdmissibility {
    pub increasing: bool,
    pub convex: bool,
}

/// Sampled check of the structural assumptions the optimality conditions
/// rest on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    /// Upper end of the sampled traffic grid (clamped below channel capacity).
    pub lambda_max: f64,
    pub samples: usize,
    /// `G(λ)/λ` never decreases across the sampled grid.
    pub ratio_nondecreasing: bool,
    /// Largest relative drop of `G(λ)/λ` between neighbouring samples.
    pub worst_ratio_drop: f64,
    pub comm_nondecreasing: bool,
    pub nodes: Vec<NodeAdmissibility>,
    /// `G_ij ≤ G_ik + G_kj`; automatic when the delay is the same for every pair.
    pub triangle_inequality: bool,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.ratio_nondecreasing
            && self.comm_nondecreasing
            && self.triangle_inequality
            && self.nodes.iter().all(|n| n.increasing && n.convex)
    }
}

const SAMPLE_REL_TOL: f64 = 1e-12;

pub fn check_model_admissibility(
    network: &Network,
    lambda_max: f64,
    samples: usize,
) -> AdmissibilityReport {
    let samples = samples.max(2);
    let comm = network.comm();
    let cap = comm.max_traffic();
    let lambda_max = if lambda_max >= cap {
        cap * 0.999
    } else {
        lambda_max
    };

    let mut ratio_nondecreasing = true;
    let mut comm_nondecreasing = true;
    let mut worst_ratio_drop: f64 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for k in 1..=samples {
        let lambda = lambda_max * k as f64 / samples as f64;
        let Ok(g) = comm.comm_delay(lambda) else {
            continue;
        };
        let ratio = g / lambda;
        if let Some((prev_g, prev_ratio)) = prev {
            if g < prev_g * (1.0 - SAMPLE_REL_TOL) {
                comm_nondecreasing = false;
            }
            if ratio < prev_ratio * (1.0 - SAMPLE_REL_TOL) {
                ratio_nondecreasing = false;
                worst_ratio_drop = worst_ratio_drop.max((prev_ratio - ratio) / prev_ratio);
            }
        }
        prev = Some((g, ratio));
    }

    let nodes = network
        .nodes()
        .iter()
        .map(|node| {
            let top = 0.95 * node.delay.service_rate();
            let values: Vec<f64> = (0..samples)
                .map(|k| {
                    let beta = top * k as f64 / (samples - 1) as f64;
                    node.delay.node_delay(beta).unwrap_or(f64::INFINITY)
                })
                .collect();
            let increasing = values.windows(2).all(|w| w[1] > w[0]);
            let convex = values.windows(3).all(|w| {
                let second = w[2] - 2.0 * w[1] + w[0];
                second >= -SAMPLE_REL_TOL * w[2].abs()
            });
            NodeAdmissibility { increasing, convex }
        })
        .collect();

    AdmissibilityReport {
        lambda_max,
        samples,
        ratio_nondecreasing,
        worst_ratio_drop,
        comm_nondecreasing,
        nodes,
        triangle_inequality: true,
    }
}
