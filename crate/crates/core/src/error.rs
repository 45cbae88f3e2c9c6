use thiserror::Error;

use crate::kkt::OptimalSolution;
use crate::network::FeasibilityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} must be non-negative and finite, got {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("traffic {lambda} outside the channel range (capacity {capacity})")]
    Saturated { lambda: f64, capacity: f64 },

    #[error("invalid delay model: {0}")]
    InvalidModel(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("unstable network: total arrival rate {total_arrival} >= total service rate {total_capacity}")]
    Unstable {
        total_arrival: f64,
        total_capacity: f64,
    },

    #[error("infeasible flow: {0}")]
    Infeasible(FeasibilityReport),

    #[error("source surplus {surplus} does not match sink deficit {deficit}")]
    Imbalanced { surplus: f64, deficit: f64 },

    #[error("no allocation meets the prices: {0}")]
    NoSolution(String),

    #[error("solver did not converge after {iterations} outer iterations")]
    NonConvergence {
        iterations: usize,
        best: Box<OptimalSolution>,
    },

    #[error("instance has {n} nodes, the brute-force search accepts at most {max}")]
    TooLarge { n: usize, max: usize },

    #[error("simulation rejected: {0}")]
    Simulation(String),
}
