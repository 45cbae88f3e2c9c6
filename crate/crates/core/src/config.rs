//! Scenario files: one JSON document holding the network, optional solver
//! overrides and optional simulation settings.
//!
//! ```json
//! {
//!   "nodes": [
//!     { "id": "a", "arrival_rate": 1.5, "service_rate": 4.0 },
//!     { "id": "b", "arrival_rate": 0.0, "service_rate": 4.0 }
//!   ],
//!   "comm": { "model": "constant", "params": { "t": 0.05 } },
//!   "solver": { "alpha_tol": 1e-10 },
//!   "sim": { "total_jobs": 100000, "seed": 42 }
//! }
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::delay::{CommDelayModel, NodeDelayModel};
use crate::error::Error;
use crate::kkt::SolverConfig;
use crate::network::{Network, Node};
use crate::sim::{Policy, SimConfig};

/// A rejected input, located by its path inside the document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub arrival_rate: f64,
    pub service_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum CommConfig {
    Constant { t: f64 },
    Mm1Channel { t: f64, capacity: f64 },
    Polynomial { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_jobs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub nodes: Vec<NodeConfig>,
    pub comm: CommConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let config: ScenarioConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ConfigError::new(e.path().to_string(), e.inner().to_string()))?;
        de.end()
            .map_err(|e| ConfigError::new("", format!("trailing input: {e}")))?;
        Ok(config)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value)
            .map_err(|e| ConfigError::new(e.path().to_string(), e.inner().to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_network(network: &Network) -> Self {
        let nodes = network
            .nodes()
            .iter()
            .map(|n| NodeConfig {
                id: n.id.clone(),
                arrival_rate: n.arrival_rate,
                service_rate: n.delay.service_rate(),
            })
            .collect();
        let comm = match network.comm().clone() {
            CommDelayModel::Constant { t } => CommConfig::Constant { t },
            CommDelayModel::Mm1Channel { t, capacity } => CommConfig::Mm1Channel { t, capacity },
            CommDelayModel::Polynomial { coefficients } => CommConfig::Polynomial { coefficients },
        };
        ScenarioConfig {
            nodes,
            comm,
            solver: None,
            sim: None,
        }
    }

    pub fn to_network(&self) -> Result<Network, ConfigError> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            let at = |field: &str| format!("nodes[{i}].{field}");
            let delay = NodeDelayModel::mm1(n.service_rate)
                .map_err(|e| ConfigError::new(at("service_rate"), e.to_string()))?;
            let node = Node::new(n.id.clone(), n.arrival_rate, delay)
                .map_err(|e| ConfigError::new(at("arrival_rate"), e.to_string()))?;
            nodes.push(node);
        }
        let comm = match &self.comm {
            CommConfig::Constant { t } => CommDelayModel::constant(*t),
            CommConfig::Mm1Channel { t, capacity } => CommDelayModel::mm1_channel(*t, *capacity),
            CommConfig::Polynomial { coefficients } => {
                CommDelayModel::polynomial(coefficients.clone())
            }
        }
        .map_err(|e| ConfigError::new("comm.params", e.to_string()))?;
        Network::new(nodes, comm).map_err(|e| match e {
            Error::Unstable { .. } => ConfigError::new("nodes", e.to_string()),
            other => ConfigError::new("nodes", other.to_string()),
        })
    }

    /// Total arrivals strictly below total service capacity.
    pub fn is_stable(&self) -> bool {
        let arrivals: f64 = self.nodes.iter().map(|n| n.arrival_rate).sum();
        let capacity: f64 = self.nodes.iter().map(|n| n.service_rate).sum();
        arrivals < capacity
    }

    pub fn solver_config(&self) -> Result<SolverConfig, ConfigError> {
        let mut cfg = SolverConfig::default();
        if let Some(s) = &self.solver {
            if let Some(v) = s.alpha_tol {
                cfg.alpha_tol = v;
            }
            if let Some(v) = s.lambda_tol {
                cfg.lambda_tol = v;
            }
            if let Some(v) = s.max_outer {
                cfg.max_outer = v;
            }
        }
        cfg.validate()
            .map_err(|e| ConfigError::new("solver", e.to_string()))?;
        Ok(cfg)
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        if let Some(s) = &self.sim {
            if let Some(v) = s.total_jobs {
                cfg.total_jobs = v;
            }
            if let Some(v) = s.seed {
                cfg.seed = v;
            }
            if let Some(v) = s.warmup_fraction {
                cfg.warmup_fraction = v;
            }
            if let Some(v) = s.policy {
                cfg.policy = v;
            }
        }
        cfg.validate()
            .map_err(|e| ConfigError::new("sim", e.to_string()))?;
        Ok(cfg)
    }
}

/// Splits `nodes[0].arrival_rate`, `nodes.0.arrival_rate` or `comm.params.t`
/// into segments.
fn path_segments(path: &str) -> Vec<String> {
    path.replace('[', ".")
        .replace(']', "")
        .split('.')
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Overwrites the numeric field at `path` in a scenario document.
///
/// Node entries may be addressed by index or by `id`.
pub fn set_numeric_path(doc: &mut Value, path: &str, value: f64) -> Result<(), ConfigError> {
    let segments = path_segments(path);
    if segments.is_empty() {
        return Err(ConfigError::new(path, "empty parameter path"));
    }
    let mut cursor = doc;
    for seg in &segments {
        cursor = match cursor {
            Value::Object(map) => map
                .get_mut(seg.as_str())
                .ok_or_else(|| ConfigError::new(path, format!("no field {seg:?}")))?,
            Value::Array(items) => {
                let index = match seg.parse::<usize>() {
                    Ok(i) => i,
                    Err(_) => items
                        .iter()
                        .position(|item| {
                            item.get("id").and_then(Value::as_str) == Some(seg.as_str())
                        })
                        .ok_or_else(|| {
                            ConfigError::new(path, format!("no entry with id {seg:?}"))
                        })?,
                };
                let len = items.len();
                items.get_mut(index).ok_or_else(|| {
                    ConfigError::new(path, format!("index {index} out of range ({len} entries)"))
                })?
            }
            _ => {
                return Err(ConfigError::new(
                    path,
                    format!("cannot descend into {seg:?}"),
                ))
            }
        };
    }
    if !cursor.is_number() {
        return Err(ConfigError::new(path, "does not address a numeric field"));
    }
    *cursor = serde_json::Number::from_f64(value)
        .map(Value::Number)
        .ok_or_else(|| ConfigError::new(path, format!("{value} is not a finite number")))?;
    Ok(())
}
