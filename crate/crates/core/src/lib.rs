//! Optimal static load allocation for heterogeneous distributed systems.
//!
//! Nodes receive generic jobs at rate `φ_i` and may ship part of them to
//! other nodes over a shared network. The crate computes the processing
//! rates `β_i` that minimize the mean response time, classifies nodes as
//! sources, sinks or neutrals, builds explicit transfer matrices, and checks
//! the result against a brute-force optimizer and a queueing simulator.
//!
//! ```
//! use loadbal::{delay::{CommDelayModel, NodeDelayModel}, kkt, network::{Network, Node, NodeRole}};
//!
//! let net = Network::new(
//!     vec![
//!         Node::new("busy", 1.5, NodeDelayModel::mm1(4.0)?)?,
//!         Node::new("idle", 0.0, NodeDelayModel::mm1(4.0)?)?,
//!     ],
//!     CommDelayModel::constant(0.05)?,
//! )?;
//! let sol = kkt::solve(&net, &kkt::SolverConfig::default())?;
//! assert_eq!(sol.partition.roles, vec![NodeRole::ActiveSource, NodeRole::Sink]);
//! assert!((sol.allocation.lambda - 0.75).abs() < 1e-9);
//! # Ok::<(), loadbal::Error>(())
//! ```

pub mod cli;
pub mod config;
pub mod delay;
pub mod error;
pub mod flows;
pub mod kkt;
pub mod network;
pub mod oracle;
pub mod sim;

pub use error::{Error, Result};
