//! Neural TSP/CVRP toolkit: instance generation, benchmark ingestion, exact
//! and heuristic reference solvers, an attention encoder with an
//! entropy-based scaling factor, distribution-specific decoders, REINFORCE
//! training, inference, and analysis harnesses.

pub mod analysis;
pub mod bench;
mod error;
pub mod generate;
pub mod inference;
pub mod instance;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use generate::{DistributionKind, DistributionSpec};
pub use instance::{check_feasible, tour_cost, ProblemKind, Tour, Violation, VrpInstance};
pub use policy::{EsfMode, Policy, PolicyConfig};
