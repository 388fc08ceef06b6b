//! Decentralized energy trading between interconnected microgrids.
//!
//! Each microgrid posts a price for the energy it is willing to sell, solves
//! a small local cost-minimization problem against its neighbours' prices,
//! and bids for energy. Prices move by a diminishing-step subgradient rule
//! until the bids clear.

pub mod cost_models;
pub mod harness;
pub mod local_solver;
pub mod market;
pub mod oracle;
pub mod topology;
pub mod transport;

pub use cost_models::{CostError, CostFunction, CostModel, CubicTransfer, SoftCappedQuadratic};
pub use local_solver::{Case, LocalProblem, LocalSolution, SolverError};
pub use topology::{NodeId, Topology, TopologyKind};

/// Deliberate defects for self-checking the validation suite.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Price update moves against the subgradient.
    PriceUpdateSign,
    /// Shadow-price equation of the generate-and-buy case adds the seller
    /// price instead of subtracting it.
    Case3SumSign,
}
