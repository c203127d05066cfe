//! Moran model on the sharp peak landscape.
//!
//! Simulators for the full sequence chain and the lumped occupancy chain,
//! the lower and upper bounding processes with their chains on `E_K`,
//! exact birth and death formulas, the quasispecies law, and equilibrium
//! estimators.

pub mod birth_death;
pub mod bounds;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod moran;
pub mod mutation;
pub mod quasispecies;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use model::{partial_order_leq, project_lower, project_upper, ClassVector, OccupancyDistribution, Parameters};
pub use mutation::{ClassKernel, LumpedMutationMatrix, ModifiedMutationMatrix};
pub use birth_death::BirthDeathSpec;
pub use bounds::{BoundingChainKind, BoundingMaps, ConditionedRates, EkChain};
pub use moran::{InitialState, Population, SimulationConfig, Trajectory};
pub use quasispecies::{QuasispeciesDistribution, Regime};
pub use rng::{replica_rng, SimRng};
