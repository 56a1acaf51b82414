//! Transaction-fee mechanism simulator: EIP-1559 and tiered pricing over
//! delay-discounted demand, a steady-state price solver and a diversity
//! policy verifier.

pub mod chain;
pub mod config;
pub mod demand;
pub mod error;
pub mod mechanisms;
pub mod policy;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use chain::{Blockchain, TierChoice, TierState};
pub use config::Config;
pub use demand::{DemandComponent, DemandSpec, DiscountDist, DiscountFunction, LoadSchedule, V0Dist, ValueFunction};
pub use mechanisms::{Eip1559Params, MechanismParams, MechanismState, TieredParams};
pub use policy::{bad_load_spec, check_implementation, DiversityPolicy, PolicyClause};
pub use sim::{run, BlockRecord, Simulation, Trace};
