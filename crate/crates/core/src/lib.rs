//! Distributed Stackelberg equilibrium seeking for networked multi-leader
//! multi-follower games under a clustered information structure.

pub mod audit;
pub mod consensus;
pub mod error;
pub mod follower;
pub mod game;
pub mod harness;
pub mod leader;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod scenarios;
pub mod sensitivity;
pub mod theory;

pub use error::{Error, Result};
pub use game::{FeasibleSet, FollowerConstraintSet, GameSpec, SmoothnessConstants};
pub use harness::{RunConfig, Trajectory};
pub use leader::StepSchedule;
pub use linalg::{Matrix, Vector};
pub use network::{LeaderGraph, XiPolicy};
pub use theory::Budgets;
