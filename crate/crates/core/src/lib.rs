pub mod action;
pub mod dqn;
pub mod error;
pub mod harness;
pub mod mpc;
pub mod qp;
pub mod reward;
pub mod sim;
pub mod sm;
pub mod topology;

pub use action::{Action, MAX_VEHICLES, NUM_ACTIONS};
pub use error::{Error, Result};
