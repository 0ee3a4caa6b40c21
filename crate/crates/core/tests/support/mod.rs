#![allow(dead_code)]

pub mod dqn_oracle;
pub mod geometry;
pub mod mpc_oracle;
pub mod qp_oracle;
