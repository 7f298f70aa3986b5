pub mod domain;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod io;
pub mod market;
pub mod metrics;
pub mod prosumer_opt;
pub mod qp;

pub use error::SolveError;
