pub mod cli;
pub mod closed;
pub mod connect;
pub mod error;
pub mod expr;
pub mod geodesic_flow;
pub mod manifold;
pub mod metrics;
pub mod optimize;
pub mod reachable;

pub use error::{Error, Result};
