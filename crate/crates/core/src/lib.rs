//! Neural ODE models with a separable-activation vector field, exact RK4 training,
//! and density transport along learned characteristics.

pub mod error;
pub mod exprlang;
pub mod nets;
pub mod ode;
pub mod report;
pub mod systems;
pub mod train;
pub mod transport;

pub use error::{Error, Result};
