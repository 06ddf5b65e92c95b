//! Model-predictive formation control for camera-carrying airships orbiting a ground subject.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod model;
pub mod mpc;
pub mod objective;
pub mod orbits;
pub mod sim;
pub mod studies;
pub mod solver;

pub use error::{Error, Result};
