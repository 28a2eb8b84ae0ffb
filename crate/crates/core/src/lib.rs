//! Loosely-coupled visual-inertial odometry built around a quaternion-focused
//! hybrid error-state EKF/UKF.

pub mod adaptive;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod manifold;

pub use error::{Error, Result};
