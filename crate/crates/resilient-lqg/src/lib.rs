//! Attack-resilient LQG tracking under sensor attacks with unknown patterns.
//!
//! One Kalman filter runs per sensor subset that excludes a possible attack pattern.
//! Each filter proposes a control, and the applied input solves a QCQP whose balls are
//! centered at those proposals. Ball radii come from SOS barrier certificates that bound
//! the probability of reaching the unsafe set and of missing the goal.

pub mod numerics;
pub mod model;
pub mod gains;
pub mod qcqp;
pub mod sdp;
pub mod policy;
pub mod dual;
pub mod harness;
pub mod certify;

pub use numerics::Poly;

pub type Real = f64;
pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
pub type Polynomial = numerics::Poly<f64>;
