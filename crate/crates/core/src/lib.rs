//! Transactive coordination of distributed energy resources.
//!
//! Device models and auction clearing ([`der`], [`market`]), a Monte-Carlo
//! population simulator ([`popsim`]), aggregate bin models ([`aggmodel`]) and
//! model-predictive price scheduling ([`mpc`]).

pub mod aggmodel;
pub mod der;
pub mod error;
pub mod market;
pub mod mpc;
pub mod popsim;
pub mod qp;

pub use error::{ConstraintClass, Error, Result};
