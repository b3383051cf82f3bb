//! Passive iFIR controllers learned from probing data.
//!
//! The crate covers the whole pipeline: multisine probing of a plant,
//! virtual-reference construction, least-squares regression for the
//! integral-plus-FIR ("iFIR") controller class, a constrained solver that
//! enforces positive realness of the learned controller, and a multi-rate
//! closed-loop simulator to evaluate tracking against a reference model.

pub mod closedloop;
pub mod error;
pub mod experiment;
pub mod ifir;
pub mod linalg;
pub mod lti;
pub mod plantsim;
pub mod report;
mod serde_mat;
pub mod signals;
pub mod solver;
pub mod vrft;

pub use error::{Error, Result};
