//! Robust, fairness-constrained energy-efficiency beamforming for
//! RIS-assisted mmWave downlinks.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`] synthesizes Saleh-Valenzuela channels, the Khatri-Rao
//!   cascaded channel and bounded CSI errors.
//! - [`objectives`] evaluates rates, the robust rate lower bound, power,
//!   energy efficiency, Jain's index, the fairness penalty and the
//!   augmented Lagrangian.
//! - [`gradients`] holds the closed-form complex gradients of those
//!   objectives for each design block.
//! - [`solver`] runs penalty dual decomposition around a projected
//!   gradient ascent alternating sweep.
//! - [`verification`] contains independent oracles (finite differences,
//!   sampled adversaries, identity checks) used by the test suites.

pub mod channel;
pub mod error;
pub mod gradients;
pub mod linalg;
pub mod objectives;
pub mod solver;
pub mod units;
pub mod verification;

pub use channel::{ChannelRealization, Geometry, PathStats, SystemDims};
pub use error::{Error, Result};
pub use objectives::{DesignVariables, FairnessSpec, PowerModel};
pub use solver::{GammaUpdateMode, PddState, SolveOutcome, SolveStatus, SolveTrace};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
