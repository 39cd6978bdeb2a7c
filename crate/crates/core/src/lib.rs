//! Transport distances between vector-valued densities on a 1D grid with
//! matrix-valued mobilities, minimizing-movement schemes, and finite-difference
//! oracles to check them against.

pub mod action;
pub mod conditions;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod grid;
pub mod ipm;
pub mod jko;
pub mod linalg;
pub mod mobility;
pub mod path;
pub mod pde;
pub mod pdhg;
pub mod quad;
pub mod scalar;
pub mod space;
pub mod transport;

pub use error::{Error, Result};
pub use field::ScalarField;
pub use mobility::{DerivativeMode, EntropyCase, MobilityFamily, MobilityModel, ScalarMobility};
pub use space::StateSpace;
