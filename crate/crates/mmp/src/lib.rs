//! Mass migration processes on finite tori: rate families, product invariant
//! measures, attractiveness and coupling, kinetic Monte Carlo, and canonical
//! ensembles.

pub mod attractiveness;
pub mod condensation;
pub mod coupling;
pub mod error;
pub mod invariance;
pub mod lattice;
pub mod measures;
pub mod num;
pub mod rates;
pub mod report;
pub mod seq;
pub mod simulator;

pub use error::{MmpError, Result};
pub use num::{rat, Rational};
