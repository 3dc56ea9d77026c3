//! Budget-constrained interventions on a population of two-state patients.
//!
//! The crate covers the patient and system models, a coupled simulation
//! that drives every policy from the same random tape, closed-form
//! intervention values, a policy zoo including an exact optimum for small
//! instances, estimation from logged data, and a harness for sweeps and
//! exact certification of the index policy's guarantees.

pub mod coupling;
pub mod dp;
pub mod harness;
pub mod model;
pub mod offline;
pub mod policies;
pub mod seeds;
pub mod sim;
pub mod values;
