//! Monitored stabilizer circuits with noise and quantum-enhanced operations,
//! conditional entanglement observables, finite-size scaling collapse and a
//! replica permutation toolkit.

pub mod bits;
pub mod channels;
pub mod circuit;
pub mod clifford;
pub mod collapse;
pub mod error;
pub mod harness;
pub mod observables;
pub mod replica;
pub mod stab;
pub mod tableau;

pub use error::{Error, Result};
