//! Simulation of cavity-QED protocols that entangle cavity modes through a
//! single three-level atom: state spaces, exact evolution, protocol steps,
//! entanglement measures, a laboratory timing budget and a small protocol
//! language with a command line front end.

pub mod dynamics;
pub mod entangle;
pub mod feasibility;
pub mod hilbert;
pub mod interface;
pub mod protocol;
pub mod verify;
