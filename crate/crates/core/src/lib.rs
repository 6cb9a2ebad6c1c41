//! Port-Hamiltonian models of sector-coupled hydrogen networks.
//!
//! The crate builds a pH model from a declarative network description
//! (pipes, storages, junctions, compressors, electrolyzers and fuel cells),
//! simulates it and audits the energy balance the pH structure guarantees.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod assembly;
pub mod components;
pub mod netio;
pub mod phcore;
pub mod sim;
pub mod topology;
