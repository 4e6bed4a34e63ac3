//! Finite-level Hamiltonian lattice gauge theory in 1+1 dimensions.
//!
//! Structure groups and their spectral data live in [`group_core`], heat
//! kernels in [`heat_kernel`], dyadic lattices and Thompson tree pairs in
//! [`dyadic`]. Field operators and refinement maps are in [`field_algebra`],
//! state families in [`states`], Kogut-Susskind Hamiltonians in
//! [`hamiltonian`]. [`rg_flow`], [`observables`] and [`measure_analysis`]
//! cover the renormalisation flow, correlation functions and Hellinger
//! diagnostics.

pub mod dyadic;
pub mod error;
pub mod field_algebra;
pub mod group_core;
pub mod hamiltonian;
pub mod heat_kernel;
pub mod measure_analysis;
pub mod observables;
pub mod rg_flow;
pub mod states;

pub use error::{Error, Result};
pub use group_core::{Conventions, GroupId, GroupValue, C64};
