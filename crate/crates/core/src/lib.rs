//! Numerical toolkit for weakly interacting lattice quantum fluids: lattice
//! dispersions, Boltzmann-Nordheim collision operators and their variants,
//! time integration, the linearized operator, the isotropic condensation
//! model and exact Wick/diagram combinatorics.

pub mod cli;
pub mod collision;
pub mod combinatorics;
pub mod evolve;
pub mod isotropic;
pub mod lattice;
pub mod linearized;
pub mod numerics;
pub mod state;
