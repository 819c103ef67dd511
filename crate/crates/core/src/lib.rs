//! Graph calculus, graph PDE simulation and physics-regularised graph networks.

pub mod autodiff;
pub mod calculus;
pub mod checkpoint;
pub mod data;
pub mod gn;
pub mod graph;
pub mod model;
pub mod pde;
pub mod train;
