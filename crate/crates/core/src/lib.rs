//! Simulation and analysis of dynamical distribution networks.
//!
//! Storage lives on the vertices of a directed graph, flows live on its
//! edges, and a distributed PI controller on every edge drives the vertex
//! outputs to agreement. Flows may be unconstrained, boxed by constant
//! bounds, or saturated by bounds recomputed from the state so that every
//! storage stays above the minimizer of its Hamiltonian.
//!
//! Module map:
//! - [`graph`]: incidence structure, connectivity/balance/cycle predicates and
//!   the interior point check for constant flow bounds.
//! - [`hamiltonian`]: separable storage functions and the controller energy.
//! - [`controller`]: saturation, the PI law, the closed-loop vector field and
//!   matching of constant in/outflows.
//! - [`adaptive`]: vertex classification and the state-dependent bounds.
//! - [`sim`]: fixed-step integration with invariant monitors.
//! - [`scenario`], [`check`], [`report`], [`cli`]: file formats and the
//!   command-line surface.

pub mod adaptive;
pub mod check;
pub mod cli;
pub mod controller;
pub mod error;
pub mod graph;
pub mod hamiltonian;
mod linalg;
mod lp;
pub mod report;
pub mod scenario;
pub mod sim;

pub use adaptive::{
    classify, compute_bounds, iterative_rescaling, solve_flow_qp, AdaptiveBounds, Black2Closure,
    BoundSolver, ClassifierOptions, FlowBasis, VertexClassification,
};
pub use controller::{
    closed_loop_rhs, normalize_constraints, saturate, solve_matching, BoxBounds, ClosedLoop,
    ConstraintPolicy, Disturbance, PIController, SystemState,
};
pub use error::{Error, Result};
pub use graph::{Connectivity, InteriorPoint, NetworkGraph};
pub use hamiltonian::{
    ControllerHamiltonian, HydraulicParams, SaturatedStorage, StorageForm, VertexHamiltonian,
};
pub use sim::{integrate, SimConfig, Trajectory};
