//! Graph diffusion in joint positional-feature space.
//!
//! Nodes carry positional coordinates (from personalized PageRank or
//! hyperbolic embeddings) alongside their features; both blocks evolve
//! together under attention-derived diffusion weights on a rewirable
//! stencil. Fixed-step and adaptive solvers discretize the flow in time,
//! and a discrete Polyakov action characterizes it as a gradient flow.

pub mod autodiff;
pub mod diffusivity;
pub mod error;
pub mod flow;
pub mod graph;
pub mod io;
pub mod learning;
pub mod metric;
pub mod polyakov;
pub mod positional;
pub mod solvers;

mod dense;

pub use error::{Error, Result};
