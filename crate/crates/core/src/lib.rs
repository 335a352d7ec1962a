//! Grid-quantized neural world model.
//!
//! A self-organizing latent world model over a discrete grid topology:
//! a fixed Gaussian smear spreads logit mass to grid neighbors, projection
//! onto the simplex/sphere intersection produces nonnegative unit codes,
//! and a balanced pair of expansion/contraction losses drives the codes to
//! one-hot, uniformly spread equilibria while a predictive alignment term
//! learns transition dynamics. A 1D ring variant of the same machinery
//! solves Euclidean TSP instances as an elastic loop.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod eval;
pub mod nets;
pub mod opt;
pub mod render;
pub mod tensor;
pub mod thermo;
pub mod topology;
pub mod trainer;
pub mod tsp;
