//! Discrete-latent variational autoencoders with Boltzmann-machine priors.
//!
//! The latent prior lives on an annealer-style connectivity (Chimera, Pegasus,
//! complete, or edge-free "Bernoulli") and is trained through a negative phase
//! supplied by a pluggable sampler: block Gibbs / PCD, population annealing,
//! exact enumeration, or a noisy annealer emulator.
//!
//! Module map:
//!
//! - [`graph`]: connectivities, colorings, hierarchy bipartitions
//! - [`rbm`]: energies, exact oracles, the Ising view, tiny-QBM verification
//! - [`samplers`]: negative-phase backends behind [`samplers::Sampler`]
//! - [`latent`]: hard and smoothed reparameterization of binary units
//! - [`nets`]: dense / gated-dense stacks with manual backprop
//! - [`vae`]: objectives, schedules, the training loop
//! - [`calib`]: effective-temperature tracking
//! - [`eval`]: likelihood, active units, Gibbs walks, generation
//! - [`data`]: IDX loading, dynamic binarization, synthetic data

pub mod calib;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod latent;
pub mod math;
pub mod metrics;
pub mod nets;
pub mod rbm;
pub mod samplers;
pub mod vae;

pub use error::{Error, Result};
