//! Non-Markovian collapse dynamics of a free quantum particle.
//!
//! The model couples the particle position to a Gaussian noise field with
//! correlation D(t, s). Everything needed to propagate the wave function,
//! evaluate closed-form Green's functions, and run Monte Carlo ensembles
//! lives here; the companion CLI crate only wires these pieces together.

pub mod bvp;
pub mod closedform;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod figures;
pub mod manybody;
pub mod noise;
pub mod params;
pub mod validation;

pub use error::{CoreError, Result};
pub use noise::{path_rng, NoiseGenerator, NoisePath, SmoothNoise};
pub use params::{
    CorrelationKernel, NaturalParams, PhysicalParams, TimeGrid, UnitScales, HBAR_SI,
    LAMBDA0_ADLER, LAMBDA0_GRW, M0_SI,
};
