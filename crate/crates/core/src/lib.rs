//! Preconditioned backwards regularized Wasserstein proximal (PBRWP) particle
//! sampling, with Langevin baselines, Gaussian closed forms and diagnostics.

pub mod ensemble;
pub mod experiment;
pub mod error;
pub mod gaussian;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod plot;
pub mod potentials;
pub mod rng;
pub mod samplers;
pub mod verify;

pub use ensemble::ParticleEnsemble;
pub use error::{Error, Result};
pub use kernel::ZMethod;
pub use linalg::{GaussianDist, PreconditionerSpec, SpdMatrix};
pub use potentials::Potential;
pub use samplers::{Beta, Sampler, SamplerConfig};
