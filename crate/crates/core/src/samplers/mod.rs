//! Particle evolutions: the proximal particle method and Langevin baselines.

mod adam;
mod langevin;
mod pbrwp;

pub use adam::{adam_precond_update, variable_pbrwp_step, AdamPrecondState, PbrwpAdam};
pub use langevin::{
    mala_step, mla_step, mla_update, myula_step, myula_update, ula_step, ula_update, Mala, Mla,
    Myula, Ula, soft_threshold,
};
pub use pbrwp::{brwp_step, pbrwp_step, Pbrwp};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::kernel::ZMethod;
use crate::linalg::PreconditionerSpec;
use crate::potentials::Potential;

/// Coordinates beyond this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Fixed(f64),
    /// `d^{-1/2}`, which keeps the interaction term from dominating in high dimension.
    Auto,
}

impl Beta {
    pub fn resolve(self, dim: usize) -> f64 {
        match self {
            Beta::Fixed(b) => b,
            Beta::Auto => 1.0 / (dim as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub eta: f64,
    pub t: f64,
    pub beta: Beta,
    pub preconditioner: PreconditionerSpec,
    pub z_method: ZMethod,
    pub iters: u64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(eta: f64, t: f64, beta: f64) -> Self {
        Self {
            eta,
            t,
            beta: Beta::Fixed(beta),
            preconditioner: PreconditionerSpec::Identity,
            z_method: ZMethod::Laplace,
            iters: 0,
            seed: 0,
        }
    }

    pub fn with_preconditioner(mut self, p: PreconditionerSpec) -> Self {
        self.preconditioner = p;
        self
    }

    pub fn with_z_method(mut self, z: ZMethod) -> Self {
        self.z_method = z;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        positive("eta", self.eta)?;
        positive("T", self.t)?;
        if let Beta::Fixed(b) = self.beta {
            positive("beta", b)?;
        }
        if let PreconditionerSpec::Diagonal(d) = &self.preconditioner {
            if d.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(
                    "diagonal preconditioner entries must be positive".into(),
                ));
            }
        }
        self.z_method.validate()
    }
}

/// One step `X^(k) -> X^(k+1)` of some particle method.
pub trait Sampler {
    fn name(&self) -> &'static str;
    fn step(
        &mut self,
        x: &ParticleEnsemble,
        p: &dyn Potential,
        iteration: u64,
    ) -> Result<ParticleEnsemble>;
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

pub(crate) fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")))
    }
}

pub(crate) fn check_potential(x: &ParticleEnsemble, p: &dyn Potential) -> Result<()> {
    crate::error::check_dim(p.dim(), x.dim())
}
