use rayon::prelude::*;

use super::{check_potential, positive, Sampler, SamplerConfig, DIVERGENCE_LIMIT};
use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Result};
use crate::kernel::{coordinate_major, log_normalizers, softmax_diff_row, WhitenedEnsemble, ZMethod};
use crate::linalg::{PreconditionerSpec, SpdMatrix};
use crate::potentials::Potential;

/// Noise-free preconditioned proximal particle update
///
/// `X' = X - eta/2 M grad V(X) + eta/(2T) (X - X softmax(W)^T)`.
///
/// The only randomness is in Monte Carlo normalizing constants, drawn from
/// `(seed, iteration, particle)` substreams.
#[derive(Debug, Clone)]
pub struct Pbrwp {
    m: SpdMatrix,
    eta: f64,
    t: f64,
    beta: f64,
    z_method: ZMethod,
    seed: u64,
}

impl Pbrwp {
    pub fn new(cfg: &SamplerConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        Self::with_matrix(
            cfg.preconditioner.build(dim)?,
            cfg.eta,
            cfg.t,
            cfg.beta.resolve(dim),
            cfg.z_method,
            cfg.seed,
        )
    }

    pub fn with_matrix(
        m: SpdMatrix,
        eta: f64,
        t: f64,
        beta: f64,
        z_method: ZMethod,
        seed: u64,
    ) -> Result<Self> {
        positive("eta", eta)?;
        positive("T", t)?;
        positive("beta", beta)?;
        z_method.validate()?;
        Ok(Self {
            m,
            eta,
            t,
            beta,
            z_method,
            seed,
        })
    }

    pub fn preconditioner(&self) -> &SpdMatrix {
        &self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Column-major `M grad V(x_i)` and `sum_j s_ij (x_i - x_j)`.
    fn parts(
        &self,
        x: &ParticleEnsemble,
        p: &dyn Potential,
        iteration: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_potential(x, p)?;
        check_dim(self.m.dim(), x.dim())?;
        let (d, n) = (x.dim(), x.n());
        let log_z = log_normalizers(
            x,
            p,
            &self.m,
            self.t,
            self.beta,
            self.z_method,
            self.seed,
            iteration,
        )?;
        let white = WhitenedEnsemble::new(x, &self.m);
        let coef = self.beta / (4.0 * self.t);

        let mut drift = vec![0.0; d * n];
        drift
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, out)| out.copy_from_slice(&self.m.mul_vec(&p.grad(x.particle(i)))));

        let cols = coordinate_major(x);
        let mut diff = vec![0.0; d * n];
        diff.par_chunks_mut(d).enumerate().for_each_init(
            || vec![0.0; n],
            |row, (i, out)| softmax_diff_row(&white, &cols, coef, &log_z, i, row, out),
        );
        Ok((drift, diff))
    }

    /// Descent direction `-M grad V / 2 + (X - X softmax(W)^T) / (2T)`, so that
    /// a step is `X + eta * direction`.
    pub fn direction(
        &self,
        x: &ParticleEnsemble,
        p: &dyn Potential,
        iteration: u64,
    ) -> Result<ParticleEnsemble> {
        let (drift, diff) = self.parts(x, p, iteration)?;
        let c = 1.0 / (2.0 * self.t);
        let data = drift
            .iter()
            .zip(&diff)
            .map(|(g, s)| -0.5 * g + c * s)
            .collect();
        ParticleEnsemble::from_vec(x.dim(), x.n(), data)
    }

    pub fn step(
        &self,
        x: &ParticleEnsemble,
        p: &dyn Potential,
        iteration: u64,
    ) -> Result<ParticleEnsemble> {
        let (drift, diff) = self.parts(x, p, iteration)?;
        let a = 0.5 * self.eta;
        let c = self.eta / (2.0 * self.t);
        let data = x
            .as_slice()
            .iter()
            .zip(drift.iter().zip(&diff))
            .map(|(xv, (g, s))| xv - a * g + c * s)
            .collect();
        let out = ParticleEnsemble::from_vec(x.dim(), x.n(), data)?;
        out.check_finite(iteration + 1, DIVERGENCE_LIMIT)?;
        Ok(out)
    }
}

impl Sampler for Pbrwp {
    fn name(&self) -> &'static str {
        "pbrwp"
    }

    fn step(
        &mut self,
        x: &ParticleEnsemble,
        p: &dyn Potential,
        iteration: u64,
    ) -> Result<ParticleEnsemble> {
        Pbrwp::step(self, x, p, iteration)
    }
}

/// One proximal particle step with the configured preconditioner.
pub fn pbrwp_step(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    cfg: &SamplerConfig,
    iteration: u64,
) -> Result<ParticleEnsemble> {
    Pbrwp::new(cfg, x.dim())?.step(x, p, iteration)
}

/// [`pbrwp_step`] with the identity preconditioner.
pub fn brwp_step(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    cfg: &SamplerConfig,
    iteration: u64,
) -> Result<ParticleEnsemble> {
    let cfg = cfg.clone().with_preconditioner(PreconditionerSpec::Identity);
    pbrwp_step(x, p, &cfg, iteration)
}
