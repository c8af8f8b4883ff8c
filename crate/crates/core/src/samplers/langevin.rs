//! Langevin baselines. Each particle draws its noise from its own
//! `(seed, iteration, particle)` substream.

use rand::Rng;
use rayon::prelude::*;

use super::{check_potential, nonnegative, positive, Sampler, DIVERGENCE_LIMIT};
use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Result};
use crate::linalg::{standard_normal_vec, SpdMatrix};
use crate::potentials::Potential;
use crate::rng::{substream, Stream};

/// `x - tau grad + sqrt(2 tau / beta) xi`.
pub fn ula_update(x: &[f64], grad: &[f64], tau: f64, beta: f64, xi: &[f64]) -> Vec<f64> {
    let s = (2.0 * tau / beta).sqrt();
    x.iter()
        .zip(grad)
        .zip(xi)
        .map(|((x, g), e)| x - tau * g + s * e)
        .collect()
}

/// `x - tau M grad + sqrt(2 tau / beta) L xi` with `L L^T = M`.
pub fn mla_update(
    x: &[f64],
    grad: &[f64],
    tau: f64,
    beta: f64,
    m: &SpdMatrix,
    xi: &[f64],
) -> Vec<f64> {
    let s = (2.0 * tau / beta).sqrt();
    let mg = m.mul_vec(grad);
    let lxi = m.chol_mul(xi);
    x.iter()
        .zip(&mg)
        .zip(&lxi)
        .map(|((x, g), e)| x - tau * g + s * e)
        .collect()
}

/// `(1 - tau/theta) x - tau grad_f + (tau/theta) prox + sqrt(2 tau) xi`, with
/// `prox = prox_{theta g}(x)`.
pub fn myula_update(
    x: &[f64],
    grad_f: &[f64],
    prox: &[f64],
    tau: f64,
    theta: f64,
    xi: &[f64],
) -> Vec<f64> {
    let r = tau / theta;
    let s = (2.0 * tau).sqrt();
    (0..x.len())
        .map(|k| (1.0 - r) * x[k] - tau * grad_f[k] + r * prox[k] + s * xi[k])
        .collect()
}

fn map_particles(
    x: &ParticleEnsemble,
    iteration: u64,
    f: impl Fn(usize, &[f64]) -> Vec<f64> + Sync,
) -> Result<ParticleEnsemble> {
    let d = x.dim();
    let mut data = vec![0.0; x.as_slice().len()];
    data.par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, out)| out.copy_from_slice(&f(i, x.particle(i))));
    let out = ParticleEnsemble::from_vec(d, x.n(), data)?;
    out.check_finite(iteration + 1, DIVERGENCE_LIMIT)?;
    Ok(out)
}

pub fn ula_step(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    tau: f64,
    beta: f64,
    seed: u64,
    iteration: u64,
) -> Result<ParticleEnsemble> {
    check_potential(x, p)?;
    nonnegative("tau", tau)?;
    positive("beta", beta)?;
    map_particles(x, iteration, |i, xi| {
        let mut rng = substream(seed, Stream::Langevin, iteration, i as u64);
        let noise = standard_normal_vec(&mut rng, xi.len());
        ula_update(xi, &p.grad(xi), tau, beta, &noise)
    })
}

pub fn mla_step(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    tau: f64,
    beta: f64,
    m: &SpdMatrix,
    seed: u64,
    iteration: u64,
) -> Result<ParticleEnsemble> {
    check_potential(x, p)?;
    check_dim(m.dim(), x.dim())?;
    nonnegative("tau", tau)?;
    positive("beta", beta)?;
    map_particles(x, iteration, |i, xi| {
        let mut rng = substream(seed, Stream::Langevin, iteration, i as u64);
        let noise = standard_normal_vec(&mut rng, xi.len());
        mla_update(xi, &p.grad(xi), tau, beta, m, &noise)
    })
}

/// Metropolis-adjusted Langevin with an identity proposal covariance.
/// Returns the new ensemble and the fraction of accepted proposals.
pub fn mala_step(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    tau: f64,
    beta: f64,
    seed: u64,
    iteration: u64,
) -> Result<(ParticleEnsemble, f64)> {
    check_potential(x, p)?;
    positive("tau", tau)?;
    positive("beta", beta)?;
    let d = x.dim();
    let results: Vec<(Vec<f64>, bool)> = (0..x.n())
        .into_par_iter()
        .map(|i| {
            let xi = x.particle(i);
            let mut rng = substream(seed, Stream::Langevin, iteration, i as u64);
            let noise = standard_normal_vec(&mut rng, d);
            let gx = p.grad(xi);
            let y = ula_update(xi, &gx, tau, beta, &noise);
            let gy = p.grad(&y);
            // log q(a | b) up to a constant: -beta |a - b + tau grad(b)|^2 / (4 tau)
            let fwd: f64 = (0..d).map(|k| (y[k] - xi[k] + tau * gx[k]).powi(2)).sum();
            let bwd: f64 = (0..d).map(|k| (xi[k] - y[k] + tau * gy[k]).powi(2)).sum();
            let log_alpha = -beta * p.value(&y) + beta * p.value(xi) - beta * bwd / (4.0 * tau)
                + beta * fwd / (4.0 * tau);
            let mut urng = substream(seed, Stream::Accept, iteration, i as u64);
            let u: f64 = urng.random();
            if log_alpha >= 0.0 || u.ln() < log_alpha {
                (y, true)
            } else {
                (xi.to_vec(), false)
            }
        })
        .collect();
    let accepted = results.iter().filter(|r| r.1).count();
    let mut data = Vec::with_capacity(d * x.n());
    for (p, _) in results {
        data.extend(p);
    }
    let out = ParticleEnsemble::from_vec(d, x.n(), data)?;
    out.check_finite(iteration + 1, DIVERGENCE_LIMIT)?;
    Ok((out, accepted as f64 / x.n() as f64))
}

/// Moreau-Yosida regularized ULA for `f + g`, with `prox_g(x, theta)`
/// returning `prox_{theta g}(x)`. Always runs at unit inverse temperature.
pub fn myula_step(
    x: &ParticleEnsemble,
    grad_f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    prox_g: &(dyn Fn(&[f64], f64) -> Vec<f64> + Sync),
    tau: f64,
    theta: f64,
    seed: u64,
    iteration: u64,
) -> Result<ParticleEnsemble> {
    nonnegative("tau", tau)?;
    positive("theta", theta)?;
    map_particles(x, iteration, |i, xi| {
        let mut rng = substream(seed, Stream::Langevin, iteration, i as u64);
        let noise = standard_normal_vec(&mut rng, xi.len());
        myula_update(xi, &grad_f(xi), &prox_g(xi, theta), tau, theta, &noise)
    })
}

#[derive(Debug, Clone)]
pub struct Ula {
    pub tau: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Sampler for Ula {
    fn name(&self) -> &'static str {
        "ula"
    }

    fn step(&mut self, x: &ParticleEnsemble, p: &dyn Potential, k: u64) -> Result<ParticleEnsemble> {
        ula_step(x, p, self.tau, self.beta, self.seed, k)
    }
}

#[derive(Debug, Clone)]
pub struct Mla {
    pub tau: f64,
    pub beta: f64,
    pub m: SpdMatrix,
    pub seed: u64,
}

impl Sampler for Mla {
    fn name(&self) -> &'static str {
        "mla"
    }

    fn step(&mut self, x: &ParticleEnsemble, p: &dyn Potential, k: u64) -> Result<ParticleEnsemble> {
        mla_step(x, p, self.tau, self.beta, &self.m, self.seed, k)
    }
}

#[derive(Debug, Clone)]
pub struct Mala {
    pub tau: f64,
    pub beta: f64,
    pub seed: u64,
    /// Acceptance rate of the latest step.
    pub last_accept: f64,
}

impl Sampler for Mala {
    fn name(&self) -> &'static str {
        "mala"
    }

    fn step(&mut self, x: &ParticleEnsemble, p: &dyn Potential, k: u64) -> Result<ParticleEnsemble> {
        let (y, a) = mala_step(x, p, self.tau, self.beta, self.seed, k)?;
        self.last_accept = a;
        Ok(y)
    }
}

/// MYULA on the potential as `f` with the soft-threshold prox of
/// `g = lambda |x|_1`; `lambda = 0` makes the prox the identity.
#[derive(Debug, Clone)]
pub struct Myula {
    pub tau: f64,
    pub theta: f64,
    pub lambda: f64,
    pub seed: u64,
}

/// Soft-thresholding, the prox of `lambda * theta * |x|_1`.
pub fn soft_threshold(x: &[f64], level: f64) -> Vec<f64> {
    x.iter()
        .map(|v| v.signum() * (v.abs() - level).max(0.0))
        .collect()
}

impl Sampler for Myula {
    fn name(&self) -> &'static str {
        "myula"
    }

    fn step(&mut self, x: &ParticleEnsemble, p: &dyn Potential, k: u64) -> Result<ParticleEnsemble> {
        check_potential(x, p)?;
        let lambda = self.lambda;
        let grad = |v: &[f64]| p.grad(v);
        let prox = move |v: &[f64], theta: f64| soft_threshold(v, lambda * theta);
        myula_step(x, &grad, &prox, self.tau, self.theta, self.seed, k)
    }
}
