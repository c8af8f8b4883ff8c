//! Per-particle diagonal preconditioners from Adam-style second moments, and
//! the proximal particle step with a different `M_j` for every particle.

use rayon::prelude::*;

use super::{check_potential, positive, Sampler, SamplerConfig, DIVERGENCE_LIMIT};
use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::linalg::SpdMatrix;
use crate::potentials::Potential;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamPrecondState {
    pub v: Vec<f64>,
    pub k: u64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamPrecondState {
    pub fn new(dim: usize) -> Self {
        Self {
            v: vec![0.0; dim],
            k: 0,
            beta2: 0.999,
            eps: 1e-3,
        }
    }

    /// Folds in one gradient and returns `diag(1 / (sqrt(v_hat) + eps))`.
    pub fn update(&mut self, g: &[f64]) -> Result<SpdMatrix> {
        check_dim(self.v.len(), g.len())?;
        self.k += 1;
        for (v, gi) in self.v.iter_mut().zip(g) {
            *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
        }
        let correction = 1.0 - self.beta2.powi(self.k.min(i32::MAX as u64) as i32);
        SpdMatrix::from_diagonal(
            self.v
                .iter()
                .map(|v| 1.0 / ((v / correction).sqrt() + self.eps))
                .collect(),
        )
    }
}

/// Functional form of [`AdamPrecondState::update`].
pub fn adam_precond_update(
    state: &AdamPrecondState,
    g: &[f64],
) -> Result<(AdamPrecondState, SpdMatrix)> {
    let mut next = state.clone();
    let m = next.update(g)?;
    Ok((next, m))
}

/// Proximal particle step with per-particle preconditioners and the Laplace
/// normalizer built in:
/// `W_ij = -beta |x_i - x_j|_{M_j}^2 / (4T) - log det(M_j)/2 + beta V(x_j)/2`,
/// drift `M_i grad V(x_i)`.
pub fn variable_pbrwp_step(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    per_particle_m: &[SpdMatrix],
    cfg: &SamplerConfig,
    iteration: u64,
) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let grads: Vec<Vec<f64>> = (0..x.n()).into_par_iter().map(|i| p.grad(x.particle(i))).collect();
    let beta = cfg.beta.resolve(x.dim());
    variable_step_with_grads(x, p, per_particle_m, &grads, cfg.eta, cfg.t, beta, iteration)
}

#[allow(clippy::too_many_arguments)]
fn variable_step_with_grads(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    ms: &[SpdMatrix],
    grads: &[Vec<f64>],
    eta: f64,
    t: f64,
    beta: f64,
    iteration: u64,
) -> Result<ParticleEnsemble> {
    check_potential(x, p)?;
    positive("beta", beta)?;
    let (d, n) = (x.dim(), x.n());
    if ms.len() != n {
        return Err(Error::InvalidParameter(format!(
            "expected one preconditioner per particle ({n}), got {}",
            ms.len()
        )));
    }
    for m in ms {
        check_dim(d, m.dim())?;
    }
    let offsets: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| -0.5 * ms[j].log_det() + 0.5 * beta * p.value(x.particle(j)))
        .collect();
    let coef = beta / (4.0 * t);
    let (a, c) = (0.5 * eta, eta / (2.0 * t));

    let mut data = vec![0.0; d * n];
    data.par_chunks_mut(d).enumerate().for_each_init(
        || (vec![0.0; n], vec![0.0; d]),
        |(row, delta), (i, out)| {
            let xi = x.particle(i);
            for (j, w) in row.iter_mut().enumerate() {
                let xj = x.particle(j);
                for k in 0..d {
                    delta[k] = xi[k] - xj[k];
                }
                *w = -coef * ms[j].inv_quad_form(delta) + offsets[j];
            }
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut diff = vec![0.0; d];
            let mut total = 0.0;
            for (j, w) in row.iter().enumerate() {
                let e = (w - mx).exp();
                if e == 0.0 {
                    continue;
                }
                total += e;
                let xj = x.particle(j);
                for k in 0..d {
                    diff[k] += e * (xi[k] - xj[k]);
                }
            }
            let mg = ms[i].mul_vec(&grads[i]);
            for k in 0..d {
                out[k] = xi[k] - a * mg[k] + c * (diff[k] / total);
            }
        },
    );
    let out = ParticleEnsemble::from_vec(d, n, data)?;
    out.check_finite(iteration + 1, DIVERGENCE_LIMIT)?;
    Ok(out)
}

/// Variable-preconditioner proximal sampler: every iteration each particle
/// feeds its current gradient once to its own Adam state, then steps.
#[derive(Debug, Clone)]
pub struct PbrwpAdam {
    eta: f64,
    t: f64,
    beta: f64,
    states: Vec<AdamPrecondState>,
}

impl PbrwpAdam {
    pub fn new(eta: f64, t: f64, beta: f64) -> Result<Self> {
        positive("eta", eta)?;
        positive("T", t)?;
        positive("beta", beta)?;
        Ok(Self {
            eta,
            t,
            beta,
            states: Vec::new(),
        })
    }

    pub fn states(&self) -> &[AdamPrecondState] {
        &self.states
    }
}

impl Sampler for PbrwpAdam {
    fn name(&self) -> &'static str {
        "pbrwp_adam"
    }

    fn step(
        &mut self,
        x: &ParticleEnsemble,
        p: &dyn Potential,
        iteration: u64,
    ) -> Result<ParticleEnsemble> {
        check_potential(x, p)?;
        if self.states.len() != x.n() {
            self.states = vec![AdamPrecondState::new(x.dim()); x.n()];
        }
        let grads: Vec<Vec<f64>> = (0..x.n()).into_par_iter().map(|i| p.grad(x.particle(i))).collect();
        let ms = self
            .states
            .iter_mut()
            .zip(&grads)
            .map(|(s, g)| s.update(g))
            .collect::<Result<Vec<_>>>()?;
        variable_step_with_grads(x, p, &ms, &grads, self.eta, self.t, self.beta, iteration)
    }
}
