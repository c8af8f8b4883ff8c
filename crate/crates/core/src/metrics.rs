//! Ensemble diagnostics.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::linalg::SpdMatrix;

/// Grid nodes with KDE density at or below this are skipped.
const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `h = sigma_hat * N^{-1/6}` per axis.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlEstimateConfig {
    /// `(grid_min, grid_max)`; `None` spans the particles plus four bandwidths.
    pub grid: Option<([f64; 2], [f64; 2])>,
    pub resolution: usize,
    pub bandwidth: Bandwidth,
}

impl Default for KlEstimateConfig {
    fn default() -> Self {
        Self {
            grid: None,
            resolution: 200,
            bandwidth: Bandwidth::Silverman,
        }
    }
}

impl KlEstimateConfig {
    pub fn with_grid(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self {
            grid: Some((lo, hi)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be at least 16, got {}",
                self.resolution
            )));
        }
        if let Some((lo, hi)) = self.grid {
            if !(0..2).all(|a| hi[a] > lo[a]) {
                return Err(Error::InvalidParameter("grid_max must exceed grid_min".into()));
            }
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

fn axis_std(pts: &[[f64; 2]], a: usize) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mean = pts.iter().map(|p| p[a]).sum::<f64>() / n;
    (pts.iter().map(|p| (p[a] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Forward KL from a Gaussian-product KDE of a 2-d ensemble to an
/// unnormalized target, both normalized by trapezoid quadrature on a grid.
pub fn kl_estimate_kde(
    x: &ParticleEnsemble,
    log_target_unnorm: &(dyn Fn(&[f64]) -> f64 + Sync),
    cfg: &KlEstimateConfig,
) -> Result<f64> {
    check_dim(2, x.dim())?;
    cfg.validate()?;
    let n = x.n();
    let r = cfg.resolution;
    // canonical order makes every sum below independent of particle order
    let mut pts: Vec<[f64; 2]> = x.particles().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));

    let mut h = [0.0; 2];
    for (a, ha) in h.iter_mut().enumerate() {
        *ha = match cfg.bandwidth {
            Bandwidth::Fixed(v) => v,
            Bandwidth::Silverman => axis_std(&pts, a) * (n as f64).powf(-1.0 / 6.0),
        };
    }
    let (lo, hi) = match cfg.grid {
        Some(g) => g,
        None => {
            let mut lo = [0.0; 2];
            let mut hi = [0.0; 2];
            for a in 0..2 {
                // a collapsed ensemble still needs a grid of positive width
                let ha = if h[a] > 0.0 { h[a] } else { 1e-3 };
                h[a] = ha;
                let col = pts.iter().map(|p| p[a]);
                let (mn, mx) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), v| (l.min(v), u.max(v)));
                lo[a] = mn - 4.0 * ha;
                hi[a] = mx + 4.0 * ha;
            }
            (lo, hi)
        }
    };
    let step = [(hi[0] - lo[0]) / (r - 1) as f64, (hi[1] - lo[1]) / (r - 1) as f64];
    for a in 0..2 {
        h[a] = h[a].max(step[a]);
    }
    let node = |a: usize, k: usize| lo[a] + k as f64 * step[a];
    let weight = |k: usize| if k == 0 || k == r - 1 { 0.5 } else { 1.0 };
    let cell = step[0] * step[1];

    // separable kernel tables phi[a][k * n + i]
    let table = |a: usize| -> Vec<f64> {
        let c = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h[a]);
        let mut t = Vec::with_capacity(r * n);
        for k in 0..r {
            let g = node(a, k);
            t.extend(pts.iter().map(|p| c * (-0.5 * ((g - p[a]) / h[a]).powi(2)).exp()));
        }
        t
    };
    let (t0, t1) = (table(0), table(1));

    // per grid row: (trapezoid mass of p, sum w p log p, sum w p lq, target terms)
    struct RowSums {
        p_mass: f64,
        p_log_p: f64,
        p_log_q: f64,
        q_max: f64,
        q_terms: Vec<(f64, f64)>,
    }
    let rows: Vec<RowSums> = (0..r)
        .into_par_iter()
        .map(|k0| {
            let a = &t0[k0 * n..(k0 + 1) * n];
            let mut s = RowSums {
                p_mass: 0.0,
                p_log_p: 0.0,
                p_log_q: 0.0,
                q_max: f64::NEG_INFINITY,
                q_terms: Vec::with_capacity(r),
            };
            for k1 in 0..r {
                let b = &t1[k1 * n..(k1 + 1) * n];
                let p = a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / n as f64;
                let w = weight(k0) * weight(k1);
                let lq = log_target_unnorm(&[node(0, k0), node(1, k1)]);
                if lq.is_finite() {
                    s.q_max = s.q_max.max(lq);
                    s.q_terms.push((w, lq));
                }
                if p > DENSITY_FLOOR {
                    s.p_mass += w * p;
                    s.p_log_p += w * p * p.ln();
                    s.p_log_q += w * p * lq;
                }
            }
            s
        })
        .collect();

    let (mut p_mass, mut p_log_p, mut p_log_q) = (0.0, 0.0, 0.0);
    let mut q_max = f64::NEG_INFINITY;
    for s in &rows {
        p_mass += s.p_mass;
        p_log_p += s.p_log_p;
        p_log_q += s.p_log_q;
        q_max = q_max.max(s.q_max);
    }
    let mut q_sum = 0.0;
    for s in &rows {
        for (w, lq) in &s.q_terms {
            q_sum += w * (lq - q_max).exp();
        }
    }
    let log_q_mass = q_max + q_sum.ln() + cell.ln();
    if !(q_sum > 0.0) || log_q_mass < (1e-12f64).ln() {
        return Err(Error::EmptyGrid(log_q_mass));
    }
    if !(p_mass > 0.0) {
        return Err(Error::EmptyGrid(f64::NEG_INFINITY));
    }
    let p_norm = p_mass * cell;
    // sum over nodes of w cell (p/P) [log(p/P) - (lq - log Zq)]
    let kl = (p_log_p * cell) / p_norm - p_norm.ln() - (p_log_q * cell) / p_norm + log_q_mass;
    Ok(kl.max(0.0))
}

/// Sample mean and unbiased sample covariance.
pub fn ensemble_moments(x: &ParticleEnsemble) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if x.n() < 2 {
        return Err(Error::InvalidParameter("covariance needs at least two particles".into()));
    }
    let (d, n) = (x.dim(), x.n() as f64);
    let mut mean = vec![0.0; d];
    for p in x.particles() {
        for k in 0..d {
            mean[k] += p[k];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = DMatrix::zeros(d, d);
    for p in x.particles() {
        for a in 0..d {
            for b in 0..=a {
                cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((mean, cov))
}

fn norm_with(v: &[f64], m: Option<&SpdMatrix>) -> f64 {
    match m {
        Some(m) => m.inv_quad_form(v).sqrt(),
        None => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
    }
}

/// Norm of the ensemble mean per snapshot; `M` selects `|.|_M` instead of Euclidean.
pub fn mean_norm_trajectory(snapshots: &[ParticleEnsemble], m: Option<&SpdMatrix>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(snapshots.len());
    for x in snapshots {
        if let Some(m) = m {
            check_dim(m.dim(), x.dim())?;
        }
        if let Some(first) = snapshots.first() {
            check_dim(first.dim(), x.dim())?;
        }
        out.push(norm_with(&mean_of(x), m));
    }
    Ok(out)
}

fn mean_of(x: &ParticleEnsemble) -> Vec<f64> {
    let mut mean = vec![0.0; x.dim()];
    for p in x.particles() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter().map(|m| m / x.n() as f64).collect()
}

/// Largest particle norm, Euclidean or in `|.|_M`.
pub fn max_particle_norm(x: &ParticleEnsemble, m: Option<&SpdMatrix>) -> f64 {
    x.particles().map(|p| norm_with(p, m)).fold(0.0, f64::max)
}

/// Trace of the sample covariance (zero for a single particle).
pub fn cov_trace(x: &ParticleEnsemble) -> f64 {
    ensemble_moments(x).map_or(0.0, |(_, c)| c.trace())
}
