//! Normalizing constants, the interaction matrix and its row softmax.
//!
//! The proximal kernel is
//! `K(x, y) = exp(-beta/2 * (V(x) + |x - y|_M^2 / (2T))) / Z(y)`,
//! and the particle update only ever needs `log Z` at the particles.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{scaled_norm_sq, standard_normal_vec, SpdMatrix};
use crate::potentials::Potential;
use crate::rng::{substream, Stream};

/// How `log Z(y)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZMethod {
    MonteCarlo { n_samples: usize },
    /// Small-`T` asymptotic; drops the `(beta, T)` constant, which is the same for every particle.
    Laplace,
    /// Closed form, only for quadratic potentials.
    ExactQuadratic,
}

impl ZMethod {
    pub fn validate(&self) -> Result<()> {
        match self {
            ZMethod::MonteCarlo { n_samples: 0 } => Err(Error::InvalidParameter(
                "z_samples must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Monte Carlo estimate of `log Z(y)`, drawing `z ~ N(y, 2T/beta M)`.
pub fn log_z_monte_carlo<R: Rng + ?Sized>(
    y: &[f64],
    p: &dyn Potential,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    n: usize,
    rng: &mut R,
) -> f64 {
    log_z_monte_carlo_detailed(y, p, m, t, beta, n, rng).0
}

/// Like [`log_z_monte_carlo`] but also returns the relative standard error of
/// the underlying estimate of `Z` (not of `log Z`).
pub fn log_z_monte_carlo_detailed<R: Rng + ?Sized>(
    y: &[f64],
    p: &dyn Potential,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    n: usize,
    rng: &mut R,
) -> (f64, f64) {
    let n = n.max(1);
    let d = y.len();
    let scale = (2.0 * t / beta).sqrt();
    let mut logw = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = standard_normal_vec(rng, d);
        let z: Vec<f64> = m
            .chol_mul(&xi)
            .iter()
            .zip(y)
            .map(|(e, yk)| yk + scale * e)
            .collect();
        logw.push(-0.5 * beta * p.value(&z));
    }
    let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s1, mut s2) = (0.0, 0.0);
    for lw in &logw {
        let w = (lw - mx).exp();
        s1 += w;
        s2 += w * w;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let log_mean = mx + mean.ln();
    let rel_se = if n > 1 {
        let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
        var.sqrt() / (mean * nf.sqrt())
    } else {
        f64::INFINITY
    };
    let log_z = 0.5 * d as f64 * (4.0 * PI * t / beta).ln() + 0.5 * m.log_det() + log_mean;
    (log_z, rel_se)
}

/// Laplace approximation `-beta V(y)/2 + log det(M)/2`.
pub fn log_z_laplace(y: &[f64], p: &dyn Potential, m: &SpdMatrix, beta: f64) -> f64 {
    -0.5 * beta * p.value(y) + 0.5 * m.log_det()
}

/// Closed-form `log Z` for `V(z) = z^T Sigma^{-1} z / 2`.
///
/// Completing the square, the exponent is `-z^T A z / 2 + b^T z - c` with
/// `A = beta/2 (Sigma^{-1} + M^{-1}/T)`, `b = beta/(2T) M^{-1} y` and
/// `c = beta/(4T) y^T M^{-1} y`.
#[derive(Debug, Clone)]
pub struct QuadraticLogZ {
    a: SpdMatrix,
    m: SpdMatrix,
    t: f64,
    beta: f64,
    constant: f64,
}

impl QuadraticLogZ {
    pub fn new(sigma: &SpdMatrix, m: &SpdMatrix, t: f64, beta: f64) -> Result<Self> {
        check_dim(sigma.dim(), m.dim())?;
        check_positive("T", t)?;
        check_positive("beta", beta)?;
        let d = sigma.dim();
        let id = DMatrix::<f64>::identity(d, d);
        let sigma_inv = sigma.solve_matrix(&id);
        let m_inv = m.solve_matrix(&id);
        let a = SpdMatrix::new((sigma_inv + m_inv / t) * (0.5 * beta))?;
        let constant = 0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * a.log_det();
        Ok(Self {
            a,
            m: m.clone(),
            t,
            beta,
            constant,
        })
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let k = self.beta / (2.0 * self.t);
        let m_inv_y = self.m.solve(y);
        let b: Vec<f64> = m_inv_y.iter().map(|v| k * v).collect();
        let c = 0.5 * k * y.iter().zip(&m_inv_y).map(|(a, b)| a * b).sum::<f64>();
        self.constant + 0.5 * self.a.inv_quad_form(&b) - c
    }
}

pub fn log_z_exact_quadratic(
    y: &[f64],
    sigma: &SpdMatrix,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
) -> Result<f64> {
    check_dim(sigma.dim(), y.len())?;
    Ok(QuadraticLogZ::new(sigma, m, t, beta)?.eval(y))
}

/// `log Z` at every particle. Monte Carlo draws come from per-particle
/// substreams keyed by `(seed, iteration, particle)`.
#[allow(clippy::too_many_arguments)]
pub fn log_normalizers(
    x: &ParticleEnsemble,
    p: &dyn Potential,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    method: ZMethod,
    seed: u64,
    iteration: u64,
) -> Result<Vec<f64>> {
    check_dim(p.dim(), x.dim())?;
    check_dim(m.dim(), x.dim())?;
    method.validate()?;
    match method {
        ZMethod::Laplace => Ok(x.particles().map(|y| log_z_laplace(y, p, m, beta)).collect()),
        ZMethod::ExactQuadratic => {
            let q = p.as_quadratic().ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "exact_quadratic normalizing constant needs a quadratic potential, got {}",
                    p.name()
                ))
            })?;
            let lz = QuadraticLogZ::new(q.sigma(), m, t, beta)?;
            Ok(x.particles().map(|y| lz.eval(y)).collect())
        }
        ZMethod::MonteCarlo { n_samples } => Ok((0..x.n())
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(seed, Stream::ZEstimate, iteration, j as u64);
                log_z_monte_carlo(x.particle(j), p, m, t, beta, n_samples, &mut rng)
            })
            .collect()),
    }
}

/// Particle coordinates premultiplied by the inverse Cholesky factor of `M`,
/// so that `|x_i - x_j|_M^2 = |y_i - y_j|^2`. Stored coordinate-major so row
/// sweeps run over contiguous memory.
#[derive(Debug, Clone)]
pub struct WhitenedEnsemble {
    n: usize,
    coords: Vec<Vec<f64>>,
}

impl WhitenedEnsemble {
    pub fn new(x: &ParticleEnsemble, m: &SpdMatrix) -> Self {
        let mut coords = vec![Vec::with_capacity(x.n()); x.dim()];
        for p in x.particles() {
            for (c, v) in coords.iter_mut().zip(m.whiten(p)) {
                c.push(v);
            }
        }
        Self { n: x.n(), coords }
    }

    /// Row `i` of the interaction matrix, written into `out`.
    #[inline(always)]
    pub fn interaction_row(&self, i: usize, coef: f64, log_z: &[f64], out: &mut [f64]) {
        let out = &mut out[..self.n];
        out.fill(0.0);
        for c in &self.coords {
            let yi = c[i];
            for (o, yj) in out.iter_mut().zip(c) {
                let e = yi - yj;
                *o += e * e;
            }
        }
        for (o, lz) in out.iter_mut().zip(&log_z[..self.n]) {
            *o = -coef * *o - lz;
        }
    }
}

/// `exp(x)` for `x <= 0`, branch-free so that row sweeps vectorize. Arguments
/// below `-708` return 0, which is below any weight that can matter next to a
/// row maximum of 1. Relative error is within a few ulp of `f64::exp`.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_0e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let xc = x.max(-708.0);
    let k = xc * LOG2E + SHIFTER;
    let n = k - SHIFTER;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    // degree-13 Taylor polynomial in Estrin form; |r| <= ln2/2
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let p01 = 1.0 + r;
    let p23 = 0.5 + r * (1.0 / 6.0);
    let p45 = 1.0 / 24.0 + r * (1.0 / 120.0);
    let p67 = 1.0 / 720.0 + r * (1.0 / 5_040.0);
    let p89 = 1.0 / 40_320.0 + r * (1.0 / 362_880.0);
    let p1011 = 1.0 / 3_628_800.0 + r * (1.0 / 39_916_800.0);
    let p1213 = 1.0 / 479_001_600.0 + r * (1.0 / 6_227_020_800.0);
    let lo = (p01 + p23 * r2) + (p45 + p67 * r2) * r4;
    let hi = (p89 + p1011 * r2) + p1213 * r4;
    let p = lo + hi * r8;
    let bits = k.to_bits().wrapping_sub(SHIFTER.to_bits()).wrapping_add(1023) << 52;
    let v = p * f64::from_bits(bits);
    if x < -708.0 {
        0.0
    } else {
        v
    }
}

/// `sum_j a_j (x - b_j)` in four fixed interleaved lanes. The grouping does
/// not depend on the instruction set, so results are reproducible.
#[inline(always)]
fn lane_dot_diff(a: &[f64], x: f64, b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (u, v) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += u[l] * (x - v[l]);
        }
    }
    for (l, (u, v)) in ra.iter().zip(rb).enumerate() {
        acc[l] += u * (x - v);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline(always)]
fn lane_sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let ra = ca.remainder();
    for u in ca {
        for l in 0..4 {
            acc[l] += u[l];
        }
    }
    for (l, u) in ra.iter().enumerate() {
        acc[l] += u;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline(always)]
fn lane_max(a: &[f64]) -> f64 {
    let mut acc = [f64::NEG_INFINITY; 4];
    let ca = a.chunks_exact(4);
    let ra = ca.remainder();
    for u in ca {
        for l in 0..4 {
            acc[l] = if u[l] > acc[l] { u[l] } else { acc[l] };
        }
    }
    for (l, u) in ra.iter().enumerate() {
        acc[l] = acc[l].max(*u);
    }
    acc[0].max(acc[1]).max(acc[2].max(acc[3]))
}

#[inline(always)]
fn softmax_diff_row_impl(
    white: &WhitenedEnsemble,
    cols: &[Vec<f64>],
    coef: f64,
    log_z: &[f64],
    i: usize,
    row: &mut [f64],
    out: &mut [f64],
) {
    let row = &mut row[..white.n];
    white.interaction_row(i, coef, log_z, row);
    let mx = lane_max(row);
    for w in row.iter_mut() {
        *w = exp_nonpositive(*w - mx);
    }
    let total = lane_sum(row);
    for (o, c) in out.iter_mut().zip(cols) {
        *o = lane_dot_diff(row, c[i], c) / total;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn softmax_diff_row_avx2(
    white: &WhitenedEnsemble,
    cols: &[Vec<f64>],
    coef: f64,
    log_z: &[f64],
    i: usize,
    row: &mut [f64],
    out: &mut [f64],
) {
    softmax_diff_row_impl(white, cols, coef, log_z, i, row, out)
}

/// `out = sum_j s_ij (x_i - x_j)` with `s_i = softmax(W_i)`, streaming row `i`
/// of `W` through the scratch buffer `row`. `cols` is the coordinate-major
/// ensemble. Identical results with or without wide vector units.
pub(crate) fn softmax_diff_row(
    white: &WhitenedEnsemble,
    cols: &[Vec<f64>],
    coef: f64,
    log_z: &[f64],
    i: usize,
    row: &mut [f64],
    out: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { softmax_diff_row_avx2(white, cols, coef, log_z, i, row, out) };
            return;
        }
    }
    softmax_diff_row_impl(white, cols, coef, log_z, i, row, out)
}

/// Coordinate-major copy of an ensemble.
pub(crate) fn coordinate_major(x: &ParticleEnsemble) -> Vec<Vec<f64>> {
    (0..x.dim())
        .map(|k| x.particles().map(|p| p[k]).collect())
        .collect()
}

/// Dense `N x N` log-weights `W_ij = -beta |x_i - x_j|_M^2 / (4T) - log Z(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n: usize,
    /// Row-major.
    w: Vec<f64>,
}

impl InteractionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut w = Vec::with_capacity(n * n);
        for r in rows {
            check_dim(n, r.len())?;
            w.extend(r);
        }
        Ok(Self { n, w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }
}

pub fn interaction_matrix(
    x: &ParticleEnsemble,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    log_z: &[f64],
) -> Result<InteractionMatrix> {
    check_dim(m.dim(), x.dim())?;
    check_dim(x.n(), log_z.len())?;
    let n = x.n();
    let white = WhitenedEnsemble::new(x, m);
    let coef = beta / (4.0 * t);
    let mut w = vec![0.0; n * n];
    w.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| white.interaction_row(i, coef, log_z, row));
    Ok(InteractionMatrix { n, w })
}

/// Replaces a row of log-weights by its softmax, left to right.
pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-stochastic `softmax(W)`, row-major `N x N`.
pub fn row_softmax(w: &InteractionMatrix) -> Vec<Vec<f64>> {
    (0..w.n)
        .into_par_iter()
        .map(|i| {
            let mut r = w.row(i).to_vec();
            softmax_in_place(&mut r);
            r
        })
        .collect()
}

/// Kernel value `K(x, y)` given `log Z(y)`.
#[allow(clippy::too_many_arguments)]
pub fn kernel_density(
    x: &[f64],
    y: &[f64],
    p: &dyn Potential,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    log_z_y: f64,
) -> Result<f64> {
    let d2 = scaled_norm_sq(x, y, m)?;
    Ok((-0.5 * beta * (p.value(x) + d2 / (2.0 * t)) - log_z_y).exp())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}
