//! Target potentials `V`, with the target density proportional to `exp(-beta V)`.

use crate::linalg::SpdMatrix;

/// Norms below this make radial directions `x/|x|` collapse to zero.
const RADIAL_EPS: f64 = 1e-12;

pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
    fn name(&self) -> &'static str;

    /// Lets the exact normalizing constant and the Gaussian oracle find `Sigma`.
    fn as_quadratic(&self) -> Option<&QuadraticPotential> {
        None
    }
}

/// `V(x) = x^T Sigma^{-1} x / 2`.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    sigma: SpdMatrix,
}

impl QuadraticPotential {
    pub fn new(sigma: SpdMatrix) -> Self {
        Self { sigma }
    }

    pub fn sigma(&self) -> &SpdMatrix {
        &self.sigma
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.sigma.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.sigma.inv_quad_form(x)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.sigma.solve(x)
    }

    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn as_quadratic(&self) -> Option<&QuadraticPotential> {
        Some(self)
    }
}

/// Bimodal ring target: `V = 2(|x| - 3)^2 - 2 log(exp(-2(x1-3)^2) + exp(-2(x1+3)^2))`.
#[derive(Debug, Clone)]
pub struct TwoMoonsPotential {
    dim: usize,
}

impl TwoMoonsPotential {
    pub fn new() -> Self {
        Self { dim: 2 }
    }

    /// Same formula with the radial term taken over all `dim` coordinates.
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { dim }
    }
}

impl Default for TwoMoonsPotential {
    fn default() -> Self {
        Self::new()
    }
}

impl Potential for TwoMoonsPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        let a = -2.0 * (x[0] - 3.0).powi(2);
        let b = -2.0 * (x[0] + 3.0).powi(2);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        2.0 * (r - 3.0).powi(2) - 2.0 * lse
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        let mut g: Vec<f64> = if r < RADIAL_EPS {
            vec![0.0; x.len()]
        } else {
            let c = 4.0 * (r - 3.0) / r;
            x.iter().map(|v| c * v).collect()
        };
        // softmax weights of the two bumps, computed stably
        let a = -2.0 * (x[0] - 3.0).powi(2);
        let b = -2.0 * (x[0] + 3.0).powi(2);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let (wa, wb) = (ea / (ea + eb), eb / (ea + eb));
        g[0] += 8.0 * (wa * (x[0] - 3.0) + wb * (x[0] + 3.0));
        g
    }

    fn name(&self) -> &'static str {
        "two_moons"
    }
}

/// `V = (|S x| - radius)^2` with `S` diagonal; zero on the ellipse `|S x| = radius`.
#[derive(Debug, Clone)]
pub struct ScaledAnnulusPotential {
    scale: Vec<f64>,
    radius: f64,
}

impl ScaledAnnulusPotential {
    pub fn new(scale: Vec<f64>, radius: f64) -> Self {
        Self { scale, radius }
    }

    pub fn standard() -> Self {
        Self::new(vec![1.0, 2.0], 3.0)
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Default for ScaledAnnulusPotential {
    fn default() -> Self {
        Self::standard()
    }
}

impl Potential for ScaledAnnulusPotential {
    fn dim(&self) -> usize {
        self.scale.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let sx: Vec<f64> = x.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        (norm(&sx) - self.radius).powi(2)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let sx: Vec<f64> = x.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        let r = norm(&sx);
        if r < RADIAL_EPS {
            return vec![0.0; x.len()];
        }
        let c = 2.0 * (r - self.radius) / r;
        sx.iter().zip(&self.scale).map(|(v, s)| c * v * s).collect()
    }

    fn name(&self) -> &'static str {
        "annulus"
    }
}

/// `V = 0`; pure diffusion.
#[derive(Debug, Clone)]
pub struct ZeroPotential {
    dim: usize,
}

impl ZeroPotential {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Potential for ZeroPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn name(&self) -> &'static str {
        "zero"
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest relative error between `grad` and central differences with step `h`.
///
/// Per coordinate the error is `|g - fd| / max(|g|, |fd|, 1)`.
pub fn gradient_check(p: &dyn Potential, x: &[f64], h: f64) -> f64 {
    let g = p.grad(x);
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let up = p.value(&xp);
        xp[k] = x[k] - h;
        let down = p.value(&xp);
        xp[k] = x[k];
        let fd = (up - down) / (2.0 * h);
        let err = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}
