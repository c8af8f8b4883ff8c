use crate::error::{check_dim, Error, Result};
use crate::linalg::GaussianDist;
use crate::rng::{substream, Stream};

/// A `d x N` matrix of particle positions, one particle per column.
///
/// Stored column-major so each particle is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    n: usize,
    data: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Self {
            dim,
            n,
            data: vec![0.0; dim * n],
        }
    }

    /// Builds from column-major data.
    pub fn from_vec(dim: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::InvalidParameter(
                "ensemble needs at least one particle and one dimension".into(),
            ));
        }
        check_dim(dim * n, data.len())?;
        Ok(Self { dim, n, data })
    }

    pub fn from_particles(particles: &[Vec<f64>]) -> Result<Self> {
        let n = particles.len();
        let dim = particles.first().map_or(0, |p| p.len());
        let mut data = Vec::with_capacity(dim * n);
        for p in particles {
            check_dim(dim, p.len())?;
            data.extend_from_slice(p);
        }
        Self::from_vec(dim, n, data)
    }

    /// `n` i.i.d. draws from `g`, particle `i` using its own init substream.
    pub fn sample_gaussian(g: &GaussianDist, n: usize, seed: u64) -> Result<Self> {
        let mut data = Vec::with_capacity(g.dim() * n);
        for i in 0..n {
            let mut rng = substream(seed, Stream::Init, 0, i as u64);
            data.extend(g.sample(&mut rng));
        }
        Self::from_vec(g.dim(), n, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particle_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Errors on the first non-finite coordinate or one above `limit` in magnitude.
    pub fn check_finite(&self, iteration: u64, limit: f64) -> Result<()> {
        for (i, p) in self.particles().enumerate() {
            if let Some(&value) = p.iter().find(|v| !v.is_finite() || v.abs() > limit) {
                return Err(Error::Diverged {
                    iteration,
                    particle: i,
                    value,
                });
            }
        }
        Ok(())
    }
}
