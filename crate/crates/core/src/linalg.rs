//! Small dense linear algebra for symmetric positive definite matrices.
//!
//! Every application of `M^{-1}` goes through triangular solves against the
//! cached Cholesky factor; inverses are never formed here. Diagonal matrices
//! keep a specialized representation since they are by far the common case
//! for preconditioners.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Relative asymmetry tolerated (and symmetrized away) on construction.
const SYMMETRY_TOL: f64 = 1e-8;

/// Eigenvalues below this are treated as zero by the PSD matrix functions.
pub const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Diagonal {
        diag: Vec<f64>,
        sqrt: Vec<f64>,
    },
    Dense {
        entries: DMatrix<f64>,
        /// Lower-triangular factor with `chol * chol^T = entries`.
        chol: DMatrix<f64>,
    },
}

/// Symmetric positive definite matrix with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    repr: Repr,
}

impl SpdMatrix {
    /// Builds from a dense square matrix, symmetrizing `(A + A^T)/2` first.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let dim = entries.nrows();
        check_dim(dim, entries.ncols())?;
        if dim == 0 {
            return Err(Error::InvalidParameter("matrix must be non-empty".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let norm = entries.norm();
        let asym = (&entries - entries.transpose()).norm();
        if norm > 0.0 && asym / norm > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym / norm));
        }
        let sym = (&entries + entries.transpose()) * 0.5;
        let chol = nalgebra::Cholesky::new(sym.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky pivot not positive".into()))?
            .l();
        if chol.diagonal().iter().any(|&p| !(p > 0.0)) {
            return Err(Error::NotPositiveDefinite("Cholesky pivot not positive".into()));
        }
        Ok(Self {
            dim,
            repr: Repr::Dense { entries: sym, chol },
        })
    }

    /// Builds from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            check_dim(n, r.len())?;
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidParameter("matrix must be non-empty".into()));
        }
        if let Some(bad) = diag.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::NotPositiveDefinite(format!("diagonal entry {bad}")));
        }
        let sqrt = diag.iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            dim: diag.len(),
            repr: Repr::Diagonal { diag, sqrt },
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(vec![1.0; dim]).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.repr, Repr::Diagonal { .. })
    }

    /// Diagonal entries when stored in diagonal form.
    pub fn diagonal(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Diagonal { diag, .. } => Some(diag),
            Repr::Dense { .. } => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Diagonal { diag, .. } => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag))
            }
            Repr::Dense { entries, .. } => entries.clone(),
        }
    }

    /// Lower-triangular Cholesky factor.
    pub fn chol(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Diagonal { sqrt, .. } => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(sqrt))
            }
            Repr::Dense { chol, .. } => chol.clone(),
        }
    }

    /// `s * M` for `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale {s} must be positive")));
        }
        match &self.repr {
            Repr::Diagonal { diag, .. } => Self::from_diagonal(diag.iter().map(|v| v * s).collect()),
            Repr::Dense { entries, .. } => Self::new(entries * s),
        }
    }

    /// `M v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        match &self.repr {
            Repr::Diagonal { diag, .. } => diag.iter().zip(v).map(|(d, x)| d * x).collect(),
            Repr::Dense { entries, .. } => (0..self.dim)
                .map(|i| (0..self.dim).map(|j| entries[(i, j)] * v[j]).sum())
                .collect(),
        }
    }

    /// `L v` with `L` the Cholesky factor; maps standard normals to `N(0, M)`.
    pub fn chol_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        match &self.repr {
            Repr::Diagonal { sqrt, .. } => sqrt.iter().zip(v).map(|(s, x)| s * x).collect(),
            Repr::Dense { chol, .. } => (0..self.dim)
                .map(|i| (0..=i).map(|j| chol[(i, j)] * v[j]).sum())
                .collect(),
        }
    }

    /// `L^{-1} v` by forward substitution.
    pub fn whiten(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        match &self.repr {
            Repr::Diagonal { sqrt, .. } => v.iter().zip(sqrt).map(|(x, s)| x / s).collect(),
            Repr::Dense { chol, .. } => {
                let mut z = vec![0.0; self.dim];
                for i in 0..self.dim {
                    let mut acc = v[i];
                    for j in 0..i {
                        acc -= chol[(i, j)] * z[j];
                    }
                    z[i] = acc / chol[(i, i)];
                }
                z
            }
        }
    }

    /// `M^{-1} v` via the two triangular solves.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        match &self.repr {
            Repr::Diagonal { diag, .. } => v.iter().zip(diag).map(|(x, d)| x / d).collect(),
            Repr::Dense { chol, .. } => {
                let mut z = self.whiten(v);
                for i in (0..self.dim).rev() {
                    let mut acc = z[i];
                    for j in i + 1..self.dim {
                        acc -= chol[(j, i)] * z[j];
                    }
                    z[i] = acc / chol[(i, i)];
                }
                z
            }
        }
    }

    /// `M^{-1} B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col: Vec<f64> = b.column(c).iter().copied().collect();
            out.set_column(c, &nalgebra::DVector::from_vec(self.solve(&col)));
        }
        out
    }

    /// `v^T M^{-1} v`.
    pub fn inv_quad_form(&self, v: &[f64]) -> f64 {
        self.whiten(v).iter().map(|z| z * z).sum()
    }

    /// `log det M = 2 sum log L_ii`.
    pub fn log_det(&self) -> f64 {
        match &self.repr {
            Repr::Diagonal { sqrt, .. } => 2.0 * sqrt.iter().map(|s| s.ln()).sum::<f64>(),
            Repr::Dense { chol, .. } => 2.0 * chol.diagonal().iter().map(|s| s.ln()).sum::<f64>(),
        }
    }
}

/// Configuration-level description of a preconditioner.
#[derive(Debug, Clone, PartialEq)]
pub enum PreconditionerSpec {
    Identity,
    Diagonal(Vec<f64>),
    Dense(SpdMatrix),
}

impl PreconditionerSpec {
    pub fn build(&self, dim: usize) -> Result<SpdMatrix> {
        match self {
            Self::Identity => Ok(SpdMatrix::identity(dim)),
            Self::Diagonal(d) => {
                check_dim(dim, d.len())?;
                SpdMatrix::from_diagonal(d.clone())
            }
            Self::Dense(m) => {
                check_dim(dim, m.dim())?;
                Ok(m.clone())
            }
        }
    }
}

/// `||x - y||_M^2 = (x - y)^T M^{-1} (x - y)`.
pub fn scaled_norm_sq(x: &[f64], y: &[f64], m: &SpdMatrix) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_dim(m.dim(), x.len())?;
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(m.inv_quad_form(&diff))
}

pub fn log_det(m: &SpdMatrix) -> f64 {
    m.log_det()
}

/// Multivariate normal with SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: Vec<f64>,
    cov: SpdMatrix,
}

impl GaussianDist {
    pub fn new(mean: Vec<f64>, cov: SpdMatrix) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        Ok(Self { mean, cov })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            cov: SpdMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let xi = standard_normal_vec(rng, self.dim());
        self.cov
            .chol_mul(&xi)
            .into_iter()
            .zip(&self.mean)
            .map(|(z, m)| m + z)
            .collect()
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(g: &GaussianDist, rng: &mut R) -> Vec<f64> {
    g.sample(rng)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Symmetric eigendecomposition `(eigenvalues, eigenvectors)` of the
/// symmetrized input.
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn sym_matrix_fn(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(a);
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let fv = f(v);
        for i in 0..n {
            scaled[(i, j)] *= fv;
        }
    }
    let out = scaled * vecs.transpose();
    (&out + out.transpose()) * 0.5
}

/// Principal square root of a symmetric PSD matrix; eigenvalues under
/// [`EIGEN_FLOOR`] are zeroed.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_matrix_fn(a, |v| if v < EIGEN_FLOOR { 0.0 } else { v.sqrt() })
}

pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v = sym_eigen(a).0;
    v.sort_by(|a, b| a.total_cmp(b));
    v
}
