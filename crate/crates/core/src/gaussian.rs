//! Closed forms for quadratic potentials `V(x) = x^T Sigma^{-1} x / 2`, whose
//! target is `N(0, Sigma / beta)`.
//!
//! Conjugated quantities use the symmetric square root of `M`:
//! `Xi = M^{-1/2} Sigma M^{-1/2}` and `K_pm = I +- T Xi^{-1}`.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{sqrtm_psd, sym_eigenvalues, sym_matrix_fn, GaussianDist, SpdMatrix, EIGEN_FLOOR};

fn inverse(s: &SpdMatrix) -> DMatrix<f64> {
    let d = s.dim();
    let inv = s.solve_matrix(&DMatrix::identity(d, d));
    (&inv + inv.transpose()) * 0.5
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// `(T Sigma^{-1} + M^{-1})^{-1}`, shared by the proximal mean and covariance.
fn resolvent(sigma: &SpdMatrix, m: &SpdMatrix, t: f64) -> Result<DMatrix<f64>> {
    let inner = SpdMatrix::new(inverse(sigma) * t + inverse(m))?;
    Ok(inverse(&inner))
}

/// Mean and covariance of the regularized proximal image of `N(mu, sigma_k)`.
pub fn prwpo_gaussian(
    mu: &[f64],
    sigma_k: &SpdMatrix,
    sigma: &SpdMatrix,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
) -> Result<(Vec<f64>, SpdMatrix)> {
    let d = sigma.dim();
    check_dim(d, mu.len())?;
    check_dim(d, sigma_k.dim())?;
    check_dim(d, m.dim())?;
    check_positive("T", t)?;
    check_positive("beta", beta)?;
    let a = resolvent(sigma, m, t)?;
    // (I + T M Sigma^{-1})^{-1} = A M^{-1}
    let am = m.solve_matrix(&a).transpose();
    let tilde_mu = (&am * DVector::from_column_slice(mu)).iter().copied().collect();
    let cov = &a * (2.0 * t / beta) + &am * sigma_k.to_dense() * am.transpose();
    Ok((tilde_mu, SpdMatrix::new(symmetrize(cov))?))
}

/// The kernel `K(., y)` as a Gaussian: mean `A M^{-1} y`, covariance
/// `(2T/beta) A` with `A = (T Sigma^{-1} + M^{-1})^{-1}`.
pub fn kernel_gaussian(
    y: &[f64],
    sigma: &SpdMatrix,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
) -> Result<GaussianDist> {
    check_dim(sigma.dim(), y.len())?;
    check_positive("T", t)?;
    check_positive("beta", beta)?;
    let a = resolvent(sigma, m, t)?;
    let am = m.solve_matrix(&a).transpose();
    let mean = (&am * DVector::from_column_slice(y)).iter().copied().collect();
    GaussianDist::new(mean, SpdMatrix::new(a * (2.0 * t / beta))?)
}

/// `I - eta M Sigma^{-1} + eta/beta M tilde_Sigma^{-1}`.
fn flow_factor(
    sigma: &SpdMatrix,
    tilde_sigma: &SpdMatrix,
    m: &SpdMatrix,
    beta: f64,
    eta: f64,
) -> DMatrix<f64> {
    let d = sigma.dim();
    let md = m.to_dense();
    DMatrix::identity(d, d) - &md * inverse(sigma) * eta + &md * inverse(tilde_sigma) * (eta / beta)
}

/// One step of the exact infinite-particle covariance recursion.
pub fn pbrwp_cov_update(
    sigma_k: &SpdMatrix,
    sigma: &SpdMatrix,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    eta: f64,
) -> Result<SpdMatrix> {
    let d = sigma.dim();
    let (_, tilde) = prwpo_gaussian(&vec![0.0; d], sigma_k, sigma, m, t, beta)?;
    let b = flow_factor(sigma, &tilde, m, beta, eta);
    let next = symmetrize(&b * sigma_k.to_dense() * b.transpose());
    SpdMatrix::new(next).map_err(|_| Error::StepSizeTooLarge)
}

/// One step of the exact infinite-particle mean recursion.
pub fn pbrwp_mean_update(
    mu: &[f64],
    sigma_k: &SpdMatrix,
    sigma: &SpdMatrix,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    eta: f64,
) -> Result<Vec<f64>> {
    let (tilde_mu, tilde) = prwpo_gaussian(mu, sigma_k, sigma, m, t, beta)?;
    let b = flow_factor(sigma, &tilde, m, beta, eta);
    let pull = m.to_dense() * DVector::from_vec(tilde.solve(&tilde_mu)) * (eta / beta);
    let out = &b * DVector::from_column_slice(mu) - pull;
    Ok(out.iter().copied().collect())
}

/// State of the Gaussian flow at one iteration, together with its proximal image.
#[derive(Debug, Clone)]
pub struct GaussianFlowState {
    pub mu_k: Vec<f64>,
    pub sigma_k: SpdMatrix,
    pub tilde_mu: Vec<f64>,
    pub tilde_sigma: SpdMatrix,
}

impl GaussianFlowState {
    pub fn new(
        mu_k: Vec<f64>,
        sigma_k: SpdMatrix,
        sigma: &SpdMatrix,
        m: &SpdMatrix,
        t: f64,
        beta: f64,
    ) -> Result<Self> {
        let (tilde_mu, tilde_sigma) = prwpo_gaussian(&mu_k, &sigma_k, sigma, m, t, beta)?;
        Ok(Self {
            mu_k,
            sigma_k,
            tilde_mu,
            tilde_sigma,
        })
    }

    pub fn advance(&self, sigma: &SpdMatrix, m: &SpdMatrix, t: f64, beta: f64, eta: f64) -> Result<Self> {
        let b = flow_factor(sigma, &self.tilde_sigma, m, beta, eta);
        let sigma_next = SpdMatrix::new(symmetrize(&b * self.sigma_k.to_dense() * b.transpose()))
            .map_err(|_| Error::StepSizeTooLarge)?;
        let pull = m.to_dense() * DVector::from_vec(self.tilde_sigma.solve(&self.tilde_mu)) * (eta / beta);
        let mu_next = (&b * DVector::from_column_slice(&self.mu_k) - pull).iter().copied().collect();
        Self::new(mu_next, sigma_next, sigma, m, t, beta)
    }
}

/// `M^{-1/2}` and `M^{1/2}` (symmetric roots).
fn sqrt_pair(m: &SpdMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let md = m.to_dense();
    (sym_matrix_fn(&md, |v| 1.0 / v.sqrt()), sqrtm_psd(&md))
}

/// `M^{-1/2} S M^{-1/2}`.
pub fn conjugate_by(m: &SpdMatrix, s: &SpdMatrix) -> Result<SpdMatrix> {
    check_dim(m.dim(), s.dim())?;
    let (inv_sqrt, _) = sqrt_pair(m);
    SpdMatrix::new(symmetrize(&inv_sqrt * s.to_dense() * &inv_sqrt))
}

/// Conjugated target covariance with the factors `K_pm = I +- T Xi^{-1}`.
#[derive(Debug, Clone)]
pub struct ConjugatedCov {
    pub xi: SpdMatrix,
    pub k_plus: DMatrix<f64>,
    pub k_minus: DMatrix<f64>,
}

impl ConjugatedCov {
    pub fn new(sigma: &SpdMatrix, m: &SpdMatrix, t: f64) -> Result<Self> {
        let xi = conjugate_by(m, sigma)?;
        let d = xi.dim();
        let xi_inv = inverse(&xi) * t;
        let id = DMatrix::<f64>::identity(d, d);
        Ok(Self {
            k_plus: &id + &xi_inv,
            k_minus: id - xi_inv,
            xi,
        })
    }
}

/// `Sigma >= T M` up to a `1e-12` relative slack: the condition under which
/// the proximal map can be inverted.
pub fn max_t_check(sigma: &SpdMatrix, m: &SpdMatrix, t: f64) -> bool {
    if sigma.dim() != m.dim() {
        return false;
    }
    let s = sigma.to_dense();
    let d = s.nrows();
    let slack = 1e-12 * s.norm().max(1.0);
    let diff = s - m.to_dense() * t + DMatrix::identity(d, d) * slack;
    nalgebra::Cholesky::new(symmetrize(diff)).is_some()
}

/// Largest admissible `T`: the smallest eigenvalue of `M^{-1/2} Sigma M^{-1/2}`.
pub fn max_t(sigma: &SpdMatrix, m: &SpdMatrix) -> Result<f64> {
    let xi = conjugate_by(m, sigma)?;
    Ok(sym_eigenvalues(&xi.to_dense())[0])
}

/// Extreme eigenvalues `(c, C)` of `M^{-1/2} Sigma M^{-1/2}`, i.e. the best
/// constants with `c M <= Sigma <= C M`.
pub fn spectral_bounds(sigma: &SpdMatrix, m: &SpdMatrix) -> Result<(f64, f64)> {
    let ev = sym_eigenvalues(&conjugate_by(m, sigma)?.to_dense());
    Ok((ev[0], ev[ev.len() - 1]))
}

/// Covariance whose proximal image is the target `Sigma / beta`:
/// `M^{1/2} K_- (Xi / beta) K_+ M^{1/2}`.
pub fn stationary_covariance(sigma: &SpdMatrix, m: &SpdMatrix, t: f64, beta: f64) -> Result<SpdMatrix> {
    check_dim(sigma.dim(), m.dim())?;
    check_positive("T", t)?;
    check_positive("beta", beta)?;
    if !max_t_check(sigma, m, t) {
        return Err(Error::NotInvertible { t });
    }
    let conj = ConjugatedCov::new(sigma, m, t)?;
    let (_, sqrt_m) = sqrt_pair(m);
    let inner = &conj.k_minus * conj.xi.to_dense() * &conj.k_plus / beta;
    SpdMatrix::new(symmetrize(&sqrt_m * inner * &sqrt_m)).map_err(|_| Error::NotInvertible { t })
}

/// `KL(a || b)`.
pub fn kl_gaussians(a: &GaussianDist, b: &GaussianDist) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let d = a.dim();
    let tr = b.cov().solve_matrix(&a.cov().to_dense()).trace();
    let dm: Vec<f64> = a.mean().iter().zip(b.mean()).map(|(x, y)| x - y).collect();
    Ok(0.5 * (b.cov().log_det() - a.cov().log_det() - d as f64 + tr + b.cov().inv_quad_form(&dm)))
}

/// Wasserstein-2 distance between Gaussians.
pub fn w2_gaussians(a: &GaussianDist, b: &GaussianDist) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(bures_wasserstein(a.mean(), &a.cov().to_dense(), b.mean(), &b.cov().to_dense()))
}

/// Wasserstein-2 distance allowing positive semidefinite (e.g. zero) covariances.
pub fn bures_wasserstein(mu_a: &[f64], cov_a: &DMatrix<f64>, mu_b: &[f64], cov_b: &DMatrix<f64>) -> f64 {
    let dm: f64 = mu_a.iter().zip(mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    let rb = sqrtm_psd(cov_b);
    let cross = sqrtm_psd(&symmetrize(&rb * cov_a * &rb));
    let bures = (cov_a.trace() + cov_b.trace() - 2.0 * cross.trace()).max(0.0);
    (dm + bures).sqrt()
}

/// W2 Lipschitz constant `C / (C + T)` of the proximal map when `Sigma <= C M`.
pub fn contraction_factor(c_upper: f64, t: f64) -> f64 {
    (0.5 / c_upper + 0.5 / t).recip() * (0.5 / t)
}

/// Per-step KL contraction rate `r`, so that `KL_{k+1} <= (1 - r) KL_k`.
pub fn kl_decay_rate_bound(c_lower: f64, c_upper: f64, t: f64, beta: f64, lambda: f64, eta: f64) -> f64 {
    let bracket = beta + 2.0 * t * (1.0 + t / c_upper).recip() * (1.0 + t / c_lower).powi(2) / lambda;
    eta / (2.0 * c_upper * bracket)
}

/// Largest step size for which the KL decay rate is guaranteed.
pub fn step_size_bound(tilde_xi_k: &SpdMatrix, tilde_xi_inf: &SpdMatrix, beta: f64) -> f64 {
    let diff = inverse(tilde_xi_k) - inverse(tilde_xi_inf);
    let ev = sym_eigenvalues(&diff);
    let spread = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let first = if spread <= EIGEN_FLOOR { f64::INFINITY } else { 0.5 / spread };
    let second = 3.0 * sym_eigenvalues(&tilde_xi_k.to_dense())[0] / 32.0;
    beta * first.min(second)
}

/// Both sides of the contraction-diffusion inequality
/// `<Delta, M^{-1}(X - X_hat)> <= |X - X_hat| (-mu/2 |X - X_hat| + (1 + sqrt N)/(2T) |X - X_bar|)`
/// in the `(2, M)` Frobenius norm, where `X_hat` replicates the minimizer and
/// `X_bar` the ensemble mean.
pub fn contraction_diffusion_gap(
    x: &ParticleEnsemble,
    x_hat: &[f64],
    m: &SpdMatrix,
    t: f64,
    mu_strong: f64,
    delta: &ParticleEnsemble,
) -> Result<(f64, f64)> {
    check_dim(x.dim(), x_hat.len())?;
    check_dim(x.dim(), m.dim())?;
    check_dim(x.as_slice().len(), delta.as_slice().len())?;
    let n = x.n();
    let d = x.dim();
    let mut mean = vec![0.0; d];
    for p in x.particles() {
        for k in 0..d {
            mean[k] += p[k] / n as f64;
        }
    }
    let (mut lhs, mut to_min, mut to_mean) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = x.particle(i);
        let e: Vec<f64> = p.iter().zip(x_hat).map(|(a, b)| a - b).collect();
        let c: Vec<f64> = p.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let me = m.solve(&e);
        lhs += delta.particle(i).iter().zip(&me).map(|(a, b)| a * b).sum::<f64>();
        to_min += e.iter().zip(&me).map(|(a, b)| a * b).sum::<f64>();
        to_mean += m.inv_quad_form(&c);
    }
    let (to_min, to_mean) = (to_min.sqrt(), to_mean.sqrt());
    let rhs = to_min * (-0.5 * mu_strong * to_min + (1.0 + (n as f64).sqrt()) / (2.0 * t) * to_mean);
    Ok((lhs, rhs))
}

/// Scale `2 T / beta * log(2 (N - 1) / T)` at which the outermost particle's
/// `M`-norm saturates.
pub fn norm_bound_threshold(n: usize, t: f64, beta: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter("norm bound needs at least two particles".into()));
    }
    Ok(2.0 * t / beta * (2.0 * (n - 1) as f64 / t).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{kernel_density, log_z_exact_quadratic};
    use crate::linalg::standard_normal_vec;
    use crate::potentials::QuadraticPotential;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(v: f64) -> SpdMatrix {
        SpdMatrix::from_diagonal(vec![v]).unwrap()
    }

    #[test]
    fn scalar_prwpo() {
        let (mu, cov) = prwpo_gaussian(&[0.0], &s(1.0), &s(1.0), &s(1.0), 0.5, 1.0).unwrap();
        assert_eq!(mu, vec![0.0]);
        assert!((cov.to_dense()[(0, 0)] - 10.0 / 9.0).abs() < 1e-12);
        let (_, cov) = prwpo_gaussian(&[0.0], &s(0.75), &s(1.0), &s(1.0), 0.5, 1.0).unwrap();
        assert!((cov.to_dense()[(0, 0)] - 1.0).abs() < 1e-12);

        let id = SpdMatrix::identity(2);
        let (mu, _) = prwpo_gaussian(&[3.0, 0.0], &id, &id, &id, 1e-8, 1.0).unwrap();
        assert!((mu[0] - 3.0).abs() < 1e-6 && mu[1].abs() < 1e-12);
    }

    #[test]
    fn scalar_prwpo_matches_numerical_convolution() {
        // push N(0.4, 1) through the kernel by quadrature over y and x
        let q = QuadraticPotential::new(s(1.0));
        let m = s(1.0);
        let (t, beta) = (0.5, 1.0);
        let h = 0.01;
        let grid: Vec<f64> = (0..2001).map(|k| -10.0 + k as f64 * h).collect();
        let rho: Vec<f64> = grid
            .iter()
            .map(|y| (-(y - 0.4f64).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .collect();
        let lz: Vec<f64> = grid
            .iter()
            .map(|y| log_z_exact_quadratic(&[*y], q.sigma(), &m, t, beta).unwrap())
            .collect();
        let out: Vec<f64> = grid
            .iter()
            .map(|x| {
                grid.iter()
                    .zip(&rho)
                    .zip(&lz)
                    .map(|((y, r), l)| kernel_density(&[*x], &[*y], &q, &m, t, beta, *l).unwrap() * r)
                    .sum::<f64>()
                    * h
            })
            .collect();
        let mass: f64 = out.iter().sum::<f64>() * h;
        let mean: f64 = grid.iter().zip(&out).map(|(x, p)| x * p).sum::<f64>() * h / mass;
        let var: f64 = grid.iter().zip(&out).map(|(x, p)| (x - mean).powi(2) * p).sum::<f64>() * h / mass;
        let (mu, cov) = prwpo_gaussian(&[0.4], &s(1.0), &s(1.0), &m, t, beta).unwrap();
        assert!((mean - mu[0]).abs() < 1e-6, "{mean} vs {}", mu[0]);
        assert!((var - cov.to_dense()[(0, 0)]).abs() < 1e-6, "{var}");
    }

    #[test]
    fn cov_update_examples() {
        let one = s(1.0);
        let next = pbrwp_cov_update(&s(0.75), &one, &one, 0.5, 1.0, 0.3).unwrap();
        assert!((next.to_dense()[(0, 0)] - 0.75).abs() < 1e-14);
        let sk = SpdMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 0.5]]).unwrap();
        let sig = SpdMatrix::from_diagonal(vec![1.0, 3.0]).unwrap();
        let same = pbrwp_cov_update(&sk, &sig, &SpdMatrix::identity(2), 0.2, 1.0, 0.0).unwrap();
        assert!((same.to_dense() - sk.to_dense()).norm() < 1e-14);
        let id = SpdMatrix::identity(3);
        let iso = pbrwp_cov_update(&id, &id, &id, 0.4, 1.0, 0.1).unwrap().to_dense();
        assert!((iso[(0, 1)]).abs() < 1e-15 && (iso[(0, 0)] - iso[(2, 2)]).abs() < 1e-15);
    }

    #[test]
    fn cov_update_detects_collapse() {
        // B = 1 - eta + eta / tilde = 0 for a tuned eta
        let one = s(1.0);
        let (_, tilde) = prwpo_gaussian(&[0.0], &s(2.0), &one, &one, 0.5, 1.0).unwrap();
        let tv = tilde.to_dense()[(0, 0)];
        let eta = 1.0 / (1.0 - 1.0 / tv);
        assert!(matches!(
            pbrwp_cov_update(&s(2.0), &one, &one, 0.5, 1.0, eta),
            Err(Error::StepSizeTooLarge)
        ));
    }

    #[test]
    fn mean_update_examples() {
        let one = s(1.0);
        assert_eq!(pbrwp_mean_update(&[0.0], &s(2.0), &one, &one, 0.5, 1.0, 0.1).unwrap(), vec![0.0]);
        // scalar transcription: tilde mu = mu / (1 + T), tilde var = 10/9 at var 1
        let (mu, eta, t) = (2.0, 0.1, 0.5);
        let tv = 10.0 / 9.0;
        let b = 1.0 - eta + eta / tv;
        let expect = b * mu - eta / tv * (mu / (1.0 + t));
        let got = pbrwp_mean_update(&[mu], &one, &one, &one, t, 1.0, eta).unwrap()[0];
        assert!((got - expect).abs() < 1e-14);
        assert!((expect - 1.86).abs() < 1e-12);
    }

    #[test]
    fn stationary_examples() {
        let one = s(1.0);
        let st = stationary_covariance(&one, &one, 0.5, 1.0).unwrap();
        assert!((st.to_dense()[(0, 0)] - 0.75).abs() < 1e-12);
        let two = SpdMatrix::from_diagonal(vec![2.0, 2.0]).unwrap();
        let st = stationary_covariance(&two, &SpdMatrix::identity(2), 1.0, 1.0).unwrap();
        assert!((st.to_dense()[(0, 0)] - 1.5).abs() < 1e-12);
        let st = stationary_covariance(&two, &SpdMatrix::identity(2), 1e-9, 2.0).unwrap();
        assert!((st.to_dense()[(1, 1)] - 1.0).abs() < 1e-8);
        assert!(matches!(
            stationary_covariance(&one, &one, 1.5, 1.0),
            Err(Error::NotInvertible { .. })
        ));
        // stationary point of the mean/covariance recursions
        let st = stationary_covariance(&one, &one, 0.5, 1.0).unwrap();
        let next = pbrwp_cov_update(&st, &one, &one, 0.5, 1.0, 0.2).unwrap();
        assert!((next.to_dense()[(0, 0)] - 0.75).abs() < 1e-14);
        assert_eq!(pbrwp_mean_update(&[0.0], &st, &one, &one, 0.5, 1.0, 0.2).unwrap(), vec![0.0]);
    }

    #[test]
    fn max_t_examples() {
        let id = SpdMatrix::identity(2);
        assert!(max_t_check(&id, &id, 1.0));
        assert!(!max_t_check(&id, &id, 1.5));
        let d = SpdMatrix::from_diagonal(vec![4.0, 1.0]).unwrap();
        assert!(!max_t_check(&d, &id, 2.0));
        assert!(max_t_check(&d, &id, 0.99));
        assert!((max_t(&d, &id).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let a = GaussianDist::new(vec![0.0], s(2.0)).unwrap();
        let b = GaussianDist::new(vec![0.0], s(1.0)).unwrap();
        assert_eq!(kl_gaussians(&a, &a).unwrap(), 0.0);
        assert!((kl_gaussians(&a, &b).unwrap() - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-14);
        let c = GaussianDist::new(vec![1.5, -0.5], SpdMatrix::identity(2)).unwrap();
        let z = GaussianDist::standard(2);
        assert!((kl_gaussians(&c, &z).unwrap() - 0.5 * 2.5).abs() < 1e-14);
    }

    #[test]
    fn w2_examples() {
        let a = GaussianDist::new(vec![0.3, 1.0], SpdMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()).unwrap();
        assert!(w2_gaussians(&a, &a).unwrap() < 1e-7);
        let z = DMatrix::zeros(2, 2);
        assert!((bures_wasserstein(&[1.0, 0.0], &z, &[0.0, 0.0], &z) - 1.0).abs() < 1e-15);
        let u = GaussianDist::new(vec![0.0], s(1.0)).unwrap();
        let v = GaussianDist::new(vec![0.0], s(4.0)).unwrap();
        assert!((w2_gaussians(&u, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_helpers() {
        assert!((contraction_factor(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert!(contraction_factor(1.0, 1e-12) > 1.0 - 1e-11);
        assert!(contraction_factor(1e12, 1.0) > 1.0 - 1e-11);
        assert!(contraction_factor(1e-12, 1.0) < 1e-11);

        let r = kl_decay_rate_bound(1.0, 1.0, 0.5, 1.0, 0.75, 0.01);
        assert!((r - 0.01 / 6.0).abs() < 1e-16);
        assert_eq!(kl_decay_rate_bound(1.0, 1.0, 0.5, 1.0, 0.75, 0.0), 0.0);
        let limit = kl_decay_rate_bound(0.5, 2.0, 0.3, 1.7, 1e300, 0.1);
        assert!((limit - 0.1 / (2.0 * 2.0 * 1.7)).abs() < 1e-15);

        let one = s(1.0);
        assert!((step_size_bound(&one, &one, 1.0) - 3.0 / 32.0).abs() < 1e-15);
        assert!((step_size_bound(&s(2.0), &one, 1.0) - 0.1875).abs() < 1e-15);
        assert!((step_size_bound(&s(2.0), &one, 3.0) - 3.0 * 0.1875).abs() < 1e-15);
        // homogeneity of the second term
        let a = step_size_bound(&s(4.0), &s(4.0), 1.0);
        let b = step_size_bound(&s(8.0), &s(8.0), 1.0);
        assert!((b - 2.0 * a).abs() < 1e-15);

        assert!((norm_bound_threshold(2, 0.5, 1.0).unwrap() - 4f64.ln()).abs() < 1e-15);
        let d = norm_bound_threshold(9, 0.5, 1.0).unwrap() - norm_bound_threshold(5, 0.5, 1.0).unwrap();
        assert!((d - 2f64.ln()).abs() < 1e-14);
        let half = norm_bound_threshold(10, 0.3, 2.0).unwrap() / norm_bound_threshold(10, 0.3, 1.0).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
        assert!(norm_bound_threshold(1, 0.5, 1.0).is_err());
    }

    #[test]
    fn contraction_diffusion_single_particle_equality() {
        let id = SpdMatrix::identity(2);
        let x = ParticleEnsemble::from_particles(&[vec![1.0, 2.0]]).unwrap();
        // V = |x|^2 / 2, softmax = [1]: delta = -x/2
        let delta = ParticleEnsemble::from_particles(&[vec![-0.5, -1.0]]).unwrap();
        let (lhs, rhs) = contraction_diffusion_gap(&x, &[0.0, 0.0], &id, 0.5, 1.0, &delta).unwrap();
        assert!((lhs + 2.5).abs() < 1e-15 && (rhs + 2.5).abs() < 1e-15);
        let at_min = ParticleEnsemble::from_particles(&vec![vec![0.0, 0.0]; 3]).unwrap();
        let zero = ParticleEnsemble::zeros(2, 3);
        assert_eq!(contraction_diffusion_gap(&at_min, &[0.0, 0.0], &id, 0.5, 1.0, &zero).unwrap(), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn kl_nonnegative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng| {
                let g = DMatrix::from_fn(3, 3, |_, _| standard_normal_vec(rng, 1)[0]);
                let cov = SpdMatrix::new(&g * g.transpose() + DMatrix::identity(3, 3) * 0.1).unwrap();
                GaussianDist::new(standard_normal_vec(rng, 3), cov).unwrap()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            prop_assert!(kl_gaussians(&a, &b).unwrap() >= -1e-12);
            prop_assert!(kl_gaussians(&a, &a).unwrap().abs() <= 1e-12);
        }
    }
}
