//! Fixed-seed property suite for the Gaussian closed forms, run by
//! `sampler verify`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gaussian::{
    conjugate_by, contraction_factor, kernel_gaussian, kl_decay_rate_bound, kl_gaussians,
    max_t_check, norm_bound_threshold, pbrwp_cov_update, pbrwp_mean_update, prwpo_gaussian,
    spectral_bounds, stationary_covariance, step_size_bound, w2_gaussians,
};
use crate::kernel::{kernel_density, log_z_exact_quadratic};
use crate::linalg::{standard_normal_vec, sym_eigenvalues, GaussianDist, SpdMatrix};
use crate::potentials::QuadraticPotential;

/// Signature of [`prwpo_gaussian`].
pub type ProximalFn =
    fn(&[f64], &SpdMatrix, &SpdMatrix, &SpdMatrix, f64, f64) -> Result<(Vec<f64>, SpdMatrix)>;

/// The closed forms under test. Swapping one out lets the suite demonstrate
/// that it detects a broken formula.
#[derive(Clone, Copy)]
pub struct OracleFns {
    pub prwpo: ProximalFn,
}

impl Default for OracleFns {
    fn default() -> Self {
        Self {
            prwpo: prwpo_gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

/// Proximal map with the diffusion term halved, used to check that the
/// suite notices a wrong formula.
#[doc(hidden)]
pub fn mutated_prwpo(
    mu: &[f64],
    sigma_k: &SpdMatrix,
    sigma: &SpdMatrix,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
) -> Result<(Vec<f64>, SpdMatrix)> {
    let (mean, cov) = prwpo_gaussian(mu, sigma_k, sigma, m, t, beta)?;
    let (_, shift) = prwpo_gaussian(mu, sigma_k, sigma, m, t, 2.0 * beta)?;
    // the beta-dependent part of the covariance is (2T/beta) A; removing half of it
    let diff = (cov.to_dense() - shift.to_dense()) * 0.5;
    Ok((mean, SpdMatrix::new(cov.to_dense() - diff)?))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| standard_normal_vec(rng, 1)[0]);
    a.qr().q()
}

fn with_spectrum(q: &DMatrix<f64>, ev: &[f64]) -> SpdMatrix {
    let m = q * DMatrix::from_diagonal(&DVector::from_column_slice(ev)) * q.transpose();
    SpdMatrix::new((&m + m.transpose()) * 0.5).expect("positive spectrum")
}

/// Target covariance, preconditioner and initial covariance sharing one
/// eigenbasis, with `Sigma > T M`.
pub struct CommutingInstance {
    pub sigma: SpdMatrix,
    pub m: SpdMatrix,
    pub sigma0: SpdMatrix,
    pub t: f64,
    pub beta: f64,
}

pub fn random_commuting_instance(rng: &mut ChaCha8Rng, d: usize) -> CommutingInstance {
    let q = random_orthogonal(rng, d);
    let m_ev: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..3.0)).collect();
    let ratio: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..4.0)).collect();
    let t = rng.random_range(0.05..0.45) * ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_ev: Vec<f64> = m_ev.iter().zip(&ratio).map(|(m, r)| m * r).collect();
    let s0_ev: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..5.0)).collect();
    CommutingInstance {
        sigma: with_spectrum(&q, &s_ev),
        m: with_spectrum(&q, &m_ev),
        sigma0: with_spectrum(&q, &s0_ev),
        t,
        beta: rng.random_range(0.5..2.0),
    }
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// The proximal image of the stationary covariance is `Sigma / beta`.
pub fn check_stationary_round_trip(fns: &OracleFns, instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(1..=8);
        let inst = random_commuting_instance(&mut rng, d);
        let err = stationary_covariance(&inst.sigma, &inst.m, inst.t, inst.beta)
            .and_then(|s| (fns.prwpo)(&vec![0.0; d], &s, &inst.sigma, &inst.m, inst.t, inst.beta))
            .map(|(_, c)| rel_frobenius(&c.to_dense(), &(inst.sigma.to_dense() / inst.beta)))
            .unwrap_or(f64::INFINITY);
        worst = worst.max(err);
    }
    CheckResult::new(
        "stationary-round-trip",
        worst <= 1e-10,
        format!("{instances} instances, max rel Frobenius error {worst:.3e}"),
    )
}

/// Statistics of one KL trajectory of the exact covariance recursion.
#[derive(Debug, Clone)]
pub struct DecayTrace {
    pub eta: f64,
    pub kl: Vec<f64>,
    pub rate: f64,
    /// Smallest `KL_k - KL_{k+1} - rate KL_k` over the trajectory.
    pub worst_margin: f64,
    /// Largest `KL_{k+1} - KL_k`.
    pub worst_increase: f64,
}

fn tilde_trajectory(
    fns: &OracleFns,
    inst: &CommutingInstance,
    eta: f64,
    steps: usize,
) -> Result<(Vec<SpdMatrix>, Vec<SpdMatrix>)> {
    let d = inst.sigma.dim();
    let zero = vec![0.0; d];
    let mut sigma_k = inst.sigma0.clone();
    let (mut covs, mut tildes) = (Vec::new(), Vec::new());
    for k in 0..=steps {
        let (_, tilde) = (fns.prwpo)(&zero, &sigma_k, &inst.sigma, &inst.m, inst.t, inst.beta)?;
        covs.push(sigma_k.clone());
        tildes.push(tilde);
        if k < steps {
            sigma_k = pbrwp_cov_update(&sigma_k, &inst.sigma, &inst.m, inst.t, inst.beta, eta)?;
        }
    }
    Ok((covs, tildes))
}

/// Runs the exact covariance recursion with a step size that satisfies the
/// step-size condition at every iterate (halving from the initial bound
/// until it does) and records the KL trajectory against the target.
pub fn kl_decay_trace(fns: &OracleFns, inst: &CommutingInstance, steps: usize) -> Result<DecayTrace> {
    let d = inst.sigma.dim();
    let target = GaussianDist::new(vec![0.0; d], inst.sigma.scaled(1.0 / inst.beta)?)?;
    let tilde_inf = conjugate_by(&inst.m, &target.cov().clone())?;
    let (_, tilde0) = (fns.prwpo)(&vec![0.0; d], &inst.sigma0, &inst.sigma, &inst.m, inst.t, inst.beta)?;
    let mut eta = step_size_bound(&conjugate_by(&inst.m, &tilde0)?, &tilde_inf, inst.beta);
    let (covs, tildes) = loop {
        let (covs, tildes) = tilde_trajectory(fns, inst, eta, steps)?;
        let mut ok = true;
        for tilde in &tildes {
            if step_size_bound(&conjugate_by(&inst.m, tilde)?, &tilde_inf, inst.beta) < eta {
                ok = false;
                break;
            }
        }
        if ok {
            break (covs, tildes);
        }
        eta *= 0.5;
    };
    let (c, cap) = spectral_bounds(&inst.sigma, &inst.m)?;
    let mut lambda = f64::INFINITY;
    for s in &covs {
        lambda = lambda.min(sym_eigenvalues(&conjugate_by(&inst.m, s)?.to_dense())[0]);
    }
    let rate = kl_decay_rate_bound(c, cap, inst.t, inst.beta, lambda, eta);
    let kl = tildes
        .iter()
        .map(|s| kl_gaussians(&GaussianDist::new(vec![0.0; d], s.clone())?, &target))
        .collect::<Result<Vec<f64>>>()?;
    let mut worst_margin = f64::INFINITY;
    let mut worst_increase = f64::NEG_INFINITY;
    for w in kl.windows(2) {
        worst_margin = worst_margin.min(w[0] - w[1] - rate * w[0]);
        worst_increase = worst_increase.max(w[1] - w[0]);
    }
    Ok(DecayTrace {
        eta,
        kl,
        rate,
        worst_margin,
        worst_increase,
    })
}

/// KL to the target never increases and drops by at least the guaranteed
/// rate at every step.
pub fn check_kl_monotone_decay(fns: &OracleFns, instances: usize, steps: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut margin, mut increase) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut failed = None;
    for i in 0..instances {
        let d = rng.random_range(1..=6);
        let inst = random_commuting_instance(&mut rng, d);
        match kl_decay_trace(fns, &inst, steps) {
            Ok(tr) => {
                margin = margin.min(tr.worst_margin);
                increase = increase.max(tr.worst_increase);
            }
            Err(e) => {
                failed = Some(format!("instance {i}: {e}"));
                break;
            }
        }
    }
    let passed = failed.is_none() && increase <= 1e-12 && margin >= -1e-12;
    let detail = failed.unwrap_or_else(|| {
        format!("{instances} instances x {steps} steps, min margin {margin:.3e}, max increase {increase:.3e}")
    });
    CheckResult::new("kl-monotone-decay", passed, detail)
}

fn commuting_gaussian(rng: &mut ChaCha8Rng, q: &DMatrix<f64>) -> GaussianDist {
    let d = q.nrows();
    let ev: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..4.0)).collect();
    let mean = standard_normal_vec(rng, d);
    GaussianDist::new(mean, with_spectrum(q, &ev)).expect("matching dimensions")
}

/// The proximal map is a W2 contraction with the stated factor.
pub fn check_w2_contraction(fns: &OracleFns, pairs: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let d = rng.random_range(1..=6);
        let inst = random_commuting_instance(&mut rng, d);
        // covariances commuting with Sigma: reuse its eigenbasis
        let (_, vecs) = crate::linalg::sym_eigen(&inst.sigma.to_dense());
        let a = commuting_gaussian(&mut rng, &vecs);
        let b = commuting_gaussian(&mut rng, &vecs);
        let gap = (|| -> Result<f64> {
            let (ma, ca) = (fns.prwpo)(a.mean(), a.cov(), &inst.sigma, &inst.m, inst.t, inst.beta)?;
            let (mb, cb) = (fns.prwpo)(b.mean(), b.cov(), &inst.sigma, &inst.m, inst.t, inst.beta)?;
            let (_, cap) = spectral_bounds(&inst.sigma, &inst.m)?;
            let zeta = contraction_factor(cap, inst.t);
            let before = w2_gaussians(&a, &b)?;
            let after = w2_gaussians(&GaussianDist::new(ma, ca)?, &GaussianDist::new(mb, cb)?)?;
            Ok(after - zeta * before)
        })()
        .unwrap_or(f64::INFINITY);
        worst = worst.max(gap);
    }
    CheckResult::new(
        "w2-contraction",
        worst <= 1e-10,
        format!("{pairs} pairs, max w2(prox a, prox b) - zeta w2(a, b) = {worst:.3e}"),
    )
}

/// KL between Gaussians is nonnegative and vanishes on identical arguments.
pub fn check_kl_nonnegativity(pairs: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lowest, mut self_kl) = (f64::INFINITY, 0.0f64);
    for _ in 0..pairs {
        let d = rng.random_range(1..=6);
        let qa = random_orthogonal(&mut rng, d);
        let qb = random_orthogonal(&mut rng, d);
        let a = commuting_gaussian(&mut rng, &qa);
        let b = commuting_gaussian(&mut rng, &qb);
        lowest = lowest.min(kl_gaussians(&a, &b).unwrap_or(f64::NEG_INFINITY));
        self_kl = self_kl.max(kl_gaussians(&a, &a).map(f64::abs).unwrap_or(f64::INFINITY));
    }
    CheckResult::new(
        "kl-nonnegativity",
        lowest >= -1e-12 && self_kl <= 1e-12,
        format!("{pairs} pairs, min KL {lowest:.3e}, max |KL(a,a)| {self_kl:.3e}"),
    )
}

/// Importance-sampling moments of the kernel density at `y` versus its
/// closed-form Gaussian. Returns the worst deviation in standard errors.
fn kernel_moment_z_scores(
    sigma: &SpdMatrix,
    m: &SpdMatrix,
    t: f64,
    beta: f64,
    y: &[f64],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let d = y.len();
    let p = QuadraticPotential::new(sigma.clone());
    let closed = kernel_gaussian(y, sigma, m, t, beta)?;
    let log_z = log_z_exact_quadratic(y, sigma, m, t, beta)?;
    // proposal: the closed form widened by 1.5 in every direction
    let proposal = GaussianDist::new(closed.mean().to_vec(), closed.cov().scaled(1.5 * 1.5)?)?;
    let prop_log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + proposal.cov().log_det());
    // f_0 = w, f_{1..d} = w (x - mean), f_{d+1..} = w ((x - mean)_a (x - mean)_b - cov_ab)
    let cov = closed.cov().to_dense();
    let mut pairs = Vec::new();
    for a in 0..d {
        for b in a..d {
            pairs.push((a, b));
        }
    }
    let k = 1 + d + pairs.len();
    let (mut sum, mut sum_sq) = (vec![0.0; k], vec![0.0; k]);
    for _ in 0..samples {
        let x = proposal.sample(rng);
        let dx: Vec<f64> = x.iter().zip(closed.mean()).map(|(a, b)| a - b).collect();
        let log_q = prop_log_norm - 0.5 * proposal.cov().inv_quad_form(&dx);
        let w = kernel_density(&x, y, &p, m, t, beta, log_z)? / log_q.exp();
        let mut f = vec![w];
        f.extend(dx.iter().map(|v| w * v));
        f.extend(pairs.iter().map(|&(a, b)| w * (dx[a] * dx[b] - cov[(a, b)])));
        for (i, v) in f.into_iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let n = samples as f64;
    let mut worst = 0.0f64;
    for i in 0..k {
        let mean = sum[i] / n;
        let se = ((sum_sq[i] / n - mean * mean).max(0.0) / n).sqrt();
        let target = if i == 0 { 1.0 } else { 0.0 };
        worst = worst.max((mean - target).abs() / se.max(1e-300));
    }
    Ok(worst)
}

/// The kernel with quadratic potential has the closed-form Gaussian moments.
pub fn check_kernel_moments(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = [
        (
            SpdMatrix::identity(1),
            SpdMatrix::identity(1),
            0.5,
            1.0,
            vec![0.7],
        ),
        (
            SpdMatrix::from_rows(&[vec![1.5, 0.4], vec![0.4, 0.8]]).expect("SPD"),
            SpdMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.6]]).expect("SPD"),
            0.3,
            1.3,
            vec![0.5, -1.0],
        ),
    ];
    let mut worst = 0.0f64;
    for (sigma, m, t, beta, y) in &cases {
        let z = kernel_moment_z_scores(sigma, m, *t, *beta, y, 200_000, &mut rng).unwrap_or(f64::INFINITY);
        worst = worst.max(z);
    }
    CheckResult::new(
        "kernel-moment-equivalence",
        worst <= 3.0,
        format!("1-d and 2-d kernels, worst deviation {worst:.2} standard errors"),
    )
}

/// Hand-evaluated scalar values of the closed forms.
pub fn check_pinned_scalars(fns: &OracleFns) -> CheckResult {
    let one = SpdMatrix::identity(1);
    let s = |v: f64| SpdMatrix::from_diagonal(vec![v]).expect("positive");
    let mut errs: Vec<(&str, f64)> = Vec::new();
    let mut pin = |name, got: Result<f64>, want: f64| {
        errs.push((name, got.map(|g| (g - want).abs()).unwrap_or(f64::INFINITY)));
    };
    pin(
        "prox cov 10/9",
        (fns.prwpo)(&[0.0], &one, &one, &one, 0.5, 1.0).map(|(_, c)| c.to_dense()[(0, 0)]),
        10.0 / 9.0,
    );
    pin(
        "prox cov stationary",
        (fns.prwpo)(&[0.0], &s(0.75), &one, &one, 0.5, 1.0).map(|(_, c)| c.to_dense()[(0, 0)]),
        1.0,
    );
    pin(
        "stationary 0.75",
        stationary_covariance(&one, &one, 0.5, 1.0).map(|c| c.to_dense()[(0, 0)]),
        0.75,
    );
    pin(
        "stationary 1.5",
        stationary_covariance(&s(2.0), &one, 1.0, 1.0).map(|c| c.to_dense()[(0, 0)]),
        1.5,
    );
    pin(
        "cov update fixed point",
        pbrwp_cov_update(&s(0.75), &one, &one, 0.5, 1.0, 0.3).map(|c| c.to_dense()[(0, 0)]),
        0.75,
    );
    pin(
        "mean update fixed point",
        pbrwp_mean_update(&[0.0], &s(0.75), &one, &one, 0.5, 1.0, 0.3).map(|m| m[0]),
        0.0,
    );
    pin("contraction 2/3", Ok(contraction_factor(1.0, 0.5)), 2.0 / 3.0);
    pin("decay rate eta/6", Ok(kl_decay_rate_bound(1.0, 1.0, 0.5, 1.0, 0.75, 0.06)), 0.01);
    pin("step bound 0.1875", Ok(step_size_bound(&s(2.0), &one, 1.0)), 0.1875);
    pin("norm threshold ln 4", norm_bound_threshold(2, 0.5, 1.0), 4f64.ln());
    pin(
        "kl 1-d",
        kl_gaussians(
            &GaussianDist::new(vec![0.0], s(2.0)).expect("dims"),
            &GaussianDist::new(vec![0.0], one.clone()).expect("dims"),
        ),
        0.5 * (1.0 - 2f64.ln()),
    );
    pin(
        "Z(0) quadratic",
        log_z_exact_quadratic(&[0.0], &one, &one, 0.5, 1.0).map(f64::exp),
        (4.0 * std::f64::consts::PI / 3.0).sqrt(),
    );
    let (name, worst) = errs
        .iter()
        .cloned()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    CheckResult::new(
        "pinned-scalars",
        worst <= 1e-10,
        format!("{} values, worst abs error {worst:.3e} ({})", errs.len(), if name.is_empty() { "-" } else { name }),
    )
}

/// Boundary behaviour of the invertibility condition.
pub fn check_max_t() -> CheckResult {
    let id = SpdMatrix::identity(2);
    let d41 = SpdMatrix::from_diagonal(vec![4.0, 1.0]).expect("positive");
    let got = [
        max_t_check(&id, &id, 1.0),
        max_t_check(&id, &id, 1.5),
        max_t_check(&d41, &id, 2.0),
    ];
    CheckResult::new(
        "max-t-condition",
        got == [true, false, false],
        format!("boundary/over/second-eigenvalue cases -> {got:?}"),
    )
}

/// Every check with the fixed seeds used by `sampler verify`.
pub fn run_suite(fns: &OracleFns) -> Vec<CheckResult> {
    vec![
        check_stationary_round_trip(fns, 50, 11),
        check_kl_monotone_decay(fns, 20, 200, 12),
        check_w2_contraction(fns, 100, 13),
        check_kl_nonnegativity(200, 14),
        check_kernel_moments(15),
        check_pinned_scalars(fns),
        check_max_t(),
    ]
}

/// Plain-text pass/fail table.
pub fn format_table(rows: &[CheckResult]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        let status = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status}  {:<width$}  {}\n", r.name, r.detail));
    }
    out
}
