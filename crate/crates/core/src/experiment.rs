//! Config-driven experiment runs: TOML config in, particle snapshots,
//! `metrics.csv` and a manifest out.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::kernel::ZMethod;
use crate::linalg::{GaussianDist, PreconditionerSpec, SpdMatrix};
use crate::metrics::{cov_trace, kl_estimate_kde, max_particle_norm, mean_norm_trajectory, Bandwidth, KlEstimateConfig};
use crate::potentials::{Potential, QuadraticPotential, ScaledAnnulusPotential, TwoMoonsPotential, ZeroPotential};
use crate::samplers::{Beta, Mala, Mla, Myula, Pbrwp, PbrwpAdam, Sampler, SamplerConfig, Ula};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: [&str; 5] = ["iter", "kl_estimate", "mean_norm", "cov_trace", "max_particle_norm"];

pub fn snapshot_file(iter: u64) -> String {
    format!("particles_{iter}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// Give either the full `sigma` or its diagonal.
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_diag: Option<Vec<f64>>,
    },
    TwoMoons {
        #[serde(default)]
        dim: Option<usize>,
    },
    ScaledAnnulus {
        #[serde(default)]
        scale: Option<Vec<f64>>,
        #[serde(default)]
        radius: Option<f64>,
    },
    Zero {
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Pbrwp,
    Brwp,
    PbrwpAdam,
    Ula,
    Mala,
    Mla,
    Myula,
}

impl SamplerKind {
    fn is_proximal(self) -> bool {
        matches!(self, Self::Pbrwp | Self::Brwp | Self::PbrwpAdam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaName {
    Auto,
}

/// `beta = 1.5` or `beta = "auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSetting {
    Value(f64),
    Named(BetaName),
}

impl BetaSetting {
    fn to_beta(self) -> Beta {
        match self {
            Self::Value(b) => Beta::Fixed(b),
            Self::Named(BetaName::Auto) => Beta::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondName {
    Identity,
}

/// `"identity"`, `{ diagonal = [..] }` or `{ dense = [[..], ..] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrecondSetting {
    Named(PrecondName),
    Diagonal { diagonal: Vec<f64> },
    Dense { dense: Vec<Vec<f64>> },
}

impl PrecondSetting {
    fn to_spec(&self) -> Result<PreconditionerSpec> {
        Ok(match self {
            Self::Named(PrecondName::Identity) => PreconditionerSpec::Identity,
            Self::Diagonal { diagonal } => PreconditionerSpec::Diagonal(diagonal.clone()),
            Self::Dense { dense } => PreconditionerSpec::Dense(SpdMatrix::from_rows(dense)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMethodName {
    Laplace,
    ExactQuadratic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    /// Step size; the Langevin samplers use it as `tau`.
    pub eta: f64,
    pub iters: u64,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub beta: Option<BetaSetting>,
    #[serde(default)]
    pub preconditioner: Option<PrecondSetting>,
    #[serde(default)]
    pub z_method: Option<ZMethodName>,
    #[serde(default)]
    pub z_samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// MYULA smoothing parameter.
    #[serde(default)]
    pub theta: Option<f64>,
    /// MYULA weight of the `|x|_1` term.
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub n_particles: usize,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub snapshot_every: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Euclidean,
    Preconditioner,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// KDE estimate of KL to the target; only available in two dimensions.
    #[serde(default)]
    pub kl: Option<bool>,
    #[serde(default)]
    pub kl_resolution: Option<usize>,
    /// Fixed KDE bandwidth; Silverman's rule when absent.
    #[serde(default)]
    pub kl_bandwidth: Option<f64>,
    #[serde(default)]
    pub kl_grid_min: Option<[f64; 2]>,
    #[serde(default)]
    pub kl_grid_max: Option<[f64; 2]>,
    /// Norm used for `mean_norm` and `max_particle_norm`.
    #[serde(default)]
    pub norm: Option<NormKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialConfig,
    pub sampler: SamplerSection,
    pub init: InitConfig,
    #[serde(default = "default_output")]
    pub output: OutputConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_output() -> OutputConfig {
    OutputConfig {
        dir: None,
        snapshot_every: None,
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn identity_rows(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl PotentialConfig {
    fn resolved(&self) -> Result<Self> {
        Ok(match self {
            Self::Quadratic { sigma, sigma_diag } => {
                let rows = match (sigma, sigma_diag) {
                    (Some(s), None) => s.clone(),
                    (None, Some(d)) => (0..d.len())
                        .map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect())
                        .collect(),
                    _ => return Err(config_err("quadratic potential needs exactly one of sigma, sigma_diag")),
                };
                SpdMatrix::from_rows(&rows)?;
                Self::Quadratic {
                    sigma: Some(rows),
                    sigma_diag: None,
                }
            }
            Self::TwoMoons { dim } => {
                let dim = dim.unwrap_or(2);
                if dim < 2 {
                    return Err(config_err("two_moons needs dim >= 2"));
                }
                Self::TwoMoons { dim: Some(dim) }
            }
            Self::ScaledAnnulus { scale, radius } => {
                let std = ScaledAnnulusPotential::standard();
                let scale = scale.clone().unwrap_or_else(|| std.scale().to_vec());
                let radius = radius.unwrap_or(std.radius());
                if scale.is_empty() || radius <= 0.0 {
                    return Err(config_err("scaled_annulus needs a nonempty scale and positive radius"));
                }
                Self::ScaledAnnulus {
                    scale: Some(scale),
                    radius: Some(radius),
                }
            }
            Self::Zero { dim } => {
                if *dim == 0 {
                    return Err(config_err("zero potential needs dim >= 1"));
                }
                Self::Zero { dim: *dim }
            }
        })
    }

    /// Instantiates the potential; call on a resolved config.
    pub fn build(&self) -> Result<Box<dyn Potential>> {
        Ok(match self.resolved()? {
            Self::Quadratic { sigma, .. } => Box::new(QuadraticPotential::new(SpdMatrix::from_rows(
                &sigma.expect("resolved"),
            )?)),
            Self::TwoMoons { dim } => Box::new(TwoMoonsPotential::with_dim(dim.expect("resolved"))),
            Self::ScaledAnnulus { scale, radius } => Box::new(ScaledAnnulusPotential::new(
                scale.expect("resolved"),
                radius.expect("resolved"),
            )),
            Self::Zero { dim } => Box::new(ZeroPotential::new(dim)),
        })
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Validates the config and materializes every default, so the result
    /// alone reproduces the run.
    pub fn resolved(&self) -> Result<Self> {
        let potential = self.potential.resolved()?;
        let dim = potential.build()?.dim();
        let s = &self.sampler;
        if !(s.eta > 0.0 && s.eta.is_finite()) {
            return Err(config_err(format!("eta must be positive, got {}", s.eta)));
        }
        let t = match (s.kind.is_proximal(), s.t) {
            (true, None) => return Err(config_err(format!("sampler {:?} needs t", s.kind))),
            (_, t) => t,
        };
        let (theta, lambda) = match s.kind {
            SamplerKind::Myula => (
                Some(s.theta.ok_or_else(|| config_err("myula needs theta"))?),
                Some(s.lambda.unwrap_or(0.0)),
            ),
            _ => (s.theta, s.lambda),
        };
        let z_method = s.z_method.unwrap_or(ZMethodName::Laplace);
        let z_samples = match z_method {
            ZMethodName::MonteCarlo => Some(s.z_samples.unwrap_or(1000)),
            _ => s.z_samples,
        };
        let sampler = SamplerSection {
            kind: s.kind,
            eta: s.eta,
            iters: s.iters,
            t,
            beta: Some(s.beta.unwrap_or(BetaSetting::Value(1.0))),
            preconditioner: Some(s.preconditioner.clone().unwrap_or(PrecondSetting::Named(PrecondName::Identity))),
            z_method: Some(z_method),
            z_samples,
            seed: Some(s.seed.unwrap_or(0)),
            theta,
            lambda,
        };
        if self.init.n_particles == 0 {
            return Err(config_err("n_particles must be at least 1"));
        }
        let init = InitConfig {
            n_particles: self.init.n_particles,
            mean: Some(self.init.mean.clone().unwrap_or_else(|| vec![0.0; dim])),
            cov: Some(self.init.cov.clone().unwrap_or_else(|| identity_rows(dim))),
        };
        let snapshot_every = self.output.snapshot_every.unwrap_or(1);
        if snapshot_every == 0 {
            return Err(config_err("snapshot_every must be at least 1"));
        }
        let output = OutputConfig {
            dir: Some(self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))),
            snapshot_every: Some(snapshot_every),
        };
        let m = &self.metrics;
        let kl = m.kl.unwrap_or(dim == 2);
        if kl && dim != 2 {
            return Err(config_err("kl estimate is only available for two-dimensional targets"));
        }
        if m.kl_grid_min.is_some() != m.kl_grid_max.is_some() {
            return Err(config_err("kl_grid_min and kl_grid_max go together"));
        }
        let metrics = MetricsConfig {
            kl: Some(kl),
            kl_resolution: Some(m.kl_resolution.unwrap_or(KlEstimateConfig::default().resolution)),
            kl_bandwidth: m.kl_bandwidth,
            kl_grid_min: m.kl_grid_min,
            kl_grid_max: m.kl_grid_max,
            norm: Some(m.norm.unwrap_or(NormKind::Euclidean)),
        };
        let out = Self {
            potential,
            sampler,
            init,
            output,
            metrics,
        };
        // surface every construction error now, before any output is written
        out.sampler_config(dim)?.validate()?;
        out.init_distribution()?;
        out.kl_config()?;
        out.build_sampler(dim, &*out.potential.build()?)?;
        Ok(out)
    }

    fn sampler_config(&self, dim: usize) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let z_method = match s.z_method.unwrap_or(ZMethodName::Laplace) {
            ZMethodName::Laplace => ZMethod::Laplace,
            ZMethodName::ExactQuadratic => ZMethod::ExactQuadratic,
            ZMethodName::MonteCarlo => ZMethod::MonteCarlo {
                n_samples: s.z_samples.unwrap_or(1000),
            },
        };
        let precond = s
            .preconditioner
            .as_ref()
            .map(PrecondSetting::to_spec)
            .transpose()?
            .unwrap_or(PreconditionerSpec::Identity);
        precond.build(dim)?;
        let mut cfg = SamplerConfig::new(s.eta, s.t.unwrap_or(1.0), 1.0)
            .with_preconditioner(precond)
            .with_z_method(z_method)
            .with_seed(s.seed.unwrap_or(0));
        cfg.beta = s.beta.unwrap_or(BetaSetting::Value(1.0)).to_beta();
        cfg.iters = s.iters;
        Ok(cfg)
    }

    fn init_distribution(&self) -> Result<GaussianDist> {
        let mean = self.init.mean.clone().ok_or_else(|| config_err("unresolved init mean"))?;
        let cov = SpdMatrix::from_rows(self.init.cov.as_ref().ok_or_else(|| config_err("unresolved init cov"))?)?;
        GaussianDist::new(mean, cov)
    }

    fn kl_config(&self) -> Result<KlEstimateConfig> {
        let m = &self.metrics;
        let mut cfg = match (m.kl_grid_min, m.kl_grid_max) {
            (Some(lo), Some(hi)) => KlEstimateConfig::with_grid(lo, hi),
            _ => KlEstimateConfig::default(),
        };
        if let Some(r) = m.kl_resolution {
            cfg.resolution = r;
        }
        if let Some(h) = m.kl_bandwidth {
            cfg.bandwidth = Bandwidth::Fixed(h);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configured sampler for a `dim`-dimensional target.
    pub fn build_sampler(&self, dim: usize, p: &dyn Potential) -> Result<Box<dyn Sampler>> {
        let cfg = self.sampler_config(dim)?;
        let s = &self.sampler;
        let beta = cfg.beta.resolve(dim);
        let seed = cfg.seed;
        Ok(match s.kind {
            SamplerKind::Pbrwp => {
                let sampler = Pbrwp::new(&cfg, dim)?;
                if cfg.z_method == ZMethod::ExactQuadratic && p.as_quadratic().is_none() {
                    return Err(config_err(format!(
                        "exact_quadratic normalizing constant needs a quadratic potential, got {}",
                        p.name()
                    )));
                }
                Box::new(sampler)
            }
            SamplerKind::Brwp => {
                let cfg = cfg.with_preconditioner(PreconditionerSpec::Identity);
                if cfg.z_method == ZMethod::ExactQuadratic && p.as_quadratic().is_none() {
                    return Err(config_err("exact_quadratic normalizing constant needs a quadratic potential"));
                }
                Box::new(Pbrwp::new(&cfg, dim)?)
            }
            SamplerKind::PbrwpAdam => Box::new(PbrwpAdam::new(cfg.eta, cfg.t, beta)?),
            SamplerKind::Ula => Box::new(Ula {
                tau: cfg.eta,
                beta,
                seed,
            }),
            SamplerKind::Mala => Box::new(Mala {
                tau: cfg.eta,
                beta,
                seed,
                last_accept: 1.0,
            }),
            SamplerKind::Mla => Box::new(Mla {
                tau: cfg.eta,
                beta,
                m: cfg.preconditioner.build(dim)?,
                seed,
            }),
            SamplerKind::Myula => {
                let theta = s.theta.ok_or_else(|| config_err("myula needs theta"))?;
                if !(theta > 0.0) {
                    return Err(config_err("theta must be positive"));
                }
                Box::new(Myula {
                    tau: cfg.eta,
                    theta,
                    lambda: s.lambda.unwrap_or(0.0),
                    seed,
                })
            }
        })
    }
}

/// How a run ended badly; decides the process exit code.
#[derive(Debug)]
pub enum RunFailure {
    Config(Error),
    Diverged(Error),
    Runtime(Error),
}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Diverged(_) => 3,
            Self::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Self::Config(e) | Self::Diverged(e) | Self::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error().fmt(f)
    }
}

impl std::error::Error for RunFailure {}

fn runtime(e: Error) -> RunFailure {
    match e {
        Error::Diverged { .. } => RunFailure::Diverged(e),
        other => RunFailure::Runtime(other),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_secs: f64,
    pub wall_clock_secs: f64,
    pub steps: u64,
    pub step_mean_secs: f64,
    pub step_min_secs: f64,
    pub step_max_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// Dimension of the target after resolution.
    pub dim: usize,
    /// Resolved inverse temperature (after `auto`).
    pub beta: f64,
    pub config: RunConfig,
    /// Absent until the run finishes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunManifest {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub kl_estimate: Option<f64>,
    pub mean_norm: f64,
    pub cov_trace: f64,
    pub max_particle_norm: f64,
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_snapshot(path: &Path, x: &ParticleEnsemble) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = (1..=x.dim()).map(|k| format!("x_{k}")).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in x.particles() {
        w.write_record(p.iter().map(|v| format_f64(*v)))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{}: not a number: {s:?}", path.display())))
}

pub fn read_snapshot(path: &Path) -> Result<ParticleEnsemble> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let dim = r.headers().map_err(|e| csv_err(path, e))?.len();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter() {
            data.push(parse_f64(path, field)?);
        }
    }
    let n = data.len() / dim.max(1);
    ParticleEnsemble::from_vec(dim, n, data)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        return Err(Error::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let kl = rec.get(1).unwrap_or("");
        rows.push(MetricsRow {
            iter: rec[0]
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad iteration {:?}", path.display(), &rec[0])))?,
            kl_estimate: if kl.is_empty() { None } else { Some(parse_f64(path, kl)?) },
            mean_norm: parse_f64(path, &rec[2])?,
            cov_trace: parse_f64(path, &rec[3])?,
            max_particle_norm: parse_f64(path, &rec[4])?,
        });
    }
    Ok(rows)
}

fn metrics_record(row: &MetricsRow) -> Vec<String> {
    vec![
        row.iter.to_string(),
        row.kl_estimate.map(format_f64).unwrap_or_default(),
        format_f64(row.mean_norm),
        format_f64(row.cov_trace),
        format_f64(row.max_particle_norm),
    ]
}

/// Everything needed to step and measure one configured run.
pub struct Prepared {
    pub config: RunConfig,
    pub potential: Box<dyn Potential>,
    pub sampler: Box<dyn Sampler>,
    pub initial: ParticleEnsemble,
    pub beta: f64,
    norm_m: Option<SpdMatrix>,
    kl: Option<KlEstimateConfig>,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let config = config.resolved()?;
        let potential = config.potential.build()?;
        let dim = potential.dim();
        let sampler = config.build_sampler(dim, &*potential)?;
        let scfg = config.sampler_config(dim)?;
        let beta = scfg.beta.resolve(dim);
        let init = config.init_distribution()?;
        crate::error::check_dim(dim, init.dim()).map_err(|_| {
            config_err(format!("init has dimension {}, target has {dim}", init.dim()))
        })?;
        let initial = ParticleEnsemble::sample_gaussian(&init, config.init.n_particles, scfg.seed)?;
        let norm_m = match config.metrics.norm {
            Some(NormKind::Preconditioner) => Some(scfg.preconditioner.build(dim)?),
            _ => None,
        };
        let kl = if config.metrics.kl == Some(true) {
            Some(config.kl_config()?)
        } else {
            None
        };
        Ok(Self {
            config,
            potential,
            sampler,
            initial,
            beta,
            norm_m,
            kl,
        })
    }

    /// Diagnostics of one ensemble. A KL estimate that cannot be formed
    /// (target mass off the grid) is left empty.
    pub fn measure(&self, iter: u64, x: &ParticleEnsemble) -> Result<MetricsRow> {
        let kl_estimate = match &self.kl {
            Some(cfg) => {
                let (p, beta) = (&*self.potential, self.beta);
                match kl_estimate_kde(x, &|v: &[f64]| -beta * p.value(v), cfg) {
                    Ok(v) => Some(v),
                    Err(Error::EmptyGrid(_)) => None,
                    Err(e) => return Err(e),
                }
            }
            None => None,
        };
        let m = self.norm_m.as_ref();
        Ok(MetricsRow {
            iter,
            kl_estimate,
            mean_norm: mean_norm_trajectory(std::slice::from_ref(x), m)?[0],
            cov_trace: cov_trace(x),
            max_particle_norm: max_particle_norm(x, m),
        })
    }

    fn manifest(&self, timing: Option<Timing>) -> RunManifest {
        RunManifest {
            tool: "sampler".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.config.sampler.seed.unwrap_or(0),
            dim: self.initial.dim(),
            beta: self.beta,
            config: self.config.clone(),
            timing,
        }
    }
}

/// Result of a finished run.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Vec<MetricsRow>,
    pub final_ensemble: ParticleEnsemble,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Runs a config end to end. `out_dir` and `seed` override the config.
///
/// Writes `particles_0.csv`, then at every `snapshot_every`-th iteration
/// (and the last one) a particle snapshot and a `metrics.csv` row, and the
/// manifest before and after stepping.
pub fn run(config: &RunConfig, out_dir: Option<&Path>, seed: Option<u64>) -> std::result::Result<RunOutcome, RunFailure> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.sampler.seed = Some(s);
    }
    if let Some(d) = out_dir {
        config.output.dir = Some(d.to_path_buf());
    }
    let mut prep = Prepared::new(&config).map_err(|e| match e {
        Error::Io { .. } => RunFailure::Runtime(e),
        e => RunFailure::Config(e),
    })?;
    let dir = prep.config.output.dir.clone().expect("resolved");
    fs::create_dir_all(&dir).map_err(|e| RunFailure::Runtime(io_err(&dir, e)))?;
    execute(&mut prep, &dir).map_err(runtime)
}

fn execute(prep: &mut Prepared, dir: &Path) -> Result<RunOutcome> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    write_text(&dir.join(MANIFEST_FILE), &prep.manifest(None).to_toml_string()?)?;
    let mut x = prep.initial.clone();
    write_snapshot(&dir.join(snapshot_file(0)), &x)?;

    let metrics_path = dir.join(METRICS_FILE);
    let mut mw = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&metrics_path)
        .map_err(|e| csv_err(&metrics_path, e))?;
    mw.write_record(METRICS_HEADER).map_err(|e| csv_err(&metrics_path, e))?;

    let iters = prep.config.sampler.iters;
    let every = prep.config.output.snapshot_every.expect("resolved");
    let (mut tmin, mut tmax, mut tsum) = (f64::INFINITY, 0.0f64, 0.0);
    let mut rows = Vec::new();
    for k in 0..iters {
        let t0 = Instant::now();
        let next = prep.sampler.step(&x, &*prep.potential, k);
        let dt = t0.elapsed().as_secs_f64();
        x = match next {
            Ok(v) => v,
            Err(e) => {
                mw.flush().map_err(|e| io_err(&metrics_path, e))?;
                return Err(e);
            }
        };
        (tmin, tmax, tsum) = (tmin.min(dt), tmax.max(dt), tsum + dt);
        let iter = k + 1;
        if iter % every == 0 || iter == iters {
            write_snapshot(&dir.join(snapshot_file(iter)), &x)?;
            let row = prep.measure(iter, &x)?;
            mw.write_record(metrics_record(&row)).map_err(|e| csv_err(&metrics_path, e))?;
            rows.push(row);
        }
    }
    mw.flush().map_err(|e| io_err(&metrics_path, e))?;
    let timing = Timing {
        started_unix_secs: started,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        steps: iters,
        step_mean_secs: if iters > 0 { tsum / iters as f64 } else { 0.0 },
        step_min_secs: if iters > 0 { tmin } else { 0.0 },
        step_max_secs: tmax,
    };
    let manifest = prep.manifest(Some(timing));
    let mut f = fs::File::create(dir.join(MANIFEST_FILE)).map_err(|e| io_err(dir, e))?;
    f.write_all(manifest.to_toml_string()?.as_bytes()).map_err(|e| io_err(dir, e))?;
    Ok(RunOutcome {
        out_dir: dir.to_path_buf(),
        manifest,
        metrics: rows,
        final_ensemble: x,
    })
}

/// Dense rows of a matrix, for configs built in code.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
