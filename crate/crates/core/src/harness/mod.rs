//! End-to-end experiments: configuration, the unfolding pipeline, coverage
//! studies and the Z boson analysis.

mod coverage;
mod zboson;

pub use coverage::{coverage_vs_nbc, run_coverage_study, CoverageReport, CoverageStudy};
pub use zboson::{
    crystal_ball_bin_means, crystal_ball_loglik, fit_crystal_ball, run_zboson, synthesize_zboson, CrystalBallFit, ZbosonData,
    ZbosonResult, ZbosonSpec,
};

use std::path::PathBuf;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::empirical_bayes::{run_mcem, McemConfig, McemTrace};
use crate::error::{Result, UnfoldError};
use crate::fastpath::{gaussian_mmle, NegativeHandling, RidgeModel};
use crate::forward::{build_response_matrix, CrystalBall, Efficiency, ResponseMatrix, SmearingKernel};
use crate::inference::{nnls_init, posterior_mean, sample_posterior, PosteriorChain, PosteriorModel};
use crate::interval::Interval;
use crate::rng::derive_seed;
use crate::simulate::{BinnedCounts, GaussianComponent, IntensityShape, TrueIntensity};
use crate::splines::{aristotelian_matrix, curvature_matrix, PenaltyMatrix, SplineBasis};
use crate::uncertainty::{
    basic_band_from_sample, basic_sample, bootstrap_run, observed_bias_correction, credible_band, BandMethod,
    BiasCorrectionConfig, BootstrapSettings, IntervalBand, PointEstimator, PosteriorMeanEstimator,
};

/// Stage labels used in errors and timings.
pub mod stage {
    pub const RESPONSE: &str = "response";
    pub const INIT: &str = "init";
    pub const HYPERPARAMETER: &str = "hyperparameter";
    pub const POINT: &str = "point_estimate";
    pub const BOOTSTRAP: &str = "bootstrap";
    pub const CREDIBLE: &str = "credible";
    pub const SIMULATE: &str = "simulate";
    pub const CB_FIT: &str = "crystal_ball_fit";
}

/// Seed-path tags below the root seed.
pub(crate) mod seeds {
    pub const SIMULATE: u64 = 10;
    pub const MCEM: u64 = 11;
    pub const CHAIN: u64 = 12;
    pub const BOOTSTRAP: u64 = 13;
    pub const COVERAGE: u64 = 14;
    pub const ZBOSON: u64 = 15;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean_gev: f64,
    pub sd_gev: f64,
}

/// True intensity; energies in GeV (the toy spectra reuse the same fields).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    GaussianMixture {
        lambda_tot: f64,
        components: Vec<ComponentSpec>,
        uniform_weight: f64,
    },
    /// `scale` multiplies the Breit–Wigner density; when omitted it is set so
    /// that the Z boson fit window receives `window_events` expected events.
    BreitWigner {
        m_z_gev: f64,
        width_gev: f64,
        #[serde(default)]
        scale: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian {
        sigma_gev: f64,
    },
    CrystalBall {
        delta_m_gev: f64,
        sigma_gev: f64,
        alpha: f64,
        gamma: f64,
    },
    Identity,
    /// A `t,s,value` CSV file.
    Tabulated {
        file: PathBuf,
    },
}

impl KernelSpec {
    pub fn build(&self) -> Result<SmearingKernel> {
        let kernel = match self {
            KernelSpec::Gaussian { sigma_gev } => SmearingKernel::gaussian(*sigma_gev)?,
            KernelSpec::CrystalBall {
                delta_m_gev,
                sigma_gev,
                alpha,
                gamma,
            } => SmearingKernel::CrystalBall(CrystalBall::new(*delta_m_gev, *sigma_gev, *alpha, *gamma)?),
            KernelSpec::Identity => SmearingKernel::Identity,
            KernelSpec::Tabulated { file } => {
                let f = std::fs::File::open(file)?;
                SmearingKernel::Tabulated(crate::io::read_kernel(f)?)
            }
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn from_crystal_ball(cb: &CrystalBall) -> Self {
        KernelSpec::CrystalBall {
            delta_m_gev: cb.delta_m,
            sigma_gev: cb.sigma,
            alpha: cb.alpha,
            gamma: cb.gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorPath {
    /// Posterior mean under the Poisson likelihood, delta by Monte Carlo EM.
    #[default]
    Full,
    /// Ridge estimate under the Gaussian approximation, delta by its marginal likelihood.
    Fast,
}

fn default_grid_points() -> usize {
    200
}

fn default_methods() -> Vec<BandMethod> {
    vec![BandMethod::BcPercentile]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub truth: TruthSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub efficiency: Efficiency,
    pub true_domain_gev: Interval,
    pub smeared_domain_gev: Interval,
    pub n_bins: usize,
    pub interior_knots: usize,
    pub spline_order: usize,
    pub gamma_left: f64,
    pub gamma_right: f64,
    pub mcem: McemConfig,
    pub bias_correction: BiasCorrectionConfig,
    pub r_uq: usize,
    pub alpha: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub estimator: EstimatorPath,
    #[serde(default = "default_methods")]
    pub methods: Vec<BandMethod>,
    #[serde(default)]
    pub negatives: NegativeHandling,
    /// Re-estimate delta inside every bootstrap refit instead of keeping it fixed.
    #[serde(default)]
    pub resample_delta: bool,
    #[serde(default)]
    pub zboson: Option<ZbosonSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            UnfoldError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            UnfoldError::Config(m) => UnfoldError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UnfoldError::Config(m));
        if self.n_bins == 0 {
            return bad("n_bins must be at least 1".into());
        }
        if self.spline_order < 3 {
            return bad(format!(
                "spline_order must be at least 3 for the curvature penalty, got {}",
                self.spline_order
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 0.5), got {}", self.alpha));
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2".into());
        }
        if self.r_uq < crate::uncertainty::MIN_REPLICATES {
            return bad(format!(
                "r_uq must be at least {}, got {}",
                crate::uncertainty::MIN_REPLICATES,
                self.r_uq
            ));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        for g in [self.gamma_left, self.gamma_right] {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("boundary hyperparameters must be >= 0, got {g}"));
            }
        }
        self.mcem.validate().map_err(|e| UnfoldError::Config(format!("mcem: {e}")))?;
        self.bias_correction
            .validate()
            .map_err(|e| UnfoldError::Config(format!("bias_correction: {e}")))?;
        self.efficiency.validate().map_err(|e| UnfoldError::Config(format!("efficiency: {e}")))?;
        if let TruthSpec::BreitWigner { scale: None, .. } = self.truth {
            if self.zboson.is_none() {
                return bad("breit_wigner truth needs a scale unless a zboson section is given".into());
            }
        }
        if let Some(z) = &self.zboson {
            z.validate()?;
        }
        Ok(())
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        self.smeared_domain_gev.uniform_edges(self.n_bins)
    }

    pub fn grid(&self) -> Vec<f64> {
        self.true_domain_gev.linspace(self.grid_points)
    }

    pub fn basis(&self) -> Result<SplineBasis> {
        SplineBasis::uniform(self.true_domain_gev, self.interior_knots, self.spline_order)
    }

    pub fn penalty(&self, basis: &SplineBasis) -> Result<PenaltyMatrix> {
        aristotelian_matrix(&curvature_matrix(basis)?, self.gamma_left, self.gamma_right)
    }

    /// The true intensity on `true_domain_gev`, in the units of the unfolded data.
    pub fn truth(&self) -> Result<TrueIntensity> {
        let shape = match &self.truth {
            TruthSpec::GaussianMixture {
                lambda_tot,
                components,
                uniform_weight,
            } => IntensityShape::GaussianMixture {
                lambda_tot: *lambda_tot,
                components: components
                    .iter()
                    .map(|c| GaussianComponent {
                        weight: c.weight,
                        mean: c.mean_gev,
                        sd: c.sd_gev,
                    })
                    .collect(),
                uniform_weight: *uniform_weight,
            },
            TruthSpec::BreitWigner {
                m_z_gev,
                width_gev,
                scale,
            } => {
                let scale = match (scale, &self.zboson) {
                    (Some(s), _) => *s,
                    (None, Some(z)) => z.generating_scale(self)? * z.unfold_fraction,
                    (None, None) => unreachable!("rejected by validate"),
                };
                IntensityShape::BreitWigner {
                    scale,
                    m_z: *m_z_gev,
                    width: *width_gev,
                }
            }
        };
        let truth = TrueIntensity {
            domain: self.true_domain_gev,
            shape,
        };
        truth.validate()?;
        Ok(truth)
    }

    /// Stage seeds derived from the root seed.
    pub fn stage_seed(&self, tag: u64) -> u64 {
        derive_seed(self.seed, &[tag])
    }
}

/// Response, penalty and evaluation grid for one configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub basis: SplineBasis,
    pub penalty: PenaltyMatrix,
    pub kernel: SmearingKernel,
    pub response: ResponseMatrix,
    pub edges: Vec<f64>,
    pub grid: Vec<f64>,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let basis = config.basis()?;
        let penalty = config.penalty(&basis)?;
        let kernel = config.kernel.build()?;
        let edges = config.bin_edges();
        let response = build_response_matrix(&kernel, &config.efficiency, &basis, &edges)
            .map_err(|e| e.at_stage(stage::RESPONSE))?;
        Ok(Self {
            basis,
            penalty,
            kernel,
            response,
            edges,
            grid: config.grid(),
        })
    }

    pub fn check_binning(&self, y: &BinnedCounts) -> Result<()> {
        let tol = 1e-9 * self.edges.iter().fold(1.0f64, |m, e| m.max(e.abs()));
        let same = y.bin_edges().len() == self.edges.len()
            && y.bin_edges().iter().zip(&self.edges).all(|(a, b)| (a - b).abs() <= tol);
        if same {
            Ok(())
        } else {
            Err(UnfoldError::InvalidParameter(format!(
                "data binning ({} bins on [{}, {}]) does not match the config ({} bins on [{}, {}])",
                y.len(),
                y.bin_edges()[0],
                y.bin_edges()[y.len()],
                self.edges.len() - 1,
                self.edges[0],
                self.edges[self.edges.len() - 1]
            )))
        }
    }

    pub fn posterior(&self, y: &[u64], delta: f64) -> Result<PosteriorModel> {
        PosteriorModel::new(self.response.entries.clone(), y, self.penalty.entries.clone(), delta)
    }

    pub fn ridge(&self, delta: f64, negatives: NegativeHandling) -> Result<RidgeModel> {
        let mut m = RidgeModel::new(self.response.entries.clone(), self.penalty.entries.clone(), delta)?;
        m.negatives = negatives;
        Ok(m)
    }
}

/// Ridge refits that re-estimate delta from each dataset.
struct RidgeWithMmle(RidgeModel);

impl PointEstimator for RidgeWithMmle {
    fn estimate(&self, y: &[u64], rng: &mut crate::rng::Stream) -> Result<Vec<f64>> {
        let d = gaussian_mmle(y, self.0.response(), self.0.omega_a())?;
        self.0.with_delta(d)?.estimate(y, rng)
    }

    fn response(&self) -> &nalgebra::DMatrix<f64> {
        self.0.response()
    }
}

/// Posterior-mean refits that re-run Monte Carlo EM on each dataset.
struct PosteriorWithMcem {
    inner: PosteriorMeanEstimator,
    mcem: McemConfig,
}

impl PointEstimator for PosteriorWithMcem {
    fn estimate(&self, y: &[u64], rng: &mut crate::rng::Stream) -> Result<Vec<f64>> {
        use rand::RngCore;
        let model = self.inner.model.with_data(y)?;
        let cfg = McemConfig {
            seed: rng.next_u64(),
            ..self.mcem.clone()
        };
        let (delta, _) = run_mcem(&model, &self.inner.start, &cfg)?;
        let est = PosteriorMeanEstimator {
            model: model.with_delta(delta)?,
            ..self.inner.clone()
        };
        est.estimate(y, rng)
    }

    fn response(&self) -> &nalgebra::DMatrix<f64> {
        self.inner.response()
    }
}

/// Estimators for one dataset: the point estimate and hyperparameter plus
/// the refit used inside the bootstrap.
pub(crate) struct Fitted {
    pub delta_hat: f64,
    pub trace: Option<McemTrace>,
    pub beta_init: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub chain: Option<PosteriorChain>,
    pub estimator: Box<dyn PointEstimator + Send>,
}

/// Hyperparameter, point estimate and bootstrap estimator for `y`.
pub(crate) fn fit(
    config: &ExperimentConfig,
    setup: &Setup,
    y: &BinnedCounts,
    seed: u64,
    need_chain: bool,
    timings: &mut Vec<(String, f64)>,
) -> Result<Fitted> {
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let counts = y.counts();
    let beta_init = nnls_init(y, &setup.basis).map_err(|e| e.at_stage(stage::INIT))?;
    lap(stage::INIT, timings);
    let s = config.mcem.s;
    let burn_in = config.mcem.burn_in();
    match config.estimator {
        EstimatorPath::Full => {
            let model = setup.posterior(counts, config.mcem.delta0)?;
            let mcem = McemConfig {
                seed: derive_seed(seed, &[seeds::MCEM]),
                ..config.mcem.clone()
            };
            let (delta_hat, trace) =
                run_mcem(&model, &beta_init, &mcem).map_err(|e| e.at_stage(stage::HYPERPARAMETER))?;
            lap(stage::HYPERPARAMETER, timings);
            let start = trace
                .iterations
                .last()
                .map_or_else(|| beta_init.clone(), |it| it.mean_beta.clone());
            let at = model.with_delta(delta_hat)?;
            let chain = sample_posterior(&at, s, &start, burn_in, derive_seed(seed, &[seeds::CHAIN]))
                .map_err(|e| e.at_stage(stage::POINT))?;
            let beta_hat = posterior_mean(&chain)?;
            lap(stage::POINT, timings);
            let inner = PosteriorMeanEstimator {
                model: at,
                draws: config.bias_correction.s,
                burn_in: config.bias_correction.s,
                start: beta_hat.clone(),
            };
            let estimator: Box<dyn PointEstimator + Send> = if config.resample_delta {
                Box::new(PosteriorWithMcem {
                    inner,
                    mcem: config.mcem.clone(),
                })
            } else {
                Box::new(inner)
            };
            Ok(Fitted {
                delta_hat,
                trace: Some(trace),
                beta_init,
                beta_hat,
                chain: Some(chain),
                estimator,
            })
        }
        EstimatorPath::Fast => {
            let k = &setup.response.entries;
            let delta_hat = gaussian_mmle(counts, k, &setup.penalty.entries)
                .map_err(|e| e.at_stage(stage::HYPERPARAMETER))?;
            lap(stage::HYPERPARAMETER, timings);
            let ridge = setup.ridge(delta_hat, config.negatives)?;
            let beta_hat = ridge
                .estimate(counts, &mut crate::rng::stream(0))
                .map_err(|e| e.at_stage(stage::POINT))?;
            lap(stage::POINT, timings);
            let chain = if need_chain {
                let at = setup.posterior(counts, delta_hat)?;
                let c = sample_posterior(&at, s, &beta_init, burn_in, derive_seed(seed, &[seeds::CHAIN]))
                    .map_err(|e| e.at_stage(stage::CREDIBLE))?;
                lap(stage::CREDIBLE, timings);
                Some(c)
            } else {
                None
            };
            let estimator: Box<dyn PointEstimator + Send> = if config.resample_delta {
                Box::new(RidgeWithMmle(ridge))
            } else {
                Box::new(ridge)
            };
            Ok(Fitted {
                delta_hat,
                trace: None,
                beta_init,
                beta_hat,
                chain,
                estimator,
            })
        }
    }
}

/// Bands for one dataset: percentile-type bands share one bootstrap run at
/// the largest requested correction level.
pub(crate) struct BandSet {
    pub bands: Vec<IntervalBand>,
    pub beta_bc: Vec<f64>,
}

pub(crate) fn bands_for(
    config: &ExperimentConfig,
    setup: &Setup,
    y: &[u64],
    fitted: &Fitted,
    requests: &[(BandMethod, usize)],
    seed: u64,
) -> Result<BandSet> {
    let n_bc = config.bias_correction.n_bc;
    let boot_seed = derive_seed(seed, &[seeds::BOOTSTRAP]);
    let settings = BootstrapSettings {
        n_bc: requests
            .iter()
            .filter(|(m, _)| matches!(m, BandMethod::BcPercentile | BandMethod::Percentile | BandMethod::Stderr))
            .map(|&(_, l)| l)
            .max()
            .unwrap_or(n_bc)
            .max(n_bc),
        r_bc: config.bias_correction.r_bc,
        r_uq: config.r_uq,
        alpha: config.alpha,
        seed: boot_seed,
    };
    let needs_run = requests
        .iter()
        .any(|(m, _)| matches!(m, BandMethod::BcPercentile | BandMethod::Percentile | BandMethod::Stderr));
    let est = fitted.estimator.as_ref();
    let run = if needs_run {
        Some(bootstrap_run(y, &fitted.beta_hat, est, &setup.basis, &setup.grid, &settings)?)
    } else {
        None
    };
    let beta_bc = match &run {
        Some(r) => r.observed[n_bc].clone(),
        None => {
            let obs = observed_bias_correction(&fitted.beta_hat, est, n_bc, settings.r_bc, boot_seed)?;
            obs[n_bc].clone()
        }
    };
    let mut bands = Vec::with_capacity(requests.len());
    let mut basic = None;
    for &(method, level) in requests {
        let band = match method {
            BandMethod::BcPercentile | BandMethod::Percentile => {
                run.as_ref().expect("bootstrap run computed").percentile_band(level)?
            }
            BandMethod::Stderr => run.as_ref().expect("bootstrap run computed").stderr_band(level)?,
            BandMethod::Basic => {
                if basic.is_none() {
                    basic = Some(basic_sample(
                        &fitted.beta_hat,
                        est,
                        &setup.basis,
                        &setup.grid,
                        config.r_uq,
                        boot_seed,
                    )?);
                }
                let point = setup.basis.eval_intensity(&fitted.beta_hat, &setup.grid)?;
                basic_band_from_sample(&point, basic.as_ref().expect("just set"), &setup.grid, config.alpha)?
            }
            BandMethod::Credible => {
                let chain = fitted.chain.as_ref().ok_or(UnfoldError::EmptyChain)?;
                credible_band(chain, &setup.basis, config.alpha, &setup.grid)?
            }
        };
        bands.push(band);
    }
    Ok(BandSet { bands, beta_bc })
}

/// The `(method, correction level)` pairs for the configured methods.
pub(crate) fn method_requests(config: &ExperimentConfig, methods: &[BandMethod]) -> Vec<(BandMethod, usize)> {
    methods
        .iter()
        .map(|&m| match m {
            BandMethod::Percentile | BandMethod::Basic | BandMethod::Credible => (m, 0),
            BandMethod::BcPercentile | BandMethod::Stderr => (m, config.bias_correction.n_bc),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct UnfoldingResult {
    pub delta_hat: f64,
    pub trace: Option<McemTrace>,
    pub beta_init: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub beta_bc: Vec<f64>,
    pub grid: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub f_bc: Vec<f64>,
    /// The configured truth on the grid.
    pub f_true: Vec<f64>,
    pub bands: Vec<IntervalBand>,
    pub chain: Option<PosteriorChain>,
    pub condition_number: f64,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

impl UnfoldingResult {
    pub fn band(&self, method: BandMethod) -> Option<&IntervalBand> {
        self.bands.iter().find(|b| b.method == method)
    }
}

/// Response matrix, initialization, hyperparameter, point estimate, bias
/// correction and bands for the observed histogram `y`.
pub fn run_unfolding(config: &ExperimentConfig, y: &BinnedCounts) -> Result<UnfoldingResult> {
    let clock = Instant::now();
    let setup = Setup::new(config)?;
    let mut timings = vec![(stage::RESPONSE.to_string(), clock.elapsed().as_secs_f64())];
    run_unfolding_with(config, &setup, y, &mut timings)
}

pub(crate) fn run_unfolding_with(
    config: &ExperimentConfig,
    setup: &Setup,
    y: &BinnedCounts,
    timings: &mut Vec<(String, f64)>,
) -> Result<UnfoldingResult> {
    setup.check_binning(y)?;
    info!(
        "unfolding '{}' ({} events, {:?} path)",
        config.name,
        y.total(),
        config.estimator
    );
    let need_chain = config.methods.contains(&BandMethod::Credible);
    let fitted = fit(config, setup, y, config.seed, need_chain, timings)?;
    info!("delta_hat = {:e}", fitted.delta_hat);
    let clock = Instant::now();
    let requests = method_requests(config, &config.methods);
    let set = bands_for(config, setup, y.counts(), &fitted, &requests, config.seed)
        .map_err(|e| e.at_stage(stage::BOOTSTRAP))?;
    timings.push((stage::BOOTSTRAP.to_string(), clock.elapsed().as_secs_f64()));
    let f_hat = setup.basis.eval_intensity(&fitted.beta_hat, &setup.grid)?;
    let f_bc = setup.basis.eval_intensity(&set.beta_bc, &setup.grid)?;
    let f_true = config.truth()?.values(&setup.grid);
    Ok(UnfoldingResult {
        delta_hat: fitted.delta_hat,
        trace: fitted.trace,
        beta_init: fitted.beta_init,
        beta_hat: fitted.beta_hat,
        beta_bc: set.beta_bc,
        grid: setup.grid.clone(),
        f_hat,
        f_bc,
        f_true,
        bands: set.bands,
        chain: fitted.chain,
        condition_number: setup.response.condition_number,
        timings: std::mem::take(timings),
    })
}

/// Simulates the configured experiment's histogram from the root seed.
pub fn simulate_data(config: &ExperimentConfig) -> Result<BinnedCounts> {
    let kernel = config.kernel.build()?;
    let truth = config.truth()?;
    let mut rng = crate::rng::stream(config.stage_seed(seeds::SIMULATE));
    crate::simulate::simulate_counts(&truth, &config.efficiency, &kernel, &config.bin_edges(), &mut rng)
        .map_err(|e| e.at_stage(stage::SIMULATE))
}

/// Shipped-style configuration for the two-peak spectrum at `lambda_tot` expected events.
pub fn gmm_config(name: &str, lambda_tot: f64, n_bc: usize) -> ExperimentConfig {
    let domain = Interval::new(-7.0, 7.0).expect("static domain");
    ExperimentConfig {
        name: name.to_string(),
        truth: TruthSpec::GaussianMixture {
            lambda_tot,
            components: vec![
                ComponentSpec {
                    weight: 0.2,
                    mean_gev: -2.0,
                    sd_gev: 1.0,
                },
                ComponentSpec {
                    weight: 0.5,
                    mean_gev: 2.0,
                    sd_gev: 1.0,
                },
            ],
            uniform_weight: 0.3,
        },
        kernel: KernelSpec::Gaussian { sigma_gev: 1.0 },
        efficiency: Efficiency::default(),
        true_domain_gev: domain,
        smeared_domain_gev: domain,
        n_bins: 40,
        interior_knots: 26,
        spline_order: 4,
        gamma_left: 5.0,
        gamma_right: 5.0,
        mcem: McemConfig::default(),
        bias_correction: BiasCorrectionConfig {
            n_bc,
            r_bc: 10,
            s: 1000,
            seed: 0,
        },
        r_uq: 200,
        alpha: 0.025,
        grid_points: 200,
        seed: 1,
        estimator: EstimatorPath::Full,
        methods: default_methods(),
        negatives: NegativeHandling::Clip,
        resample_delta: false,
        zboson: None,
    }
}

/// Shipped-style configuration for the Z boson analysis.
pub fn zboson_config() -> ExperimentConfig {
    ExperimentConfig {
        name: "zboson".to_string(),
        truth: TruthSpec::BreitWigner {
            m_z_gev: 91.1876,
            width_gev: 2.4952,
            scale: None,
        },
        kernel: KernelSpec::CrystalBall {
            delta_m_gev: 0.56,
            sigma_gev: 1.01,
            alpha: 1.95,
            gamma: 1.40,
        },
        true_domain_gev: Interval::new(81.5, 98.5).expect("static domain"),
        smeared_domain_gev: Interval::new(82.5, 97.5).expect("static domain"),
        n_bins: 30,
        interior_knots: 34,
        gamma_left: 50.0,
        gamma_right: 50.0,
        zboson: Some(ZbosonSpec::default()),
        ..gmm_config("zboson", 0.0, 5)
    }
}
