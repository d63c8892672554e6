//! Iterative bootstrap bias correction and pointwise bootstrap bands.
//!
//! Randomness is organised in substreams of the band seed so that results do
//! not depend on how outer replicates are scheduled across threads:
//! `[OBSERVED_BC, i, r]` for correcting the observed estimate,
//! `[OUTER_DATA, r]`, `[OUTER_FIT, r]` and `[OUTER_BC, r, i, rr]` for outer
//! replicate `r`, and `[BASIC_DATA, r]`, `[BASIC_FIT, r]` for the basic band.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnfoldError};
use crate::inference::{posterior_mean, sample_posterior_with, PosteriorChain, PosteriorModel};
use crate::rng::{substream, Stream};
use crate::special::normal_quantile;
use crate::splines::SplineBasis;

const OBSERVED_FIT: u64 = 0;
const OBSERVED_BC: u64 = 1;
const OUTER_DATA: u64 = 2;
const OUTER_FIT: u64 = 3;
const OUTER_BC: u64 = 4;
const BASIC_DATA: u64 = 5;
const BASIC_FIT: u64 = 6;

/// Fewest outer replicates for which empirical quantiles are accepted.
pub const MIN_REPLICATES: usize = 20;

/// Maps a histogram to nonnegative spline coefficients.
pub trait PointEstimator: Sync {
    fn estimate(&self, y: &[u64], rng: &mut Stream) -> Result<Vec<f64>>;

    /// The response used to resample `y* ~ Poisson(K beta)`.
    fn response(&self) -> &DMatrix<f64>;
}

/// Posterior mean at fixed `delta` from a fresh chain started at `start`.
#[derive(Debug, Clone)]
pub struct PosteriorMeanEstimator {
    pub model: PosteriorModel,
    pub draws: usize,
    pub burn_in: usize,
    pub start: Vec<f64>,
}

impl PointEstimator for PosteriorMeanEstimator {
    fn estimate(&self, y: &[u64], rng: &mut Stream) -> Result<Vec<f64>> {
        let model = self.model.with_data(y)?;
        let chain = sample_posterior_with(&model, self.draws, &self.start, self.burn_in, rng)?;
        posterior_mean(&chain)
    }

    fn response(&self) -> &DMatrix<f64> {
        self.model.response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasCorrectionConfig {
    pub n_bc: usize,
    pub r_bc: usize,
    /// Recorded draws per refit on the full path.
    pub s: usize,
    /// Set from the experiment's root seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl BiasCorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_bc == 0 || self.s == 0 {
            return Err(UnfoldError::InvalidParameter(
                "r_bc and s must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMethod {
    BcPercentile,
    Percentile,
    Basic,
    Stderr,
    Credible,
}

impl BandMethod {
    pub const ALL: [BandMethod; 5] = [
        BandMethod::BcPercentile,
        BandMethod::Percentile,
        BandMethod::Basic,
        BandMethod::Stderr,
        BandMethod::Credible,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BandMethod::BcPercentile => "bc_percentile",
            BandMethod::Percentile => "percentile",
            BandMethod::Basic => "basic",
            BandMethod::Stderr => "stderr",
            BandMethod::Credible => "credible",
        }
    }
}

impl std::fmt::Display for BandMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BandMethod {
    type Err = UnfoldError;

    fn from_str(s: &str) -> Result<Self> {
        BandMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnfoldError::InvalidParameter(format!("unknown band method '{s}'")))
    }
}

/// Pointwise band on a grid. `point` is the uncorrected estimate and
/// `bc_point` the bias-corrected one (equal to `point` when no correction ran).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBand {
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub point: Vec<f64>,
    pub bc_point: Vec<f64>,
    pub method: BandMethod,
    pub alpha: f64,
}

impl IntervalBand {
    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        truth
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| lo <= t && t <= hi)
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(UnfoldError::InvalidParameter(format!(
            "alpha must lie in (0, 0.5), got {alpha}"
        )))
    }
}

fn check_replicates(r_uq: usize) -> Result<()> {
    if r_uq < MIN_REPLICATES {
        return Err(UnfoldError::InvalidParameter(format!(
            "need at least {MIN_REPLICATES} bootstrap replicates, got {r_uq}"
        )));
    }
    Ok(())
}

/// Empirical quantile by order-statistic interpolation at position `q (R + 1)`,
/// clamped to the sample extremes. `sorted` must be ascending.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let r = sorted.len();
    let h = q * (r + 1) as f64;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= r as f64 {
        return sorted[r - 1];
    }
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

/// Poisson counts with means `mu` (negative or zero means give zero).
pub fn poisson_resample<R: Rng + ?Sized>(mu: &[f64], rng: &mut R) -> Vec<u64> {
    mu.iter()
        .map(|&m| {
            if m > 0.0 {
                Poisson::new(m).map(|d| d.sample(rng) as u64).unwrap_or(0)
            } else {
                0
            }
        })
        .collect()
}

fn smeared(k: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (k * DVector::from_column_slice(beta)).as_slice().to_vec()
}

/// Algorithm-2 bias correction returning every iterate `beta^(0), ..., beta^(n_bc)`.
///
/// The `r`-th refit of iteration `i` uses the stream `stream_for(i, r)` for both
/// the resample and the fit.
pub fn bias_correct_iterates<E: PointEstimator + ?Sized>(
    beta0: &[f64],
    estimator: &E,
    n_bc: usize,
    r_bc: usize,
    mut stream_for: impl FnMut(usize, usize) -> Stream,
) -> Result<Vec<Vec<f64>>> {
    if beta0.iter().any(|b| !(*b >= 0.0)) {
        return Err(UnfoldError::InvalidParameter(
            "bias correction needs a nonnegative starting estimate".into(),
        ));
    }
    if r_bc == 0 && n_bc > 0 {
        return Err(UnfoldError::InvalidParameter("r_bc must be at least 1".into()));
    }
    let k = estimator.response();
    let p = beta0.len();
    let mut iterates = vec![beta0.to_vec()];
    for i in 0..n_bc {
        let current = &iterates[i];
        let mu = smeared(k, current);
        let mut mean = vec![0.0; p];
        for r in 0..r_bc {
            let mut rng = stream_for(i, r);
            let y_star = poisson_resample(&mu, &mut rng);
            let fit = estimator
                .estimate(&y_star, &mut rng)
                .map_err(|e| e.at_replicate(r))?;
            for (m, v) in mean.iter_mut().zip(&fit) {
                *m += v / r_bc as f64;
            }
        }
        let next = beta0
            .iter()
            .zip(mean.iter().zip(current))
            .map(|(b0, (m, c))| (b0 - (m - c)).max(0.0))
            .collect();
        iterates.push(next);
    }
    Ok(iterates)
}

/// Bias-corrected estimate `beta_BC = beta^(N_BC)` using the posterior mean at fixed `delta_hat`.
pub fn bias_correct(
    beta_hat0: &[f64],
    delta_hat: f64,
    k: &DMatrix<f64>,
    omega_a: &DMatrix<f64>,
    cfg: &BiasCorrectionConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let zero = vec![0u64; k.nrows()];
    let estimator = PosteriorMeanEstimator {
        model: PosteriorModel::new(k.clone(), &zero, omega_a.clone(), delta_hat)?,
        draws: cfg.s,
        burn_in: cfg.s,
        start: beta_hat0.to_vec(),
    };
    let mut iterates = observed_bias_correction(beta_hat0, &estimator, cfg.n_bc, cfg.r_bc, cfg.seed)?;
    Ok(iterates.pop().expect("at least the starting iterate"))
}

/// Settings shared by the bootstrap band constructions.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSettings {
    pub n_bc: usize,
    pub r_bc: usize,
    pub r_uq: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Observed estimates plus outer bootstrap intensities at every bias-correction level.
#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub grid: Vec<f64>,
    pub alpha: f64,
    /// Observed iterates `beta^(0..=n_bc)`.
    pub observed: Vec<Vec<f64>>,
    /// `levels[i][r][g]`: outer replicate `r` corrected `i` times, at grid point `g`.
    pub levels: Vec<Vec<Vec<f64>>>,
    basis: SplineBasis,
}

impl BootstrapRun {
    pub fn n_bc(&self) -> usize {
        self.observed.len() - 1
    }

    fn point(&self, level: usize) -> Result<Vec<f64>> {
        self.basis.eval_intensity(&self.observed[level], &self.grid)
    }

    /// Percentile band of the bootstrap intensities corrected `level` times;
    /// level 0 is the plain percentile band.
    pub fn percentile_band(&self, level: usize) -> Result<IntervalBand> {
        let sample = self.level(level)?;
        let (lower, upper) = pointwise(sample, |s| {
            (empirical_quantile(s, self.alpha), empirical_quantile(s, 1.0 - self.alpha))
        });
        Ok(IntervalBand {
            grid: self.grid.clone(),
            lower,
            upper,
            point: self.point(0)?,
            bc_point: self.point(level)?,
            method: if level == 0 {
                BandMethod::Percentile
            } else {
                BandMethod::BcPercentile
            },
            alpha: self.alpha,
        })
    }

    /// `f_BC(s) +- z_{1-alpha} sd*(s)` from the bootstrap intensities at `level`.
    pub fn stderr_band(&self, level: usize) -> Result<IntervalBand> {
        let sample = self.level(level)?;
        let z = normal_quantile(1.0 - self.alpha);
        let center = self.point(level)?;
        let sd = pointwise_sd(sample);
        Ok(IntervalBand {
            grid: self.grid.clone(),
            lower: center.iter().zip(&sd).map(|(c, s)| c - z * s).collect(),
            upper: center.iter().zip(&sd).map(|(c, s)| c + z * s).collect(),
            point: self.point(0)?,
            bc_point: center,
            method: BandMethod::Stderr,
            alpha: self.alpha,
        })
    }

    fn level(&self, level: usize) -> Result<&Vec<Vec<f64>>> {
        self.levels.get(level).ok_or_else(|| {
            UnfoldError::InvalidParameter(format!(
                "bias-correction level {level} not computed (max {})",
                self.n_bc()
            ))
        })
    }
}

/// Applies `f` to the sorted replicate values at each grid point.
fn pointwise(sample: &[Vec<f64>], f: impl Fn(&[f64]) -> (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let g = sample.first().map_or(0, Vec::len);
    let mut column = vec![0.0; sample.len()];
    (0..g)
        .map(|j| {
            for (c, row) in column.iter_mut().zip(sample) {
                *c = row[j];
            }
            column.sort_by(f64::total_cmp);
            f(&column)
        })
        .unzip()
}

fn pointwise_sd(sample: &[Vec<f64>]) -> Vec<f64> {
    let r = sample.len() as f64;
    let g = sample.first().map_or(0, Vec::len);
    (0..g)
        .map(|j| {
            let mean = sample.iter().map(|row| row[j]).sum::<f64>() / r;
            let ss = sample.iter().map(|row| (row[j] - mean).powi(2)).sum::<f64>();
            (ss / (r - 1.0).max(1.0)).sqrt()
        })
        .collect()
}

/// Corrects the observed estimate with the streams reserved for it.
pub fn observed_bias_correction<E: PointEstimator + ?Sized>(
    beta_hat: &[f64],
    estimator: &E,
    n_bc: usize,
    r_bc: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    bias_correct_iterates(beta_hat, estimator, n_bc, r_bc, |i, r| {
        substream(seed, &[OBSERVED_BC, i as u64, r as u64])
    })
}

/// Fits the observed data with the stream reserved for it.
pub fn observed_estimate<E: PointEstimator + ?Sized>(y: &[u64], estimator: &E, seed: u64) -> Result<Vec<f64>> {
    estimator.estimate(y, &mut substream(seed, &[OBSERVED_FIT]))
}

/// Corrects the observed estimate `beta_hat` and runs the outer bootstrap
/// `y* ~ Poisson(y)` with every outer refit corrected `n_bc` times.
pub fn bootstrap_run<E: PointEstimator + ?Sized>(
    y: &[u64],
    beta_hat: &[f64],
    estimator: &E,
    basis: &SplineBasis,
    grid: &[f64],
    settings: &BootstrapSettings,
) -> Result<BootstrapRun> {
    check_alpha(settings.alpha)?;
    check_replicates(settings.r_uq)?;
    let seed = settings.seed;
    let observed = observed_bias_correction(beta_hat, estimator, settings.n_bc, settings.r_bc, seed)?;
    let mu: Vec<f64> = y.iter().map(|&c| c as f64).collect();
    let per_replicate: Vec<Vec<Vec<f64>>> = (0..settings.r_uq)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<f64>>> {
            let ru = r as u64;
            let y_star = poisson_resample(&mu, &mut substream(seed, &[OUTER_DATA, ru]));
            let fit = estimator.estimate(&y_star, &mut substream(seed, &[OUTER_FIT, ru]))?;
            let iterates = bias_correct_iterates(&fit, estimator, settings.n_bc, settings.r_bc, |i, rr| {
                substream(seed, &[OUTER_BC, ru, i as u64, rr as u64])
            })?;
            iterates
                .iter()
                .map(|b| basis.eval_intensity(b, grid))
                .collect()
        })
        .enumerate()
        .map(|(r, res)| res.map_err(|e| e.at_replicate(r)))
        .collect::<Result<_>>()?;
    let mut levels = vec![Vec::with_capacity(settings.r_uq); settings.n_bc + 1];
    for rep in per_replicate {
        for (level, f) in levels.iter_mut().zip(rep) {
            level.push(f);
        }
    }
    Ok(BootstrapRun {
        grid: grid.to_vec(),
        alpha: settings.alpha,
        observed,
        levels,
        basis: basis.clone(),
    })
}

/// Bias-corrected percentile band.
pub fn bc_percentile_band<E: PointEstimator + ?Sized>(
    y: &[u64],
    estimator: &E,
    basis: &SplineBasis,
    grid: &[f64],
    settings: &BootstrapSettings,
) -> Result<IntervalBand> {
    let beta_hat = observed_estimate(y, estimator, settings.seed)?;
    let run = bootstrap_run(y, &beta_hat, estimator, basis, grid, settings)?;
    run.percentile_band(settings.n_bc)
}

/// Percentile band without correction: the bias-corrected pipeline with `n_bc = 0`.
pub fn percentile_band<E: PointEstimator + ?Sized>(
    y: &[u64],
    estimator: &E,
    basis: &SplineBasis,
    grid: &[f64],
    settings: &BootstrapSettings,
) -> Result<IntervalBand> {
    let plain = BootstrapSettings {
        n_bc: 0,
        ..settings.clone()
    };
    bc_percentile_band(y, estimator, basis, grid, &plain)
}

/// Standard-error band around the bias-corrected estimate.
pub fn stderr_band<E: PointEstimator + ?Sized>(
    y: &[u64],
    estimator: &E,
    basis: &SplineBasis,
    grid: &[f64],
    settings: &BootstrapSettings,
) -> Result<IntervalBand> {
    let beta_hat = observed_estimate(y, estimator, settings.seed)?;
    let run = bootstrap_run(y, &beta_hat, estimator, basis, grid, settings)?;
    run.stderr_band(settings.n_bc)
}

/// Bootstrap intensities for the basic band: `y* ~ Poisson(K beta_hat)`, refit without correction.
pub fn basic_sample<E: PointEstimator + ?Sized>(
    beta_hat: &[f64],
    estimator: &E,
    basis: &SplineBasis,
    grid: &[f64],
    r_uq: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_replicates(r_uq)?;
    let mu = smeared(estimator.response(), beta_hat);
    (0..r_uq)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let ru = r as u64;
            let y_star = poisson_resample(&mu, &mut substream(seed, &[BASIC_DATA, ru]));
            let fit = estimator.estimate(&y_star, &mut substream(seed, &[BASIC_FIT, ru]))?;
            basis.eval_intensity(&fit, grid)
        })
        .enumerate()
        .map(|(r, res)| res.map_err(|e| e.at_replicate(r)))
        .collect()
}

/// `[2 f(s) - f*_{1-alpha}(s), 2 f(s) - f*_alpha(s)]`; not clipped at zero.
pub fn basic_band_from_sample(
    point: &[f64],
    sample: &[Vec<f64>],
    grid: &[f64],
    alpha: f64,
) -> Result<IntervalBand> {
    check_alpha(alpha)?;
    check_replicates(sample.len())?;
    let (q_lo, q_hi) = pointwise(sample, |s| {
        (empirical_quantile(s, alpha), empirical_quantile(s, 1.0 - alpha))
    });
    Ok(IntervalBand {
        grid: grid.to_vec(),
        lower: point.iter().zip(&q_hi).map(|(f, q)| 2.0 * f - q).collect(),
        upper: point.iter().zip(&q_lo).map(|(f, q)| 2.0 * f - q).collect(),
        point: point.to_vec(),
        bc_point: point.to_vec(),
        method: BandMethod::Basic,
        alpha,
    })
}

/// Basic bootstrap band around the uncorrected estimate.
pub fn basic_band<E: PointEstimator + ?Sized>(
    y: &[u64],
    estimator: &E,
    basis: &SplineBasis,
    grid: &[f64],
    settings: &BootstrapSettings,
) -> Result<IntervalBand> {
    let beta_hat = observed_estimate(y, estimator, settings.seed)?;
    let point = basis.eval_intensity(&beta_hat, grid)?;
    let sample = basic_sample(&beta_hat, estimator, basis, grid, settings.r_uq, settings.seed)?;
    basic_band_from_sample(&point, &sample, grid, settings.alpha)
}

/// Equal-tailed pointwise credible band from posterior draws.
pub fn credible_band(
    chain: &PosteriorChain,
    basis: &SplineBasis,
    alpha: f64,
    grid: &[f64],
) -> Result<IntervalBand> {
    check_alpha(alpha)?;
    if chain.is_empty() {
        return Err(UnfoldError::EmptyChain);
    }
    let design = basis.design_matrix(grid)?;
    let sample: Vec<Vec<f64>> = chain
        .draws()
        .map(|d| (&design * DVector::from_column_slice(d)).as_slice().to_vec())
        .collect();
    let (lower, upper) = pointwise(&sample, |s| {
        (empirical_quantile(s, alpha), empirical_quantile(s, 1.0 - alpha))
    });
    let point = basis.eval_intensity(&posterior_mean(chain)?, grid)?;
    Ok(IntervalBand {
        grid: grid.to_vec(),
        lower,
        upper,
        bc_point: point.clone(),
        point,
        method: BandMethod::Credible,
        alpha,
    })
}
