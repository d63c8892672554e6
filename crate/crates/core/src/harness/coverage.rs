//! Repeated-sampling coverage of pointwise bands.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bands_for, fit, method_requests, seeds, EstimatorPath, ExperimentConfig, Setup};
use crate::error::{Result, UnfoldError};
use crate::rng::{derive_seed, substream};
use crate::simulate::simulate_counts;
use crate::uncertainty::BandMethod;

/// Replicate counts above this require the fast path.
pub const MAX_FULL_REPLICATES: usize = 50;

/// Largest tolerated fraction of failed replicates.
const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub grid: Vec<f64>,
    /// Fraction of successful replicates whose band contains the truth, per grid point.
    pub coverage: Vec<f64>,
    pub mean_width: Vec<f64>,
    pub n_rep: usize,
    pub method: BandMethod,
    /// Bias-correction iterations behind the band.
    pub n_bc: usize,
    /// Nominal coverage `1 - 2 alpha`.
    pub nominal: f64,
    pub failures: usize,
    /// Label written to the `method` CSV column.
    pub tag: String,
}

impl CoverageReport {
    pub fn label(&self) -> String {
        self.tag.clone()
    }

    pub fn average_coverage(&self) -> f64 {
        self.coverage.iter().sum::<f64>() / self.coverage.len() as f64
    }

    pub fn average_width(&self) -> f64 {
        self.mean_width.iter().sum::<f64>() / self.mean_width.len() as f64
    }

    pub fn min_coverage(&self) -> f64 {
        self.coverage.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Coverage at the grid point nearest `s`.
    pub fn coverage_at(&self, s: f64) -> f64 {
        let i = self
            .grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - s).abs().total_cmp(&(b.1 - s).abs()))
            .map_or(0, |(i, _)| i);
        self.coverage[i]
    }
}

#[derive(Debug, Clone)]
pub struct CoverageStudy {
    pub reports: Vec<CoverageReport>,
    pub failures: usize,
    pub truth: Vec<f64>,
}

struct Request {
    method: BandMethod,
    level: usize,
    tag: String,
}

struct Tally {
    covered: Vec<Vec<usize>>,
    width: Vec<Vec<f64>>,
}

fn run_requests(config: &ExperimentConfig, n_replicates: usize, requests: &[Request]) -> Result<CoverageStudy> {
    if n_replicates == 0 {
        return Err(UnfoldError::InvalidParameter("need at least one replicate".into()));
    }
    if config.estimator == EstimatorPath::Full && n_replicates > MAX_FULL_REPLICATES {
        return Err(UnfoldError::InvalidParameter(format!(
            "the full path is limited to {MAX_FULL_REPLICATES} coverage replicates; use the fast path for {n_replicates}"
        )));
    }
    let setup = Setup::new(config)?;
    let truth = config.truth()?;
    let kernel = &setup.kernel;
    let f_true = truth.values(&setup.grid);
    let pairs: Vec<(BandMethod, usize)> = requests.iter().map(|r| (r.method, r.level)).collect();
    let need_chain = requests.iter().any(|r| r.method == BandMethod::Credible);
    let root = config.stage_seed(seeds::COVERAGE);
    info!(
        "coverage study '{}': {} replicates, {} bands each",
        config.name,
        n_replicates,
        requests.len()
    );
    let outcomes: Vec<Result<Vec<(Vec<bool>, Vec<f64>)>>> = (0..n_replicates)
        .into_par_iter()
        .map(|rep| {
            let r = rep as u64;
            let mut rng = substream(root, &[0, r]);
            let y = simulate_counts(&truth, &config.efficiency, kernel, &setup.edges, &mut rng)?;
            let seed = derive_seed(root, &[1, r]);
            let fitted = fit(config, &setup, &y, seed, need_chain, &mut Vec::new())?;
            let set = bands_for(config, &setup, y.counts(), &fitted, &pairs, seed)?;
            Ok(set
                .bands
                .iter()
                .map(|b| (b.covers(&f_true), b.widths()))
                .collect())
        })
        .collect();
    let g = setup.grid.len();
    let mut tally = Tally {
        covered: vec![vec![0; g]; requests.len()],
        width: vec![vec![0.0; g]; requests.len()],
    };
    let mut failures = 0;
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(per_band) => {
                for (k, (cov, wid)) in per_band.into_iter().enumerate() {
                    for j in 0..g {
                        tally.covered[k][j] += usize::from(cov[j]);
                        tally.width[k][j] += wid[j];
                    }
                }
            }
            Err(e) => {
                warn!("coverage replicate {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 > MAX_FAILURE_RATE * n_replicates as f64 || failures == n_replicates {
        return Err(UnfoldError::NonConvergence(format!(
            "{failures} of {n_replicates} coverage replicates failed"
        )));
    }
    let ok = n_replicates - failures;
    let reports = requests
        .iter()
        .enumerate()
        .map(|(k, req)| CoverageReport {
            grid: setup.grid.clone(),
            coverage: tally.covered[k].iter().map(|&c| c as f64 / ok as f64).collect(),
            mean_width: tally.width[k].iter().map(|&w| w / ok as f64).collect(),
            n_rep: ok,
            method: req.method,
            n_bc: req.level,
            nominal: 1.0 - 2.0 * config.alpha,
            failures,
            tag: req.tag.clone(),
        })
        .collect();
    Ok(CoverageStudy {
        reports,
        failures,
        truth: f_true,
    })
}

/// Simulates `n_replicates` datasets from the configured truth and records,
/// per grid point, how often each method's band covers it.
pub fn run_coverage_study(
    config: &ExperimentConfig,
    n_replicates: usize,
    methods: &[BandMethod],
) -> Result<CoverageStudy> {
    let requests: Vec<Request> = method_requests(config, methods)
        .into_iter()
        .map(|(method, level)| Request {
            method,
            level,
            tag: method.to_string(),
        })
        .collect();
    run_requests(config, n_replicates, &requests)
}

/// Bias-corrected percentile coverage for each `N_BC` in `nbc_values`,
/// all taken from one bootstrap run per replicate.
pub fn coverage_vs_nbc(
    config: &ExperimentConfig,
    nbc_values: &[usize],
    n_replicates: usize,
) -> Result<Vec<CoverageReport>> {
    let requests: Vec<Request> = nbc_values
        .iter()
        .map(|&n| Request {
            method: if n == 0 {
                BandMethod::Percentile
            } else {
                BandMethod::BcPercentile
            },
            level: n,
            tag: format!("bc_percentile_nbc{n}"),
        })
        .collect();
    Ok(run_requests(config, n_replicates, &requests)?.reports)
}
