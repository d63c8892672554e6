//! Marginal maximum likelihood estimation of the smoothness hyperparameter by
//! Monte Carlo EM.
//!
//! The E-step samples the posterior at the current `delta`; the M-step has the
//! closed form `delta = p S / (2 sum_s beta_s^T Omega_A beta_s)`.

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnfoldError};
use crate::inference::{posterior_mean, quadratic_form, sample_posterior, PosteriorChain, PosteriorModel};
use crate::rng::derive_seed;

pub const DELTA_MIN: f64 = 1e-15;
pub const DELTA_MAX: f64 = 1e6;

/// Consecutive small log-delta changes needed for an early stop.
const EARLY_STOP_RUN: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McemConfig {
    pub delta0: f64,
    pub n_em: usize,
    /// Recorded draws per E-step.
    pub s: usize,
    /// Discarded sweeps per E-step; `None` means `s`.
    #[serde(default)]
    pub burn_in: Option<usize>,
    /// Stop once `|log delta_i - log delta_{i-1}|` stays below this for three iterations.
    #[serde(default)]
    pub early_stop: Option<f64>,
    /// Set from the experiment's root seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for McemConfig {
    fn default() -> Self {
        Self {
            delta0: 1e-5,
            n_em: 30,
            s: 1000,
            burn_in: None,
            early_stop: None,
            seed: 0,
        }
    }
}

impl McemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return Err(UnfoldError::InvalidParameter(format!(
                "delta0 must be positive, got {}",
                self.delta0
            )));
        }
        if self.n_em == 0 || self.s == 0 {
            return Err(UnfoldError::InvalidParameter(
                "n_em and s must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.s)
    }
}

/// Summary of one E-step chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McemIteration {
    /// The delta the chain was sampled at.
    pub delta: f64,
    pub mean_beta: Vec<f64>,
    pub acceptance_rates: Vec<f64>,
}

impl McemIteration {
    pub fn mean_acceptance(&self) -> f64 {
        self.acceptance_rates.iter().sum::<f64>() / self.acceptance_rates.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McemTrace {
    /// `delta^(0), ..., delta^(N)`.
    pub deltas: Vec<f64>,
    /// `iterations[i]` is the chain sampled at `deltas[i]`.
    pub iterations: Vec<McemIteration>,
    /// Iterations whose update had to be clamped.
    pub clamped: Vec<usize>,
}

impl McemTrace {
    pub fn final_delta(&self) -> f64 {
        *self.deltas.last().expect("trace always holds delta0")
    }

    /// `|log delta^(N) - log delta^(N-1)|`, or 0 for a single entry.
    pub fn last_log_change(&self) -> f64 {
        match self.deltas.as_slice() {
            [.., a, b] => (b.ln() - a.ln()).abs(),
            _ => 0.0,
        }
    }
}

/// `sum_s beta_s^T Omega_A beta_s`.
fn penalty_sum(chain: &PosteriorChain, omega_a: &DMatrix<f64>) -> Result<f64> {
    if chain.is_empty() {
        return Err(UnfoldError::EmptyChain);
    }
    if omega_a.shape() != (chain.dim(), chain.dim()) {
        return Err(UnfoldError::DimensionMismatch {
            expected: chain.dim(),
            actual: omega_a.nrows(),
            context: "penalty vs chain dimension",
        });
    }
    Ok(chain.draws().map(|d| quadratic_form(omega_a, d)).sum())
}

/// Closed-form M-step `p S / (2 sum_s beta_s^T Omega_A beta_s)`, without clamping.
///
/// Returns `+inf` when every draw is zero.
pub fn mstep_update(chain: &PosteriorChain, omega_a: &DMatrix<f64>) -> Result<f64> {
    let total = penalty_sum(chain, omega_a)?;
    let numer = (chain.dim() * chain.len()) as f64;
    if total > 0.0 {
        Ok(numer / (2.0 * total))
    } else {
        Ok(f64::INFINITY)
    }
}

fn clamp_delta(delta: f64, iter: usize) -> (f64, bool) {
    if delta.is_nan() || delta > DELTA_MAX {
        warn!("MCEM iteration {iter}: delta update {delta:e} clamped to {DELTA_MAX:e}");
        (DELTA_MAX, true)
    } else if delta < DELTA_MIN {
        warn!("MCEM iteration {iter}: delta update {delta:e} clamped to {DELTA_MIN:e}");
        (DELTA_MIN, true)
    } else {
        (delta, false)
    }
}

/// Runs Monte Carlo EM from `config.delta0`, starting the first chain at
/// `beta_init` and every later chain at the previous chain's mean.
///
/// `model` supplies the data, response and penalty; its own delta is ignored.
pub fn run_mcem(
    model: &PosteriorModel,
    beta_init: &[f64],
    config: &McemConfig,
) -> Result<(f64, McemTrace)> {
    config.validate()?;
    let mut delta = config.delta0;
    let mut start = beta_init.to_vec();
    let mut trace = McemTrace {
        deltas: vec![delta],
        iterations: Vec::with_capacity(config.n_em),
        clamped: Vec::new(),
    };
    let mut small_changes = 0;
    for iter in 0..config.n_em {
        let at = model.with_delta(delta)?;
        let seed = derive_seed(config.seed, &[iter as u64]);
        let chain = sample_posterior(&at, config.s, &start, config.burn_in(), seed)?;
        let (next, clamped) = clamp_delta(mstep_update(&chain, model.omega_a())?, iter + 1);
        if clamped {
            trace.clamped.push(iter + 1);
        }
        let mean = posterior_mean(&chain)?;
        trace.iterations.push(McemIteration {
            delta,
            mean_beta: mean.clone(),
            acceptance_rates: chain.acceptance_rates.clone(),
        });
        let change = (next.ln() - delta.ln()).abs();
        debug!("MCEM iteration {}: delta {:e} -> {:e}", iter + 1, delta, next);
        trace.deltas.push(next);
        delta = next;
        start = mean;
        if let Some(tol) = config.early_stop {
            small_changes = if change < tol { small_changes + 1 } else { 0 };
            if small_changes >= EARLY_STOP_RUN {
                debug!("MCEM stopped early after {} iterations", iter + 1);
                break;
            }
        }
    }
    Ok((delta, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn omega() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0])
    }

    #[test]
    fn single_draw_unit_quadratic() {
        // beta^T Omega beta = 1 for beta = (1, 0) and Omega_11 = 1
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 4.0]);
        let chain = PosteriorChain::from_draws(&[vec![1.0, 0.0]]).unwrap();
        assert!((mstep_update(&chain, &omega).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scaling_draws_scales_inverse_square() {
        let a = PosteriorChain::from_draws(&[vec![1.0, 2.0], vec![0.5, 3.0]]).unwrap();
        let b = PosteriorChain::from_draws(&[vec![3.0, 6.0], vec![1.5, 9.0]]).unwrap();
        let da = mstep_update(&a, &omega()).unwrap();
        let db = mstep_update(&b, &omega()).unwrap();
        assert!((da / db - 9.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_identity_at_update() {
        let chain = PosteriorChain::from_draws(&[vec![1.0, 2.0], vec![0.5, 3.0], vec![2.0, 0.1]]).unwrap();
        let d = mstep_update(&chain, &omega()).unwrap();
        let mean_q = penalty_sum(&chain, &omega()).unwrap() / 3.0;
        assert!((2.0 / (2.0 * d) - mean_q).abs() < 1e-12);
    }

    #[test]
    fn zero_chain_is_infinite_then_clamped() {
        let chain = PosteriorChain::from_draws(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(mstep_update(&chain, &omega()).unwrap(), f64::INFINITY);
        assert_eq!(clamp_delta(f64::INFINITY, 1), (DELTA_MAX, true));
        assert_eq!(clamp_delta(1e-20, 1), (DELTA_MIN, true));
        assert_eq!(clamp_delta(0.5, 1), (0.5, false));
    }

    #[test]
    fn mcem_trace_shape_and_determinism() {
        let k = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.5, 0.5, 0.1, 2.0]);
        let model = PosteriorModel::new(k, &[30, 20, 70], omega(), 1.0).unwrap();
        let cfg = McemConfig {
            delta0: 1e-2,
            n_em: 5,
            s: 200,
            seed: 9,
            ..McemConfig::default()
        };
        let (d, trace) = run_mcem(&model, &[10.0, 30.0], &cfg).unwrap();
        assert_eq!(trace.deltas.len(), 6);
        assert_eq!(trace.iterations.len(), 5);
        assert_eq!(d, trace.final_delta());
        assert!(trace.deltas.iter().all(|&x| x > 0.0));
        let (d2, _) = run_mcem(&model, &[10.0, 30.0], &cfg).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = McemConfig {
            delta0: 0.0,
            ..McemConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = McemConfig {
            n_em: 0,
            ..McemConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
