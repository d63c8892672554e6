//! Poisson likelihood, truncated-Gaussian smoothness prior and the
//! single-component Metropolis–Hastings posterior sampler.
//!
//! Each coordinate update builds a Gaussian approximation of the full
//! conditional from a second-order Taylor expansion of its log at the current
//! value. A nonnegative approximating mean gives a truncated-Gaussian proposal
//! on `[0, inf)`; a negative mean gives an exponential proposal whose rate
//! matches the Gaussian log-slope at zero. The move is accepted with the exact
//! full conditional in the Metropolis–Hastings ratio.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, UnfoldError};
use crate::forward::{build_response_matrix, Efficiency, SmearingKernel};
use crate::nnls::nnls;
use crate::rng::{stream, Stream};
use crate::simulate::BinnedCounts;
use crate::special::normal_cdf;
use crate::splines::SplineBasis;

/// Curvatures at or above this are replaced by the prior curvature.
const CURVATURE_FLOOR: f64 = -1e-12;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug)]
struct Shared {
    k: DMatrix<f64>,
    omega_a: DMatrix<f64>,
    /// Nonzero `(row, K_ik)` pairs of every column.
    columns: Vec<Vec<(usize, f64)>>,
}

/// Posterior `p(beta | y, delta)` for `y ~ Poisson(K beta)` and prior
/// `exp(-delta beta^T Omega_A beta)` on the nonnegative orthant.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    shared: Arc<Shared>,
    y: Vec<f64>,
    delta: f64,
}

impl PosteriorModel {
    pub fn new(k: DMatrix<f64>, y: &[u64], omega_a: DMatrix<f64>, delta: f64) -> Result<Self> {
        let (n, p) = k.shape();
        if y.len() != n {
            return Err(UnfoldError::DimensionMismatch {
                expected: n,
                actual: y.len(),
                context: "data length vs response rows",
            });
        }
        if omega_a.shape() != (p, p) {
            return Err(UnfoldError::DimensionMismatch {
                expected: p,
                actual: omega_a.nrows(),
                context: "penalty vs response columns",
            });
        }
        if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(UnfoldError::InvalidParameter(
                "response entries must be finite and nonnegative".into(),
            ));
        }
        let columns = (0..p)
            .map(|j| {
                k.column(j)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(i, &v)| (i, v))
                    .collect()
            })
            .collect();
        let model = Self {
            shared: Arc::new(Shared {
                k,
                omega_a,
                columns,
            }),
            y: y.iter().map(|&c| c as f64).collect(),
            delta: 1.0,
        };
        model.with_delta(delta)
    }

    /// Same response and penalty at another `delta`.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            shared: Arc::clone(&self.shared),
            y: self.y.clone(),
            delta,
        })
    }

    /// Same response, penalty and `delta` with other data.
    pub fn with_data(&self, y: &[u64]) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(UnfoldError::DimensionMismatch {
                expected: self.y.len(),
                actual: y.len(),
                context: "data length vs response rows",
            });
        }
        Ok(Self {
            shared: Arc::clone(&self.shared),
            y: y.iter().map(|&c| c as f64).collect(),
            delta: self.delta,
        })
    }

    pub fn response(&self) -> &DMatrix<f64> {
        &self.shared.k
    }

    pub fn omega_a(&self) -> &DMatrix<f64> {
        &self.shared.omega_a
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.shared.k.ncols()
    }

    fn log_posterior_unchecked(&self, beta: &[f64]) -> f64 {
        let mu = &self.shared.k * DVector::from_column_slice(beta);
        poisson_log_lik(&self.y, mu.as_slice())
            - self.delta * quadratic_form(&self.shared.omega_a, beta)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(UnfoldError::InvalidParameter(format!(
            "delta must be positive and finite, got {delta}"
        )))
    }
}

fn check_nonnegative(beta: &[f64]) -> Result<()> {
    match beta.iter().enumerate().find(|(_, b)| !(**b >= 0.0)) {
        Some((index, &value)) => Err(UnfoldError::NegativeCoefficient { index, value }),
        None => Ok(()),
    }
}

pub(crate) fn quadratic_form(m: &DMatrix<f64>, beta: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..beta.len() {
        if beta[j] == 0.0 {
            continue;
        }
        let inner: f64 = m.column(j).iter().zip(beta).map(|(a, b)| a * b).sum();
        acc += beta[j] * inner;
    }
    acc
}

fn poisson_log_lik(y: &[f64], mu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        if yi > 0.0 {
            if mi <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += yi * mi.ln();
        }
        acc -= mi;
    }
    acc
}

/// `sum_i [y_i log mu_i - mu_i]` with `mu = K beta`; the `log y_i!` constants are omitted.
pub fn log_likelihood(model: &PosteriorModel, beta: &[f64]) -> Result<f64> {
    if beta.len() != model.dim() {
        return Err(UnfoldError::DimensionMismatch {
            expected: model.dim(),
            actual: beta.len(),
            context: "coefficient vector",
        });
    }
    check_nonnegative(beta)?;
    let mu = model.response() * DVector::from_column_slice(beta);
    Ok(poisson_log_lik(&model.y, mu.as_slice()))
}

/// `(p/2) log delta - delta beta^T Omega_A beta`; the delta-free normalizing constant is omitted.
pub fn log_prior(beta: &[f64], omega_a: &DMatrix<f64>, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    check_nonnegative(beta)?;
    if omega_a.shape() != (beta.len(), beta.len()) {
        return Err(UnfoldError::DimensionMismatch {
            expected: omega_a.nrows(),
            actual: beta.len(),
            context: "coefficient vector vs penalty",
        });
    }
    Ok(0.5 * beta.len() as f64 * delta.ln() - delta * quadratic_form(omega_a, beta))
}

/// Draws from the posterior, stored row-wise.
#[derive(Debug, Clone)]
pub struct PosteriorChain {
    draws: Vec<f64>,
    dim: usize,
    pub acceptance_rates: Vec<f64>,
    pub seed: u64,
    pub burn_in_len: usize,
}

impl PosteriorChain {
    /// Builds a chain from explicit draws (mostly for tests and external chains).
    pub fn from_draws(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or(UnfoldError::EmptyChain)?;
        let mut draws = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(UnfoldError::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                    context: "chain draw",
                });
            }
            check_nonnegative(r)?;
            draws.extend_from_slice(r);
        }
        Ok(Self {
            draws,
            dim,
            acceptance_rates: vec![1.0; dim],
            seed: 0,
            burn_in_len: 0,
        })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.draws.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&self, s: usize) -> &[f64] {
        &self.draws[s * self.dim..(s + 1) * self.dim]
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    /// Values of coordinate `j` across draws.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws().map(|d| d[j]).collect()
    }

    /// Batch-means Monte Carlo standard error of the mean of coordinate `j`.
    pub fn mc_standard_error(&self, j: usize) -> f64 {
        batch_means_se(&self.coordinate(j))
    }

    /// Effective sample size of coordinate `j` from batch means.
    pub fn effective_sample_size(&self, j: usize) -> f64 {
        let v = self.coordinate(j);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = batch_means_se(&v);
        if se > 0.0 {
            (var / (se * se)).min(n)
        } else {
            n
        }
    }
}

/// Monte Carlo standard error of a sample mean by non-overlapping batch means.
pub fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    let batches = (n as f64).sqrt().floor().max(1.0) as usize;
    let size = n / batches;
    if size < 2 || batches < 2 {
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        return (var / n as f64).sqrt();
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
enum Proposal {
    TruncatedNormal { mean: f64, sd: f64, ln_mass: f64 },
    Exponential { rate: f64 },
}

impl Proposal {
    fn from_expansion(x0: f64, slope: f64, curvature: f64, prior_curvature: f64) -> Self {
        let curv = if curvature >= CURVATURE_FLOOR {
            -prior_curvature
        } else {
            curvature
        };
        let var = -1.0 / curv;
        let mean = x0 + slope * var;
        if !(var.is_finite() && var > 0.0 && mean.is_finite()) {
            return Proposal::Exponential {
                rate: 1.0 / x0.max(f64::MIN_POSITIVE.sqrt()),
            };
        }
        if mean >= 0.0 {
            let sd = var.sqrt();
            Proposal::TruncatedNormal {
                mean,
                sd,
                ln_mass: normal_cdf(mean / sd).ln(),
            }
        } else {
            Proposal::Exponential { rate: -mean / var }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Proposal::TruncatedNormal { mean, sd, .. } => loop {
                let z: f64 = rng.sample(StandardNormal);
                let x = mean + sd * z;
                if x >= 0.0 {
                    return x;
                }
            },
            Proposal::Exponential { rate } => {
                let u: f64 = rng.random();
                -(1.0 - u).ln() / rate
            }
        }
    }

    fn ln_density(&self, x: f64) -> f64 {
        match *self {
            Proposal::TruncatedNormal { mean, sd, ln_mass } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - LN_SQRT_2PI - ln_mass
            }
            Proposal::Exponential { rate } => rate.ln() - rate * x,
        }
    }
}

struct SamplerState {
    beta: Vec<f64>,
    mu: Vec<f64>,
    omega_beta: Vec<f64>,
}

impl SamplerState {
    fn new(model: &PosteriorModel, beta: Vec<f64>) -> Self {
        let b = DVector::from_column_slice(&beta);
        let mu = (model.response() * &b).as_slice().to_vec();
        let omega_beta = (model.omega_a() * &b).as_slice().to_vec();
        Self {
            beta,
            mu,
            omega_beta,
        }
    }

    /// Slope and curvature of the log full conditional of coordinate `k` at `x`.
    fn expansion(&self, model: &PosteriorModel, k: usize, x: f64) -> (f64, f64) {
        let x0 = self.beta[k];
        let okk = model.shared.omega_a[(k, k)];
        let off = self.omega_beta[k] - okk * x0;
        let mut slope = 0.0;
        let mut curv = 0.0;
        for &(i, kik) in &model.shared.columns[k] {
            let yi = model.y[i];
            let mi = self.mu[i] + kik * (x - x0);
            if yi > 0.0 {
                let r = yi / mi;
                slope += kik * (r - 1.0);
                curv -= kik * kik * r / mi;
            } else {
                slope -= kik;
            }
        }
        let d = model.delta;
        (slope - 2.0 * d * (okk * x + off), curv - 2.0 * d * okk)
    }

    /// `log p(x | rest) - log p(x0 | rest)`; `-inf` if a bin with data gets zero mean.
    fn log_ratio(&self, model: &PosteriorModel, k: usize, x: f64) -> f64 {
        let x0 = self.beta[k];
        let dx = x - x0;
        let mut acc = 0.0;
        for &(i, kik) in &model.shared.columns[k] {
            let yi = model.y[i];
            let step = kik * dx;
            if yi > 0.0 {
                let rel = step / self.mu[i];
                if rel <= -1.0 {
                    return f64::NEG_INFINITY;
                }
                acc += yi * rel.ln_1p();
            }
            acc -= step;
        }
        let okk = model.shared.omega_a[(k, k)];
        let off = self.omega_beta[k] - okk * x0;
        acc - model.delta * (okk * (x * x - x0 * x0) + 2.0 * off * dx)
    }

    fn set(&mut self, model: &PosteriorModel, k: usize, x: f64) {
        let dx = x - self.beta[k];
        for &(i, kik) in &model.shared.columns[k] {
            self.mu[i] += kik * dx;
        }
        for (ob, o) in self.omega_beta.iter_mut().zip(model.shared.omega_a.column(k).iter()) {
            *ob += o * dx;
        }
        self.beta[k] = x;
    }

    /// One Metropolis–Hastings update of coordinate `k`; returns whether it moved.
    fn update<R: Rng + ?Sized>(&mut self, model: &PosteriorModel, k: usize, rng: &mut R) -> bool {
        let x0 = self.beta[k];
        let prior_curv = 2.0 * model.delta * model.shared.omega_a[(k, k)];
        let (s0, c0) = self.expansion(model, k, x0);
        let forward = Proposal::from_expansion(x0, s0, c0, prior_curv);
        let x1 = forward.sample(rng);
        let target = self.log_ratio(model, k, x1);
        if target == f64::NEG_INFINITY {
            return false;
        }
        let (s1, c1) = self.expansion(model, k, x1);
        let backward = Proposal::from_expansion(x1, s1, c1, prior_curv);
        let ln_alpha = target + backward.ln_density(x0) - forward.ln_density(x1);
        let u: f64 = rng.random();
        if u.ln() < ln_alpha {
            self.set(model, k, x1);
            true
        } else {
            false
        }
    }
}

/// Runs `burn_in` discarded sweeps then records `draws` sweeps (coordinates in ascending order).
pub fn sample_posterior(
    model: &PosteriorModel,
    draws: usize,
    beta_init: &[f64],
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorChain> {
    let mut rng = stream(seed);
    let mut chain = sample_posterior_with(model, draws, beta_init, burn_in, &mut rng)?;
    chain.seed = seed;
    Ok(chain)
}

/// As [`sample_posterior`] but drawing from a caller-owned stream.
pub fn sample_posterior_with(
    model: &PosteriorModel,
    draws: usize,
    beta_init: &[f64],
    burn_in: usize,
    rng: &mut Stream,
) -> Result<PosteriorChain> {
    let p = model.dim();
    if draws == 0 {
        return Err(UnfoldError::InvalidParameter("need at least one draw".into()));
    }
    if beta_init.len() != p {
        return Err(UnfoldError::DimensionMismatch {
            expected: p,
            actual: beta_init.len(),
            context: "initial coefficients",
        });
    }
    check_nonnegative(beta_init)?;
    let mut start = beta_init.to_vec();
    if !model.log_posterior_unchecked(&start).is_finite() {
        // lift off the boundary so every bin with data has positive mean
        let level = model.y.iter().sum::<f64>() / model.response().sum().max(f64::MIN_POSITIVE);
        for b in start.iter_mut() {
            *b += 1e-3 * level.max(1e-12);
        }
        if !model.log_posterior_unchecked(&start).is_finite() {
            return Err(UnfoldError::InvalidParameter(
                "initial point has zero posterior density".into(),
            ));
        }
    }
    let mut state = SamplerState::new(model, start);
    let mut accepted = vec![0usize; p];
    let mut out = Vec::with_capacity(draws * p);
    for sweep in 0..(burn_in + draws) {
        let recording = sweep >= burn_in;
        for k in 0..p {
            let moved = state.update(model, k, rng);
            if recording && moved {
                accepted[k] += 1;
            }
        }
        if recording {
            out.extend_from_slice(&state.beta);
        }
    }
    Ok(PosteriorChain {
        draws: out,
        dim: p,
        acceptance_rates: accepted.iter().map(|&a| a as f64 / draws as f64).collect(),
        seed: 0,
        burn_in_len: burn_in,
    })
}

/// Coordinate-wise mean of the draws.
pub fn posterior_mean(chain: &PosteriorChain) -> Result<Vec<f64>> {
    if chain.is_empty() {
        return Err(UnfoldError::EmptyChain);
    }
    let mut mean = vec![0.0; chain.dim()];
    for d in chain.draws() {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    let s = chain.len() as f64;
    Ok(mean.into_iter().map(|m| (m / s).max(0.0)).collect())
}

/// Nonnegative least-squares fit of the spline to the smeared histogram, ignoring smearing.
pub fn nnls_init(y: &BinnedCounts, basis: &SplineBasis) -> Result<Vec<f64>> {
    let identity = build_response_matrix(
        &SmearingKernel::Identity,
        &Efficiency::default(),
        basis,
        y.bin_edges(),
    )?;
    let b = DVector::from_vec(y.as_f64());
    Ok(nnls(&identity.entries, &b)?.as_slice().to_vec())
}
