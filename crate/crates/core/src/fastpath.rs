//! Gaussian approximation of the Poisson likelihood, which turns the point
//! estimate into a weighted ridge regression.
//!
//! The counts are treated as `y ~ N(K beta, W^{-1})` with the plug-in
//! variances `W = diag(1 / max(y_i, 1))`. Against the prior exponent
//! `-delta beta^T Omega_A beta`, the half-quadratic Gaussian log-likelihood
//! gives the normal equations `(K^T W K + 2 delta Omega_A) beta = K^T W y`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::empirical_bayes::{DELTA_MAX, DELTA_MIN};
use crate::error::{Result, UnfoldError};
use crate::nnls::nnls;
use crate::rng::Stream;
use crate::uncertainty::PointEstimator;

/// Condition estimates above this are reported as singular.
const MAX_CONDITION: f64 = 1e15;

/// How negative coordinates of the ridge solution are handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeHandling {
    /// Solve unconstrained, then set negative coordinates to zero.
    #[default]
    Clip,
    /// Solve the nonnegatively constrained problem exactly.
    Exact,
}

/// Ridge estimator at fixed `delta`. Weights are taken from the data at solve time.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    k: Arc<DMatrix<f64>>,
    omega_a: Arc<DMatrix<f64>>,
    delta: f64,
    pub negatives: NegativeHandling,
}

impl RidgeModel {
    pub fn new(k: DMatrix<f64>, omega_a: DMatrix<f64>, delta: f64) -> Result<Self> {
        let p = k.ncols();
        if omega_a.shape() != (p, p) {
            return Err(UnfoldError::DimensionMismatch {
                expected: p,
                actual: omega_a.nrows(),
                context: "penalty vs response columns",
            });
        }
        let model = Self {
            k: Arc::new(k),
            omega_a: Arc::new(omega_a),
            delta: 1.0,
            negatives: NegativeHandling::Clip,
        };
        model.with_delta(delta)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(UnfoldError::InvalidParameter(format!(
                "delta must be positive and finite, got {delta}"
            )));
        }
        Ok(Self {
            k: Arc::clone(&self.k),
            omega_a: Arc::clone(&self.omega_a),
            delta,
            negatives: self.negatives,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn response(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn omega_a(&self) -> &DMatrix<f64> {
        &self.omega_a
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.k.nrows() {
            return Err(UnfoldError::DimensionMismatch {
                expected: self.k.nrows(),
                actual: y.len(),
                context: "data length vs response rows",
            });
        }
        Ok(())
    }

    /// The unclipped solution of the normal equations with explicit weights.
    pub fn solve_weighted(&self, y: &[f64], weights: &[f64]) -> Result<DVector<f64>> {
        self.check_len(y)?;
        self.check_len(weights)?;
        let sys = NormalSystem::new(&self.k, weights, y);
        let a = &sys.ktwk + &*self.omega_a * (2.0 * self.delta);
        let chol = factor(a)?;
        Ok(chol.solve(&sys.ktwy))
    }

    /// The unclipped ridge solution with plug-in weights.
    pub fn solve_unclipped(&self, y: &[u64]) -> Result<DVector<f64>> {
        let yf: Vec<f64> = y.iter().map(|&c| c as f64).collect();
        self.solve_weighted(&yf, &plug_in_weights(y))
    }
}

/// `1 / max(y_i, 1)`.
pub fn plug_in_weights(y: &[u64]) -> Vec<f64> {
    y.iter().map(|&c| 1.0 / (c.max(1) as f64)).collect()
}

struct NormalSystem {
    ktwk: DMatrix<f64>,
    ktwy: DVector<f64>,
    ytwy: f64,
}

impl NormalSystem {
    fn new(k: &DMatrix<f64>, w: &[f64], y: &[f64]) -> Self {
        let mut wk = k.clone();
        for (i, &wi) in w.iter().enumerate() {
            wk.row_mut(i).scale_mut(wi.sqrt());
        }
        let sw_y = DVector::from_iterator(y.len(), y.iter().zip(w).map(|(yi, wi)| yi * wi.sqrt()));
        Self {
            ktwk: wk.tr_mul(&wk),
            ktwy: wk.tr_mul(&sw_y),
            ytwy: sw_y.norm_squared(),
        }
    }
}

fn factor(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| UnfoldError::Singular("ridge system is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    // (max L_ii / min L_ii)^2 is a lower bound on the condition number
    let cond = (hi / lo).powi(2);
    if !(cond <= MAX_CONDITION) {
        return Err(UnfoldError::Singular(format!(
            "ridge system condition estimate {cond:e} exceeds {MAX_CONDITION:e}"
        )));
    }
    Ok(chol)
}

/// Weighted ridge estimate with negatives handled per `model.negatives`.
pub fn ridge_estimate(y: &[u64], model: &RidgeModel) -> Result<Vec<f64>> {
    match model.negatives {
        NegativeHandling::Clip => Ok(model
            .solve_unclipped(y)?
            .iter()
            .map(|&b| b.max(0.0))
            .collect()),
        NegativeHandling::Exact => exact_nonnegative(y, model),
    }
}

/// `min (K b - y)^T W (K b - y) + 2 delta b^T Omega_A b` over `b >= 0`, as an augmented NNLS.
fn exact_nonnegative(y: &[u64], model: &RidgeModel) -> Result<Vec<f64>> {
    let (n, p) = model.k.shape();
    let yf: Vec<f64> = y.iter().map(|&c| c as f64).collect();
    model.check_len(&yf)?;
    let w = plug_in_weights(y);
    let r = model
        .omega_a
        .as_ref()
        .clone()
        .cholesky()
        .ok_or_else(|| UnfoldError::Singular("penalty is not positive definite".into()))?
        .l()
        .transpose();
    let mut a = DMatrix::zeros(n + p, p);
    let mut b = DVector::zeros(n + p);
    for i in 0..n {
        let s = w[i].sqrt();
        for j in 0..p {
            a[(i, j)] = s * model.k[(i, j)];
        }
        b[i] = s * yf[i];
    }
    let scale = (2.0 * model.delta).sqrt();
    a.view_mut((n, 0), (p, p)).copy_from(&(r * scale));
    Ok(nnls(&a, &b)?.as_slice().to_vec())
}

/// Gaussian-approximation marginal log-likelihood `log N(y; 0, W^{-1} + K (2 delta Omega_A)^{-1} K^T)`
/// up to a delta-free constant.
pub struct GaussianEvidence {
    sys: NormalSystem,
    omega_a: DMatrix<f64>,
    p: usize,
}

impl GaussianEvidence {
    pub fn new(y: &[u64], k: &DMatrix<f64>, omega_a: &DMatrix<f64>) -> Result<Self> {
        if y.len() != k.nrows() || omega_a.shape() != (k.ncols(), k.ncols()) {
            return Err(UnfoldError::DimensionMismatch {
                expected: k.nrows(),
                actual: y.len(),
                context: "evidence inputs",
            });
        }
        let yf: Vec<f64> = y.iter().map(|&c| c as f64).collect();
        Ok(Self {
            sys: NormalSystem::new(k, &plug_in_weights(y), &yf),
            omega_a: omega_a.clone(),
            p: k.ncols(),
        })
    }

    pub fn log_evidence(&self, delta: f64) -> f64 {
        let a = &self.sys.ktwk + &self.omega_a * (2.0 * delta);
        let Some(chol) = a.cholesky() else {
            return f64::NEG_INFINITY;
        };
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let fit = self.sys.ktwy.dot(&chol.solve(&self.sys.ktwy));
        0.5 * self.p as f64 * delta.ln() - 0.5 * log_det - 0.5 * (self.sys.ytwy - fit)
    }
}

/// Maximizes the Gaussian evidence over `log delta` in `[1e-15, 1e6]`: grid
/// search at quarter decades followed by golden-section refinement.
pub fn gaussian_mmle(y: &[u64], k: &DMatrix<f64>, omega_a: &DMatrix<f64>) -> Result<f64> {
    let ev = GaussianEvidence::new(y, k, omega_a)?;
    let (lo, hi) = (DELTA_MIN.ln(), DELTA_MAX.ln());
    let steps = 4 * 21;
    let h = (hi - lo) / steps as f64;
    let values: Vec<f64> = (0..=steps)
        .map(|i| ev.log_evidence((lo + h * i as f64).exp()))
        .collect();
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| UnfoldError::NonConvergence("empty delta grid".into()))?;
    if !values[best].is_finite() {
        return Err(UnfoldError::NonConvergence(
            "Gaussian evidence is not finite on the delta grid".into(),
        ));
    }
    let a = lo + h * best.saturating_sub(1) as f64;
    let b = lo + h * (best + 1).min(steps) as f64;
    Ok(golden_max(|x| ev.log_evidence(x.exp()), a, b, 1e-6).exp())
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

impl PointEstimator for RidgeModel {
    fn estimate(&self, y: &[u64], _rng: &mut Stream) -> Result<Vec<f64>> {
        ridge_estimate(y, self)
    }

    fn response(&self) -> &DMatrix<f64> {
        &self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (DMatrix<f64>, DMatrix<f64>) {
        let k = DMatrix::from_fn(6, 3, |i, j| 1.0 / (1.0 + (i as f64 - 2.0 * j as f64).powi(2)));
        let o = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        (k, o)
    }

    #[test]
    fn huge_delta_shrinks_to_zero() {
        let (k, o) = setup();
        let m = RidgeModel::new(k, o, 1e12).unwrap();
        let b = ridge_estimate(&[10, 20, 30, 25, 12, 4], &m).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn gradient_vanishes_before_clipping() {
        let (k, o) = setup();
        let m = RidgeModel::new(k.clone(), o.clone(), 0.3).unwrap();
        let y = [10u64, 20, 0, 25, 12, 4];
        let b = m.solve_unclipped(&y).unwrap();
        let w = plug_in_weights(&y);
        let yf = DVector::from_iterator(6, y.iter().map(|&c| c as f64));
        let r = &k * &b - &yf;
        let wr = DVector::from_iterator(6, r.iter().zip(&w).map(|(a, b)| a * b));
        let grad = k.tr_mul(&wr) + &o * &b * (2.0 * 0.3);
        let scale = k.tr_mul(&DVector::from_iterator(6, yf.iter().zip(&w).map(|(a, b)| a * b))).norm();
        assert!(grad.norm() / scale < 1e-10);
    }

    #[test]
    fn scaling_data_and_weights_scales_solution() {
        let (k, o) = setup();
        let m = RidgeModel::new(k, o, 0.3).unwrap();
        let y = vec![10.0, 20.0, 3.0, 25.0, 12.0, 4.0];
        let w = vec![0.1, 0.05, 0.3, 0.04, 0.08, 0.25];
        let a = m.solve_weighted(&y, &w).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let w2: Vec<f64> = w.iter().map(|v| v / 3.0).collect();
        // the penalty must scale with the data for the solution to scale
        let b = m.with_delta(0.1).unwrap().solve_weighted(&y2, &w2).unwrap();
        assert!((&b - &a * 3.0).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn exact_handling_is_nonnegative_and_agrees_when_interior() {
        let (k, o) = setup();
        let mut m = RidgeModel::new(k, o, 1e-3).unwrap();
        let y = [10u64, 20, 30, 25, 12, 4];
        let clip = ridge_estimate(&y, &m).unwrap();
        m.negatives = NegativeHandling::Exact;
        let exact = ridge_estimate(&y, &m).unwrap();
        assert!(exact.iter().all(|&v| v >= 0.0));
        if clip.iter().all(|&v| v > 0.0) {
            for (a, b) in clip.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn evidence_is_maximized_by_mmle() {
        let (k, o) = setup();
        let y = [10u64, 20, 30, 25, 12, 4];
        let d = gaussian_mmle(&y, &k, &o).unwrap();
        let ev = GaussianEvidence::new(&y, &k, &o).unwrap();
        let at = ev.log_evidence(d);
        assert!(at >= ev.log_evidence(d * 1.1) - 1e-9);
        assert!(at >= ev.log_evidence(d / 1.1) - 1e-9);
    }

    #[test]
    fn evidence_matches_dense_gaussian_density() {
        let (k, o) = setup();
        let y = [10u64, 20, 0, 25, 12, 4];
        let ev = GaussianEvidence::new(&y, &k, &o).unwrap();
        let dense = |delta: f64| {
            let w = plug_in_weights(&y);
            let winv = DMatrix::from_diagonal(&DVector::from_iterator(6, w.iter().map(|v| 1.0 / v)));
            let oinv = (&o * (2.0 * delta)).try_inverse().unwrap();
            let c = winv + &k * oinv * k.transpose();
            let yv = DVector::from_iterator(6, y.iter().map(|&c| c as f64));
            let chol = c.cholesky().unwrap();
            let ld: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            -0.5 * ld - 0.5 * yv.dot(&chol.solve(&yv))
        };
        let diff_ev = ev.log_evidence(0.7) - ev.log_evidence(0.02);
        let diff_dense = dense(0.7) - dense(0.02);
        assert!((diff_ev - diff_dense).abs() < 1e-9);
    }
}
