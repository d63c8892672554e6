//! Z boson analysis on synthetic data: Breit–Wigner truth, Crystal Ball
//! response fitted by binned maximum likelihood, unfolding of the central
//! sub-range.

use log::info;
use serde::{Deserialize, Serialize};

use super::{run_unfolding_with, seeds, stage, ExperimentConfig, KernelSpec, Setup, TruthSpec, UnfoldingResult};
use crate::error::{Result, UnfoldError};
use crate::forward::CrystalBall;
use crate::interval::Interval;
use crate::quadrature::GaussLegendre;
use crate::rng::stream;
use crate::simulate::{
    binomial_split, breit_wigner_pdf, expected_counts, simulate_counts, BinnedCounts, IntensityShape, TrueIntensity,
};

/// Quadrature panel width for Breit–Wigner convolutions, in GeV.
const PANEL_GEV: f64 = 0.5;
const PANEL_NODES: usize = 6;
const MODE_GRID: usize = 4001;

fn default_window() -> Interval {
    Interval::new(65.0, 115.0).expect("static window")
}

fn default_fit_bins() -> usize {
    100
}

fn default_window_events() -> f64 {
    67_778.0
}

fn default_unfold_fraction() -> f64 {
    0.7
}

fn default_true() -> bool {
    true
}

/// Data-generation and fitting settings for the Z boson analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZbosonSpec {
    /// Invariant-mass window of the full histogram and of the response fit.
    #[serde(default = "default_window")]
    pub fit_window_gev: Interval,
    #[serde(default = "default_fit_bins")]
    pub fit_bins: usize,
    /// Expected events in the window for the synthetic data.
    #[serde(default = "default_window_events")]
    pub window_events: f64,
    /// Probability an event goes to the unfolding sample; the rest is used for the fit.
    #[serde(default = "default_unfold_fraction")]
    pub unfold_fraction: f64,
    /// Fit the Crystal Ball response instead of using the configured kernel.
    #[serde(default = "default_true")]
    pub fit_crystal_ball: bool,
}

impl Default for ZbosonSpec {
    fn default() -> Self {
        Self {
            fit_window_gev: default_window(),
            fit_bins: default_fit_bins(),
            window_events: default_window_events(),
            unfold_fraction: default_unfold_fraction(),
            fit_crystal_ball: true,
        }
    }
}

impl ZbosonSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fit_bins == 0 || !(self.window_events >= 0.0) {
            return Err(UnfoldError::Config("zboson: fit_bins >= 1 and window_events >= 0 required".into()));
        }
        if !(self.unfold_fraction > 0.0 && self.unfold_fraction < 1.0) {
            return Err(UnfoldError::Config(format!(
                "zboson: unfold_fraction must lie in (0, 1), got {}",
                self.unfold_fraction
            )));
        }
        Ok(())
    }

    pub fn window_edges(&self) -> Vec<f64> {
        self.fit_window_gev.uniform_edges(self.fit_bins)
    }

    fn breit_wigner(config: &ExperimentConfig) -> Result<(f64, f64)> {
        match config.truth {
            TruthSpec::BreitWigner { m_z_gev, width_gev, .. } => Ok((m_z_gev, width_gev)),
            _ => Err(UnfoldError::Config("zboson section needs a breit_wigner truth".into())),
        }
    }

    /// Truth used to generate the full histogram: the Breit–Wigner restricted
    /// to the window, scaled to `window_events` expected smeared events.
    pub fn generating_truth(&self, config: &ExperimentConfig) -> Result<TrueIntensity> {
        let (m_z, width) = Self::breit_wigner(config)?;
        let unit = TrueIntensity {
            domain: self.fit_window_gev,
            shape: IntensityShape::BreitWigner { scale: 1.0, m_z, width },
        };
        let kernel = config.kernel.build()?;
        let window = [self.fit_window_gev.lo(), self.fit_window_gev.hi()];
        let per_unit = expected_counts(&unit, &config.efficiency, &kernel, &window, 400)?[0];
        if !(per_unit > 0.0) {
            return Err(UnfoldError::Config("Breit-Wigner truth puts no events in the window".into()));
        }
        let scale = match config.truth {
            TruthSpec::BreitWigner { scale: Some(s), .. } => s,
            _ => self.window_events / per_unit,
        };
        Ok(TrueIntensity {
            domain: self.fit_window_gev,
            shape: IntensityShape::BreitWigner { scale, m_z, width },
        })
    }

    pub(crate) fn generating_scale(&self, config: &ExperimentConfig) -> Result<f64> {
        match self.generating_truth(config)?.shape {
            IntensityShape::BreitWigner { scale, .. } => Ok(scale),
            _ => unreachable!("constructed above"),
        }
    }
}

/// Synthetic Z boson histograms.
#[derive(Debug, Clone)]
pub struct ZbosonData {
    /// All events on the window.
    pub full: BinnedCounts,
    /// The unfolding share, restricted to the configured smeared range.
    pub unfold: BinnedCounts,
    /// The fitting share on the full window.
    pub fit: BinnedCounts,
    pub truth_scale: f64,
}

/// Generates the full window histogram and splits it binomially.
pub fn synthesize_zboson(config: &ExperimentConfig) -> Result<ZbosonData> {
    let spec = config
        .zboson
        .as_ref()
        .ok_or_else(|| UnfoldError::Config("config has no zboson section".into()))?;
    let truth = spec.generating_truth(config)?;
    let kernel = config.kernel.build()?;
    let mut rng = stream(config.stage_seed(seeds::ZBOSON));
    let full = simulate_counts(&truth, &config.efficiency, &kernel, &spec.window_edges(), &mut rng)
        .map_err(|e| e.at_stage(stage::SIMULATE))?;
    let (unfold_all, fit) = binomial_split(&full, spec.unfold_fraction, &mut rng)?;
    let unfold = unfold_all.restrict(config.smeared_domain_gev.lo(), config.smeared_domain_gev.hi())?;
    let truth_scale = match truth.shape {
        IntensityShape::BreitWigner { scale, .. } => scale,
        _ => unreachable!("breit-wigner truth"),
    };
    Ok(ZbosonData {
        full,
        unfold,
        fit,
        truth_scale,
    })
}

/// Gauss–Legendre nodes on the window with Breit–Wigner density folded into the weights.
struct BreitWignerNodes {
    s: Vec<f64>,
    w: Vec<f64>,
}

impl BreitWignerNodes {
    fn new(window: Interval, m_z: f64, width: f64) -> Self {
        let panels = (window.width() / PANEL_GEV).ceil().max(1.0) as usize;
        let rule = GaussLegendre::new(PANEL_NODES);
        let breaks = window.linspace(panels + 1);
        let mut s = Vec::with_capacity(panels * PANEL_NODES);
        let mut w = Vec::with_capacity(panels * PANEL_NODES);
        for p in breaks.windows(2) {
            for (x, wt) in rule.mapped(p[0], p[1]) {
                s.push(x);
                w.push(wt * breit_wigner_pdf(x, m_z, width));
            }
        }
        Self { s, w }
    }

    /// `int_window BW(s) int_bin CB(t - s) dt ds` for every bin.
    fn bin_means(&self, cb: &CrystalBall, edges: &[f64]) -> Vec<f64> {
        let mut mu = vec![0.0; edges.len() - 1];
        let mut cdf = vec![0.0; edges.len()];
        for (&s, &w) in self.s.iter().zip(&self.w) {
            for (c, &e) in cdf.iter_mut().zip(edges) {
                *c = cb.cdf(e - s);
            }
            for (m, pair) in mu.iter_mut().zip(cdf.windows(2)) {
                *m += w * (pair[1] - pair[0]).max(0.0);
            }
        }
        mu
    }
}

/// Expected counts per bin for unit Breit–Wigner scale, the true mass
/// restricted to the span of `edges`.
pub fn crystal_ball_bin_means(cb: &CrystalBall, m_z: f64, width: f64, edges: &[f64]) -> Result<Vec<f64>> {
    crate::forward::validate_edges(edges)?;
    let window = Interval::new(edges[0], edges[edges.len() - 1])?;
    Ok(BreitWignerNodes::new(window, m_z, width).bin_means(cb, edges))
}

/// Crystal Ball fit result; `scale` multiplies the Breit–Wigner density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalBallFit {
    pub cb: CrystalBall,
    pub scale: f64,
    pub log_likelihood: f64,
    pub converged_starts: usize,
}

/// Binned Poisson log-likelihood `sum y log mu - mu` with the scale profiled out;
/// returns `(log_likelihood, scale)`.
fn profiled_loglik(y: &[f64], unit_means: &[f64]) -> (f64, f64) {
    let total_y: f64 = y.iter().sum();
    let total_mu: f64 = unit_means.iter().sum();
    if !(total_mu > 0.0) {
        return (f64::NEG_INFINITY, 0.0);
    }
    let scale = total_y / total_mu;
    let mut ll = 0.0;
    for (&yi, &ai) in y.iter().zip(unit_means) {
        let mu = scale * ai;
        if yi > 0.0 {
            if mu <= 0.0 {
                return (f64::NEG_INFINITY, scale);
            }
            ll += yi * mu.ln();
        }
        ll -= mu;
    }
    (ll, scale)
}

/// Profiled log-likelihood of `y` at the given response parameters.
pub fn crystal_ball_loglik(y: &BinnedCounts, cb: &CrystalBall, m_z: f64, width: f64) -> Result<(f64, f64)> {
    let means = crystal_ball_bin_means(cb, m_z, width, y.bin_edges())?;
    Ok(profiled_loglik(&y.as_f64(), &means))
}

/// Unconstrained coordinates `(delta_m, ln sigma, ln alpha, ln(gamma - 1))`.
fn to_params(x: &[f64]) -> Option<CrystalBall> {
    let in_range = x[1].abs() < 8.0 && x[2].abs() < 5.0 && x[3] > -9.0 && x[3] < 6.0 && x[0].abs() < 50.0;
    if !in_range {
        return None;
    }
    CrystalBall::new(x[0], x[1].exp(), x[2].exp(), 1.0 + x[3].exp()).ok()
}

/// Mode and FWHM of a histogram from its peak bin and linear half-maximum crossings.
fn histogram_shape(y: &BinnedCounts) -> (f64, f64) {
    let c = y.as_f64();
    let e = y.bin_edges();
    let centers: Vec<f64> = e.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let smooth: Vec<f64> = (0..c.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(c.len() - 1);
            c[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let peak = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let half = 0.5 * smooth[peak];
    let mut left = centers[0];
    for i in (0..peak).rev() {
        if smooth[i] <= half {
            let t = (half - smooth[i]) / (smooth[i + 1] - smooth[i]).max(f64::MIN_POSITIVE);
            left = centers[i] + t * (centers[i + 1] - centers[i]);
            break;
        }
    }
    let mut right = centers[c.len() - 1];
    for i in peak + 1..c.len() {
        if smooth[i] <= half {
            let t = (smooth[i - 1] - half) / (smooth[i - 1] - smooth[i]).max(f64::MIN_POSITIVE);
            right = centers[i - 1] + t * (centers[i] - centers[i - 1]);
            break;
        }
    }
    (centers[peak], (right - left).max(0.0))
}

/// Binned maximum-likelihood fit of the Crystal Ball response to `y_fit`,
/// assuming a true intensity proportional to the Breit–Wigner density.
///
/// The proportionality constant is profiled out analytically; the four shape
/// parameters are optimized by Nelder–Mead from five deterministic starts.
pub fn fit_crystal_ball(y_fit: &BinnedCounts, m_z: f64, width: f64) -> Result<CrystalBallFit> {
    if y_fit.total() == 0 {
        return Err(UnfoldError::InvalidParameter("cannot fit a response to an empty histogram".into()));
    }
    let edges = y_fit.bin_edges();
    let window = Interval::new(edges[0], edges[edges.len() - 1])?;
    let nodes = BreitWignerNodes::new(window, m_z, width);
    let y = y_fit.as_f64();
    let objective = |x: &[f64]| -> f64 {
        match to_params(x) {
            Some(cb) => -profiled_loglik(&y, &nodes.bin_means(&cb, edges)).0,
            None => f64::INFINITY,
        }
    };
    let (mode, fwhm) = histogram_shape(y_fit);
    // Voigt width relation solved for the Gaussian part
    let gauss_fwhm = ((fwhm - 0.5346 * width).powi(2) - 0.2166 * width * width)
        .max(0.0)
        .sqrt();
    let sigma0 = (gauss_fwhm / 2.3548).clamp(0.2, 5.0);
    let dm0 = mode - m_z;
    let starts = [
        [dm0, sigma0, 1.5, 2.0],
        [dm0, sigma0, 2.0, 1.5],
        [dm0, 0.7 * sigma0, 1.0, 3.0],
        [dm0, 1.3 * sigma0, 3.0, 1.3],
        [dm0 + 0.3, sigma0, 1.0, 5.0],
    ];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged_starts = 0;
    for st in starts {
        let x0 = [st[0], st[1].ln(), st[2].ln(), (st[3] - 1.0).ln()];
        let (x, _, ok) = nelder_mead(&objective, &x0, &[0.2, 0.2, 0.3, 0.5], 4000, 1e-10);
        // restart once from the optimum to avoid a collapsed simplex
        let (x, fx, ok2) = nelder_mead(&objective, &x, &[0.05, 0.05, 0.1, 0.2], 4000, 1e-10);
        if (ok || ok2) && fx.is_finite() {
            converged_starts += 1;
        }
        if fx.is_finite() && best.as_ref().is_none_or(|b| fx < b.1) {
            best = Some((x, fx));
        }
    }
    let (x, _) = best
        .filter(|_| converged_starts > 0)
        .ok_or_else(|| UnfoldError::NonConvergence("Crystal Ball fit failed from every start".into()))?;
    let cb = to_params(&x).expect("finite optimum is in range");
    let (log_likelihood, scale) = profiled_loglik(&y, &nodes.bin_means(&cb, edges));
    info!(
        "Crystal Ball fit: dm = {:.4}, sigma = {:.4}, alpha = {:.3}, gamma = {:.3}",
        cb.delta_m, cb.sigma, cb.alpha, cb.gamma
    );
    Ok(CrystalBallFit {
        cb,
        scale,
        log_likelihood,
        converged_starts,
    })
}

/// Minimizes `f` from `x0` with initial simplex steps `step`; returns
/// `(x, f(x), converged)` where convergence means the simplex values agree within `ftol`.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    max_evals: usize,
    ftol: f64,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = (values[n] - values[0]).abs();
        if spread <= ftol * (values[0].abs() + ftol) {
            return (simplex[0].clone(), values[0], true);
        }
        if evals >= max_evals {
            return (simplex[0].clone(), values[0], false);
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    values[i] = f(&shrunk);
                    simplex[i] = shrunk;
                }
                evals += n;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ZbosonResult {
    pub fit: Option<CrystalBallFit>,
    pub unfolding: UnfoldingResult,
    /// Breit–Wigner truth on the grid, scaled to the unfolding sample.
    pub truth_overlay: Vec<f64>,
    /// Observed counts divided by bin width, per smeared bin.
    pub smeared_density: Vec<f64>,
    /// Location of the maximum of the unfolded intensity.
    pub mode_gev: f64,
}

/// Unfolds the Z boson sample `data`, fitting the response to `fit_sample`
/// first when one is given and the config asks for it.
pub fn run_zboson(
    config: &ExperimentConfig,
    data: &BinnedCounts,
    fit_sample: Option<&BinnedCounts>,
) -> Result<ZbosonResult> {
    let spec = config
        .zboson
        .as_ref()
        .ok_or_else(|| UnfoldError::Config("config has no zboson section".into()))?;
    let (m_z, width) = ZbosonSpec::breit_wigner(config)?;
    let mut cfg = config.clone();
    let fit = match fit_sample {
        Some(y) if spec.fit_crystal_ball => {
            let f = fit_crystal_ball(y, m_z, width).map_err(|e| e.at_stage(stage::CB_FIT))?;
            cfg.kernel = KernelSpec::from_crystal_ball(&f.cb);
            Some(f)
        }
        _ => None,
    };
    let setup = Setup::new(&cfg)?;
    let unfolding = run_unfolding_with(&cfg, &setup, data, &mut Vec::new())?;
    let overlay_scale = match &fit {
        Some(f) => f.scale * spec.unfold_fraction / (1.0 - spec.unfold_fraction),
        None => match config.truth()?.shape {
            IntensityShape::BreitWigner { scale, .. } => scale,
            _ => unreachable!("breit-wigner truth"),
        },
    };
    let truth_overlay = unfolding
        .grid
        .iter()
        .map(|&s| overlay_scale * breit_wigner_pdf(s, m_z, width))
        .collect();
    let smeared_density = data
        .counts()
        .iter()
        .zip(data.widths())
        .map(|(&c, w)| c as f64 / w)
        .collect();
    let fine = config.true_domain_gev.linspace(MODE_GRID);
    let f = setup.basis.eval_intensity(&unfolding.beta_hat, &fine)?;
    let mode_gev = fine[f
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)];
    Ok(ZbosonResult {
        fit,
        unfolding,
        truth_overlay,
        smeared_density,
        mode_gev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SmearingKernel;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * x[0] * x[1];
        let (x, _, ok) = nelder_mead(&f, &[0.0, 0.0], &[0.5, 0.5], 5000, 1e-14);
        assert!(ok);
        // gradient zero: 2(x0-1) + 0.5 x1 = 0, 6(x1+2) + 0.5 x0 = 0
        let g0 = 2.0 * (x[0] - 1.0) + 0.5 * x[1];
        let g1 = 6.0 * (x[1] + 2.0) + 0.5 * x[0];
        assert!(g0.abs() < 1e-4 && g1.abs() < 1e-4);
    }

    #[test]
    fn bin_means_match_generic_quadrature() {
        let cb = CrystalBall::new(0.56, 1.01, 1.95, 1.4).unwrap();
        let edges = Interval::new(80.0, 100.0).unwrap().uniform_edges(20);
        let fast = crystal_ball_bin_means(&cb, 91.1876, 2.4952, &edges).unwrap();
        let truth = TrueIntensity {
            domain: Interval::new(80.0, 100.0).unwrap(),
            shape: IntensityShape::BreitWigner {
                scale: 1.0,
                m_z: 91.1876,
                width: 2.4952,
            },
        };
        let eff = crate::forward::Efficiency::default();
        let slow = expected_counts(&truth, &eff, &SmearingKernel::CrystalBall(cb), &edges, 400).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-7 * b.max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn histogram_shape_of_symmetric_peak() {
        let edges = Interval::new(-5.0, 5.0).unwrap().uniform_edges(100);
        let counts = edges
            .windows(2)
            .map(|w| (1000.0 * (-0.5 * (0.5 * (w[0] + w[1])).powi(2)).exp()).round() as u64)
            .collect();
        let y = BinnedCounts::new(counts, edges).unwrap();
        let (mode, fwhm) = histogram_shape(&y);
        assert!(mode.abs() < 0.1);
        assert!((fwhm - 2.3548).abs() < 0.1);
    }
}
