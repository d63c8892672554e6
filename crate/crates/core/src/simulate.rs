//! Poisson point-process data generation: true points, thinning, smearing, binning.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnfoldError};
use crate::forward::{validate_edges, Efficiency, SmearingKernel};
use crate::interval::Interval;
use crate::quadrature::GaussLegendre;
use crate::special::{normal_cdf, normal_pdf, normal_quantile};
use crate::splines::SplineBasis;

const TABULATION_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// A user-supplied intensity; compared by pointer.
#[derive(Clone)]
pub struct CustomIntensity(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomIntensity(..)")
    }
}

impl PartialEq for CustomIntensity {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntensityShape {
    /// `lambda_tot * (sum_c w_c N(s | mean_c, sd_c^2) + w_u / |E|)`.
    GaussianMixture {
        lambda_tot: f64,
        components: Vec<GaussianComponent>,
        uniform_weight: f64,
    },
    /// `scale * Gamma / (2 pi ((s - m_z)^2 + Gamma^2 / 4))`.
    BreitWigner { scale: f64, m_z: f64, width: f64 },
    Spline { basis: SplineBasis, beta: Vec<f64> },
    #[serde(skip)]
    Custom(CustomIntensity),
}

/// A nonnegative intensity function on the true space `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueIntensity {
    pub domain: Interval,
    pub shape: IntensityShape,
}

/// The two-peak test spectrum on `[-7, 7]`.
pub fn gaussian_mixture(lambda_tot: f64) -> TrueIntensity {
    TrueIntensity {
        domain: Interval::new(-7.0, 7.0).expect("static domain"),
        shape: IntensityShape::GaussianMixture {
            lambda_tot,
            components: vec![
                GaussianComponent {
                    weight: 0.2,
                    mean: -2.0,
                    sd: 1.0,
                },
                GaussianComponent {
                    weight: 0.5,
                    mean: 2.0,
                    sd: 1.0,
                },
            ],
            uniform_weight: 0.3,
        },
    }
}

pub fn breit_wigner_pdf(s: f64, m_z: f64, width: f64) -> f64 {
    width / (2.0 * std::f64::consts::PI * ((s - m_z).powi(2) + 0.25 * width * width))
}

fn breit_wigner_cdf(s: f64, m_z: f64, width: f64) -> f64 {
    0.5 + ((s - m_z) / (0.5 * width)).atan() / std::f64::consts::PI
}

impl TrueIntensity {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(UnfoldError::InvalidParameter(m.to_string()));
        match &self.shape {
            IntensityShape::GaussianMixture {
                lambda_tot,
                components,
                uniform_weight,
            } => {
                if !(*lambda_tot >= 0.0 && lambda_tot.is_finite()) {
                    return bad("lambda_tot must be finite and nonnegative");
                }
                if *uniform_weight < 0.0 || components.iter().any(|c| c.weight < 0.0 || c.sd <= 0.0) {
                    return bad("mixture weights must be >= 0 and sds > 0");
                }
                Ok(())
            }
            IntensityShape::BreitWigner { scale, width, .. } => {
                if *scale < 0.0 || *width <= 0.0 {
                    return bad("breit-wigner needs scale >= 0 and width > 0");
                }
                Ok(())
            }
            IntensityShape::Spline { basis, beta } => {
                if beta.len() != basis.len() || beta.iter().any(|b| *b < 0.0) {
                    return bad("spline truth needs p nonnegative coefficients");
                }
                Ok(())
            }
            IntensityShape::Custom(_) => Ok(()),
        }
    }

    /// `f(s)`; zero outside the domain.
    pub fn value(&self, s: f64) -> f64 {
        if !self.domain.contains(s) {
            return 0.0;
        }
        match &self.shape {
            IntensityShape::GaussianMixture {
                lambda_tot,
                components,
                uniform_weight,
            } => {
                let peaks: f64 = components
                    .iter()
                    .map(|c| c.weight * normal_pdf((s - c.mean) / c.sd) / c.sd)
                    .sum();
                lambda_tot * (peaks + uniform_weight / self.domain.width())
            }
            IntensityShape::BreitWigner { scale, m_z, width } => {
                scale * breit_wigner_pdf(s, *m_z, *width)
            }
            IntensityShape::Spline { basis, beta } => basis
                .eval_intensity(beta, &[s])
                .map(|v| v[0])
                .unwrap_or(0.0),
            IntensityShape::Custom(f) => (f.0)(s).max(0.0),
        }
    }

    pub fn values(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&s| self.value(s)).collect()
    }

    /// Masses `lambda_tot * w_c * P(component c in E)`, the uniform part last.
    fn mixture_masses(&self) -> Option<Vec<f64>> {
        if let IntensityShape::GaussianMixture {
            lambda_tot,
            components,
            uniform_weight,
        } = &self.shape
        {
            let (a, b) = (self.domain.lo(), self.domain.hi());
            let mut m: Vec<f64> = components
                .iter()
                .map(|c| {
                    lambda_tot
                        * c.weight
                        * (normal_cdf((b - c.mean) / c.sd) - normal_cdf((a - c.mean) / c.sd))
                })
                .collect();
            m.push(lambda_tot * uniform_weight);
            Some(m)
        } else {
            None
        }
    }

    /// `lambda(E) = int_E f`.
    pub fn total(&self) -> f64 {
        let (a, b) = (self.domain.lo(), self.domain.hi());
        match &self.shape {
            IntensityShape::GaussianMixture { .. } => {
                self.mixture_masses().map(|m| m.iter().sum()).unwrap_or(0.0)
            }
            IntensityShape::BreitWigner { scale, m_z, width } => {
                scale * (breit_wigner_cdf(b, *m_z, *width) - breit_wigner_cdf(a, *m_z, *width))
            }
            IntensityShape::Spline { basis, beta } => basis
                .integrals()
                .iter()
                .zip(beta)
                .map(|(i, b)| i * b)
                .sum(),
            IntensityShape::Custom(_) => {
                let rule = GaussLegendre::new(8);
                let breaks = self.domain.linspace(2001);
                rule.integrate_pieces(&breaks, |s| self.value(s))
            }
        }
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, table: Option<&InverseCdf>) -> f64 {
        let (a, b) = (self.domain.lo(), self.domain.hi());
        match &self.shape {
            IntensityShape::GaussianMixture { components, .. } => {
                let masses = self.mixture_masses().unwrap_or_default();
                let total: f64 = masses.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = masses.len() - 1;
                for (i, &m) in masses.iter().enumerate() {
                    if u < m {
                        pick = i;
                        break;
                    }
                    u -= m;
                }
                if pick == components.len() {
                    a + rng.random::<f64>() * (b - a)
                } else {
                    let c = components[pick];
                    let lo = normal_cdf((a - c.mean) / c.sd);
                    let hi = normal_cdf((b - c.mean) / c.sd);
                    let v = lo + rng.random::<f64>() * (hi - lo);
                    (c.mean + c.sd * normal_quantile(v)).clamp(a, b)
                }
            }
            IntensityShape::BreitWigner { m_z, width, .. } => {
                let lo = breit_wigner_cdf(a, *m_z, *width);
                let hi = breit_wigner_cdf(b, *m_z, *width);
                let v = lo + rng.random::<f64>() * (hi - lo);
                (m_z + 0.5 * width * (std::f64::consts::PI * (v - 0.5)).tan()).clamp(a, b)
            }
            _ => table
                .expect("tabulated inverse cdf")
                .sample(rng.random::<f64>()),
        }
    }
}

/// Piecewise-linear CDF inversion over a dense tabulation.
struct InverseCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    fn new(f: &TrueIntensity) -> Self {
        let grid = f.domain.linspace(TABULATION_POINTS);
        let vals = f.values(&grid);
        let mut cdf = vec![0.0; grid.len()];
        for i in 1..grid.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (vals[i] + vals[i - 1]) * (grid[i] - grid[i - 1]);
        }
        Self { grid, cdf }
    }

    fn sample(&self, u: f64) -> f64 {
        let total = self.cdf[self.cdf.len() - 1];
        let target = u * total;
        let k = self.cdf.partition_point(|&c| c < target).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.grid[k - 1] + w * (self.grid[k] - self.grid[k - 1])
    }
}

/// Draws a realization of the true point process.
pub fn sample_true_points<R: Rng + ?Sized>(f: &TrueIntensity, rng: &mut R) -> Result<Vec<f64>> {
    f.validate()?;
    let total = f.total();
    if total <= 0.0 {
        return Ok(Vec::new());
    }
    let tau = Poisson::new(total)
        .map_err(|e| UnfoldError::InvalidParameter(format!("poisson mean {total}: {e}")))?
        .sample(rng) as usize;
    let table = match f.shape {
        IntensityShape::Spline { .. } | IntensityShape::Custom(_) => Some(InverseCdf::new(f)),
        _ => None,
    };
    Ok((0..tau).map(|_| f.sample_one(rng, table.as_ref())).collect())
}

/// Keeps each point with probability `eps(x)`, adds kernel noise, drops results outside `smeared`.
pub fn thin_and_smear<R: Rng + ?Sized>(
    points: &[f64],
    efficiency: &Efficiency,
    kernel: &SmearingKernel,
    smeared: Interval,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    for &x in points {
        let eps = efficiency.at(x);
        if eps < 1.0 && rng.random::<f64>() >= eps {
            continue;
        }
        if let Some(t) = kernel.sample(x, rng) {
            if smeared.contains(t) {
                out.push(t);
            }
        }
    }
    out
}

/// A histogram of observed counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCounts {
    counts: Vec<u64>,
    bin_edges: Vec<f64>,
}

impl BinnedCounts {
    pub fn new(counts: Vec<u64>, bin_edges: Vec<f64>) -> Result<Self> {
        validate_edges(&bin_edges)?;
        if counts.len() + 1 != bin_edges.len() {
            return Err(UnfoldError::DimensionMismatch {
                expected: bin_edges.len() - 1,
                actual: counts.len(),
                context: "bin counts vs edges",
            });
        }
        Ok(Self { counts, bin_edges })
    }

    pub fn zeros(bin_edges: Vec<f64>) -> Result<Self> {
        let n = bin_edges.len().saturating_sub(1);
        Self::new(vec![0; n], bin_edges)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Sub-histogram of the bins lying inside `[lo, hi]` (edges matched to 1e-9 relative).
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self> {
        let tol = 1e-9 * (hi - lo).abs().max(1.0);
        let first = self.bin_edges.iter().position(|&e| (e - lo).abs() <= tol);
        let last = self.bin_edges.iter().position(|&e| (e - hi).abs() <= tol);
        match (first, last) {
            (Some(a), Some(b)) if b > a => Self::new(
                self.counts[a..b].to_vec(),
                self.bin_edges[a..=b].to_vec(),
            ),
            _ => Err(UnfoldError::InvalidParameter(format!(
                "[{lo}, {hi}] does not align with the histogram edges"
            ))),
        }
    }
}

/// Histograms points into half-open bins `[lo, hi)`; the last bin is closed.
pub fn bin_points(points: &[f64], bin_edges: &[f64]) -> Result<BinnedCounts> {
    validate_edges(bin_edges)?;
    let n = bin_edges.len() - 1;
    let (first, last) = (bin_edges[0], bin_edges[n]);
    let mut counts = vec![0u64; n];
    for &x in points {
        if x < first || x > last || x.is_nan() {
            continue;
        }
        let idx = (bin_edges.partition_point(|&e| e <= x) - 1).min(n - 1);
        counts[idx] += 1;
    }
    BinnedCounts::new(counts, bin_edges.to_vec())
}

/// Splits each bin's events independently: the first output keeps each event with `keep_prob`.
pub fn binomial_split<R: Rng + ?Sized>(
    y: &BinnedCounts,
    keep_prob: f64,
    rng: &mut R,
) -> Result<(BinnedCounts, BinnedCounts)> {
    if !(keep_prob > 0.0 && keep_prob < 1.0) {
        return Err(UnfoldError::InvalidParameter(format!(
            "keep probability must be in (0, 1), got {keep_prob}"
        )));
    }
    let mut kept = Vec::with_capacity(y.len());
    let mut rest = Vec::with_capacity(y.len());
    for &c in y.counts() {
        let k = if c == 0 {
            0
        } else {
            Binomial::new(c, keep_prob)
                .map_err(|e| UnfoldError::InvalidParameter(e.to_string()))?
                .sample(rng)
        };
        kept.push(k);
        rest.push(c - k);
    }
    Ok((
        BinnedCounts::new(kept, y.bin_edges().to_vec())?,
        BinnedCounts::new(rest, y.bin_edges().to_vec())?,
    ))
}

/// Simulates a histogram end to end.
pub fn simulate_counts<R: Rng + ?Sized>(
    truth: &TrueIntensity,
    efficiency: &Efficiency,
    kernel: &SmearingKernel,
    bin_edges: &[f64],
    rng: &mut R,
) -> Result<BinnedCounts> {
    validate_edges(bin_edges)?;
    let smeared = Interval::new(bin_edges[0], bin_edges[bin_edges.len() - 1])?;
    let points = sample_true_points(truth, rng)?;
    let observed = thin_and_smear(&points, efficiency, kernel, smeared, rng);
    bin_points(&observed, bin_edges)
}

/// Exact bin means `int_E f(s) eps(s) int_{F_i} k(t,s) dt ds` by composite quadrature.
pub fn expected_counts(
    truth: &TrueIntensity,
    efficiency: &Efficiency,
    kernel: &SmearingKernel,
    bin_edges: &[f64],
    panels: usize,
) -> Result<Vec<f64>> {
    validate_edges(bin_edges)?;
    let rule = GaussLegendre::new(8);
    let mut fixed = truth.domain.linspace(panels + 1);
    efficiency.breakpoints(&mut fixed);
    Ok(bin_edges
        .windows(2)
        .map(|w| {
            let mut breaks = fixed.clone();
            kernel.s_breakpoints(w[0], w[1], &mut breaks);
            breaks.retain(|&x| truth.domain.contains(x));
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            rule.integrate_pieces(&breaks, |s| {
                truth.value(s) * efficiency.at(s) * kernel.mass(w[0], w[1], s)
            })
        })
        .collect())
}
