//! Smearing kernels, detector efficiency and the discretized forward operator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnfoldError};
use crate::quadrature::GaussLegendre;
use crate::special::{normal_cdf, normal_mass, normal_pdf, normal_quantile, normal_sf, SQRT_2PI};
use crate::splines::SplineBasis;

/// Relative change tolerated when the quadrature node count is doubled.
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;
const INITIAL_NODES: usize = 8;
const MAX_NODES: usize = 512;

/// Gaussian core with a power-law low-side tail.
///
/// Density in `x = t - s`:
/// `C exp(-z^2/2)` for `z = (x - delta_m)/sigma > -alpha`, and
/// `C (gamma/alpha)^gamma exp(-alpha^2/2) (gamma/alpha - alpha - z)^(-gamma)` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalBall {
    pub delta_m: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl CrystalBall {
    pub fn new(delta_m: f64, sigma: f64, alpha: f64, gamma: f64) -> Result<Self> {
        let cb = Self {
            delta_m,
            sigma,
            alpha,
            gamma,
        };
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_m.is_finite()
            && self.sigma > 0.0
            && self.alpha > 0.0
            && self.gamma > 1.0
            && self.sigma.is_finite()
            && self.alpha.is_finite()
            && self.gamma.is_finite())
        {
            return Err(UnfoldError::InvalidParameter(format!(
                "crystal ball needs sigma > 0, alpha > 0, gamma > 1; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Tail mass in standardized units.
    fn tail_mass_std(&self) -> f64 {
        self.gamma / (self.alpha * (self.gamma - 1.0)) * (-0.5 * self.alpha * self.alpha).exp()
    }

    /// Gaussian-branch mass in standardized units, `sqrt(2 pi) Phi(alpha)`.
    fn core_mass_std(&self) -> f64 {
        SQRT_2PI * normal_cdf(self.alpha)
    }

    /// Normalization constant `C`.
    pub fn norm(&self) -> f64 {
        1.0 / (self.sigma * (self.tail_mass_std() + self.core_mass_std()))
    }

    fn ln_tail_scale(&self) -> f64 {
        self.gamma * (self.gamma / self.alpha).ln() - 0.5 * self.alpha * self.alpha
    }

    fn tail_offset(&self) -> f64 {
        self.gamma / self.alpha - self.alpha
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.delta_m) / self.sigma;
        let c = self.norm();
        if z > -self.alpha {
            c * (-0.5 * z * z).exp()
        } else {
            c * (self.ln_tail_scale() - self.gamma * (self.tail_offset() - z).ln()).exp()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.delta_m) / self.sigma;
        let cs = self.norm() * self.sigma;
        if z <= -self.alpha {
            cs * (self.ln_tail_scale() + (1.0 - self.gamma) * (self.tail_offset() - z).ln()).exp()
                / (self.gamma - 1.0)
        } else {
            cs * (self.tail_mass_std() + SQRT_2PI * (normal_cdf(z) - normal_cdf(-self.alpha)))
        }
    }

    /// `1 - cdf(x)`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        let z = (x - self.delta_m) / self.sigma;
        if z <= -self.alpha {
            1.0 - self.cdf(x)
        } else {
            self.norm() * self.sigma * SQRT_2PI * normal_sf(z)
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let cs = self.norm() * self.sigma;
        let tail = cs * self.tail_mass_std();
        let z = if u <= tail {
            let base = u * (self.gamma - 1.0) / (cs * self.ln_tail_scale().exp());
            self.tail_offset() - base.powf(1.0 / (1.0 - self.gamma))
        } else {
            let upper = (1.0 - u) / (cs * SQRT_2PI);
            if upper < 0.5 {
                -normal_quantile(upper)
            } else {
                normal_quantile(normal_cdf(-self.alpha) + (u - tail) / (cs * SQRT_2PI))
            }
        };
        self.delta_m + self.sigma * z
    }

    /// Offset `x` where the density switches branch.
    pub fn branch_point(&self) -> f64 {
        self.delta_m - self.alpha * self.sigma
    }

    /// Probability mass of `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if a >= self.delta_m {
            (self.sf(a) - self.sf(b)).max(0.0)
        } else {
            (self.cdf(b) - self.cdf(a)).max(0.0)
        }
    }
}

/// Kernel tabulated on a `t x s` grid and interpolated bilinearly; zero off the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    t_nodes: Vec<f64>,
    s_nodes: Vec<f64>,
    /// `values[it * s_nodes.len() + is]`
    values: Vec<f64>,
}

impl TabulatedKernel {
    pub fn new(t_nodes: Vec<f64>, s_nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        for nodes in [&t_nodes, &s_nodes] {
            if nodes.len() < 2 || nodes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(UnfoldError::InvalidParameter(
                    "tabulated kernel grid must have >= 2 strictly increasing nodes per axis".into(),
                ));
            }
        }
        if values.len() != t_nodes.len() * s_nodes.len() {
            return Err(UnfoldError::DimensionMismatch {
                expected: t_nodes.len() * s_nodes.len(),
                actual: values.len(),
                context: "tabulated kernel values",
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(UnfoldError::InvalidParameter(
                "tabulated kernel values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            t_nodes,
            s_nodes,
            values,
        })
    }

    pub fn t_nodes(&self) -> &[f64] {
        &self.t_nodes
    }

    pub fn s_nodes(&self) -> &[f64] {
        &self.s_nodes
    }

    pub fn value_at(&self, it: usize, is: usize) -> f64 {
        self.values[it * self.s_nodes.len() + is]
    }

    fn locate(nodes: &[f64], x: f64) -> Option<(usize, f64)> {
        if x < nodes[0] || x > nodes[nodes.len() - 1] {
            return None;
        }
        let i = nodes.partition_point(|&v| v <= x).clamp(1, nodes.len() - 1) - 1;
        Some((i, (x - nodes[i]) / (nodes[i + 1] - nodes[i])))
    }

    /// Kernel values at every `t` node for the given `s`.
    fn column(&self, s: f64) -> Option<Vec<f64>> {
        let (is, w) = Self::locate(&self.s_nodes, s)?;
        Some(
            (0..self.t_nodes.len())
                .map(|it| (1.0 - w) * self.value_at(it, is) + w * self.value_at(it, is + 1))
                .collect(),
        )
    }

    pub fn density(&self, t: f64, s: f64) -> f64 {
        match (Self::locate(&self.t_nodes, t), self.column(s)) {
            (Some((it, w)), Some(col)) => (1.0 - w) * col[it] + w * col[it + 1],
            _ => 0.0,
        }
    }

    pub fn mass(&self, a: f64, b: f64, s: f64) -> f64 {
        let Some(col) = self.column(s) else {
            return 0.0;
        };
        let mut acc = 0.0;
        for k in 0..self.t_nodes.len() - 1 {
            let (t0, t1) = (self.t_nodes[k], self.t_nodes[k + 1]);
            let lo = a.max(t0);
            let hi = b.min(t1);
            if hi <= lo {
                continue;
            }
            let slope = (col[k + 1] - col[k]) / (t1 - t0);
            let at = |t: f64| col[k] + slope * (t - t0);
            acc += 0.5 * (at(lo) + at(hi)) * (hi - lo);
        }
        acc
    }

    fn sample<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Option<f64> {
        let col = self.column(s)?;
        let masses: Vec<f64> = col
            .windows(2)
            .zip(self.t_nodes.windows(2))
            .map(|(c, t)| 0.5 * (c[0] + c[1]) * (t[1] - t[0]))
            .collect();
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut k = masses.len() - 1;
        for (i, &m) in masses.iter().enumerate() {
            if u < m {
                k = i;
                break;
            }
            u -= m;
        }
        let h = self.t_nodes[k + 1] - self.t_nodes[k];
        let (a, b) = (col[k], col[k + 1]);
        let v: f64 = rng.random();
        // invert the linear density a + (b - a) x / h on [0, h]
        let x = if (b - a).abs() < 1e-12 * (a + b).max(1e-300) {
            v * h
        } else {
            let slope = (b - a) / h;
            let target = v * 0.5 * (a + b) * h;
            (-a + (a * a + 2.0 * slope * target).max(0.0).sqrt()) / slope
        };
        Some(self.t_nodes[k] + x.clamp(0.0, h))
    }
}

/// Smearing kernel `k(t, s)`; detector efficiency is kept separately in [`Efficiency`].
#[derive(Debug, Clone, PartialEq)]
pub enum SmearingKernel {
    Gaussian { sigma: f64 },
    CrystalBall(CrystalBall),
    /// Dirac delta `k(t, s) = delta_0(t - s)`.
    Identity,
    Tabulated(TabulatedKernel),
}

impl SmearingKernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(UnfoldError::InvalidParameter(format!(
                "gaussian kernel needs sigma > 0, got {sigma}"
            )));
        }
        Ok(Self::Gaussian { sigma })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gaussian { sigma } => Self::gaussian(*sigma).map(|_| ()),
            Self::CrystalBall(cb) => cb.validate(),
            Self::Identity | Self::Tabulated(_) => Ok(()),
        }
    }

    /// `k(t, s)`. The identity kernel reports `+inf` on the diagonal and zero elsewhere.
    pub fn density(&self, t: f64, s: f64) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Self::Gaussian { sigma } => normal_pdf((t - s) / sigma) / sigma,
            Self::CrystalBall(cb) => cb.density(t - s),
            Self::Identity => {
                if t == s {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Self::Tabulated(tab) => tab.density(t, s),
        })
    }

    /// `int_a^b k(t, s) dt`.
    pub fn mass(&self, a: f64, b: f64, s: f64) -> f64 {
        match self {
            Self::Gaussian { sigma } => normal_mass((a - s) / sigma, (b - s) / sigma),
            Self::CrystalBall(cb) => cb.mass(a - s, b - s),
            Self::Identity => {
                if s >= a && s < b {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tabulated(tab) => tab.mass(a, b, s),
        }
    }

    /// Points in `s` where `mass(a, b, .)` is not smooth.
    pub(crate) fn s_breakpoints(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        match self {
            Self::Gaussian { .. } => {}
            Self::CrystalBall(cb) => {
                out.push(a - cb.branch_point());
                out.push(b - cb.branch_point());
            }
            Self::Identity => {
                out.push(a);
                out.push(b);
            }
            Self::Tabulated(tab) => out.extend_from_slice(tab.s_nodes()),
        }
    }

    /// Draws an observed value for a true value `s`; `None` if the kernel has no mass there.
    pub fn sample<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Option<f64> {
        match self {
            Self::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                Some(s + sigma * z)
            }
            Self::CrystalBall(cb) => {
                let u: f64 = rng.random();
                Some(s + cb.quantile(u))
            }
            Self::Identity => Some(s),
            Self::Tabulated(tab) => tab.sample(s, rng),
        }
    }
}

/// Detection efficiency `eps(s)` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Efficiency {
    Constant { value: f64 },
    /// Piecewise-linear through `(s, eps)` nodes, held constant beyond the ends.
    Piecewise { nodes: Vec<[f64; 2]> },
}

impl Default for Efficiency {
    fn default() -> Self {
        Efficiency::Constant { value: 1.0 }
    }
}

impl Efficiency {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        match self {
            Self::Constant { value } if ok(*value) => Ok(()),
            Self::Piecewise { nodes }
                if !nodes.is_empty()
                    && nodes.iter().all(|n| ok(n[1]) && n[0].is_finite())
                    && nodes.windows(2).all(|w| w[1][0] > w[0][0]) =>
            {
                Ok(())
            }
            _ => Err(UnfoldError::InvalidParameter(format!(
                "efficiency must lie in [0, 1] with increasing nodes: {self:?}"
            ))),
        }
    }

    pub fn at(&self, s: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Piecewise { nodes } => {
                let first = nodes[0];
                let last = nodes[nodes.len() - 1];
                if s <= first[0] {
                    return first[1];
                }
                if s >= last[0] {
                    return last[1];
                }
                let k = nodes.partition_point(|n| n[0] <= s) - 1;
                let (a, b) = (nodes[k], nodes[k + 1]);
                a[1] + (b[1] - a[1]) * (s - a[0]) / (b[0] - a[0])
            }
        }
    }

    pub(crate) fn breakpoints(&self, out: &mut Vec<f64>) {
        if let Self::Piecewise { nodes } = self {
            out.extend(nodes.iter().map(|n| n[0]));
        }
    }
}

/// The `n x p` matrix `K_ij = int_{F_i} int_E k(t,s) eps(s) B_j(s) ds dt`.
#[derive(Debug, Clone)]
pub struct ResponseMatrix {
    pub entries: DMatrix<f64>,
    pub bin_edges: Vec<f64>,
    pub basis: SplineBasis,
    pub condition_number: f64,
    /// Gauss–Legendre nodes per sub-interval at the accepted resolution.
    pub quadrature_nodes: usize,
}

impl ResponseMatrix {
    pub fn n_bins(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_coefficients(&self) -> usize {
        self.entries.ncols()
    }
}

pub fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(UnfoldError::InvalidParameter("need at least one bin".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(UnfoldError::InvalidParameter(
            "bin edges must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn assemble(
    kernel: &SmearingKernel,
    efficiency: &Efficiency,
    basis: &SplineBasis,
    edges: &[f64],
    rule: &GaussLegendre,
) -> Result<DMatrix<f64>> {
    let n = edges.len() - 1;
    let p = basis.len();
    let domain = basis.domain();
    let mut k = DMatrix::zeros(n, p);
    let mut fixed = basis.breakpoints();
    efficiency.breakpoints(&mut fixed);
    for i in 0..n {
        let (a, b) = (edges[i], edges[i + 1]);
        let mut breaks = fixed.clone();
        kernel.s_breakpoints(a, b, &mut breaks);
        breaks.retain(|&x| domain.contains(x));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        for w in breaks.windows(2) {
            for (s, wt) in rule.mapped(w[0], w[1]) {
                let mass = kernel.mass(a, b, s) * efficiency.at(s);
                if mass == 0.0 {
                    continue;
                }
                let (first, local) = basis.eval_local(s)?;
                for (r, v) in local.iter().enumerate() {
                    k[(i, first + r)] += wt * mass * v;
                }
            }
        }
    }
    Ok(k)
}

fn max_relative_change(coarse: &DMatrix<f64>, fine: &DMatrix<f64>) -> f64 {
    let scale = fine.amax();
    let floor = 1e-14 * scale;
    coarse
        .iter()
        .zip(fine.iter())
        .map(|(c, f)| (c - f).abs() / f.abs().max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// 2-norm condition number over the `min(n, p)` singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Assembles the response matrix, doubling Gauss–Legendre nodes until entries settle.
///
/// The inner `t`-integral over each bin is done in closed form through the kernel's
/// cumulative distribution; the outer `s`-integral is split at knots and at every
/// point where the integrand loses smoothness.
pub fn build_response_matrix(
    kernel: &SmearingKernel,
    efficiency: &Efficiency,
    basis: &SplineBasis,
    bin_edges: &[f64],
) -> Result<ResponseMatrix> {
    validate_edges(bin_edges)?;
    kernel.validate()?;
    efficiency.validate()?;
    let mut nodes = INITIAL_NODES;
    let mut coarse = assemble(kernel, efficiency, basis, bin_edges, &GaussLegendre::new(nodes))?;
    loop {
        let fine = assemble(kernel, efficiency, basis, bin_edges, &GaussLegendre::new(2 * nodes))?;
        let change = max_relative_change(&coarse, &fine);
        if change <= QUADRATURE_TOLERANCE {
            let condition_number = condition_number(&fine);
            return Ok(ResponseMatrix {
                entries: fine,
                bin_edges: bin_edges.to_vec(),
                basis: basis.clone(),
                condition_number,
                quadrature_nodes: 2 * nodes,
            });
        }
        nodes *= 2;
        if nodes >= MAX_NODES {
            return Err(UnfoldError::QuadratureNonConvergence {
                change,
                nodes: 2 * nodes,
            });
        }
        coarse = fine;
    }
}

/// `mu = K beta`.
pub fn smeared_mean(k: &DMatrix<f64>, beta: &[f64]) -> Result<DVector<f64>> {
    if beta.len() != k.ncols() {
        return Err(UnfoldError::DimensionMismatch {
            expected: k.ncols(),
            actual: beta.len(),
            context: "coefficient vector",
        });
    }
    if let Some((index, &value)) = beta.iter().enumerate().find(|(_, b)| **b < 0.0) {
        return Err(UnfoldError::NegativeCoefficient { index, value });
    }
    Ok(k * DVector::from_column_slice(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Interval;
    use crate::rng::stream;

    fn paper_cb() -> CrystalBall {
        CrystalBall::new(0.56, 1.01, 1.95, 1.40).unwrap()
    }

    #[test]
    fn gaussian_density_at_centre() {
        let k = SmearingKernel::gaussian(1.0).unwrap();
        assert!((k.density(0.3, 0.3).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!(SmearingKernel::gaussian(0.0).is_err());
    }

    #[test]
    fn crystal_ball_is_continuous_at_branch_point() {
        let cb = paper_cb();
        let x = cb.branch_point();
        let z = -cb.alpha;
        let gauss = cb.norm() * (-0.5 * z * z).exp();
        let tail = cb.norm()
            * (cb.gamma / cb.alpha).powf(cb.gamma)
            * (-0.5 * cb.alpha * cb.alpha).exp()
            * (cb.gamma / cb.alpha - cb.alpha - z).powf(-cb.gamma);
        assert!((gauss - tail).abs() < 1e-14);
        assert!((cb.density(x) - gauss).abs() < 1e-14);
        assert!((cb.density(x + 1e-9) - cb.density(x - 1e-9)).abs() < 1e-8);
    }

    #[test]
    fn crystal_ball_cdf_quantile_roundtrip() {
        let cb = paper_cb();
        assert!(cb.cdf(-1e9) < 1e-3);
        for u in [1e-6, 0.01, 0.02, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-9] {
            let x = cb.quantile(u);
            assert!((cb.cdf(x) - u).abs() < 1e-10, "u={u}");
        }
        let x = cb.branch_point();
        assert!((cb.cdf(x) + cb.sf(x) - 1.0).abs() < 1e-12);
        assert!(CrystalBall::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn identity_kernel_with_histogram_basis_is_diagonal() {
        let domain = Interval::new(0.0, 4.0).unwrap();
        let edges = vec![0.0, 0.5, 1.5, 3.0, 4.0];
        let basis = SplineBasis::with_knots(domain, vec![0.5, 1.5, 3.0], 1).unwrap();
        let r = build_response_matrix(&SmearingKernel::Identity, &Efficiency::default(), &basis, &edges)
            .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { edges[i + 1] - edges[i] } else { 0.0 };
                assert!((r.entries[(i, j)] - want).abs() < 1e-13);
            }
        }
        let mu = smeared_mean(&r.entries, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((mu[2] - 4.5).abs() < 1e-12);
        assert!(smeared_mean(&r.entries, &[1.0, -2.0, 3.0, 4.0]).is_err());
        assert!(smeared_mean(&r.entries, &[1.0]).is_err());
    }

    #[test]
    fn mass_is_conserved_for_wide_smeared_space() {
        let basis = SplineBasis::uniform(Interval::new(-7.0, 7.0).unwrap(), 26, 4).unwrap();
        let edges = Interval::new(-15.0, 15.0).unwrap().uniform_edges(60);
        let r = build_response_matrix(
            &SmearingKernel::gaussian(1.0).unwrap(),
            &Efficiency::default(),
            &basis,
            &edges,
        )
        .unwrap();
        for (j, want) in basis.integrals().into_iter().enumerate() {
            let got: f64 = r.entries.column(j).sum();
            assert!((got - want).abs() < 1e-4 * want, "column {j}");
        }
        assert!(r.entries.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn efficiency_scales_response() {
        let basis = SplineBasis::uniform(Interval::new(0.0, 1.0).unwrap(), 3, 4).unwrap();
        let edges = Interval::new(0.0, 1.0).unwrap().uniform_edges(5);
        let k = SmearingKernel::gaussian(0.1).unwrap();
        let full = build_response_matrix(&k, &Efficiency::default(), &basis, &edges).unwrap();
        let half =
            build_response_matrix(&k, &Efficiency::Constant { value: 0.5 }, &basis, &edges).unwrap();
        assert!((&full.entries * 0.5 - &half.entries).amax() < 1e-14);
        assert!(Efficiency::Constant { value: 1.5 }.validate().is_err());
        let pw = Efficiency::Piecewise {
            nodes: vec![[0.0, 0.2], [1.0, 1.0]],
        };
        assert!((pw.at(0.5) - 0.6).abs() < 1e-15);
        assert_eq!(pw.at(-3.0), 0.2);
    }

    #[test]
    fn tabulated_kernel_reproduces_gaussian() {
        let t: Vec<f64> = (0..=200).map(|i| -5.0 + 0.05 * i as f64).collect();
        let s: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let mut values = Vec::new();
        for &tt in &t {
            for &ss in &s {
                values.push(normal_pdf(tt - ss));
            }
        }
        let tab = TabulatedKernel::new(t, s, values).unwrap();
        assert!((tab.density(0.12, 0.05) - normal_pdf(0.07)).abs() < 1e-3);
        assert!((tab.mass(-0.5, 0.5, 0.0) - normal_mass(-0.5, 0.5)).abs() < 1e-3);
        assert_eq!(tab.density(0.0, 3.0), 0.0);
        let mut rng = stream(3);
        let k = SmearingKernel::Tabulated(tab);
        let draws: Vec<f64> = (0..20000).map(|_| k.sample(0.5, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.05);
    }
}
