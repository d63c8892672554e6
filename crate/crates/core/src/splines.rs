//! Clamped B-spline bases on the true space and their roughness penalties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnfoldError};
use crate::interval::Interval;
use crate::quadrature::GaussLegendre;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// An order-`m` B-spline system with boundary knots of multiplicity `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    domain: Interval,
    order: usize,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Basis with `interior_count` uniformly placed interior knots.
    pub fn uniform(domain: Interval, interior_count: usize, order: usize) -> Result<Self> {
        let step = domain.width() / (interior_count + 1) as f64;
        let interior = (1..=interior_count)
            .map(|i| domain.lo() + step * i as f64)
            .collect();
        Self::with_knots(domain, interior, order)
    }

    pub fn with_knots(domain: Interval, interior: Vec<f64>, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(UnfoldError::InvalidParameter("spline order must be >= 1".into()));
        }
        for (i, &k) in interior.iter().enumerate() {
            if !(k > domain.lo() && k < domain.hi()) {
                return Err(UnfoldError::InvalidKnots(format!(
                    "interior knot {k} is not strictly inside [{}, {}]",
                    domain.lo(),
                    domain.hi()
                )));
            }
            if i > 0 && k <= interior[i - 1] {
                return Err(UnfoldError::InvalidKnots(format!(
                    "interior knots not strictly increasing at position {i}"
                )));
            }
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        knots.extend(std::iter::repeat_n(domain.lo(), order));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(domain.hi(), order));
        Ok(Self {
            domain,
            order,
            interior,
            knots,
        })
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Full clamped knot vector, length `p + m`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `L + m`.
    pub fn len(&self) -> usize {
        self.interior.len() + self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Breakpoints `e_min, s_1, ..., s_L, e_max`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior.len() + 2);
        b.push(self.domain.lo());
        b.extend_from_slice(&self.interior);
        b.push(self.domain.hi());
        b
    }

    /// Greville abscissae; the coefficients of the identity function `f(s) = s`.
    pub fn greville(&self) -> Vec<f64> {
        let d = self.order - 1;
        (0..self.len())
            .map(|j| {
                if d == 0 {
                    0.5 * (self.knots[j] + self.knots[j + 1])
                } else {
                    self.knots[j + 1..=j + d].iter().sum::<f64>() / d as f64
                }
            })
            .collect()
    }

    fn check_point(&self, s: f64) -> Result<()> {
        if self.domain.contains(s) {
            Ok(())
        } else {
            Err(UnfoldError::OutOfDomain {
                point: s,
                lo: self.domain.lo(),
                hi: self.domain.hi(),
            })
        }
    }

    /// Knot span `mu` with `t_mu <= s < t_{mu+1}`; the right endpoint maps to the last span.
    fn span(&self, s: f64) -> usize {
        let p = self.len();
        if s >= self.domain.hi() {
            return p - 1;
        }
        // knots[m-1..=p] are the distinct span boundaries.
        let m = self.order;
        let idx = self.knots[m..=p].partition_point(|&k| k <= s);
        m - 1 + idx
    }

    /// Values of the `m` basis functions that may be nonzero at `s`, starting at index `first`.
    pub fn eval_local(&self, s: f64) -> Result<(usize, Vec<f64>)> {
        self.check_point(s)?;
        let span = self.span(s);
        let d = self.order - 1;
        let mut n = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        n[0] = 1.0;
        for j in 1..=d {
            left[j] = s - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((span - d, n))
    }

    /// Values of all `p` basis functions at `s`.
    pub fn eval(&self, s: f64) -> Result<Vec<f64>> {
        let (first, local) = self.eval_local(s)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + local.len()].copy_from_slice(&local);
        Ok(out)
    }

    /// Derivatives of orders `0..=n_ders` of the locally nonzero basis functions.
    ///
    /// Returns `(first, ders)` with `ders[k][r]` the k-th derivative of `B_{first + r}`.
    pub fn eval_derivatives(&self, s: f64, n_ders: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        self.check_point(s)?;
        let span = self.span(s);
        let deg = self.order - 1;
        let p = deg as isize;
        let mut ndu = vec![vec![0.0; deg + 1]; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        ndu[0][0] = 1.0;
        for j in 1..=deg {
            left[j] = s - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; deg + 1]; n_ders + 1];
        for j in 0..=deg {
            ders[0][j] = ndu[j][deg];
        }
        let mut a = vec![vec![0.0; deg + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=(n_ders.min(deg) as isize) {
                let mut d = 0.0;
                let rk = r - k;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if r - 1 <= pk { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let ju = j as usize;
                    a[s2][ju] = (a[s1][ju] - a[s1][ju - 1])
                        / ndu[(pk + 1) as usize][(rk + j) as usize];
                    d += a[s2][ju] * ndu[(rk + j) as usize][pk as usize];
                }
                if r <= pk {
                    a[s2][k as usize] = -a[s1][(k - 1) as usize] / ndu[(pk + 1) as usize][r as usize];
                    d += a[s2][k as usize] * ndu[r as usize][pk as usize];
                }
                ders[k as usize][r as usize] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n_ders.min(deg) {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k as isize) as f64;
        }
        Ok((span - deg, ders))
    }

    /// `f(s) = sum_j beta_j B_j(s)` on each grid point.
    pub fn eval_intensity(&self, beta: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.len() {
            return Err(UnfoldError::DimensionMismatch {
                expected: self.len(),
                actual: beta.len(),
                context: "spline coefficients",
            });
        }
        grid.iter()
            .map(|&s| {
                let (first, local) = self.eval_local(s)?;
                Ok(local
                    .iter()
                    .zip(&beta[first..])
                    .map(|(b, c)| b * c)
                    .sum())
            })
            .collect()
    }

    /// Collocation matrix with rows `B(grid_i)`.
    pub fn design_matrix(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(grid.len(), self.len());
        for (i, &s) in grid.iter().enumerate() {
            let (first, local) = self.eval_local(s)?;
            for (r, v) in local.into_iter().enumerate() {
                out[(i, first + r)] = v;
            }
        }
        Ok(out)
    }

    /// `int_E B_j(s) ds` for every j.
    pub fn integrals(&self) -> Vec<f64> {
        let m = self.order as f64;
        (0..self.len())
            .map(|j| (self.knots[j + self.order] - self.knots[j]) / m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PenaltyKind {
    Curvature,
    Aristotelian { gamma_left: f64, gamma_right: f64 },
}

/// A symmetric `p x p` roughness penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub entries: DMatrix<f64>,
    pub kind: PenaltyKind,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `beta^T Omega beta`.
    pub fn quadratic_form(&self, beta: &[f64]) -> f64 {
        let p = self.dim();
        let mut acc = 0.0;
        for j in 0..p {
            let col = self.entries.column(j);
            let inner: f64 = col.iter().zip(beta).map(|(a, b)| a * b).sum();
            acc += beta[j] * inner;
        }
        acc
    }

    pub fn is_positive_definite(&self) -> bool {
        self.entries.clone().cholesky().is_some()
    }

    pub fn numerical_rank(&self) -> usize {
        numerical_rank(&self.entries, RANK_TOLERANCE)
    }
}

pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&v| v > rel_tol * max).count()
}

/// `Omega_ij = int_E B_i''(s) B_j''(s) ds`, exact by Gauss–Legendre per knot span.
pub fn curvature_matrix(basis: &SplineBasis) -> Result<PenaltyMatrix> {
    let m = basis.order();
    if m < 3 {
        return Err(UnfoldError::OrderTooLow(m));
    }
    let p = basis.len();
    let nodes = (2 * (m - 2) + 1).div_ceil(2);
    let rule = GaussLegendre::new(nodes);
    let mut omega = DMatrix::zeros(p, p);
    for w in basis.breakpoints().windows(2) {
        for (x, wt) in rule.mapped(w[0], w[1]) {
            let (first, ders) = basis.eval_derivatives(x, 2)?;
            let d2 = &ders[2];
            for a in 0..m {
                for b in 0..m {
                    omega[(first + a, first + b)] += wt * d2[a] * d2[b];
                }
            }
        }
    }
    // symmetrize away rounding
    let omega = (&omega + omega.transpose()) * 0.5;
    Ok(PenaltyMatrix {
        entries: omega,
        kind: PenaltyKind::Curvature,
    })
}

/// Curvature penalty with boundary terms `gamma_left` on `(1,1)` and `gamma_right` on `(p,p)`.
pub fn aristotelian_matrix(
    omega: &PenaltyMatrix,
    gamma_left: f64,
    gamma_right: f64,
) -> Result<PenaltyMatrix> {
    if omega.kind != PenaltyKind::Curvature {
        return Err(UnfoldError::InvalidParameter(
            "boundary augmentation expects a curvature matrix".into(),
        ));
    }
    for g in [gamma_left, gamma_right] {
        if !(g.is_finite() && g >= 0.0) {
            return Err(UnfoldError::InvalidParameter(format!(
                "boundary hyperparameter must be nonnegative, got {g}"
            )));
        }
    }
    let p = omega.dim();
    let mut entries = omega.entries.clone();
    entries[(0, 0)] += gamma_left;
    entries[(p - 1, p - 1)] += gamma_right;
    Ok(PenaltyMatrix {
        entries,
        kind: PenaltyKind::Aristotelian {
            gamma_left,
            gamma_right,
        },
    })
}
