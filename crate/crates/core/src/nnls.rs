//! Lawson–Hanson active-set nonnegative least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, UnfoldError};

/// Solves `min ||A x - b||_2` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(UnfoldError::DimensionMismatch {
            expected: m,
            actual: b.len(),
            context: "nnls right-hand side",
        });
    }
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let atb = a.tr_mul(b);
    let tol = 1e-12 * atb.amax().max(f64::MIN_POSITIVE) * (m.max(n) as f64);
    let mut w = atb.clone();
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else {
            break;
        };
        passive[j] = true;
        for _ in 0..(3 * n + 10) {
            let z = solve_passive(a, b, &passive)?;
            if (0..n).all(|k| !passive[k] || z[k] > 0.0) {
                x = z;
                break;
            }
            let mut step = 1.0f64;
            for k in 0..n {
                if passive[k] && z[k] <= 0.0 {
                    step = step.min(x[k] / (x[k] - z[k]));
                }
            }
            x += (z - &x) * step;
            for k in 0..n {
                if passive[k] && x[k] <= 1e-15 * x.amax().max(1.0) {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
        w = a.tr_mul(&(b - a * &x));
    }
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(x)
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&k| passive[k]).collect();
    let sub = a.select_columns(&idx);
    let sol = sub
        .svd(true, true)
        .solve(b, 1e-14)
        .map_err(|e| UnfoldError::Singular(e.to_string()))?;
    let mut z = DVector::zeros(passive.len());
    for (r, &k) in idx.iter().enumerate() {
        z[k] = sol[r];
    }
    Ok(z)
}

/// Largest KKT violation of `x` for the NNLS problem, relative to `||A^T b||_inf`.
pub fn kkt_residual(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let grad = a.tr_mul(&(b - a * x));
    let scale = a.tr_mul(b).amax().max(1.0);
    x.iter()
        .zip(grad.iter())
        .map(|(&xi, &g)| {
            let v = if xi < 0.0 {
                -xi
            } else if xi > 0.0 {
                g.abs()
            } else {
                g.max(0.0)
            };
            v / scale
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_solution_when_positive() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        assert!(kkt_residual(&a, &b, &x) < 1e-12);
    }

    #[test]
    fn clamps_negative_direction() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 4.0]);
        let x = nnls(&a, &b).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_data_gives_zero() {
        let a = DMatrix::from_fn(5, 3, |i, j| (i + j) as f64 + 1.0);
        let x = nnls(&a, &DVector::zeros(5)).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
