mod common;

use common::{adaptive_simpson, cox_de_boor, cox_de_boor_derivative};
use proptest::prelude::*;
use unfold_core::splines::{aristotelian_matrix, curvature_matrix, SplineBasis};
use unfold_core::Interval;

fn gmm_basis() -> SplineBasis {
    SplineBasis::uniform(Interval::new(-7.0, 7.0).unwrap(), 26, 4).unwrap()
}

fn z_basis() -> SplineBasis {
    SplineBasis::uniform(Interval::new(81.5, 98.5).unwrap(), 34, 4).unwrap()
}

#[test]
fn dimensions_of_shipped_bases() {
    assert_eq!(gmm_basis().len(), 30);
    assert_eq!(z_basis().len(), 38);
    let histogram = SplineBasis::uniform(Interval::new(0.0, 1.0).unwrap(), 0, 1).unwrap();
    assert_eq!(histogram.len(), 1);
    assert_eq!(histogram.eval(0.3).unwrap(), vec![1.0]);
}

#[test]
fn interior_knots_match_recursive_oracle() {
    let b = gmm_basis();
    let t = b.knots().to_vec();
    for &s in b.interior_knots() {
        let got = b.eval(s).unwrap();
        for (j, g) in got.iter().enumerate() {
            let want = cox_de_boor(&t, j, 4, s);
            assert!((g - want).abs() < 1e-13, "B_{j}({s}) = {g}, oracle {want}");
        }
    }
}

#[test]
fn boundary_values() {
    let b = gmm_basis();
    let left = b.eval(-7.0).unwrap();
    assert_eq!(left[0], 1.0);
    assert!(left[1..].iter().all(|&v| v == 0.0));
    let right = b.eval(7.0).unwrap();
    assert!((right[29] - 1.0).abs() < 1e-15);
    assert!(right[..29].iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn toy_curvature_matches_quadrature_of_second_derivatives() {
    let b = SplineBasis::uniform(Interval::new(0.0, 1.0).unwrap(), 0, 3).unwrap();
    let omega = curvature_matrix(&b).unwrap();
    let t = b.knots().to_vec();
    for i in 0..3 {
        for j in 0..3 {
            let f = |s: f64| cox_de_boor_derivative(&t, i, 3, 2, s) * cox_de_boor_derivative(&t, j, 3, 2, s);
            let want = adaptive_simpson(&f, 0.0, 1.0 - 1e-15, 1e-12);
            assert!((omega.entries[(i, j)] - want).abs() < 1e-9, "({i},{j})");
        }
    }
    // Bernstein quadratics have second derivatives (2, -4, 2).
    assert!((omega.entries[(1, 1)] - 16.0).abs() < 1e-12);
}

#[test]
fn cubic_curvature_matches_quadrature_oracle() {
    let b = gmm_basis();
    let omega = curvature_matrix(&b).unwrap();
    let t = b.knots().to_vec();
    let breaks = b.breakpoints();
    for (i, j) in [(0, 0), (0, 1), (3, 5), (14, 14), (28, 29), (29, 29)] {
        let f = |s: f64| cox_de_boor_derivative(&t, i, 4, 2, s) * cox_de_boor_derivative(&t, j, 4, 2, s);
        // integrate within spans, nudged off the knots where B'' jumps
        let want: f64 = breaks
            .windows(2)
            .map(|w| adaptive_simpson(&f, w[0] + 1e-12, w[1] - 1e-12, 1e-12))
            .sum();
        let scale = omega.entries[(i, i)].abs().max(1.0);
        assert!((omega.entries[(i, j)] - want).abs() < 1e-8 * scale, "({i},{j}): {} vs {want}", omega.entries[(i, j)]);
    }
}

#[test]
fn penalty_structure() {
    let omega = curvature_matrix(&gmm_basis()).unwrap();
    assert_eq!(omega.numerical_rank(), 28);
    assert!(aristotelian_matrix(&omega, 5.0, 5.0).unwrap().is_positive_definite());
    let z = curvature_matrix(&z_basis()).unwrap();
    assert_eq!(z.numerical_rank(), 36);
    assert!(aristotelian_matrix(&z, 50.0, 50.0).unwrap().is_positive_definite());
    let same = aristotelian_matrix(&omega, 0.0, 0.0).unwrap();
    assert_eq!(same.entries, omega.entries);
}

proptest! {
    #[test]
    fn partition_of_unity_and_nonnegativity(s in -7.0f64..=7.0) {
        let v = gmm_basis().eval(s).unwrap();
        prop_assert!(v.iter().all(|&x| x >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn values_match_recursive_oracle(s in -7.0f64..7.0) {
        let b = gmm_basis();
        let t = b.knots().to_vec();
        for (j, g) in b.eval(s).unwrap().iter().enumerate() {
            prop_assert!((g - cox_de_boor(&t, j, 4, s)).abs() < 1e-13);
        }
    }

    #[test]
    fn intensity_is_direct_sum(beta in prop::collection::vec(0.0f64..100.0, 30), s in -7.0f64..=7.0) {
        let b = gmm_basis();
        let f = b.eval_intensity(&beta, &[s]).unwrap()[0];
        let want: f64 = b.eval(s).unwrap().iter().zip(&beta).map(|(x, c)| x * c).sum();
        prop_assert!((f - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn affine_coefficients_have_zero_curvature(a in -10.0f64..10.0, slope in -3.0f64..3.0) {
        let b = gmm_basis();
        let omega = curvature_matrix(&b).unwrap();
        // Greville abscissae reproduce affine functions exactly
        let beta: Vec<f64> = b.greville().iter().map(|&g| a + slope * g).collect();
        let norm2: f64 = beta.iter().map(|x| x * x).sum();
        prop_assert!(omega.quadratic_form(&beta) < 1e-10 * norm2.max(1.0));
    }

    #[test]
    fn penalty_scales_quadratically(beta in prop::collection::vec(-5.0f64..5.0, 30), c in 0.1f64..10.0) {
        let omega = aristotelian_matrix(&curvature_matrix(&gmm_basis()).unwrap(), 5.0, 5.0).unwrap();
        let scaled: Vec<f64> = beta.iter().map(|x| c * x).collect();
        let q = omega.quadratic_form(&beta);
        prop_assert!(q >= 0.0);
        prop_assert!((omega.quadratic_form(&scaled) - c * c * q).abs() <= 1e-9 * (c * c * q).max(1e-12));
    }
}
