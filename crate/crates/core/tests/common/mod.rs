#![allow(dead_code)]

/// Adaptive Simpson quadrature, independent of the library's Gauss–Legendre rules.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Sum of adaptive Simpson integrals over consecutive pieces.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> f64 {
    breaks.windows(2).map(|w| adaptive_simpson(f, w[0], w[1], tol)).sum()
}

/// Textbook Cox–de Boor recursion for `B_{j,m}` on the full knot vector `t`,
/// right-continuous except at the final knot.
pub fn cox_de_boor(t: &[f64], j: usize, m: usize, s: f64) -> f64 {
    let last = *t.last().unwrap();
    if m == 1 {
        let inside = t[j] <= s && s < t[j + 1];
        let at_end = s == last && t[j] < t[j + 1] && t[j + 1] == last;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[j + m - 1] - t[j];
    if d1 > 0.0 {
        v += (s - t[j]) / d1 * cox_de_boor(t, j, m - 1, s);
    }
    let d2 = t[j + m] - t[j + 1];
    if d2 > 0.0 {
        v += (t[j + m] - s) / d2 * cox_de_boor(t, j + 1, m - 1, s);
    }
    v
}

/// Derivative of order `k` of `B_{j,m}` by the standard differentiation recursion.
pub fn cox_de_boor_derivative(t: &[f64], j: usize, m: usize, k: usize, s: f64) -> f64 {
    if k == 0 {
        return cox_de_boor(t, j, m, s);
    }
    let mut v = 0.0;
    let d1 = t[j + m - 1] - t[j];
    if d1 > 0.0 {
        v += cox_de_boor_derivative(t, j, m - 1, k - 1, s) / d1;
    }
    let d2 = t[j + m] - t[j + 1];
    if d2 > 0.0 {
        v -= cox_de_boor_derivative(t, j + 1, m - 1, k - 1, s) / d2;
    }
    (m - 1) as f64 * v
}

/// Poisson log-pmf including the factorial constant, by direct summation.
pub fn poisson_ln_pmf(k: u64, mu: f64) -> f64 {
    let ln_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    if mu == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mu.ln() - mu - ln_fact
}
