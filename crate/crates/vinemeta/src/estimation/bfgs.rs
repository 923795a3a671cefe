//! Dense BFGS minimizer with finite-difference gradients and a
//! backtracking Armijo line search.
//!
//! The objective dimension here is a few dozen at most, so the inverse
//! Hessian approximation is kept as a dense row-major matrix and updated
//! with the classic rank-two formula. Non-finite objective values are
//! treated as out-of-bounds: the line search backs off, and if no step is
//! acceptable the approximation is reset to the identity once before
//! giving up.
//!
//! Gradients use forward differences (n extra evaluations, reusing the
//! line-search value at the current point) while the gradient is large,
//! and switch permanently to central differences (2n evaluations) once
//! its max-norm drops below `max(1e-2, 100 * tolerance)`. Forward-
//! difference truncation error is O(h * f''), negligible relative to a
//! large gradient but not against the convergence test, so convergence is
//! only ever declared on a central-difference gradient.

/// Relative step for finite-difference gradients.
const GRADIENT_STEP: f64 = 1e-5;
/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;
/// Maximum step halvings per line search.
const MAX_BACKTRACKS: usize = 50;

#[derive(Debug, Clone, Copy)]
pub(crate) struct MinimizeOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub gradient_tolerance: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_inf_norm: f64,
    /// Diagnostic; read in tests only.
    #[allow(dead_code)]
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient with step `1e-5 * max(1, |x_i|)` per
/// coordinate.
pub(crate) fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let h = GRADIENT_STEP * x[i].abs().max(1.0);
        xt[i] = x[i] + h;
        let fp = f(&xt);
        xt[i] = x[i] - h;
        let fm = f(&xt);
        xt[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Forward-difference gradient; reuses the already-known value `fx`.
fn gradient_forward<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let h = GRADIENT_STEP * x[i].abs().max(1.0);
        xt[i] = x[i] + h;
        let fp = f(&xt);
        xt[i] = x[i];
        g[i] = (fp - fx) / h;
    }
    g
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// Minimize `f` starting from `x0`. `f` must be finite at `x0`; the caller
/// checks this and reports an initialization failure otherwise.
pub(crate) fn minimize<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: Vec<f64>,
    opts: &MinimizeOptions,
) -> Minimum {
    let n = x0.len();
    let switch_norm = (100.0 * opts.gradient_tolerance).max(1e-2);
    let mut central = false;
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = gradient_forward(f, &x, fx);
    if inf_norm(&g) < switch_norm {
        central = true;
        g = gradient(f, &x);
    }
    let mut hinv = identity(n);
    let mut iterations = 0;
    let mut consecutive_failures = 0;
    let mut converged = central && inf_norm(&g) < opts.gradient_tolerance;

    let mut d = vec![0.0; n];
    let mut xt = vec![0.0; n];
    while !converged && iterations < opts.max_iterations {
        iterations += 1;

        // Search direction d = -H g; fall back to steepest descent if the
        // approximation has gone bad (non-descent or non-finite).
        for i in 0..n {
            d[i] = -dot(&hinv[i * n..(i + 1) * n], &g);
        }
        let mut gd = dot(&g, &d);
        if gd.is_nan() || gd >= 0.0 {
            hinv = identity(n);
            for i in 0..n {
                d[i] = -g[i];
            }
            gd = -dot(&g, &g);
        }

        // Backtracking Armijo line search.
        let mut step = 1.0;
        let mut accepted: Option<f64> = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                xt[i] = x[i] + step * d[i];
            }
            let ft = f(&xt);
            if ft.is_finite() && ft <= fx + ARMIJO_C1 * step * gd {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }

        let ft = match accepted {
            Some(ft) => ft,
            None => {
                if !central {
                    // A failed search on a forward-difference gradient is
                    // usually truncation noise near the floor; re-measure
                    // centrally before judging the step unworkable.
                    central = true;
                    g = gradient(f, &x);
                    hinv = identity(n);
                    converged = inf_norm(&g) < opts.gradient_tolerance;
                    continue;
                }
                consecutive_failures += 1;
                if consecutive_failures == 1 {
                    // One fresh chance along the raw gradient.
                    hinv = identity(n);
                    continue;
                }
                break;
            }
        };
        consecutive_failures = 0;

        let mut g_new = if central {
            gradient(f, &xt)
        } else {
            gradient_forward(f, &xt, ft)
        };
        if !central && inf_norm(&g_new) < switch_norm {
            central = true;
            g_new = gradient(f, &xt);
        }
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let s_norm = dot(&s, &s).sqrt();
        let y_norm = dot(&y, &y).sqrt();
        // Skip the update when the curvature condition fails; keeping the
        // previous approximation is safer than corrupting it.
        if sy > 1e-10 * s_norm * y_norm && sy.is_finite() {
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                hy[i] = dot(&hinv[i * n..(i + 1) * n], &y);
            }
            let yhy = dot(&y, &hy);
            let coeff = rho * rho * yhy + rho;
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] +=
                        coeff * s[i] * s[j] - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }

        x.copy_from_slice(&xt);
        fx = ft;
        g = g_new;
        converged = central && inf_norm(&g) < opts.gradient_tolerance;
    }

    Minimum {
        gradient_inf_norm: inf_norm(&g),
        x,
        value: fx,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OPTS: MinimizeOptions = MinimizeOptions {
        max_iterations: 500,
        gradient_tolerance: 1e-5,
    };

    #[test]
    fn minimizes_a_shifted_quadratic() {
        let target = [1.5, -2.0, 0.25, 4.0];
        let scale = [1.0, 10.0, 0.3, 2.0];
        let mut f = |x: &[f64]| {
            x.iter()
                .zip(target)
                .zip(scale)
                .map(|((&xi, t), c)| 0.5 * c * (xi - t) * (xi - t))
                .sum::<f64>()
        };
        let m = minimize(&mut f, vec![0.0; 4], &OPTS);
        assert!(m.converged, "no convergence: {m:?}");
        assert!(m.gradient_inf_norm < 1e-5);
        for (got, want) in m.x.iter().zip(target) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let mut f = |x: &[f64]| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            a * a + 100.0 * b * b
        };
        let m = minimize(&mut f, vec![-1.2, 1.0], &OPTS);
        assert!(m.converged, "no convergence: {m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-3, "x = {:?}", m.x);
        assert!((m.x[1] - 1.0).abs() < 1e-3, "x = {:?}", m.x);
        assert!(m.value < 1e-8);
    }

    #[test]
    fn treats_non_finite_regions_as_walls() {
        // Minimum at 2, objective undefined left of 1; start on the good
        // side so the line search has to back away from the wall.
        let mut f = |x: &[f64]| {
            if x[0] <= 1.0 {
                f64::INFINITY
            } else {
                (x[0] - 2.0) * (x[0] - 2.0)
            }
        };
        let m = minimize(&mut f, vec![1.5], &OPTS);
        assert!(m.converged);
        assert!((m.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn already_optimal_start_returns_immediately() {
        let mut f = |x: &[f64]| x[0] * x[0];
        let m = minimize(&mut f, vec![0.0], &OPTS);
        assert!(m.converged);
        assert_eq!(m.iterations, 0);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut f = |x: &[f64]| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            a * a + 100.0 * b * b
        };
        let tight = MinimizeOptions {
            max_iterations: 3,
            gradient_tolerance: 1e-12,
        };
        let m = minimize(&mut f, vec![-1.2, 1.0], &tight);
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }
}
