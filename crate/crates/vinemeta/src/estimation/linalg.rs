//! Small dense linear algebra for the optimizer and the observed
//! information: finite-difference Hessians, Cholesky factorization, and the
//! diagonal of an SPD inverse. Matrices are row-major `Vec<f64>` of length
//! `n * n`; the dimensions here (tens of parameters) never justify a
//! dedicated matrix crate in the hot path.

/// Central finite-difference Hessian of `f` at `x` with per-coordinate step
/// `rel_step * max(1, |x_i|)`. Symmetric by construction (each off-diagonal
/// estimate is written to both triangles), so it equals its own
/// symmetrization (H + H')/2.
pub(crate) fn fd_hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|&xi| rel_step * xi.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut h = vec![0.0; n * n];
    let mut xt = x.to_vec();
    for i in 0..n {
        xt[i] = x[i] + steps[i];
        let fp = f(&xt);
        xt[i] = x[i] - steps[i];
        let fm = f(&xt);
        xt[i] = x[i];
        h[i * n + i] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            xt[i] = x[i] + steps[i];
            xt[j] = x[j] + steps[j];
            let fpp = f(&xt);
            xt[j] = x[j] - steps[j];
            let fpm = f(&xt);
            xt[i] = x[i] - steps[i];
            let fmm = f(&xt);
            xt[j] = x[j] + steps[j];
            let fmp = f(&xt);
            xt[i] = x[i];
            xt[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j]);
            h[i * n + j] = v;
            h[j * n + i] = v;
        }
    }
    h
}

/// In-place lower Cholesky factor of a symmetric matrix. Returns `false`
/// (leaving `a` partially overwritten) if the matrix is not positive
/// definite. On success the strict upper triangle is zeroed.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if !s.is_finite() || s <= 0.0 {
                    return false;
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    true
}

/// Diagonal of `(L L')^{-1}` given the lower Cholesky factor `L`.
///
/// Column `i` of `L^{-1}` solves `L c = e_i`; the `i`-th diagonal entry of
/// the inverse is then `|c|^2`.
pub(crate) fn spd_inverse_diag(l: &[f64], n: usize) -> Vec<f64> {
    let mut diag = vec![0.0; n];
    let mut c = vec![0.0; n];
    for i in 0..n {
        for k in i..n {
            let mut s = if k == i { 1.0 } else { 0.0 };
            for (m, cm) in c.iter().enumerate().take(k).skip(i) {
                s -= l[k * n + m] * cm;
            }
            c[k] = s / l[k * n + k];
        }
        diag[i] = c[i..].iter().map(|&v| v * v).sum();
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_factors_known_matrix() {
        // A = [[4, 2], [2, 3]] = L L' with L = [[2, 0], [1, sqrt(2)]].
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        assert!(cholesky_in_place(&mut a, 2));
        assert!((a[0] - 2.0).abs() < 1e-15);
        assert_eq!(a[1], 0.0);
        assert!((a[2] - 1.0).abs() < 1e-15);
        assert!((a[3] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite_matrices() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0]; // eigenvalues 3 and -1
        assert!(!cholesky_in_place(&mut a, 2));
        let mut b = vec![0.0, 0.0, 0.0, 1.0]; // singular
        assert!(!cholesky_in_place(&mut b, 2));
    }

    #[test]
    fn inverse_diagonal_matches_direct_inverse() {
        // A = [[2, 0.5], [0.5, 1]]; A^{-1} = [[1, -0.5], [-0.5, 2]] / 1.75.
        let mut a = vec![2.0, 0.5, 0.5, 1.0];
        assert!(cholesky_in_place(&mut a, 2));
        let d = spd_inverse_diag(&a, 2);
        assert!((d[0] - 1.0 / 1.75).abs() < 1e-14);
        assert!((d[1] - 2.0 / 1.75).abs() < 1e-14);
    }

    #[test]
    fn quadratic_hessian_gives_inverse_curvature_variances() {
        // f(x) = 0.5 * sum c_i x_i^2: Hessian diag(c), so the implied
        // standard errors are exactly 1/sqrt(c_i).
        let c = [2.0, 0.5, 9.0];
        let mut f = |x: &[f64]| 0.5 * x.iter().zip(c).map(|(&xi, ci)| ci * xi * xi).sum::<f64>();
        let x = [0.3, -1.1, 0.7];
        let mut h = fd_hessian(&mut f, &x, 1e-4);
        assert!(cholesky_in_place(&mut h, 3));
        let d = spd_inverse_diag(&h, 3);
        for (i, ci) in c.iter().enumerate() {
            let se = d[i].sqrt();
            let expect = 1.0 / ci.sqrt();
            assert!(
                (se - expect).abs() < 1e-4,
                "se[{i}] = {se}, expected {expect}"
            );
        }
    }

    #[test]
    fn fd_hessian_recovers_cross_terms() {
        // f = 0.5 (3x^2 + 2xy + 2y^2): Hessian [[3, 1], [1, 2]].
        let mut f = |x: &[f64]| 0.5 * (3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 2.0 * x[1] * x[1]);
        let h = fd_hessian(&mut f, &[0.2, -0.4], 1e-4);
        let expect = [3.0, 1.0, 1.0, 2.0];
        for (got, want) in h.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}
