//! Gauss-Legendre quadrature on [0, 1].
//!
//! Nodes/weights are computed by Newton iteration on the Legendre polynomial
//! (recurrence evaluation), then affinely mapped from [-1, 1] to [0, 1] so the
//! weights sum to 1 and the rule integrates exactly up to degree 2n-1.

use crate::error::{Error, Result};

/// A quadrature rule on [0, 1]: `nodes[i]` with `weights[i]`, both ascending
/// in the node value; weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss-Legendre rule with `n` points on [0, 1]. Supported n: 1..=60.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 || n > 60 {
            return Err(Error::invalid_argument(format!(
                "Gauss-Legendre size must be in 1..=60, got {n}"
            )));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi-style initial guess for the i-th root (descending).
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_and_deriv(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            // one polishing step; the derivative here also feeds the weight
            let (p, dp) = legendre_and_deriv(n, x);
            x -= p / dp;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // x is the (i+1)-th largest root; store ascending on [0,1]
            nodes[n - 1 - i] = 0.5 * (x + 1.0);
            nodes[i] = 0.5 * (1.0 - x);
            weights[n - 1 - i] = 0.5 * w;
            weights[i] = 0.5 * w;
        }
        if n % 2 == 1 {
            // middle node is exactly 1/2
            nodes[n / 2] = 0.5;
        }
        Ok(QuadratureRule { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate f over [0, 1] with this rule.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0_f64;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
