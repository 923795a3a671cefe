//! 1-truncated C-vine over (U, U_11..U_1K, U_01..U_0K): the root prevalence
//! latent is linked to each of the 2K accuracy latents by a bivariate copula
//! at tree 1, and all higher trees are independence. Provides the dependent
//! quadrature grid, vine sampling, and the BVN special-case correlation
//! matrix.

use rand::Rng;

use crate::copula::{clamp_unit, CopulaFamily, CopulaPair, FamilyKind};
use crate::error::{Error, Result};
use crate::stats::QuadratureRule;

/// Vine structure: 2K pair copulas ordered (d=1, k=1..K) then (d=0, k=1..K),
/// i.e. sensitivity links first, specificity links second.
#[derive(Debug, Clone, PartialEq)]
pub struct VineSpec {
    k: usize,
    pairs: Vec<CopulaPair>,
}

impl VineSpec {
    /// Validates that the list has even length 2K >= 2 and that every
    /// parametric pair belongs to one copula family (degenerate pairs —
    /// independence and the Frechet bounds — may be mixed in freely).
    pub fn new(pairs: Vec<CopulaPair>) -> Result<Self> {
        if pairs.is_empty() || !pairs.len().is_multiple_of(2) {
            return Err(Error::invalid_argument(format!(
                "a vine needs 2K pair copulas, got {}",
                pairs.len()
            )));
        }
        let mut menu: Option<CopulaFamily> = None;
        for p in &pairs {
            if let Some(f) = p.family() {
                match menu {
                    None => menu = Some(f),
                    Some(g) if g != f => {
                        return Err(Error::invalid_argument(format!(
                            "mixed copula families in one vine: {g} and {f}"
                        )));
                    }
                    _ => {}
                }
            }
        }
        let k = pairs.len() / 2;
        Ok(VineSpec { k, pairs })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Dimension of one vine draw: root plus 2K accuracy latents.
    pub fn dim(&self) -> usize {
        2 * self.k + 1
    }

    pub fn pairs(&self) -> &[CopulaPair] {
        &self.pairs
    }

    /// Flat index of the (d, test) pair; d = 1 sensitivity, d = 0
    /// specificity; test is 1-based.
    pub fn pair_index(&self, d: usize, test: usize) -> usize {
        debug_assert!(d <= 1 && test >= 1 && test <= self.k);
        match d {
            1 => test - 1,
            _ => self.k + test - 1,
        }
    }

    pub fn pair(&self, d: usize, test: usize) -> &CopulaPair {
        &self.pairs[self.pair_index(d, test)]
    }

    /// One draw (u, u_11..u_1K, u_01..u_0K). Consumes exactly 2K+1 uniforms
    /// from the stream, root first, then one per pair in storage order.
    pub fn sample_one(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        let u = clamp_unit(rng.gen::<f64>());
        out.push(u);
        for pair in &self.pairs {
            let p: f64 = rng.gen();
            out.push(pair.hinv(u, p));
        }
        out
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Per-pair slice of the dependent quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub enum PairGrid {
    /// nodes[q * nq + q'] = hinv(v_q, u_{q'}); integrate over q' with the
    /// base rule's weights.
    Full(Vec<f64>),
    /// Degenerate conditional (Frechet bound): for root index q the latent
    /// sits at nodes[q] with probability one, so the q' dimension drops.
    Collapsed(Vec<f64>),
}

/// Dependent Gauss-Legendre grid: root nodes v_q = u_q and, per pair copula,
/// the conditioned nodes used by the likelihood quadrature.
#[derive(Debug, Clone)]
pub struct DependentGrid {
    nq: usize,
    root: Vec<f64>,
    weights: Vec<f64>,
    pairs: Vec<PairGrid>,
}

impl DependentGrid {
    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn root(&self) -> &[f64] {
        &self.root
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pair_grids(&self) -> &[PairGrid] {
        &self.pairs
    }

    pub fn pair_grid(&self, idx: usize) -> &PairGrid {
        &self.pairs[idx]
    }

    /// Materialized matrix view: node value of pair `idx` at (q, q').
    pub fn node(&self, idx: usize, q: usize, qp: usize) -> f64 {
        match &self.pairs[idx] {
            PairGrid::Full(m) => m[q * self.nq + qp],
            PairGrid::Collapsed(col) => col[q],
        }
    }
}

/// Build the dependent grid for `spec` over `rule` (rule nodes are the
/// independent uniforms; the root keeps them unchanged).
pub fn build_grid(spec: &VineSpec, rule: &QuadratureRule) -> DependentGrid {
    let nq = rule.len();
    let root: Vec<f64> = rule.nodes.to_vec();
    let weights: Vec<f64> = rule.weights.to_vec();
    let pairs = spec
        .pairs()
        .iter()
        .map(|pair| match pair.kind() {
            FamilyKind::Comonotonic => PairGrid::Collapsed(root.clone()),
            FamilyKind::Countermonotonic => {
                PairGrid::Collapsed(root.iter().map(|v| 1.0 - v).collect())
            }
            _ => {
                let mut m = Vec::with_capacity(nq * nq);
                for &vq in &root {
                    for &uqp in &root {
                        m.push(pair.hinv(vq, uqp));
                    }
                }
                PairGrid::Full(m)
            }
        })
        .collect();
    DependentGrid {
        nq,
        root,
        weights,
        pairs,
    }
}

/// Correlation matrix of the latent normal scores when every pair is BVN:
/// first row/column rho_dk = theta_dk, elsewhere theta * theta', unit
/// diagonal. This is the executable form of the GLMM nesting claim.
pub fn implied_bvn_correlation(spec: &VineSpec) -> Result<Vec<Vec<f64>>> {
    let thetas: Vec<f64> = spec
        .pairs()
        .iter()
        .map(|p| match p.kind() {
            FamilyKind::Bvn => Ok(p.theta()),
            other => Err(Error::UnsupportedFamily(format!(
                "implied correlation needs all-BVN pairs, found {other:?}"
            ))),
        })
        .collect::<Result<_>>()?;
    let dim = spec.dim();
    let mut m = vec![vec![0.0; dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = if i == j {
                1.0
            } else if i == 0 {
                thetas[j - 1]
            } else if j == 0 {
                thetas[i - 1]
            } else {
                thetas[i - 1] * thetas[j - 1]
            };
        }
    }
    Ok(m)
}
