//! Bijections between natural parameters and the unconstrained optimizer
//! scale.
//!
//! Every model parameter lives in an open interval: proportions in (0,1),
//! normal dispersions in (0,inf), beta dispersions in (0,1), and taus in the
//! open range of the chosen copula family. Optimizing on the transformed
//! scale keeps every optimizer iterate admissible without constraint
//! handling, and the delta method maps transformed-scale standard errors
//! back to the natural scale through the per-parameter jacobian.

use crate::model::{ModelSpec, ParameterSet};
use crate::stats::{LinkFunction, MarginFamily};

/// A per-parameter bijection from its natural domain onto the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// (0, 1) -> R by the logit.
    LogitUnit,
    /// (0, inf) -> R by the logarithm.
    LogPositive,
    /// (lo, hi) -> R by a range-scaled logit.
    ScaledLogit { lo: f64, hi: f64 },
}

impl Transform {
    /// Natural value to unconstrained coordinate.
    pub fn forward(self, natural: f64) -> f64 {
        match self {
            Transform::LogitUnit => (natural / (1.0 - natural)).ln(),
            Transform::LogPositive => natural.ln(),
            Transform::ScaledLogit { lo, hi } => ((natural - lo) / (hi - natural)).ln(),
        }
    }

    /// Unconstrained coordinate back to the natural value.
    ///
    /// The result is clamped a relative 1e-12 inside the open interval so
    /// that even a coordinate far beyond the saturation point of `f64`
    /// arithmetic still maps to an admissible parameter; a likelihood flat
    /// toward a Frechet bound then drifts harmlessly until the boundary
    /// rule freezes the pair, instead of hitting non-finite objective
    /// values.
    pub fn inverse(self, x: f64) -> f64 {
        const EPS: f64 = 1e-12;
        match self {
            Transform::LogitUnit => LinkFunction::Logit.inverse(x).clamp(EPS, 1.0 - EPS),
            Transform::LogPositive => x.exp().clamp(1e-300, 1e300),
            Transform::ScaledLogit { lo, hi } => {
                let s = LinkFunction::Logit.inverse(x).clamp(EPS, 1.0 - EPS);
                lo + (hi - lo) * s
            }
        }
    }

    /// d(natural)/d(x) at the transformed coordinate `x`; the delta-method
    /// jacobian for one parameter.
    pub fn dnatural_dx(self, x: f64) -> f64 {
        match self {
            Transform::LogitUnit => {
                let s = LinkFunction::Logit.inverse(x);
                s * (1.0 - s)
            }
            Transform::LogPositive => x.exp(),
            Transform::ScaledLogit { lo, hi } => {
                let s = LinkFunction::Logit.inverse(x);
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

/// Address of one scalar inside a [`ParameterSet`] (indices 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Prevalence,
    Sens(usize),
    Spec(usize),
    DeltaPrev,
    DeltaSens(usize),
    DeltaSpec(usize),
    TauSens(usize),
    TauSpec(usize),
}

impl Slot {
    pub fn get(self, p: &ParameterSet) -> f64 {
        match self {
            Slot::Prevalence => p.prevalence,
            Slot::Sens(i) => p.sens[i],
            Slot::Spec(i) => p.spec[i],
            Slot::DeltaPrev => p.delta_prev,
            Slot::DeltaSens(i) => p.delta_sens[i],
            Slot::DeltaSpec(i) => p.delta_spec[i],
            Slot::TauSens(i) => p.tau_sens[i],
            Slot::TauSpec(i) => p.tau_spec[i],
        }
    }

    pub fn set(self, p: &mut ParameterSet, value: f64) {
        match self {
            Slot::Prevalence => p.prevalence = value,
            Slot::Sens(i) => p.sens[i] = value,
            Slot::Spec(i) => p.spec[i] = value,
            Slot::DeltaPrev => p.delta_prev = value,
            Slot::DeltaSens(i) => p.delta_sens[i] = value,
            Slot::DeltaSpec(i) => p.delta_spec[i] = value,
            Slot::TauSens(i) => p.tau_sens[i] = value,
            Slot::TauSpec(i) => p.tau_spec[i] = value,
        }
    }

    /// Human-readable label, 1-based indices.
    /// Every slot of a `k`-test model in canonical order.
    pub fn canonical(k: usize) -> Vec<Slot> {
        let mut slots = Vec::with_capacity(ParameterSet::n_params(k));
        slots.push(Slot::Prevalence);
        slots.extend((0..k).map(Slot::Sens));
        slots.extend((0..k).map(Slot::Spec));
        slots.push(Slot::DeltaPrev);
        slots.extend((0..k).map(Slot::DeltaSens));
        slots.extend((0..k).map(Slot::DeltaSpec));
        slots.extend((0..k).map(Slot::TauSens));
        slots.extend((0..k).map(Slot::TauSpec));
        slots
    }

    pub fn label(self) -> String {
        match self {
            Slot::Prevalence => "prevalence".into(),
            Slot::Sens(i) => format!("sens[{}]", i + 1),
            Slot::Spec(i) => format!("spec[{}]", i + 1),
            Slot::DeltaPrev => "delta_prev".into(),
            Slot::DeltaSens(i) => format!("delta_sens[{}]", i + 1),
            Slot::DeltaSpec(i) => format!("delta_spec[{}]", i + 1),
            Slot::TauSens(i) => format!("tau_sens[{}]", i + 1),
            Slot::TauSpec(i) => format!("tau_spec[{}]", i + 1),
        }
    }
}

/// The free parameters of a model in canonical order, each with its
/// bijection onto the real line.
///
/// Boundary-frozen dependence parameters are excluded: they are fixed at
/// the Frechet bound and are not optimizer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMap {
    entries: Vec<(Slot, Transform)>,
}

impl TransformMap {
    /// Map for the free parameters of `template` under `spec`.
    pub fn for_model(spec: &ModelSpec, template: &ParameterSet) -> Self {
        let k = spec.k;
        let dispersion = match spec.margin.family {
            MarginFamily::Normal => Transform::LogPositive,
            MarginFamily::Beta => Transform::LogitUnit,
        };
        let (lo, hi) = spec.family.tau_range();
        let tau = Transform::ScaledLogit { lo, hi };

        let mut entries = Vec::with_capacity(ParameterSet::n_params(k));
        entries.push((Slot::Prevalence, Transform::LogitUnit));
        entries.extend((0..k).map(|i| (Slot::Sens(i), Transform::LogitUnit)));
        entries.extend((0..k).map(|i| (Slot::Spec(i), Transform::LogitUnit)));
        entries.push((Slot::DeltaPrev, dispersion));
        entries.extend((0..k).map(|i| (Slot::DeltaSens(i), dispersion)));
        entries.extend((0..k).map(|i| (Slot::DeltaSpec(i), dispersion)));
        for i in 0..k {
            if template.boundary[i].is_free() {
                entries.push((Slot::TauSens(i), tau));
            }
        }
        for i in 0..k {
            if template.boundary[k + i].is_free() {
                entries.push((Slot::TauSpec(i), tau));
            }
        }
        TransformMap { entries }
    }

    /// Number of free parameters.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Slot, Transform)] {
        &self.entries
    }

    /// Natural parameters to the unconstrained vector.
    pub fn pack(&self, p: &ParameterSet) -> Vec<f64> {
        self.entries
            .iter()
            .map(|&(slot, t)| t.forward(slot.get(p)))
            .collect()
    }

    /// Unconstrained vector back to natural parameters; slots not in the
    /// map (boundary-frozen taus) keep their values from `template`.
    pub fn unpack(&self, x: &[f64], template: &ParameterSet) -> ParameterSet {
        debug_assert_eq!(x.len(), self.entries.len());
        let mut p = template.clone();
        for (&(slot, t), &xi) in self.entries.iter().zip(x) {
            slot.set(&mut p, t.inverse(xi));
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaFamily;
    use crate::model::BoundaryFlag;
    

    #[test]
    fn transforms_round_trip() {
        let cases = [
            (Transform::LogitUnit, vec![1e-6, 0.01, 0.4, 0.5, 0.97, 1.0 - 1e-6]),
            (Transform::LogPositive, vec![1e-8, 0.05, 0.3, 1.0, 17.0, 4e5]),
            (
                Transform::ScaledLogit { lo: -0.95, hi: 0.95 },
                vec![-0.949, -0.3, 0.0, 0.2, 0.76, 0.949],
            ),
            (
                Transform::ScaledLogit { lo: 0.001, hi: 0.95 },
                vec![0.0011, 0.3, 0.9, 0.9499],
            ),
        ];
        for (t, naturals) in cases {
            for nat in naturals {
                let x = t.forward(nat);
                assert!(x.is_finite(), "{t:?} forward({nat}) not finite");
                let back = t.inverse(x);
                assert!(
                    (back - nat).abs() <= 1e-10 * nat.abs().max(1.0),
                    "{t:?} roundtrip {nat} -> {x} -> {back}"
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cases = [
            (Transform::LogitUnit, 0.73),
            (Transform::LogPositive, -1.2),
            (Transform::ScaledLogit { lo: -0.95, hi: 0.95 }, 0.41),
        ];
        for (t, x) in cases {
            let h = 1e-6;
            let fd = (t.inverse(x + h) - t.inverse(x - h)) / (2.0 * h);
            let an = t.dnatural_dx(x);
            assert!(
                (fd - an).abs() <= 1e-7 * an.abs().max(1.0),
                "{t:?}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn map_packs_free_parameters_in_canonical_order() {
        let spec = ModelSpec::new(
            2,
            CopulaFamily::Bvn,
            MarginFamily::Normal,
            LinkFunction::Logit,
            9,
        )
        .unwrap();
        let mut params = ParameterSet::new(
            0.4,
            vec![0.8, 0.6],
            vec![0.9, 0.7],
            0.3,
            vec![0.3, 0.25],
            vec![0.2, 0.35],
            vec![0.3, 0.2],
            vec![0.1, 0.25],
        );
        let map = TransformMap::for_model(&spec, &params);
        assert_eq!(map.len(), ParameterSet::n_params(2));
        assert_eq!(map.entries()[0].0, Slot::Prevalence);
        assert_eq!(map.entries()[3].0, Slot::Spec(0));
        assert_eq!(map.entries()[10].0, Slot::TauSens(0));
        assert_eq!(map.entries()[13].0, Slot::TauSpec(1));

        let x = map.pack(&params);
        let back = map.unpack(&x, &params);
        for (slot, _) in map.entries() {
            let (a, b) = (slot.get(&params), slot.get(&back));
            assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", slot.label());
        }

        // Freezing a pair removes exactly its tau from the coordinates and
        // unpack leaves the frozen value untouched.
        params.boundary[1] = BoundaryFlag::Upper;
        params.tau_sens[1] = 0.95;
        let frozen = TransformMap::for_model(&spec, &params);
        assert_eq!(frozen.len(), ParameterSet::n_params(2) - 1);
        assert!(!frozen.entries().iter().any(|(s, _)| *s == Slot::TauSens(1)));
        let x = frozen.pack(&params);
        let back = frozen.unpack(&x, &params);
        assert_eq!(back.tau_sens[1], 0.95);
        assert_eq!(back.boundary[1], BoundaryFlag::Upper);
    }

    #[test]
    fn beta_margin_dispersions_use_the_unit_transform() {
        let spec = ModelSpec::new(
            1,
            CopulaFamily::Clayton180,
            MarginFamily::Beta,
            LinkFunction::Identity,
            9,
        )
        .unwrap();
        let params = ParameterSet::new(
            0.4,
            vec![0.8],
            vec![0.9],
            0.05,
            vec![0.05],
            vec![0.05],
            vec![0.3],
            vec![0.3],
        );
        let map = TransformMap::for_model(&spec, &params);
        let (slot, t) = map.entries()[3];
        assert_eq!(slot, Slot::DeltaPrev);
        assert_eq!(t, Transform::LogitUnit);
        let (_, tau_t) = map.entries()[6];
        assert_eq!(tau_t, Transform::ScaledLogit { lo: 0.001, hi: 0.95 });
    }
}
