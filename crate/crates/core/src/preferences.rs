//! Preference parameters, the CES aggregator and the CRRA certainty equivalent.
//!
//! The aggregator is
//! `H(c, z) = [(1-beta) c^(1-rho) + beta z^(1-rho)]^(1/(1-rho))` with the
//! geometric-mean form at `rho = 1`. The certainty equivalent is
//! `u^{-1}(E[u(X)])` with `u(x) = x^(1-gamma)` (or `ln x` at `gamma = 1`).
//!
//! Boundary conventions: for `rho >= 1` the aggregator is zero whenever
//! either argument is zero, and for `gamma >= 1` the certainty equivalent of
//! a variable that is zero with positive probability is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance from 1 below which `rho` or `gamma` selects the logarithmic branch.
pub const UNIT_SNAP: f64 = 1e-9;

/// Tolerance on the total mass of a discrete distribution.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    /// Discount factor in (0, 1).
    pub beta: f64,
    /// Inverse elasticity of intertemporal substitution.
    pub rho: f64,
    /// Relative risk aversion degree.
    pub gamma: f64,
    /// Loss aversion degree `k >= 1` of the gain-loss utility.
    #[serde(default = "default_loss_aversion")]
    pub loss_aversion: f64,
    /// Framing weight `b_i >= 0` per risky asset.
    #[serde(default)]
    pub framing_weights: Vec<f64>,
}

fn default_loss_aversion() -> f64 {
    1.0
}

impl Preferences {
    pub fn new(
        beta: f64,
        rho: f64,
        gamma: f64,
        loss_aversion: f64,
        framing_weights: Vec<f64>,
    ) -> Result<Self> {
        let prefs = Self {
            beta,
            rho,
            gamma,
            loss_aversion,
            framing_weights,
        };
        prefs.validate()?;
        Ok(prefs)
    }

    /// Preferences without narrow framing (`k = 1`, no framing weights).
    pub fn recursive(beta: f64, rho: f64, gamma: f64) -> Result<Self> {
        Self::new(beta, rho, gamma, 1.0, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::validation("preferences.beta", "must lie in (0, 1)"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::validation("preferences.rho", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::validation("preferences.gamma", "must be positive"));
        }
        if !(self.loss_aversion >= 1.0 && self.loss_aversion.is_finite()) {
            return Err(Error::validation(
                "preferences.loss_aversion",
                "must be at least 1",
            ));
        }
        for (i, b) in self.framing_weights.iter().enumerate() {
            if !(*b >= 0.0 && b.is_finite()) {
                return Err(Error::validation(
                    format!("preferences.framing_weights[{i}]"),
                    "must be nonnegative",
                ));
            }
        }
        Ok(())
    }

    /// `true` when the aggregator uses the logarithmic (unit EIS) branch.
    pub fn unit_eis(&self) -> bool {
        (self.rho - 1.0).abs() < UNIT_SNAP
    }

    /// `true` when the certainty equivalent uses the logarithmic branch.
    pub fn unit_risk_aversion(&self) -> bool {
        (self.gamma - 1.0).abs() < UNIT_SNAP
    }

    /// `(1 - gamma) / (1 - rho)`, defined only away from unit EIS.
    pub fn alpha(&self) -> Option<f64> {
        if self.unit_eis() {
            None
        } else {
            Some((1.0 - self.gamma) / (1.0 - self.rho))
        }
    }

    /// Framing weight of asset `i`; assets without an explicit weight get 0.
    pub fn framing_weight(&self, i: usize) -> f64 {
        self.framing_weights.get(i).copied().unwrap_or(0.0)
    }

    /// The aggregator `H(c, z)` for nonnegative arguments.
    pub fn aggregate(&self, c: f64, z: f64) -> Result<f64> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!(
                "aggregator consumption argument {c} must be finite and nonnegative"
            )));
        }
        if !(z >= 0.0 && z.is_finite()) {
            return Err(Error::Domain(format!(
                "aggregator continuation argument {z} must be finite and nonnegative"
            )));
        }
        Ok(self.h(c, z))
    }

    /// Aggregator without argument checks; callers guarantee `c, z >= 0`.
    pub(crate) fn h(&self, c: f64, z: f64) -> f64 {
        let beta = self.beta;
        if self.unit_eis() {
            if c == 0.0 || z == 0.0 {
                return 0.0;
            }
            return ((1.0 - beta) * c.ln() + beta * z.ln()).exp();
        }
        if self.rho > 1.0 && (c == 0.0 || z == 0.0) {
            return 0.0;
        }
        let a = 1.0 - self.rho;
        ((1.0 - beta) * c.powf(a) + beta * z.powf(a)).powf(1.0 / a)
    }

    /// `u(x)`; infinite at zero on the `gamma >= 1` branches.
    pub fn utility(&self, x: f64) -> f64 {
        if self.unit_risk_aversion() {
            x.ln()
        } else {
            x.powf(1.0 - self.gamma)
        }
    }

    /// `u^{-1}(y)`, with `u^{-1}(+-inf) = 0` on the `gamma >= 1` branches.
    pub fn utility_inverse(&self, y: f64) -> f64 {
        if self.unit_risk_aversion() {
            y.exp()
        } else if y.is_infinite() && y > 0.0 && self.gamma > 1.0 {
            0.0
        } else {
            y.powf(1.0 / (1.0 - self.gamma))
        }
    }

    /// Certainty equivalent of a discrete distribution given as
    /// `(value, probability)` atoms.
    pub fn certainty_equivalent(&self, atoms: &[(f64, f64)]) -> Result<f64> {
        if atoms.is_empty() {
            return Err(Error::validation("atoms", "distribution has no atoms"));
        }
        let mut total = 0.0;
        for (j, &(value, prob)) in atoms.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::validation(
                    format!("atoms[{j}].value"),
                    "must be finite and nonnegative",
                ));
            }
            if !(prob >= 0.0 && prob.is_finite()) {
                return Err(Error::validation(
                    format!("atoms[{j}].probability"),
                    "must be nonnegative",
                ));
            }
            total += prob;
        }
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::validation(
                "atoms",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        let mut support = atoms.iter().filter(|(_, p)| *p > 0.0).map(|(v, _)| *v);
        if let Some(first) = support.next() {
            if support.all(|v| v == first) {
                return Ok(first);
            }
        }
        Ok(self.ce_log(atoms.iter().map(|&(v, p)| (v.ln(), p / total))))
    }

    /// Certainty equivalent from `(ln value, probability)` terms, where a
    /// zero value is passed as `-inf`. The power branches are evaluated by
    /// log-sum-exp so that large exponents of small values cannot overflow.
    pub(crate) fn ce_log<I>(&self, terms: I) -> f64
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        if self.unit_risk_aversion() {
            let mut acc = 0.0;
            for (lv, p) in terms {
                if p <= 0.0 {
                    continue;
                }
                if lv == f64::NEG_INFINITY {
                    return 0.0;
                }
                acc += p * lv;
            }
            return acc.exp();
        }
        let a = 1.0 - self.gamma;
        let mut max = f64::NEG_INFINITY;
        let mut scaled: Vec<(f64, f64)> = Vec::new();
        for (lv, p) in terms {
            if p <= 0.0 {
                continue;
            }
            if lv == f64::NEG_INFINITY {
                if a < 0.0 {
                    return 0.0;
                }
                continue;
            }
            let e = a * lv;
            if e > max {
                max = e;
            }
            scaled.push((e, p));
        }
        if max == f64::NEG_INFINITY {
            return 0.0;
        }
        let sum: f64 = scaled.iter().map(|(e, p)| p * (e - max).exp()).sum();
        ((max + sum.ln()) / a).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prefs(beta: f64, rho: f64, gamma: f64) -> Preferences {
        Preferences::recursive(beta, rho, gamma).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        assert!((prefs(0.5, 0.5, 2.0).aggregate(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((prefs(0.5, 1.0, 2.0).aggregate(4.0, 1.0).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(prefs(0.5, 2.0, 2.0).aggregate(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(prefs(0.5, 1.0, 2.0).aggregate(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(prefs(0.5, 2.0, 2.0).aggregate(0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_at_zero_continuation_below_unit_rho() {
        let p = prefs(0.9, 0.5, 2.0);
        let expected = 0.1f64.powf(2.0);
        assert!((p.aggregate(1.0, 0.0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn aggregate_rejects_negative_arguments() {
        let p = prefs(0.5, 0.5, 2.0);
        assert!(matches!(p.aggregate(-1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(p.aggregate(1.0, -1e-9), Err(Error::Domain(_))));
    }

    #[test]
    fn aggregate_vanishes_continuously_for_rho_at_least_one() {
        for rho in [1.0, 1.5, 3.0] {
            let p = prefs(0.7, rho, 2.0);
            let mut prev = f64::INFINITY;
            for z in [1e-2, 1e-4, 1e-8, 1e-16] {
                let v = p.aggregate(1.0, z).unwrap();
                assert!(v < prev);
                prev = v;
            }
            assert!(prev < 1e-6, "rho {rho}: {prev}");
        }
    }

    #[test]
    fn certainty_equivalent_examples() {
        let p2 = prefs(0.5, 0.5, 2.0);
        let ce = p2.certainty_equivalent(&[(1.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!((ce - 4.0 / 3.0).abs() < 1e-14);

        let p1 = prefs(0.5, 0.5, 1.0);
        let ce = p1.certainty_equivalent(&[(1.0, 0.5), (4.0, 0.5)]).unwrap();
        assert!((ce - 2.0).abs() < 1e-14);

        let p8 = prefs(0.5, 0.5, 8.0);
        assert_eq!(
            p8.certainty_equivalent(&[(0.0, 0.1), (5.0, 0.9)]).unwrap(),
            0.0
        );
    }

    #[test]
    fn certainty_equivalent_zero_atom_below_unit_gamma() {
        let p = prefs(0.5, 0.5, 0.5);
        let ce = p.certainty_equivalent(&[(0.0, 0.75), (4.0, 0.25)]).unwrap();
        // E[sqrt X] = 0.5, so CE = 0.25
        assert!((ce - 0.25).abs() < 1e-14);
    }

    #[test]
    fn certainty_equivalent_survives_large_exponents() {
        let p = prefs(0.5, 0.5, 8.0);
        let ce = p
            .certainty_equivalent(&[(1e-40, 0.5), (2e-40, 0.5)])
            .unwrap();
        let direct = (0.5 * 1f64.powi(-7) + 0.5 * 2f64.powi(-7)).powf(-1.0 / 7.0) * 1e-40;
        assert!((ce / direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn certainty_equivalent_validation() {
        let p = prefs(0.5, 0.5, 2.0);
        assert!(matches!(
            p.certainty_equivalent(&[(1.0, 0.5), (2.0, 0.49)]),
            Err(Error::Validation { .. })
        ));
        assert!(p.certainty_equivalent(&[(-1.0, 1.0)]).is_err());
        assert!(p.certainty_equivalent(&[]).is_err());
    }

    #[test]
    fn degenerate_distribution_is_exact() {
        for gamma in [0.3, 1.0, 2.0, 8.0, 25.0] {
            let p = prefs(0.5, 0.5, gamma);
            let v = 0.123456789;
            assert_eq!(p.certainty_equivalent(&[(v, 0.4), (v, 0.6)]).unwrap(), v);
        }
    }

    #[test]
    fn unit_snapping() {
        let p = prefs(0.5, 1.0 + 5e-10, 1.0 - 5e-10);
        assert!(p.unit_eis());
        assert!(p.unit_risk_aversion());
        assert!(p.alpha().is_none());
        assert!((p.aggregate(4.0, 1.0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn preference_validation() {
        assert!(Preferences::recursive(1.0, 0.5, 2.0).is_err());
        assert!(Preferences::recursive(0.5, 0.0, 2.0).is_err());
        assert!(Preferences::recursive(0.5, 0.5, -1.0).is_err());
        assert!(Preferences::new(0.5, 0.5, 2.0, 0.9, vec![]).is_err());
        assert!(Preferences::new(0.5, 0.5, 2.0, 1.5, vec![-0.1]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn distribution() -> impl Strategy<Value = Vec<(f64, f64)>> {
            prop::collection::vec((0.01f64..10.0, 0.05f64..1.0), 1..8).prop_map(|raw| {
                let total: f64 = raw.iter().map(|(_, w)| w).sum();
                let mut atoms: Vec<(f64, f64)> = raw.iter().map(|&(v, w)| (v, w / total)).collect();
                // close the mass exactly on the last atom
                let head: f64 = atoms[..atoms.len() - 1].iter().map(|(_, p)| p).sum();
                let last = atoms.len() - 1;
                atoms[last].1 = 1.0 - head;
                atoms
            })
        }

        proptest! {
            #[test]
            fn aggregate_homogeneous(
                beta in 0.05f64..0.95, rho in 0.1f64..4.0,
                c in 0.01f64..10.0, z in 0.01f64..10.0, lambda in 0.1f64..10.0,
            ) {
                let p = Preferences::recursive(beta, rho, 2.0).unwrap();
                let lhs = p.aggregate(lambda * c, lambda * z).unwrap();
                let rhs = lambda * p.aggregate(c, z).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            }

            #[test]
            fn aggregate_increasing(
                beta in 0.05f64..0.95, rho in 0.1f64..4.0,
                c in 0.01f64..10.0, z in 0.01f64..10.0, bump in 0.01f64..1.0,
            ) {
                let p = Preferences::recursive(beta, rho, 2.0).unwrap();
                let base = p.aggregate(c, z).unwrap();
                prop_assert!(p.aggregate(c + bump, z).unwrap() > base);
                prop_assert!(p.aggregate(c, z + bump).unwrap() > base);
            }

            #[test]
            fn ce_monotone_in_values(
                atoms in distribution(), gamma in 0.1f64..12.0, bump in 0.0f64..2.0, idx in 0usize..8,
            ) {
                let p = Preferences::recursive(0.5, 0.5, gamma).unwrap();
                let base = p.certainty_equivalent(&atoms).unwrap();
                let mut raised = atoms.clone();
                let i = idx % raised.len();
                raised[i].0 += bump;
                prop_assert!(p.certainty_equivalent(&raised).unwrap() >= base * (1.0 - 1e-14));
            }

            #[test]
            fn ce_decreasing_in_risk_aversion(
                atoms in distribution(), g1 in 0.1f64..12.0, gap in 0.01f64..5.0,
            ) {
                let lo = Preferences::recursive(0.5, 0.5, g1).unwrap();
                let hi = Preferences::recursive(0.5, 0.5, g1 + gap).unwrap();
                let ce_lo = lo.certainty_equivalent(&atoms).unwrap();
                let ce_hi = hi.certainty_equivalent(&atoms).unwrap();
                prop_assert!(ce_lo >= ce_hi * (1.0 - 1e-13));
            }
        }
    }
}
