//! Finite-state Markov environment: the state chain, per-transition noise
//! atoms, and the risk-free and risky gross returns built on top of them.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::preferences::{Preferences, PROBABILITY_TOLERANCE};

/// Row-stochastic, irreducible transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    transition: Vec<Vec<f64>>,
}

impl MarkovChain {
    /// Validates stochasticity (rows renormalized when within tolerance of 1)
    /// and irreducibility.
    pub fn new(mut transition: Vec<Vec<f64>>) -> Result<Self> {
        let n = transition.len();
        if n == 0 {
            return Err(Error::validation("transition", "chain has no states"));
        }
        for (x, row) in transition.iter_mut().enumerate() {
            if row.len() != n {
                return Err(Error::validation(
                    format!("transition[{x}]"),
                    format!("row has {} entries, expected {n}", row.len()),
                ));
            }
            normalize_probabilities(row, &format!("transition[{x}]"))?;
        }
        if !is_irreducible(&transition) {
            return Err(Error::Model(
                "transition matrix is reducible: some state cannot reach another".into(),
            ));
        }
        Ok(Self { transition })
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from][to]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Invariant law of the chain, from the balance equations with one of
    /// them replaced by the normalization `sum(pi) = 1`.
    pub fn stationary_distribution(&self) -> StationaryDistribution {
        let n = self.n_states();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                a[(y, x)] = self.transition[x][y];
            }
            a[(x, x)] -= 1.0;
        }
        for x in 0..n {
            a[(n - 1, x)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&rhs)
            .expect("balance system of an irreducible chain is nonsingular");
        let total: f64 = pi.iter().sum();
        StationaryDistribution {
            pi: pi.iter().map(|p| p / total).collect(),
        }
    }
}

/// Checks every row for nonnegative entries summing to 1 within tolerance
/// and rescales it to exact unit mass.
pub(crate) fn normalize_probabilities(row: &mut [f64], path: &str) -> Result<()> {
    for (j, p) in row.iter().enumerate() {
        if !(*p >= 0.0 && p.is_finite()) {
            return Err(Error::validation(
                format!("{path}[{j}]"),
                format!("probability {p} must be finite and nonnegative"),
            ));
        }
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::validation(
            path,
            format!("probabilities sum to {total}, not 1"),
        ));
    }
    if total != 1.0 {
        for p in row.iter_mut() {
            *p /= total;
        }
    }
    Ok(())
}

/// Structural irreducibility: every state reaches every other state through
/// positive-probability transitions (breadth-first search from each state).
pub fn is_irreducible(transition: &[Vec<f64>]) -> bool {
    let n = transition.len();
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        while let Some(x) = queue.pop_front() {
            for (y, &p) in transition[x].iter().enumerate() {
                if p > 0.0 && !seen[y] {
                    seen[y] = true;
                    count += 1;
                    queue.push_back(y);
                }
            }
        }
        count == n
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
}

impl StationaryDistribution {
    pub fn dot(&self, values: &[f64]) -> f64 {
        self.pi.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Noise atoms `(value, conditional probability)` for every ordered
/// transition `(x, x')`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAtoms {
    per_transition: Vec<Vec<Vec<(f64, f64)>>>,
}

impl NoiseAtoms {
    /// One i.i.d. atom list broadcast to every transition.
    pub fn shared(n_states: usize, atoms: Vec<(f64, f64)>) -> Result<Self> {
        let per_transition = vec![vec![atoms; n_states]; n_states];
        Self::per_transition(per_transition)
    }

    pub fn per_transition(mut atoms: Vec<Vec<Vec<(f64, f64)>>>) -> Result<Self> {
        for (x, row) in atoms.iter_mut().enumerate() {
            for (y, list) in row.iter_mut().enumerate() {
                let path = format!("noise[{x}][{y}]");
                if list.is_empty() {
                    return Err(Error::validation(path, "transition has no noise atoms"));
                }
                for (j, (v, _)) in list.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::validation(
                            format!("{path}[{j}].value"),
                            "atom value must be finite",
                        ));
                    }
                }
                let mut probs: Vec<f64> = list.iter().map(|(_, p)| *p).collect();
                normalize_probabilities(&mut probs, &path)?;
                for ((_, p), q) in list.iter_mut().zip(probs) {
                    *p = q;
                }
            }
        }
        Ok(Self {
            per_transition: atoms,
        })
    }

    pub fn atoms(&self, from: usize, to: usize) -> &[(f64, f64)] {
        &self.per_transition[from][to]
    }
}

/// Gross returns of one risky asset, tabulated as `[x][x'][atom]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskyAsset {
    pub name: String,
    pub returns: Vec<Vec<Vec<f64>>>,
}

impl RiskyAsset {
    /// Return `noise * (phi(x') + 1) / phi(x)` from price-dividend ratios.
    pub fn from_price_dividend(name: impl Into<String>, phi: &[f64], noise: &NoiseAtoms) -> Self {
        let n = phi.len();
        let returns = (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| {
                        noise
                            .atoms(x, y)
                            .iter()
                            .map(|(v, _)| v * (phi[y] + 1.0) / phi[x])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            name: name.into(),
            returns,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnModel {
    pub risk_free: Vec<f64>,
    pub assets: Vec<RiskyAsset>,
}

/// One `(x', atom)` outcome reachable from a fixed current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub atom: usize,
    pub noise: f64,
    /// Joint conditional probability `P(x, x') * q(x, x', atom)`.
    pub prob: f64,
}

/// The complete market: chain, noise and returns, validated together.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    chain: MarkovChain,
    noise: NoiseAtoms,
    returns: ReturnModel,
}

impl MarketModel {
    pub fn new(chain: MarkovChain, noise: NoiseAtoms, returns: ReturnModel) -> Result<Self> {
        let n = chain.n_states();
        if noise.per_transition.len() != n || noise.per_transition.iter().any(|r| r.len() != n) {
            return Err(Error::validation(
                "noise",
                format!("expected {n}x{n} transitions"),
            ));
        }
        if returns.risk_free.len() != n {
            return Err(Error::validation(
                "returns.risk_free",
                format!("expected {n} entries, found {}", returns.risk_free.len()),
            ));
        }
        for (x, r) in returns.risk_free.iter().enumerate() {
            if !(*r > 0.0 && r.is_finite()) {
                return Err(Error::validation(
                    format!("returns.risk_free[{x}]"),
                    "gross risk-free return must be positive",
                ));
            }
        }
        for (i, asset) in returns.assets.iter().enumerate() {
            let path = format!("returns.assets[{i}]");
            if asset.returns.len() != n {
                return Err(Error::validation(
                    path,
                    format!("expected {n} source states"),
                ));
            }
            for x in 0..n {
                if asset.returns[x].len() != n {
                    return Err(Error::validation(
                        format!("{path}.table[{x}]"),
                        format!("expected {n} target states"),
                    ));
                }
                for y in 0..n {
                    let row = &asset.returns[x][y];
                    if row.len() != noise.atoms(x, y).len() {
                        return Err(Error::validation(
                            format!("{path}.table[{x}][{y}]"),
                            format!(
                                "expected one return per noise atom ({})",
                                noise.atoms(x, y).len()
                            ),
                        ));
                    }
                    for (j, r) in row.iter().enumerate() {
                        if !(*r > 0.0 && r.is_finite()) {
                            return Err(Error::validation(
                                format!("{path}.table[{x}][{y}][{j}]"),
                                format!("gross return {r} must be positive"),
                            ));
                        }
                    }
                }
            }
        }
        Ok(Self {
            chain,
            noise,
            returns,
        })
    }

    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.assets.len()
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn noise(&self) -> &NoiseAtoms {
        &self.noise
    }

    pub fn returns(&self) -> &ReturnModel {
        &self.returns
    }

    pub fn risk_free(&self, x: usize) -> f64 {
        self.returns.risk_free[x]
    }

    pub fn risky_return(&self, asset: usize, x: usize, next: usize, atom: usize) -> f64 {
        self.returns.assets[asset].returns[x][next][atom]
    }

    /// Outcomes reachable from `x`, in ascending `x'` then atom order.
    /// Transitions with zero probability are skipped.
    pub fn outcomes(&self, x: usize) -> impl Iterator<Item = Outcome> + '_ {
        (0..self.n_states())
            .filter(move |&y| self.chain.prob(x, y) > 0.0)
            .flat_map(move |y| {
                let p = self.chain.prob(x, y);
                self.noise
                    .atoms(x, y)
                    .iter()
                    .enumerate()
                    .map(move |(j, &(v, q))| Outcome {
                        next: y,
                        atom: j,
                        noise: v,
                        prob: p * q,
                    })
            })
    }

    /// `E[f(x, x', Y) | X_t = x]`.
    pub fn conditional_expectation<F>(&self, x: usize, f: F) -> f64
    where
        F: Fn(&Outcome) -> f64,
    {
        self.outcomes(x).map(|o| o.prob * f(&o)).sum()
    }

    /// Expected loss-averse excess return per unit invested in `asset` at
    /// state `x`. Exact ties with the risk-free rate contribute nothing.
    pub fn gain_loss_per_unit(&self, x: usize, asset: usize, prefs: &Preferences) -> f64 {
        let r0 = self.risk_free(x);
        let k = prefs.loss_aversion;
        self.conditional_expectation(x, |o| {
            let excess = self.risky_return(asset, x, o.next, o.atom) - r0;
            if excess > 0.0 {
                excess
            } else if excess < 0.0 {
                k * excess
            } else {
                0.0
            }
        })
    }

    /// Gain-loss utilities indexed `[state][asset]`.
    pub fn gain_loss(&self, prefs: &Preferences) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|x| {
                (0..self.n_assets())
                    .map(|i| self.gain_loss_per_unit(x, i, prefs))
                    .collect()
            })
            .collect()
    }

    /// Gross portfolio return `r0(x) + sum_i theta_i (r_i - r0(x))`.
    pub fn portfolio_return(
        &self,
        x: usize,
        next: usize,
        atom: usize,
        theta: &[f64],
    ) -> Result<f64> {
        let r0 = self.risk_free(x);
        let value = r0
            + theta
                .iter()
                .enumerate()
                .map(|(i, t)| t * (self.risky_return(i, x, next, atom) - r0))
                .sum::<f64>();
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::InfeasibleReturn {
                state: x,
                next,
                atom,
                value,
            })
        }
    }

    /// Unconditional one-period moments of a risky return when the current
    /// state is drawn from the stationary distribution.
    pub fn stationary_return_moments(&self, asset: usize) -> ReturnMoments {
        let pi = self.chain.stationary_distribution();
        let mut mean = 0.0;
        let mut second = 0.0;
        for x in 0..self.n_states() {
            mean += pi.pi[x]
                * self.conditional_expectation(x, |o| self.risky_return(asset, x, o.next, o.atom));
            second += pi.pi[x]
                * self.conditional_expectation(x, |o| {
                    self.risky_return(asset, x, o.next, o.atom).powi(2)
                });
        }
        let risk_free = pi.dot(&self.returns.risk_free);
        ReturnModel::moments(mean, second, risk_free)
    }
}

impl ReturnModel {
    fn moments(mean: f64, second: f64, risk_free: f64) -> ReturnMoments {
        ReturnMoments {
            mean,
            std_dev: (second - mean * mean).max(0.0).sqrt(),
            risk_free_mean: risk_free,
            premium: mean - risk_free,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnMoments {
    /// Mean gross return.
    pub mean: f64,
    pub std_dev: f64,
    pub risk_free_mean: f64,
    /// Mean excess return over the risk-free rate.
    pub premium: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example;

    #[test]
    fn stationary_examples() {
        let sym = MarkovChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = sym.stationary_distribution().pi;
        assert!((pi[0] - 0.5).abs() < 1e-15 && (pi[1] - 0.5).abs() < 1e-15);

        let asym = MarkovChain::new(vec![vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        let pi = asym.stationary_distribution().pi;
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((pi[1] - 2.0 / 3.0).abs() < 1e-14);

        let single = MarkovChain::new(vec![vec![1.0]]).unwrap();
        assert_eq!(single.stationary_distribution().pi, vec![1.0]);
    }

    #[test]
    fn chain_validation() {
        let err = MarkovChain::new(vec![vec![0.5, 0.49], vec![0.5, 0.5]]).unwrap_err();
        match err {
            Error::Validation { path, .. } => assert_eq!(path, "transition[0]"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            MarkovChain::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            Err(Error::Model(_))
        ));
        assert!(MarkovChain::new(vec![vec![1.0, -0.0, 0.0]]).is_err());
        // periodic but irreducible
        assert!(MarkovChain::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
    }

    #[test]
    fn rows_within_tolerance_are_renormalized() {
        let chain = MarkovChain::new(vec![vec![0.3, 0.7 + 5e-13], vec![1.0, 0.0]]).unwrap();
        let total: f64 = chain.rows()[0].iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_expectation_examples() {
        let model = example::market_model();
        assert!((model.conditional_expectation(0, |_| 1.0) - 1.0).abs() < 1e-15);
        let to_second = model.conditional_expectation(0, |o| (o.next == 1) as u8 as f64);
        assert!((to_second - 0.4).abs() < 1e-15);
        // i.i.d. atoms: the mean of the Table 2 dividend growth distribution
        let mean_noise = model.conditional_expectation(0, |o| o.noise);
        assert!((mean_noise - 1.02139).abs() < 1e-12, "{mean_noise}");
    }

    #[test]
    fn gain_loss_reference_values() {
        let model = example::market_model();
        let prefs = example::preferences();
        let g = model.gain_loss(&prefs);
        assert!((g[0][0] - 0.1532).abs() < 1e-4, "{g:?}");
        assert!((g[1][0] + 0.0551).abs() < 1e-4, "{g:?}");
    }

    #[test]
    fn gain_loss_without_loss_aversion_is_expected_excess() {
        let model = example::market_model();
        let prefs = Preferences::new(0.9, 0.5, 2.0, 1.0, vec![1.0]).unwrap();
        for x in 0..2 {
            let excess = model.conditional_expectation(x, |o| {
                model.risky_return(0, x, o.next, o.atom) - model.risk_free(x)
            });
            assert!((model.gain_loss_per_unit(x, 0, &prefs) - excess).abs() < 1e-15);
        }
    }

    fn dominant_model() -> MarketModel {
        let chain = MarkovChain::new(vec![vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
        let noise = NoiseAtoms::shared(2, vec![(1.0, 0.5), (2.0, 0.5)]).unwrap();
        let asset = RiskyAsset {
            name: "dominant".into(),
            returns: vec![vec![vec![1.1, 1.3]; 2]; 2],
        };
        let returns = ReturnModel {
            risk_free: vec![1.05, 1.0],
            assets: vec![asset],
        };
        MarketModel::new(chain, noise, returns).unwrap()
    }

    #[test]
    fn gain_loss_ignores_k_when_no_losses() {
        let model = dominant_model();
        for k in [1.0, 1.5, 4.0] {
            let prefs = Preferences::new(0.9, 0.5, 2.0, k, vec![1.0]).unwrap();
            assert!((model.gain_loss_per_unit(0, 0, &prefs) - 0.15).abs() < 1e-14);
            assert!((model.gain_loss_per_unit(1, 0, &prefs) - 0.2).abs() < 1e-14);
        }
    }

    #[test]
    fn ties_contribute_zero() {
        let chain = MarkovChain::new(vec![vec![1.0]]).unwrap();
        let noise = NoiseAtoms::shared(1, vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let asset = RiskyAsset {
            name: "a".into(),
            returns: vec![vec![vec![1.02, 1.12]]],
        };
        let model = MarketModel::new(
            chain,
            noise,
            ReturnModel {
                risk_free: vec![1.02],
                assets: vec![asset],
            },
        )
        .unwrap();
        let prefs = Preferences::new(0.9, 0.5, 2.0, 3.0, vec![1.0]).unwrap();
        assert!((model.gain_loss_per_unit(0, 0, &prefs) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn portfolio_return_examples() {
        let model = example::market_model();
        assert_eq!(model.portfolio_return(1, 0, 3, &[0.0]).unwrap(), 1.03);
        assert_eq!(
            model.portfolio_return(1, 0, 3, &[1.0]).unwrap(),
            model.risky_return(0, 1, 0, 3)
        );
        let r = model.portfolio_return(1, 1, 8, &[1.0]).unwrap();
        assert!((r - 1.054 * 40.75 / 39.75).abs() < 1e-14);
        assert!((r - 1.0805).abs() < 1e-4);
        assert!(matches!(
            model.portfolio_return(1, 0, 0, &[40.0]),
            Err(Error::InfeasibleReturn { .. })
        ));
    }

    #[test]
    fn calibration_moments() {
        let model = example::market_model();
        let m = model.stationary_return_moments(0);
        assert!((m.mean - 1.06).abs() < 0.005, "{m:?}");
        assert!((m.std_dev - 0.15).abs() < 0.005, "{m:?}");
        assert!((m.premium - 0.03).abs() < 0.005, "{m:?}");
    }

    #[test]
    fn model_validation_paths() {
        let chain = MarkovChain::new(vec![vec![1.0]]).unwrap();
        let noise = NoiseAtoms::shared(1, vec![(1.0, 1.0)]).unwrap();
        let bad = ReturnModel {
            risk_free: vec![1.0],
            assets: vec![RiskyAsset {
                name: "a".into(),
                returns: vec![vec![vec![-0.5]]],
            }],
        };
        match MarketModel::new(chain, noise, bad).unwrap_err() {
            Error::Validation { path, .. } => assert_eq!(path, "returns.assets[0].table[0][0][0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        pub(crate) fn irreducible_chain() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (1usize..=12).prop_flat_map(|n| {
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n).prop_map(
                    move |mut raw| {
                        // a cycle through every state guarantees irreducibility
                        for x in 0..n {
                            raw[x][(x + 1) % n] += 0.05;
                        }
                        for row in raw.iter_mut() {
                            let s: f64 = row.iter().sum();
                            row.iter_mut().for_each(|p| *p /= s);
                        }
                        raw
                    },
                )
            })
        }

        proptest! {
            #[test]
            fn stationary_is_invariant(rows in irreducible_chain()) {
                let chain = MarkovChain::new(rows).unwrap();
                let pi = chain.stationary_distribution().pi;
                let n = chain.n_states();
                prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for y in 0..n {
                    let next: f64 = (0..n).map(|x| pi[x] * chain.prob(x, y)).sum();
                    prop_assert!((next - pi[y]).abs() < 1e-12);
                    prop_assert!(pi[y] > 0.0);
                }
            }

            #[test]
            fn gain_loss_nonincreasing_in_k(k1 in 1.0f64..5.0, dk in 0.0f64..5.0, x in 0usize..2) {
                let model = example::market_model();
                let lo = Preferences::new(0.9, 0.5, 2.0, k1, vec![1.0]).unwrap();
                let hi = Preferences::new(0.9, 0.5, 2.0, k1 + dk, vec![1.0]).unwrap();
                prop_assert!(model.gain_loss_per_unit(x, 0, &hi) <= model.gain_loss_per_unit(x, 0, &lo) + 1e-15);
            }

            #[test]
            fn expectation_linear_and_monotone(a in -3.0f64..3.0, c in -3.0f64..3.0, x in 0usize..2) {
                let model = example::market_model();
                let f = |o: &Outcome| o.noise * o.noise;
                let g = |o: &Outcome| o.next as f64 + o.atom as f64;
                let lhs = model.conditional_expectation(x, |o| a * f(o) + c * g(o));
                let rhs = a * model.conditional_expectation(x, f) + c * model.conditional_expectation(x, g);
                prop_assert!((lhs - rhs).abs() < 1e-12);
                let bigger = model.conditional_expectation(x, |o| f(o) + a.abs());
                prop_assert!(bigger >= model.conditional_expectation(x, f) - 1e-15);
            }
        }
    }
}
