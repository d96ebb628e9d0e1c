//! Perron-Frobenius growth rate of the consumption-growth process.
//!
//! For `gamma != 1` the growth rate comes from the dominant eigenpair of the
//! weighted transition matrix `P~(x, y) = P(x, y) E[u(e^kappa) | x, y]`; for
//! `gamma = 1` it is the stationary mean of `kappa`, with the eigenvector
//! replaced by the solution of the additive Poisson equation. In both cases
//! the growth constant is `delta = u^{-1}(eta)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_point::Kappa;
use crate::market::{MarketModel, MarkovChain};
use crate::preferences::Preferences;

pub const MAX_POWER_STEPS: usize = 100_000;
/// Plain power steps before switching to the shifted matrix.
const PLAIN_STEPS: usize = 2_000;
const RAYLEIGH_TOLERANCE: f64 = 1e-13;
const RESIDUAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum WeightedTransition {
    /// `gamma != 1`: the nonnegative matrix `P~`.
    Multiplicative(Vec<Vec<f64>>),
    /// `gamma = 1`: conditional means `E[kappa | X_t = x]`.
    Additive(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralResult {
    /// Perron root of `P~`, or the stationary mean of `kappa` when `gamma = 1`.
    pub eta: f64,
    /// Sup-normalized Perron vector, or the Poisson solution with `pi . v = 0`.
    pub v: Vec<f64>,
    pub delta: f64,
}

pub fn build_weighted(
    model: &MarketModel,
    kappa: &Kappa,
    prefs: &Preferences,
) -> Result<WeightedTransition> {
    let n = model.n_states();
    if prefs.unit_risk_aversion() {
        let drift = (0..n)
            .map(|x| model.conditional_expectation(x, |o| kappa.get(x, o.next, o.atom)))
            .collect();
        return Ok(WeightedTransition::Additive(drift));
    }
    let a = 1.0 - prefs.gamma;
    let mut matrix = vec![vec![0.0; n]; n];
    for (x, row) in matrix.iter_mut().enumerate() {
        for o in model.outcomes(x) {
            row[o.next] += o.prob * (a * kappa.get(x, o.next, o.atom)).exp();
        }
        for (y, entry) in row.iter().enumerate() {
            if !entry.is_finite() {
                return Err(Error::NumericalOverflow { from: x, to: y });
            }
        }
    }
    Ok(WeightedTransition::Multiplicative(matrix))
}

pub fn solve_spectral(
    weighted: &WeightedTransition,
    chain: &MarkovChain,
    prefs: &Preferences,
) -> Result<SpectralResult> {
    match weighted {
        WeightedTransition::Multiplicative(matrix) => {
            let (eta, v) = perron_eigenpair(matrix)?;
            let delta = prefs.utility_inverse(eta);
            Ok(SpectralResult { eta, v, delta })
        }
        WeightedTransition::Additive(drift) => {
            let pi = chain.stationary_distribution();
            let eta = pi.dot(drift);
            let v = poisson_solution(chain, &pi.pi, drift, eta);
            Ok(SpectralResult {
                eta,
                v,
                delta: eta.exp(),
            })
        }
    }
}

/// `build_weighted` followed by `solve_spectral`.
pub fn growth_rate(
    model: &MarketModel,
    kappa: &Kappa,
    prefs: &Preferences,
) -> Result<SpectralResult> {
    let weighted = build_weighted(model, kappa, prefs)?;
    solve_spectral(&weighted, model.chain(), prefs)
}

fn mat_vec(matrix: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    matrix
        .iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Dominant eigenpair of a nonnegative irreducible matrix by power
/// iteration. Periodic matrices do not settle under the plain iteration, so
/// after a fixed budget the iteration continues on `A + s I`, which shares
/// the Perron vector and is primitive.
pub fn perron_eigenpair(matrix: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let n = matrix.len();
    let mut v = vec![1.0; n];
    let mut prev = f64::NAN;
    let mut shift = 0.0;
    let mut last_change = f64::INFINITY;
    for step in 0..MAX_POWER_STEPS {
        if step == PLAIN_STEPS && shift == 0.0 {
            shift = prev.abs().max(f64::MIN_POSITIVE);
            prev = f64::NAN;
        }
        let mut w = mat_vec(matrix, &v);
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let rayleigh = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / vv;
        let residual = w
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (a, b)| m.max((a - rayleigh * b).abs()));
        last_change = ((rayleigh - prev) / rayleigh).abs();
        if last_change < RAYLEIGH_TOLERANCE && residual <= RESIDUAL_TOLERANCE * rayleigh {
            return Ok((rayleigh, v));
        }
        prev = rayleigh;
        if shift > 0.0 {
            w.iter_mut().zip(&v).for_each(|(a, b)| *a += shift * b);
        }
        let norm = sup_norm(&w);
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        v = w.into_iter().map(|x| x / norm).collect();
    }
    Err(Error::SpectralFailure {
        iterations: MAX_POWER_STEPS,
        last_change,
    })
}

/// Solves `(I - P) v = w - eta 1` with `pi . v = 0` through the
/// nonsingular system `(I - P + 1 pi) v = w - eta 1`.
fn poisson_solution(chain: &MarkovChain, pi: &[f64], drift: &[f64], eta: f64) -> Vec<f64> {
    let n = chain.n_states();
    let a = DMatrix::from_fn(n, n, |x, y| {
        let id = if x == y { 1.0 } else { 0.0 };
        id - chain.prob(x, y) + pi[y]
    });
    let rhs = DVector::from_iterator(n, drift.iter().map(|w| w - eta));
    let v = a
        .lu()
        .solve(&rhs)
        .expect("fundamental matrix of an irreducible chain is nonsingular");
    v.iter().copied().collect()
}

/// Distance of the Collatz-Wielandt bounds `min_x (P~v)_x / v_x` and
/// `max_x (P~v)_x / v_x` from `eta`. Zero for an exact eigenpair.
pub fn collatz_wielandt_gap(matrix: &[Vec<f64>], result: &SpectralResult) -> f64 {
    let (lo, hi) = collatz_wielandt_bounds(matrix, &result.v);
    (lo - result.eta).abs().max((hi - result.eta).abs())
}

/// `(min_x (A f)_x / f_x, max_x (A f)_x / f_x)` for a positive vector `f`;
/// the Perron root lies between the two.
pub fn collatz_wielandt_bounds(matrix: &[Vec<f64>], f: &[f64]) -> (f64, f64) {
    let af = mat_vec(matrix, f);
    af.iter()
        .zip(f)
        .map(|(a, b)| a / b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r), hi.max(r))
        })
}
