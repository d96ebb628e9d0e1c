#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use recutil::{MarketModel, MarkovChain, NoiseAtoms, ReturnModel, RiskyAsset};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random transition matrix with a guaranteed cycle through all states and
/// roughly half of the remaining entries zero.
pub fn random_irreducible(rng: &mut StdRng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|x| {
            let mut row: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_range(0.0..1.0) < 0.5 {
                        0.0
                    } else {
                        rng.random_range(0.05..1.0)
                    }
                })
                .collect();
            row[(x + 1) % n] += rng.random_range(0.1..1.0);
            let total: f64 = row.iter().sum();
            row.iter().map(|p| p / total).collect()
        })
        .collect()
}

pub fn random_atoms(rng: &mut StdRng, k: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights
        .into_iter()
        .map(|w| (rng.random_range(lo..hi), w / total))
        .collect()
}

/// Random market with shared noise atoms and risky returns drawn around
/// the risk-free rate.
pub fn random_market(rng: &mut StdRng, n: usize, n_assets: usize, n_atoms: usize) -> MarketModel {
    let chain = MarkovChain::new(random_irreducible(rng, n)).unwrap();
    let noise = NoiseAtoms::shared(n, random_atoms(rng, n_atoms, 0.95, 1.05)).unwrap();
    let risk_free: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..1.03)).collect();
    let assets = (0..n_assets)
        .map(|i| RiskyAsset {
            name: format!("asset{i}"),
            returns: (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| (0..n_atoms).map(|_| rng.random_range(0.85..1.25)).collect())
                        .collect()
                })
                .collect(),
        })
        .collect();
    MarketModel::new(chain, noise, ReturnModel { risk_free, assets }).unwrap()
}

/// Perron root and sup-normalized positive eigenvector from a dense
/// eigen-decomposition and the null space of `A - eta I`.
pub fn dense_perron(matrix: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n = matrix.len();
    let a = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
    let eta = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = &a - DMatrix::identity(n, n) * eta;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let k = (0..n)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap();
    let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
    let sign = if v.iter().sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter_mut().for_each(|x| *x *= sign / norm);
    (eta, v)
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
