#![allow(dead_code)]

use posflow::{FiniteSystem, PositiveOperator, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map<R: Rng>(rng: &mut R, n: usize) -> FiniteSystem {
    FiniteSystem::deterministic((0..n).map(|_| rng.random_range(0..n)).collect()).unwrap()
}

/// Strictly positive kernel, hence irreducible and aperiodic.
pub fn random_chain<R: Rng>(rng: &mut R, n: usize) -> FiniteSystem {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|v| v / t).collect()
        })
        .collect();
    FiniteSystem::stochastic(&rows).unwrap()
}

/// A Hamiltonian cycle plus a self-loop plus random extra edges: irreducible
/// and aperiodic.
pub fn random_subshift<R: Rng>(rng: &mut R, n: usize) -> FiniteSystem {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[(i + 1) % n] = 1.0;
        for v in row.iter_mut() {
            if rng.random_bool(0.3) {
                *v = 1.0;
            }
        }
    }
    a[0][0] = 1.0;
    FiniteSystem::subshift(&a).unwrap()
}

/// Cycles through maps, chains and subshifts.
pub fn random_system<R: Rng>(rng: &mut R, kind: usize, n: usize) -> FiniteSystem {
    match kind % 3 {
        0 => random_map(rng, n),
        1 => random_chain(rng, n),
        _ => random_subshift(rng, n),
    }
}

pub fn random_potential<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Potential {
    Potential::new((0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Strictly positive matrix with entries in (0.01, 1).
pub fn random_positive_matrix<R: Rng>(rng: &mut R, n: usize) -> PositiveOperator {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
    PositiveOperator::from_rows(&rows).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
