#![allow(dead_code)]

use assignflow::{AssignmentState, DistanceMatrix, WeightMatrix};
use rand::Rng;

pub fn random_row(rng: &mut impl Rng, n: usize, lo: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_state(rng: &mut impl Rng, m: usize, n: usize) -> AssignmentState {
    let rows: Vec<Vec<f64>> = (0..m).map(|_| random_row(rng, n, 0.05)).collect();
    AssignmentState::from_rows(&rows).unwrap()
}

/// Dense row-stochastic Ω with positive diagonal.
pub fn random_stochastic(rng: &mut impl Rng, m: usize) -> WeightMatrix {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            r[i] += 0.5;
            let s: f64 = r.iter().sum();
            r.into_iter().map(|x| x / s).collect()
        })
        .collect();
    WeightMatrix::from_dense_rows(&rows).unwrap()
}

/// `Ω = Diag(w)^{-1} Ω̂` with a random symmetric nonnegative `Ω̂` (positive
/// diagonal, about half the off-diagonal pairs present).
pub fn random_symmetric_form(rng: &mut impl Rng, m: usize) -> WeightMatrix {
    let mut hat = vec![0.0; m * m];
    for i in 0..m {
        hat[i * m + i] = rng.gen_range(0.5..1.5);
        for k in i + 1..m {
            if rng.gen_bool(0.5) {
                let v = rng.gen_range(0.1..1.0);
                hat[i * m + k] = v;
                hat[k * m + i] = v;
            }
        }
    }
    let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..2.0)).collect();
    let hat = WeightMatrix::from_triplets(
        m,
        (0..m * m).filter(|&e| hat[e] != 0.0).map(|e| (e / m, e % m, hat[e])).collect(),
    )
    .unwrap();
    WeightMatrix::from_factorization(w, hat).unwrap()
}

pub fn random_distances(rng: &mut impl Rng, m: usize, n: usize) -> DistanceMatrix {
    DistanceMatrix::new(m, n, (0..m * n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}
