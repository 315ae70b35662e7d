#![allow(dead_code)]

use ndarray::Array2;
use pccnmf::{DataMatrix, Factorization, Loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random nonnegative matrix; each entry is zero with probability `zeros`.
pub fn random_nonneg(rng: &mut ChaCha8Rng, rows: usize, cols: usize, zeros: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < zeros {
            0.0
        } else {
            rng.random_range(0.05..1.0)
        }
    })
}

/// Exact mixture `P = B W` whose basis columns and image columns are nonzero.
pub fn exact_mixture(rng: &mut ChaCha8Rng, n: usize, m: usize, r: usize, zeros: f64) -> (DataMatrix, Factorization) {
    let mut b = random_nonneg(rng, n, r, zeros);
    let mut w = random_nonneg(rng, r, m, zeros);
    for k in 0..r {
        let p = rng.random_range(0..n);
        b[[p, k]] = rng.random_range(0.05..1.0);
    }
    for i in 0..m {
        let k = rng.random_range(0..r);
        w[[k, i]] = rng.random_range(0.05..1.0);
    }
    let p = b.dot(&w);
    let data = DataMatrix::with_inferred_scale(p).unwrap();
    (data, Factorization::from_parts(b, w, Loss::Frobenius).unwrap())
}

pub fn matrix(values: Array2<f64>) -> DataMatrix {
    DataMatrix::with_inferred_scale(values).unwrap()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
