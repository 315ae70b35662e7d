//! Seeded multiplicative-update NMF under Frobenius or generalized KL loss.
//!
//! Both update schemes are the classic Lee–Seung rules, which never increase
//! their loss. After every half-step all factor entries are floored at
//! [`FACTOR_FLOOR`] so that no entry gets locked at zero.

mod svd;

pub use svd::truncated_svd;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_csv_array, write_csv_array, DataMatrix};
use crate::error::{Error, Result};

pub const FACTOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Frobenius,
    Kl,
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Loss::Frobenius => "frobenius",
            Loss::Kl => "kl",
        })
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frobenius" | "fro" => Ok(Loss::Frobenius),
            "kl" => Ok(Loss::Kl),
            other => Err(Error::Parameter(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// i.i.d. uniform on (0, 1], scaled by `sqrt(mean(P) / R)`.
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once `|L_t - L_{t-1}| / L_{t-1}` drops below this.
    pub rel_tol: f64,
    pub init: Init,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 2000,
            rel_tol: 1e-6,
            init: Init::UniformRandom,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

/// `P ~= B W` with `B` (pixels x rank) and `W` (rank x images), both nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub basis: Array2<f64>,
    pub weights: Array2<f64>,
    pub loss: Loss,
    pub seed: u64,
    /// `(iteration, loss)` pairs; iteration 0 is the initial guess.
    pub trace: Vec<(usize, f64)>,
    pub converged: bool,
}

impl Factorization {
    /// Wraps externally obtained factors; no trace, seed 0.
    pub fn from_parts(basis: Array2<f64>, weights: Array2<f64>, loss: Loss) -> Result<Self> {
        if basis.ncols() != weights.nrows() {
            return Err(Error::Parameter(format!(
                "basis has {} columns but weights have {} rows",
                basis.ncols(),
                weights.nrows()
            )));
        }
        if basis.iter().chain(weights.iter()).any(|&v| !(v >= 0.0)) {
            return Err(Error::Parameter("factors must be nonnegative".into()));
        }
        Ok(Factorization {
            basis,
            weights,
            loss,
            seed: 0,
            trace: Vec::new(),
            converged: false,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.basis.dot(&self.weights)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|&(_, l)| l)
    }

    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |&(it, _)| it)
    }

    /// Rescales basis column `b` by `kappa[b]` and weight row `b` by `1 / kappa[b]`.
    pub fn gauge_transform(&self, kappa: &[f64]) -> Result<Self> {
        if kappa.len() != self.rank() {
            return Err(Error::Parameter(format!(
                "expected {} scale factors, got {}",
                self.rank(),
                kappa.len()
            )));
        }
        if kappa.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::Parameter("scale factors must be positive".into()));
        }
        let k = Array1::from(kappa.to_vec());
        let mut out = self.clone();
        out.basis *= &k;
        out.weights /= &k.insert_axis(Axis(1));
        Ok(out)
    }

    /// Writes `B.csv`, `W.csv` and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv_array(&dir.join("B.csv"), &self.basis)?;
        write_csv_array(&dir.join("W.csv"), &self.weights)?;
        let meta = FactorizationMeta {
            rank: self.rank(),
            loss: self.loss,
            seed: self.seed,
            iters: self.iterations(),
            final_loss: self.final_loss(),
            converged: self.converged,
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let basis = read_csv_array(&dir.join("B.csv"))?;
        let weights = read_csv_array(&dir.join("W.csv"))?;
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: FactorizationMeta = serde_json::from_str(&text)?;
        let mut f = Factorization::from_parts(basis, weights, meta.loss)?;
        if f.rank() != meta.rank {
            return Err(Error::format(dir, "meta.json rank disagrees with B.csv"));
        }
        f.seed = meta.seed;
        f.converged = meta.converged;
        if let Some(l) = meta.final_loss {
            f.trace.push((meta.iters, l));
        }
        Ok(f)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FactorizationMeta {
    rank: usize,
    loss: Loss,
    seed: u64,
    iters: usize,
    final_loss: Option<f64>,
    converged: bool,
}

fn check_shapes(m: &DataMatrix, f: &Factorization) -> Result<()> {
    if f.basis.nrows() != m.rows() || f.weights.ncols() != m.cols() {
        return Err(Error::Parameter(format!(
            "factorization is {}x{} but data is {}x{}",
            f.basis.nrows(),
            f.weights.ncols(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// `sum (P - P_hat)^2` over all entries.
pub fn frobenius_error(m: &DataMatrix, f: &Factorization) -> Result<f64> {
    check_shapes(m, f)?;
    Ok(frobenius_sq(m.values(), &f.reconstruct()))
}

/// Generalized KL divergence with `0 ln 0 = 0`; `+inf` if `P > 0` where `P_hat = 0`.
pub fn kl_divergence(m: &DataMatrix, f: &Factorization) -> Result<f64> {
    check_shapes(m, f)?;
    Ok(kl_generalized(m.values(), &f.reconstruct()))
}

pub(crate) fn frobenius_sq(p: &Array2<f64>, approx: &Array2<f64>) -> f64 {
    Zip::from(p)
        .and(approx)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
}

pub(crate) fn kl_generalized(p: &Array2<f64>, approx: &Array2<f64>) -> f64 {
    Zip::from(p).and(approx).fold(0.0, |acc, &a, &b| {
        if a == 0.0 {
            acc + b
        } else if b <= 0.0 {
            f64::INFINITY
        } else {
            acc + a * (a / b).ln() - a + b
        }
    })
}

fn initial_factors(p: &Array2<f64>, rank: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (n, m) = p.dim();
    let scale = (p.mean().unwrap_or(0.0) / rank as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 1 - U[0,1) lies in (0, 1]
    let mut draw = || (1.0 - rng.random::<f64>()) * scale;
    let basis = Array2::from_shape_simple_fn((n, rank), &mut draw);
    let weights = Array2::from_shape_simple_fn((rank, m), &mut draw);
    (basis, weights)
}

fn floor_in_place(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(FACTOR_FLOOR));
}

fn frobenius_step(p: &Array2<f64>, basis: &mut Array2<f64>, weights: &mut Array2<f64>) {
    let numer = basis.t().dot(p);
    let denom = basis.t().dot(&*basis).dot(&*weights);
    Zip::from(&mut *weights)
        .and(&numer)
        .and(&denom)
        .for_each(|w, &a, &b| *w *= a / b);
    floor_in_place(weights);

    let numer = p.dot(&weights.t());
    let denom = basis.dot(&weights.dot(&weights.t()));
    Zip::from(&mut *basis)
        .and(&numer)
        .and(&denom)
        .for_each(|b, &a, &d| *b *= a / d);
    floor_in_place(basis);
}

/// `P / P_hat` with zero where `P` is zero.
fn kl_ratio(p: &Array2<f64>, approx: &Array2<f64>) -> Array2<f64> {
    let mut q = approx.clone();
    Zip::from(&mut q)
        .and(p)
        .for_each(|q, &a| *q = if a == 0.0 { 0.0 } else { a / *q });
    q
}

fn kl_step(p: &Array2<f64>, basis: &mut Array2<f64>, weights: &mut Array2<f64>) {
    let q = kl_ratio(p, &basis.dot(&*weights));
    let numer = basis.t().dot(&q);
    let col_sums = basis.sum_axis(Axis(0)).insert_axis(Axis(1));
    *weights *= &numer;
    *weights /= &col_sums;
    floor_in_place(weights);

    let q = kl_ratio(p, &basis.dot(&*weights));
    let numer = q.dot(&weights.t());
    let row_sums = weights.sum_axis(Axis(1));
    *basis *= &numer;
    *basis /= &row_sums;
    floor_in_place(basis);
}

fn loss_value(loss: Loss, p: &Array2<f64>, basis: &Array2<f64>, weights: &Array2<f64>) -> f64 {
    let approx = basis.dot(weights);
    match loss {
        Loss::Frobenius => frobenius_sq(p, &approx),
        Loss::Kl => kl_generalized(p, &approx),
    }
}

/// Factorizes `m` at `rank` from a seeded random start.
///
/// The run stops when the relative loss change falls below `opts.rel_tol`
/// (then `converged` is set) or after `opts.max_iters` iterations.
pub fn factorize(
    m: &DataMatrix,
    rank: usize,
    loss: Loss,
    seed: u64,
    opts: &SolverOptions,
) -> Result<Factorization> {
    opts.validate()?;
    let (n, cols) = m.values().dim();
    if rank < 1 || rank > n.min(cols) {
        return Err(Error::Parameter(format!(
            "rank {rank} outside 1..={}",
            n.min(cols)
        )));
    }
    let p = m.values();
    if !p.iter().any(|&v| v > 0.0) {
        return Err(Error::Degenerate("cannot factorize an all-zero matrix".into()));
    }

    let (mut basis, mut weights) = initial_factors(p, rank, seed);
    let mut current = loss_value(loss, p, &basis, &weights);
    let mut trace = vec![(0, current)];
    let mut converged = false;

    for it in 1..=opts.max_iters {
        match loss {
            Loss::Frobenius => frobenius_step(p, &mut basis, &mut weights),
            Loss::Kl => kl_step(p, &mut basis, &mut weights),
        }
        let next = loss_value(loss, p, &basis, &weights);
        trace.push((it, next));
        let change = (current - next).abs() / current.max(1e-30);
        current = next;
        if change < opts.rel_tol || next == 0.0 {
            converged = true;
            break;
        }
    }

    Ok(Factorization {
        basis,
        weights,
        loss,
        seed,
        trace,
        converged,
    })
}

/// Lowest-loss factorization over `seeds`; ties go to the earlier seed.
pub fn best_of_seeds(
    m: &DataMatrix,
    rank: usize,
    loss: Loss,
    seeds: &[u64],
    opts: &SolverOptions,
) -> Result<Factorization> {
    let mut best: Option<Factorization> = None;
    for &seed in seeds {
        let f = factorize(m, rank, loss, seed, opts)?;
        let better = match &best {
            None => true,
            Some(b) => f.final_loss() < b.final_loss(),
        };
        if better {
            best = Some(f);
        }
    }
    best.ok_or_else(|| Error::Parameter("seed list is empty".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Scale;
    use ndarray::array;

    fn raw(values: Array2<f64>) -> DataMatrix {
        DataMatrix::with_inferred_scale(values).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
    }

    /// Non-increasing up to rounding at the scale of the data.
    fn assert_monotone(m: &DataMatrix, f: &Factorization) {
        let slack = 1e-13 * m.values().iter().map(|v| v * v + v).sum::<f64>();
        for pair in f.trace.windows(2) {
            assert!(
                pair[1].1 <= pair[0].1 + slack,
                "loss increased at iteration {}: {} -> {}",
                pair[1].0,
                pair[0].1,
                pair[1].1
            );
        }
    }

    #[test]
    fn frobenius_error_trivial_cases() {
        let m = raw(array![[1.0]]);
        let zero = Factorization::from_parts(array![[0.0]], array![[0.0]], Loss::Frobenius).unwrap();
        assert_eq!(frobenius_error(&m, &zero).unwrap(), 1.0);
        let exact = Factorization::from_parts(array![[1.0]], array![[1.0]], Loss::Frobenius).unwrap();
        assert_eq!(frobenius_error(&m, &exact).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_error_matches_double_loop() {
        let p = random_matrix(5, 5, 1);
        let b = random_matrix(5, 2, 2);
        let w = random_matrix(2, 5, 3);
        let m = raw(p.clone());
        let f = Factorization::from_parts(b.clone(), w.clone(), Loss::Frobenius).unwrap();
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let approx: f64 = (0..2).map(|r| b[[i, r]] * w[[r, j]]).sum();
                oracle += (p[[i, j]] - approx).powi(2);
            }
        }
        assert!((frobenius_error(&m, &f).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_forms() {
        let m = raw(array![[1.0]]);
        let e = std::f64::consts::E;
        let f = Factorization::from_parts(array![[e]], array![[1.0]], Loss::Kl).unwrap();
        assert!((kl_divergence(&m, &f).unwrap() - (e - 2.0)).abs() < 1e-15);
        let same = Factorization::from_parts(array![[1.0]], array![[1.0]], Loss::Kl).unwrap();
        assert_eq!(kl_divergence(&m, &same).unwrap(), 0.0);
        let zero = Factorization::from_parts(array![[0.0]], array![[1.0]], Loss::Kl).unwrap();
        assert_eq!(kl_divergence(&m, &zero).unwrap(), f64::INFINITY);
    }

    #[test]
    fn kl_matches_direct_sum_with_zero_entries() {
        let mut p = random_matrix(4, 4, 7);
        p[[1, 2]] = 0.0;
        p[[3, 0]] = 0.0;
        let b = random_matrix(4, 3, 8);
        let w = random_matrix(3, 4, 9);
        let m = raw(p.clone());
        let f = Factorization::from_parts(b.clone(), w.clone(), Loss::Kl).unwrap();
        let mut oracle = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let q: f64 = (0..3).map(|r| b[[i, r]] * w[[r, j]]).sum();
                let x = p[[i, j]];
                oracle += if x == 0.0 { q } else { x * (x / q).ln() - x + q };
            }
        }
        assert!((kl_divergence(&m, &f).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn rank_one_outer_product_is_recovered() {
        let u = array![0.2, 1.0, 0.5, 0.0, 0.9];
        let v = array![0.3, 0.8, 1.0, 0.1];
        let p = Array2::from_shape_fn((5, 4), |(i, j)| u[i] * v[j]);
        let m = DataMatrix::new(p.clone(), Scale::Unit).unwrap();
        let opts = SolverOptions {
            max_iters: 5000,
            rel_tol: 1e-15,
            ..Default::default()
        };
        for loss in [Loss::Frobenius, Loss::Kl] {
            let f = factorize(&m, 1, loss, 3, &opts).unwrap();
            assert_monotone(&m, &f);
            let rel = (frobenius_error(&m, &f).unwrap() / p.mapv(|x| x * x).sum()).sqrt();
            assert!(rel <= 1e-8, "{loss}: relative error {rel}");
        }
    }

    #[test]
    fn exact_two_component_mixture_is_fitted() {
        // p(pi|b) columns and p(b,i) drawn at random, then multiplied out
        let mut cond = random_matrix(4, 2, 11);
        for mut col in cond.columns_mut() {
            let s = col.sum();
            col /= s;
        }
        let mut joint_bi = random_matrix(2, 4, 12);
        let s = joint_bi.sum();
        joint_bi /= s;
        let mut p = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                p[[i, j]] = cond[[i, 0]] * joint_bi[[0, j]] + cond[[i, 1]] * joint_bi[[1, j]];
            }
        }
        assert!((p.sum() - 1.0).abs() < 1e-12);
        let m = DataMatrix::new(p.clone(), Scale::Unit).unwrap();
        let opts = SolverOptions {
            max_iters: 20000,
            rel_tol: 1e-14,
            ..Default::default()
        };
        let seeds: Vec<u64> = (0..10).collect();
        let f = best_of_seeds(&m, 2, Loss::Frobenius, &seeds, &opts).unwrap();
        assert!(frobenius_error(&m, &f).unwrap() <= 1e-6);
    }

    #[test]
    fn traces_are_monotone_on_random_data() {
        let m = raw(random_matrix(12, 9, 21));
        for loss in [Loss::Frobenius, Loss::Kl] {
            for seed in 0..3 {
                let f = factorize(&m, 3, loss, seed, &SolverOptions::default()).unwrap();
                assert_monotone(&m, &f);
                assert!(f.basis.iter().chain(f.weights.iter()).all(|&v| v >= 0.0));
                assert_eq!(f.reconstruct().dim(), (12, 9));
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_factorizations() {
        let m = raw(random_matrix(8, 6, 4));
        let a = factorize(&m, 2, Loss::Kl, 17, &SolverOptions::default()).unwrap();
        let b = factorize(&m, 2, Loss::Kl, 17, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_errors() {
        let m = raw(random_matrix(3, 4, 0));
        let opts = SolverOptions::default();
        assert!(matches!(factorize(&m, 0, Loss::Kl, 0, &opts), Err(Error::Parameter(_))));
        assert!(matches!(factorize(&m, 4, Loss::Kl, 0, &opts), Err(Error::Parameter(_))));
        let zero = DataMatrix::new(Array2::zeros((3, 3)), Scale::Unit).unwrap();
        assert!(matches!(
            factorize(&zero, 1, Loss::Frobenius, 0, &opts),
            Err(Error::Degenerate(_))
        ));
        let bad = SolverOptions { rel_tol: 0.0, ..opts };
        assert!(factorize(&m, 1, Loss::Kl, 0, &bad).is_err());
    }

    #[test]
    fn gauge_transform_leaves_product_unchanged() {
        let f = Factorization::from_parts(random_matrix(6, 3, 1), random_matrix(3, 5, 2), Loss::Kl)
            .unwrap();
        let g = f.gauge_transform(&[7.0, 0.25, 3.5]).unwrap();
        let diff = (&f.reconstruct() - &g.reconstruct()).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d <= 1e-12));
        assert!(f.gauge_transform(&[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn save_and_load_round_trip() {
        let m = raw(random_matrix(6, 5, 3));
        let f = factorize(&m, 2, Loss::Frobenius, 5, &SolverOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        f.save(dir.path()).unwrap();
        let back = Factorization::load(dir.path()).unwrap();
        assert_eq!(back.basis, f.basis);
        assert_eq!(back.weights, f.weights);
        assert_eq!(back.final_loss(), f.final_loss());
        assert_eq!(back.seed, 5);
    }
}
