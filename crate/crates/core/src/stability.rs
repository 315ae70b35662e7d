//! Cosine distances between basis images and their optimal pairing.
//!
//! Two factorizations of related data are compared by solving the square
//! assignment problem on the cosine-distance matrix between their bases.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_flip_noise, DataMatrix};
use crate::error::{Error, Result};
use crate::nmf::{factorize, Factorization, Loss, SolverOptions};

/// `1 - <a, b> / (|a| |b|)`, defined as 1 when either vector is zero.
pub fn cosine_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!(
            "vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_distance_unchecked(a, b))
}

pub(crate) fn cosine_distance_unchecked(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 1.0;
    }
    1.0 - ab / (aa * bb).sqrt()
}

/// `cost[a][b] = D(left column a, right column b)`.
pub fn cosine_cost_matrix(left: ArrayView2<'_, f64>, right: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if left.nrows() != right.nrows() {
        return Err(Error::Parameter(format!(
            "column length mismatch: {} vs {}",
            left.nrows(),
            right.nrows()
        )));
    }
    Ok(Array2::from_shape_fn((left.ncols(), right.ncols()), |(a, b)| {
        cosine_distance_unchecked(left.column(a), right.column(b))
    }))
}

/// Shortest augmenting path Hungarian method with row and column potentials.
/// Returns the column assigned to each row and the potentials `(u, v)` such that
/// `cost[i][j] - u[i] - v[j] >= 0` with equality on the assignment.
fn hungarian(cost: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    // one-based, index 0 is the virtual row/column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Among all optimal assignments, moves to the lexicographically smallest.
///
/// Every optimal assignment uses only edges of zero reduced cost under the
/// optimal potentials, so it suffices to walk the rows in order and give each
/// the smallest tight column that still leaves a perfect matching for the rows
/// after it.
fn lexicographic_refine(cost: &Array2<f64>, assignment: &mut [usize], u: &[f64], v: &[f64]) {
    let n = assignment.len();
    let scale = cost.iter().fold(1.0f64, |m, &c| m.max(c.abs()));
    let tol = 1e-11 * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| cost[[i, j]] - u[i] - v[j] <= tol).collect())
        .collect();
    let mut row_of = vec![0usize; n];
    for (i, &j) in assignment.iter().enumerate() {
        row_of[j] = i;
    }
    let mut fixed = vec![false; n];

    for r in 0..n {
        for c in 0..assignment[r] {
            if !tight[r][c] || fixed[row_of[c]] {
                continue;
            }
            let displaced = row_of[c];
            let freed = assignment[r];
            let mut visited = vec![false; n];
            visited[c] = true;
            let mut path = Vec::new();
            if augment(displaced, freed, &tight, &fixed, r, &row_of, &mut visited, &mut path) {
                assignment[r] = c;
                row_of[c] = r;
                // path holds (row, new column) pairs starting at the displaced row
                for &(i, j) in &path {
                    assignment[i] = j;
                    row_of[j] = i;
                }
                break;
            }
        }
        fixed[r] = true;
    }
}

/// Depth-first alternating path from `row` to the column `target`, through
/// tight edges and rows that are neither fixed nor `skip`.
#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    tight: &[Vec<bool>],
    fixed: &[bool],
    skip: usize,
    row_of: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for col in 0..tight.len() {
        if visited[col] || !tight[row][col] {
            continue;
        }
        visited[col] = true;
        if col == target {
            path.push((row, col));
            return true;
        }
        let next = row_of[col];
        if next == skip || fixed[next] {
            continue;
        }
        path.push((row, col));
        if augment(next, target, tight, fixed, skip, row_of, visited, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Minimum-cost perfect matching of a square cost matrix; among optimal
/// matchings the lexicographically smallest assignment vector is returned.
pub fn solve_assignment(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::Parameter(format!("cost matrix is {n}x{m}, expected square")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Parameter("cost matrix has non-finite entries".into()));
    }
    let (mut assignment, u, v) = hungarian(cost);
    lexicographic_refine(cost, &mut assignment, &u, &v);
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
}

impl DistanceStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(DistanceStats {
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1],
            min: sorted[0],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `assignment[a]` is the right-hand basis paired with left-hand basis `a`.
    pub assignment: Vec<usize>,
    pub distances: Vec<f64>,
    pub total: f64,
    pub stats: DistanceStats,
}

impl Matching {
    pub fn from_cost(cost: &Array2<f64>) -> Result<Self> {
        let assignment = solve_assignment(cost)?;
        let distances: Vec<f64> = assignment
            .iter()
            .enumerate()
            .map(|(a, &b)| cost[[a, b]])
            .collect();
        let stats = DistanceStats::of(&distances)
            .ok_or_else(|| Error::Parameter("cannot match empty basis sets".into()))?;
        Ok(Matching {
            total: distances.iter().sum(),
            assignment,
            distances,
            stats,
        })
    }
}

/// Pairs the columns of two `N x R` basis matrices minimizing the summed
/// cosine distance.
pub fn match_bases(b1: ArrayView2<'_, f64>, b2: ArrayView2<'_, f64>) -> Result<Matching> {
    if b1.dim() != b2.dim() {
        return Err(Error::Parameter(format!(
            "basis shapes differ: {:?} vs {:?}",
            b1.dim(),
            b2.dim()
        )));
    }
    Matching::from_cost(&cosine_cost_matrix(b1, b2)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub pct: f64,
}

/// Twenty equal bins on `[0, 1]` plus one overflow bin for `(1, 2]`.
/// Bins are closed on the left except the last regular bin, which also takes 1.
pub fn histogram(distances: &[f64]) -> Vec<HistogramBin> {
    const BINS: usize = 20;
    let mut counts = [0usize; BINS + 1];
    for &d in distances {
        let k = if d > 1.0 {
            BINS
        } else {
            ((d.max(0.0) * BINS as f64) as usize).min(BINS - 1)
        };
        counts[k] += 1;
    }
    let total = distances.len().max(1) as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &count)| {
            let (lo, hi) = if k == BINS {
                (1.0, 2.0)
            } else {
                (k as f64 / BINS as f64, (k + 1) as f64 / BINS as f64)
            };
            HistogramBin {
                lo,
                hi,
                count,
                pct: 100.0 * count as f64 / total,
            }
        })
        .collect()
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,pct\n");
    for b in bins {
        out.push_str(&format!("{},{},{},{}\n", b.lo, b.hi, b.count, b.pct));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMode {
    /// Clean first half of the images against a flip-noised second half,
    /// both factorized with the same seed.
    NoiseSplit,
    /// The full matrix factorized with two different seeds.
    SeedPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub rank: usize,
    pub mode: StabilityMode,
    pub xi: f64,
    pub seed_a: u64,
    pub seed_b: u64,
    pub loss: Loss,
    pub opts: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityOutcome {
    pub mode: StabilityMode,
    pub rank: usize,
    pub xi: f64,
    pub seed_a: u64,
    pub seed_b: u64,
    pub matching: Matching,
    pub histogram: Vec<HistogramBin>,
    pub final_losses: [Option<f64>; 2],
}

/// Factorizes both sides of the experiment and matches their bases.
///
/// In split mode the noise stream is seeded with `seed_b`, and both halves are
/// factorized with `seed_a`.
pub fn stability_experiment(m: &DataMatrix, cfg: &StabilityConfig) -> Result<StabilityOutcome> {
    let (left, right): (Factorization, Factorization) = match cfg.mode {
        StabilityMode::NoiseSplit => {
            if !m.cols().is_multiple_of(2) {
                return Err(Error::Parameter(format!(
                    "split mode needs an even number of images, got {}",
                    m.cols()
                )));
            }
            let half = m.cols() / 2;
            let first = m.select_columns(0, half)?;
            let second = apply_flip_noise(&m.select_columns(half, m.cols())?, cfg.xi, cfg.seed_b)?;
            (
                factorize(&first, cfg.rank, cfg.loss, cfg.seed_a, &cfg.opts)?,
                factorize(&second, cfg.rank, cfg.loss, cfg.seed_a, &cfg.opts)?,
            )
        }
        StabilityMode::SeedPair => (
            factorize(m, cfg.rank, cfg.loss, cfg.seed_a, &cfg.opts)?,
            factorize(m, cfg.rank, cfg.loss, cfg.seed_b, &cfg.opts)?,
        ),
    };
    let matching = match_bases(left.basis.view(), right.basis.view())?;
    Ok(StabilityOutcome {
        mode: cfg.mode,
        rank: cfg.rank,
        xi: cfg.xi,
        seed_a: cfg.seed_a,
        seed_b: cfg.seed_b,
        histogram: histogram(&matching.distances),
        matching,
        final_losses: [left.final_loss(), right.final_loss()],
    })
}
