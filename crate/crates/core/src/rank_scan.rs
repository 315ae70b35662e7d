//! Effective-rank estimation.
//!
//! An exact mixture `p(pi, i) = sum_b p(pi|b) p(b, i)` makes every `p(pi|i)` a
//! convex combination of the `p(pi|b)`, so for each pixel-image pair some basis
//! predicts the pixel at most as strongly as the image does and some basis at
//! least as strongly. Scanning the rank and recording the share of pairs for
//! which both brackets exist gives the critical rank `R_c`: the first rank at
//! which (almost) every pair is bracketed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::nmf::{factorize, frobenius_error, Factorization, Loss, SolverOptions};
use crate::prob_model::{derive_pcc, PccModel};
use crate::stability::cosine_distance_unchecked;

/// Relative slack under which two probabilities count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

fn bracketed(value: f64, lo: f64, hi: f64) -> bool {
    if value == 0.0 {
        return true;
    }
    let slack = TIE_TOLERANCE * value;
    lo <= value + slack && hi >= value - slack
}

/// Fraction of `(target, condition)` pairs whose `p(target|condition)` lies
/// between the smallest and largest `p(target|b)`.
///
/// `given_condition` is `targets x conditions` and `bounds` holds the smallest
/// and largest basis conditional per target. Pairs with zero probability
/// always count as bracketed.
fn bracket_fraction(given_condition: &Array2<f64>, bounds: &[(f64, f64)]) -> f64 {
    let total = given_condition.len();
    let mut valid = 0usize;
    for (row, &(lo, hi)) in given_condition.axis_iter(Axis(0)).zip(bounds) {
        valid += row.iter().filter(|&&x| bracketed(x, lo, hi)).count();
    }
    valid as f64 / total as f64
}

fn min_max(v: ArrayView1<'_, f64>) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Share of pixel-image pairs with `min_b p(pi|b) <= p(pi|i) <= max_b p(pi|b)`.
pub fn predictability_fraction(pcc: &PccModel) -> f64 {
    let bounds: Vec<(f64, f64)> = pcc
        .cond_pixel_given_basis
        .axis_iter(Axis(0))
        .map(min_max)
        .collect();
    bracket_fraction(&pcc.cond_pixel_given_image, &bounds)
}

/// Same test with the roles of pixels and images swapped:
/// `min_b p(i|b) <= p(i|pi) <= max_b p(i|b)`.
pub fn dual_predictability_fraction(pcc: &PccModel) -> f64 {
    let joint = &pcc.data.joint;
    // p(i|pi), laid out images x pixels
    let mut given_pixel = joint.t().to_owned();
    for (mut col, &mass) in given_pixel
        .axis_iter_mut(Axis(1))
        .zip(pcc.data.marg_pixel.iter())
    {
        if mass > 0.0 {
            col /= mass;
        }
    }
    let bounds: Vec<(f64, f64)> = pcc
        .cond_image_given_basis
        .axis_iter(Axis(1))
        .map(min_max)
        .collect();
    bracket_fraction(&given_pixel, &bounds)
}

/// Mean pairwise cosine distance between the basis columns.
pub fn mean_internal_distance(f: &Factorization) -> Result<f64> {
    let r = f.rank();
    if r < 2 {
        return Err(Error::Parameter(format!(
            "mean internal distance needs rank >= 2, got {r}"
        )));
    }
    let mut sum = 0.0;
    for a in 0..r {
        for b in a + 1..r {
            sum += cosine_distance_unchecked(f.basis.column(a), f.basis.column(b));
        }
    }
    Ok(2.0 * sum / (r * (r - 1)) as f64)
}

/// Relative root of the sum of squared residuals, `|P - P_hat| / |P|`.
pub fn rrssq(m: &DataMatrix, f: &Factorization) -> Result<f64> {
    let norm_sq: f64 = m.values().iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::Degenerate("rrssq of an all-zero matrix".into()));
    }
    Ok((frobenius_error(m, f)? / norm_sq).sqrt())
}

/// Information criteria for the rank of an `N x M` factorization with
/// residual sum of squares `RSS`.
///
/// All three share the fit term `NM ln(RSS / NM)` and differ in the penalty per
/// rank, following the usual factor-model family:
///
/// * `Bic1`: `R (N + M) ln(NM / (N + M))`
/// * `Bic2`: `R (N + M) ln(min(N, M))`
/// * `Bic3`: `R NM ln(min(N, M)) / min(N, M)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicVariant {
    Bic1,
    Bic2,
    Bic3,
}

impl BicVariant {
    pub const ALL: [BicVariant; 3] = [BicVariant::Bic1, BicVariant::Bic2, BicVariant::Bic3];

    pub fn penalty(self, rows: usize, cols: usize, rank: usize) -> f64 {
        let (n, m, r) = (rows as f64, cols as f64, rank as f64);
        let c = n.min(m);
        match self {
            BicVariant::Bic1 => r * (n + m) * (n * m / (n + m)).ln(),
            BicVariant::Bic2 => r * (n + m) * c.ln(),
            BicVariant::Bic3 => r * n * m * c.ln() / c,
        }
    }

    pub fn fit(rows: usize, cols: usize, rss: f64) -> f64 {
        let nm = (rows * cols) as f64;
        nm * (rss.max(f64::MIN_POSITIVE) / nm).ln()
    }

    pub fn score(self, rows: usize, cols: usize, rank: usize, rss: f64) -> f64 {
        Self::fit(rows, cols, rss) + self.penalty(rows, cols, rank)
    }
}

pub fn bic_scores(m: &DataMatrix, f: &Factorization, variant: BicVariant) -> Result<f64> {
    let rss = frobenius_error(m, f)?;
    Ok(variant.score(m.rows(), m.cols(), f.rank(), rss))
}

/// `tau = 1 / (N M)`: a single invalid pair in the whole dataset.
pub fn tau_single_pair(rows: usize, cols: usize) -> f64 {
    1.0 / (rows * cols) as f64
}

/// `tau = 1 / M`: on average one invalid pixel per image.
pub fn tau_per_image(cols: usize) -> f64 {
    1.0 / cols as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `p(pi|i)` against `p(pi|b)`.
    Primal,
    /// `p(i|pi)` against `p(i|b)`.
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub r_min: usize,
    pub r_max: usize,
    pub tau: f64,
    pub seeds: Vec<u64>,
    pub loss: Loss,
    pub opts: SolverOptions,
    /// Worker threads for the independent `(rank, seed)` runs.
    pub threads: usize,
}

impl ScanConfig {
    pub fn new(r_min: usize, r_max: usize, tau: f64, seeds: Vec<u64>) -> Self {
        ScanConfig {
            r_min,
            r_max,
            tau,
            seeds,
            loss: Loss::Frobenius,
            opts: SolverOptions::default(),
            threads: 1,
        }
    }

    fn validate(&self, m: &DataMatrix) -> Result<()> {
        if self.r_min < 1 || self.r_min > self.r_max {
            return Err(Error::Parameter(format!(
                "rank range {}..={} is empty or starts below 1",
                self.r_min, self.r_max
            )));
        }
        if self.r_max > m.rows().min(m.cols()) {
            return Err(Error::Parameter(format!(
                "r_max {} exceeds min(N, M) = {}",
                self.r_max,
                m.rows().min(m.cols())
            )));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Parameter(format!("tau {} outside [0, 1)", self.tau)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Parameter("seed list is empty".into()));
        }
        self.opts.validate()
    }
}

/// Diagnostics of one `(rank, seed)` factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPoint {
    pub rank: usize,
    pub seed: u64,
    pub valid_fraction: f64,
    pub dual_valid_fraction: f64,
    pub mean_internal_distance: Option<f64>,
    pub frobenius_error: f64,
    pub rrssq: f64,
    pub bic: [f64; 3],
    pub iterations: usize,
    pub converged: bool,
}

impl RankPoint {
    pub fn invalid_fraction(&self, direction: Direction) -> f64 {
        1.0 - match direction {
            Direction::Primal => self.valid_fraction,
            Direction::Dual => self.dual_valid_fraction,
        }
    }
}

/// Per-rank aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: usize,
    pub median_invalid_fraction: f64,
    pub mean_dbar: Option<f64>,
    pub best_frobenius_error: f64,
    pub best_bic: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScanReport {
    pub direction: Direction,
    pub loss: Loss,
    pub ranks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub tau: f64,
    pub rows: usize,
    pub cols: usize,
    /// Every `(rank, seed)` run, ordered by rank then seed.
    pub points: Vec<RankPoint>,
    pub summary: Vec<RankSummary>,
    /// Smallest rank whose median invalid fraction is at most `tau`.
    pub r_c: Option<usize>,
    /// Lowest median invalid fraction seen, with its rank; filled when `r_c` is not found.
    pub best_achieved: Option<(usize, f64)>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs `job` over `0..count` on up to `threads` scoped workers, keeping the
/// results in index order.
pub(crate) fn run_indexed<T, F>(count: usize, threads: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(count.max(1));
    if threads == 1 {
        return (0..count).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..count).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= count {
                    break;
                }
                let out = job(k);
                *slots[k].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("job ran"))
        .collect()
}

/// Factorizes and measures one point of a scan.
pub fn measure_rank_point(
    m: &DataMatrix,
    rank: usize,
    seed: u64,
    loss: Loss,
    opts: &SolverOptions,
) -> Result<(RankPoint, Factorization)> {
    let f = factorize(m, rank, loss, seed, opts)?;
    let pcc = derive_pcc(m, &f)?;
    let err = frobenius_error(m, &f)?;
    let (rows, cols) = (m.rows(), m.cols());
    let point = RankPoint {
        rank,
        seed,
        valid_fraction: predictability_fraction(&pcc),
        dual_valid_fraction: dual_predictability_fraction(&pcc),
        mean_internal_distance: mean_internal_distance(&f).ok(),
        frobenius_error: err,
        rrssq: rrssq(m, &f)?,
        bic: BicVariant::ALL.map(|v| v.score(rows, cols, rank, err)),
        iterations: f.iterations(),
        converged: f.converged,
    };
    Ok((point, f))
}

/// Scans every rank in `r_min..=r_max` with every seed.
pub fn scan_ranks(m: &DataMatrix, cfg: &ScanConfig) -> Result<Vec<RankPoint>> {
    cfg.validate(m)?;
    let jobs: Vec<(usize, u64)> = (cfg.r_min..=cfg.r_max)
        .flat_map(|r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results = run_indexed(jobs.len(), cfg.threads, |k| {
        let (rank, seed) = jobs[k];
        log::debug!("scan: rank {rank}, seed {seed}");
        measure_rank_point(m, rank, seed, cfg.loss, &cfg.opts).map(|(p, _)| p)
    });
    results.into_iter().collect()
}

/// Assembles the report for `direction` from already measured points.
pub fn summarize_scan(
    points: Vec<RankPoint>,
    cfg: &ScanConfig,
    rows: usize,
    cols: usize,
    direction: Direction,
) -> RankScanReport {
    let ranks: Vec<usize> = (cfg.r_min..=cfg.r_max).collect();
    let summary: Vec<RankSummary> = ranks
        .iter()
        .map(|&rank| {
            let at: Vec<&RankPoint> = points.iter().filter(|p| p.rank == rank).collect();
            let mut invalid: Vec<f64> = at.iter().map(|p| p.invalid_fraction(direction)).collect();
            let dbars: Vec<f64> = at.iter().filter_map(|p| p.mean_internal_distance).collect();
            let best_err = at
                .iter()
                .map(|p| p.frobenius_error)
                .fold(f64::INFINITY, f64::min);
            RankSummary {
                rank,
                median_invalid_fraction: median(&mut invalid),
                mean_dbar: if dbars.is_empty() {
                    None
                } else {
                    Some(dbars.iter().sum::<f64>() / dbars.len() as f64)
                },
                best_frobenius_error: best_err,
                best_bic: BicVariant::ALL.map(|v| v.score(rows, cols, rank, best_err)),
            }
        })
        .collect();

    let r_c = summary
        .iter()
        .find(|s| s.median_invalid_fraction <= cfg.tau)
        .map(|s| s.rank);
    let best_achieved = if r_c.is_none() {
        summary
            .iter()
            .min_by(|a, b| a.median_invalid_fraction.total_cmp(&b.median_invalid_fraction))
            .map(|s| (s.rank, s.median_invalid_fraction))
    } else {
        None
    };

    RankScanReport {
        direction,
        loss: cfg.loss,
        ranks,
        seeds: cfg.seeds.clone(),
        tau: cfg.tau,
        rows,
        cols,
        points,
        summary,
        r_c,
        best_achieved,
    }
}

/// Critical rank from the pixel-given-image inequalities.
pub fn estimate_rc(m: &DataMatrix, cfg: &ScanConfig) -> Result<RankScanReport> {
    let points = scan_ranks(m, cfg)?;
    Ok(summarize_scan(points, cfg, m.rows(), m.cols(), Direction::Primal))
}

/// Critical rank from the image-given-pixel inequalities.
pub fn estimate_rc_dual(m: &DataMatrix, cfg: &ScanConfig) -> Result<RankScanReport> {
    let points = scan_ranks(m, cfg)?;
    Ok(summarize_scan(points, cfg, m.rows(), m.cols(), Direction::Dual))
}

impl RankScanReport {
    /// `(rank, score)` using the best-of-seeds residual at each rank.
    pub fn bic_curve(&self, variant: BicVariant) -> Vec<(usize, f64)> {
        let k = BicVariant::ALL.iter().position(|&v| v == variant).expect("listed");
        self.summary.iter().map(|s| (s.rank, s.best_bic[k])).collect()
    }

    pub fn rrssq_curve(&self) -> Vec<(usize, f64)> {
        let norm_sq_ratio = |s: &RankSummary| {
            self.points
                .iter()
                .filter(|p| p.rank == s.rank)
                .map(|p| p.rrssq)
                .fold(f64::INFINITY, f64::min)
        };
        self.summary.iter().map(|s| (s.rank, norm_sq_ratio(s))).collect()
    }

    /// Plot-ready rows: `R,seed,valid_fraction,dual_valid_fraction,dbar,error,rrssq,bic1,bic2,bic3`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("R,seed,valid_fraction,dual_valid_fraction,dbar,error,rrssq,bic1,bic2,bic3\n");
        for p in &self.points {
            let dbar = p.mean_internal_distance.map_or(String::new(), |d| d.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                p.rank,
                p.seed,
                p.valid_fraction,
                p.dual_valid_fraction,
                dbar,
                p.frobenius_error,
                p.rrssq,
                p.bic[0],
                p.bic[1],
                p.bic[2]
            ));
        }
        out
    }
}

/// Ranks of strict interior local minima of a curve sampled on consecutive ranks.
pub fn local_minima(curve: &[(usize, f64)]) -> Vec<usize> {
    curve
        .windows(3)
        .filter(|w| w[1].1 < w[0].1 && w[1].1 < w[2].1)
        .map(|w| w[1].0)
        .collect()
}
