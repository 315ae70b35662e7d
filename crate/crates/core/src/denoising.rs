//! Denoising by low-rank reconstruction.
//!
//! A factorization of corrupted images denoises image `i` when its
//! reconstruction is closer (in cosine distance) to the clean image than the
//! corrupted input was. The ranks at which this holds for all but a few images
//! form the range `[R1, R2]`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::nmf::{factorize, truncated_svd, Factorization, Loss, SolverOptions};
use crate::rank_scan::run_indexed;
use crate::stability::cosine_distance_unchecked;

fn check_same_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Parameter(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

/// Per image, `D(clean, noisy) - D(clean, recon)`; positive means the
/// reconstruction moved towards the clean image.
pub fn margins_from_reconstruction(
    clean: &DataMatrix,
    noisy: &DataMatrix,
    recon: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    check_same_shape(clean.values().dim(), noisy.values().dim(), "clean vs noisy")?;
    check_same_shape(clean.values().dim(), recon.dim(), "clean vs reconstruction")?;
    Ok((0..clean.cols())
        .map(|i| {
            cosine_distance_unchecked(clean.image(i), noisy.image(i))
                - cosine_distance_unchecked(clean.image(i), recon.column(i))
        })
        .collect())
}

pub fn denoise_margins(clean: &DataMatrix, noisy: &DataMatrix, f_noisy: &Factorization) -> Result<Vec<f64>> {
    if f_noisy.basis.nrows() != noisy.rows() || f_noisy.weights.ncols() != noisy.cols() {
        return Err(Error::Parameter("factorization shape disagrees with noisy data".into()));
    }
    margins_from_reconstruction(clean, noisy, f_noisy.reconstruct().view())
}

/// Images whose margin is not strictly positive.
pub fn count_violations(margins: &[f64]) -> usize {
    margins.iter().filter(|&&m| m <= 0.0).count()
}

/// Share of images whose clean original is the unique cosine-nearest clean
/// image to their reconstruction. Ties count as misses.
pub fn accuracy(clean: &DataMatrix, recon: ArrayView2<'_, f64>) -> Result<f64> {
    check_same_shape(clean.values().dim(), recon.dim(), "clean vs reconstruction")?;
    let m = clean.cols();
    let hits = (0..m)
        .filter(|&i| {
            let own = cosine_distance_unchecked(clean.image(i), recon.column(i));
            (0..m).all(|j| j == i || cosine_distance_unchecked(clean.image(j), recon.column(i)) > own)
        })
        .count();
    Ok(hits as f64 / m as f64)
}

/// Centered moving average; the window shrinks at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub exclusions: usize,
    pub seeds: Vec<u64>,
    pub loss: Loss,
    pub opts: SolverOptions,
    /// Also evaluate the truncated SVD at every rank.
    pub svd_baseline: bool,
    pub threads: usize,
}

impl DenoiseConfig {
    pub fn new(exclusions: usize, seeds: Vec<u64>) -> Self {
        DenoiseConfig {
            exclusions,
            seeds,
            loss: Loss::Frobenius,
            opts: SolverOptions::default(),
            svd_baseline: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRow {
    pub rank: usize,
    /// Fewest violations over the seeds.
    pub violations: usize,
    /// Earliest seed reaching that count.
    pub best_seed: u64,
    pub qualifies: bool,
    /// Accuracy of the best seed's reconstruction.
    pub ac_nmf: f64,
    pub ac_svd: Option<f64>,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub exclusions: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<DenoiseRow>,
    /// Smallest qualifying rank.
    pub r1: Option<usize>,
    /// Largest qualifying rank.
    pub r2: Option<usize>,
    pub ac_nmf_smoothed: Vec<f64>,
    pub ac_svd_smoothed: Option<Vec<f64>>,
    /// Set when the corrupted input equals the clean one, so margins only
    /// measure reconstruction error.
    pub degenerate: bool,
    /// Random-guess accuracy, `1 / M`.
    pub ac_random: f64,
}

impl DenoiseReport {
    pub fn qualification_mask(&self) -> Vec<(usize, bool)> {
        self.rows.iter().map(|r| (r.rank, r.qualifies)).collect()
    }

    /// Columns `R,ac_nmf,ac_svd,ac_nmf_smoothed,ac_svd_smoothed,violations`;
    /// SVD columns are empty when the baseline was not run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("R,ac_nmf,ac_svd,ac_nmf_smoothed,ac_svd_smoothed,violations\n");
        for (k, row) in self.rows.iter().enumerate() {
            let svd = row.ac_svd.map_or(String::new(), |a| a.to_string());
            let svd_smooth = self
                .ac_svd_smoothed
                .as_ref()
                .map_or(String::new(), |s| s[k].to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.rank, row.ac_nmf, svd, self.ac_nmf_smoothed[k], svd_smooth, row.violations
            ));
        }
        out
    }
}

struct SeedResult {
    violations: usize,
    ac: f64,
    margins: Vec<f64>,
}

/// Factorizes the corrupted matrix at every listed rank and seed and scores
/// the reconstructions against the clean images.
pub fn denoise_sweep(
    clean: &DataMatrix,
    noisy: &DataMatrix,
    ranks: &[usize],
    cfg: &DenoiseConfig,
) -> Result<DenoiseReport> {
    check_same_shape(clean.values().dim(), noisy.values().dim(), "clean vs noisy")?;
    if ranks.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Parameter("rank list and seed list must be non-empty".into()));
    }
    let max_rank = clean.rows().min(clean.cols());
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0 || r > max_rank) {
        return Err(Error::Parameter(format!("rank {bad} outside 1..={max_rank}")));
    }
    cfg.opts.validate()?;

    let jobs: Vec<(usize, u64)> = ranks
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results = run_indexed(jobs.len(), cfg.threads, |k| -> Result<SeedResult> {
        let (rank, seed) = jobs[k];
        log::debug!("denoise: rank {rank}, seed {seed}");
        let f = factorize(noisy, rank, cfg.loss, seed, &cfg.opts)?;
        let recon = f.reconstruct();
        let margins = margins_from_reconstruction(clean, noisy, recon.view())?;
        Ok(SeedResult {
            violations: count_violations(&margins),
            ac: accuracy(clean, recon.view())?,
            margins,
        })
    });
    let results: Vec<SeedResult> = results.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(ranks.len());
    for (k, &rank) in ranks.iter().enumerate() {
        let chunk = &results[k * cfg.seeds.len()..(k + 1) * cfg.seeds.len()];
        let best = (0..chunk.len())
            .min_by_key(|&s| (chunk[s].violations, s))
            .expect("seed list is non-empty");
        let ac_svd = if cfg.svd_baseline {
            let recon: Array2<f64> = truncated_svd(noisy, rank)?;
            Some(accuracy(clean, recon.view())?)
        } else {
            None
        };
        rows.push(DenoiseRow {
            rank,
            violations: chunk[best].violations,
            best_seed: cfg.seeds[best],
            qualifies: chunk[best].violations <= cfg.exclusions,
            ac_nmf: chunk[best].ac,
            ac_svd,
            margins: chunk[best].margins.clone(),
        });
    }

    let qualifying = rows.iter().filter(|r| r.qualifies).map(|r| r.rank);
    let r1 = qualifying.clone().min();
    let r2 = qualifying.max();
    let nmf_curve: Vec<f64> = rows.iter().map(|r| r.ac_nmf).collect();
    let svd_curve: Option<Vec<f64>> = rows.iter().map(|r| r.ac_svd).collect();
    Ok(DenoiseReport {
        exclusions: cfg.exclusions,
        seeds: cfg.seeds.clone(),
        r1,
        r2,
        ac_nmf_smoothed: moving_average(&nmf_curve, SMOOTHING_WINDOW),
        ac_svd_smoothed: svd_curve.map(|c| moving_average(&c, SMOOTHING_WINDOW)),
        degenerate: clean.values() == noisy.values(),
        ac_random: 1.0 / clean.cols() as f64,
        rows,
    })
}

/// Scans `r_lo..=r_hi` for the range of ranks that denoise all but
/// `exclusions` images.
pub fn find_r_range(
    clean: &DataMatrix,
    noisy: &DataMatrix,
    r_lo: usize,
    r_hi: usize,
    cfg: &DenoiseConfig,
) -> Result<DenoiseReport> {
    if r_lo < 1 || r_lo > r_hi {
        return Err(Error::Parameter(format!("rank range {r_lo}..={r_hi} is empty or starts below 1")));
    }
    let ranks: Vec<usize> = (r_lo..=r_hi).collect();
    denoise_sweep(clean, noisy, &ranks, cfg)
}

/// Accuracy curves of the factorization and the truncated SVD on the same
/// corrupted input.
pub fn compare_with_svd(
    clean: &DataMatrix,
    distorted: &DataMatrix,
    ranks: &[usize],
    cfg: &DenoiseConfig,
) -> Result<DenoiseReport> {
    let cfg = DenoiseConfig {
        svd_baseline: true,
        ..cfg.clone()
    };
    denoise_sweep(clean, distorted, ranks, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_truncates_at_edges() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = moving_average(&v, 5);
        assert_eq!(s[0], 2.0);
        assert_eq!(s[1], 2.5);
        assert_eq!(s[2], 3.0);
        assert_eq!(s[5], 5.0);
    }

    #[test]
    fn violations_count_non_positive_margins() {
        assert_eq!(count_violations(&[0.1, 0.0, -0.2, 0.3]), 2);
    }
}
