//! How an approximate common-cause model distributes its error.
//!
//! Two diagnostics: the relative error of `p_hat(pi|i)` tends to be larger where
//! `p(pi|i)` is small (anticorrelation), and the approximate conditionals
//! carry more entropy than the data while the bases are sparser than images.

use ndarray::{Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob_model::PccModel;
use crate::stability::cosine_distance_unchecked;

/// Flattened `(pixel, image)` sequences, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSequences {
    /// `|p(pi|i) - p_hat(pi|i)| / p(pi|i)`, zero where `p(pi|i) = 0`.
    pub eps: Array1<f64>,
    /// `p(pi|i)`.
    pub w: Array1<f64>,
    /// `p(pi|i) - p(pi)`.
    pub v: Array1<f64>,
}

pub fn error_sequences(pcc: &PccModel) -> ErrorSequences {
    let (n, m) = (pcc.pixels(), pcc.images());
    let mut eps = Vec::with_capacity(n * m);
    let mut w = Vec::with_capacity(n * m);
    let mut v = Vec::with_capacity(n * m);
    for pi in 0..n {
        let p_pi = pcc.data.marg_pixel[pi];
        for i in 0..m {
            let x = pcc.cond_pixel_given_image[[pi, i]];
            let x_hat = pcc.approx_cond[[pi, i]];
            eps.push(if x == 0.0 { 0.0 } else { (x - x_hat).abs() / x });
            w.push(x);
            v.push(x - p_pi);
        }
    }
    ErrorSequences {
        eps: Array1::from(eps),
        w: Array1::from(w),
        v: Array1::from(v),
    }
}

fn centered(x: ArrayView1<'_, f64>) -> Array1<f64> {
    let mean = x.sum() / x.len() as f64;
    x.mapv(|a| a - mean)
}

fn check_lengths(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Parameter(format!(
            "sequences have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Parameter("correlation needs at least 2 samples".into()));
    }
    Ok(())
}

fn require_nonzero(x: &Array1<f64>, name: &str) -> Result<()> {
    if x.iter().all(|&a| a == 0.0) {
        return Err(Error::UndefinedCorrelation(format!("{name} has zero variance")));
    }
    Ok(())
}

/// Pearson correlation, computed as one minus the cosine distance of the
/// mean-centered sequences.
pub fn pearson(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    check_lengths(x, y)?;
    let (cx, cy) = (centered(x), centered(y));
    require_nonzero(&cx, "first sequence")?;
    require_nonzero(&cy, "second sequence")?;
    Ok((1.0 - cosine_distance_unchecked(cx.view(), cy.view())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anticorrelation {
    /// Correlation of the relative error with `p(pi|i)`.
    pub r_w: f64,
    /// Correlation of the relative error with `p(pi|i) - p(pi)`, the latter
    /// taken as already centered.
    pub r_v: f64,
    /// Number of `(pixel, image)` pairs in each sequence.
    pub length: usize,
}

pub fn anticorrelation_report(pcc: &PccModel) -> Result<Anticorrelation> {
    let seq = error_sequences(pcc);
    let r_w = pearson(seq.eps.view(), seq.w.view())?;
    let ce = centered(seq.eps.view());
    require_nonzero(&seq.v, "v")?;
    let r_v = 1.0 - cosine_distance_unchecked(ce.view(), seq.v.view());
    Ok(Anticorrelation {
        r_w,
        r_v: r_v.clamp(-1.0, 1.0),
        length: seq.eps.len(),
    })
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: ArrayView1<'_, f64>) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// Entropy of `p(pi|i)` per image.
    pub s: Vec<f64>,
    /// Entropy of `p_hat(pi|i)` per image.
    pub s_hat: Vec<f64>,
    /// Images whose data entropy exceeds the model entropy.
    pub violations: usize,
}

pub fn image_entropies(pcc: &PccModel) -> EntropyReport {
    let s: Vec<f64> = pcc
        .cond_pixel_given_image
        .axis_iter(Axis(1))
        .map(entropy)
        .collect();
    let s_hat: Vec<f64> = pcc.approx_cond.axis_iter(Axis(1)).map(entropy).collect();
    let violations = s.iter().zip(&s_hat).filter(|(a, b)| **a > **b + 1e-12).count();
    EntropyReport { s, s_hat, violations }
}

/// `(sqrt(n) - |v|_1 / |v|_2) / (sqrt(n) - 1)`: 0 for a constant vector, 1 for a
/// one-hot vector. Vectors of length 1 count as one-hot; the zero vector scores 0.
pub fn hoyer(v: ArrayView1<'_, f64>) -> f64 {
    let n = v.len();
    if n <= 1 {
        return 1.0;
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let l2: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return 0.0;
    }
    let root = (n as f64).sqrt();
    (root - l1 / l2) / (root - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityComparison {
    /// `sum_i p(i) S(pi|i)`.
    pub lhs: f64,
    /// `sum_b p(b) S(pi|b)`.
    pub rhs: f64,
    pub hoyer_images: f64,
    pub hoyer_bases: f64,
}

pub fn sparsity_comparison(pcc: &PccModel) -> SparsityComparison {
    let lhs = pcc
        .cond_pixel_given_image
        .axis_iter(Axis(1))
        .zip(pcc.data.marg_image.iter())
        .map(|(col, &p)| p * entropy(col))
        .sum();
    let rhs = pcc
        .cond_pixel_given_basis
        .axis_iter(Axis(1))
        .zip(pcc.basis_prior.iter())
        .map(|(col, &p)| p * entropy(col))
        .sum();
    let mean_hoyer = |cols: ndarray::iter::AxisIter<'_, f64, ndarray::Ix1>| {
        let (sum, count) = cols.fold((0.0, 0usize), |(s, c), col| (s + hoyer(col), c + 1));
        sum / count as f64
    };
    SparsityComparison {
        lhs,
        rhs,
        hoyer_images: mean_hoyer(pcc.data.joint.axis_iter(Axis(1))),
        hoyer_bases: mean_hoyer(pcc.cond_pixel_given_basis.axis_iter(Axis(1))),
    }
}

/// Everything the analysis step reports for one factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub anticorrelation: Option<Anticorrelation>,
    pub anticorrelation_error: Option<String>,
    pub entropy_violations: usize,
    pub sparsity: SparsityComparison,
}

pub fn analyze(pcc: &PccModel) -> AnalysisReport {
    let (anticorrelation, anticorrelation_error) = match anticorrelation_report(pcc) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    AnalysisReport {
        anticorrelation,
        anticorrelation_error,
        entropy_violations: image_entropies(pcc).violations,
        sparsity: sparsity_comparison(pcc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pearson_endpoints() {
        let x = array![1.0, 2.0, 4.0, 7.0];
        assert!((pearson(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-12);
        let y = -&x;
        assert!((pearson(x.view(), y.view()).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_constant_input() {
        let x = array![3.0, 3.0, 3.0];
        let y = array![1.0, 2.0, 3.0];
        assert!(matches!(
            pearson(x.view(), y.view()),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(pearson(y.view(), array![1.0].view()), Err(Error::Parameter(_))));
    }

    #[test]
    fn hoyer_endpoints() {
        assert!((hoyer(array![0.0, 0.0, 5.0, 0.0].view()) - 1.0).abs() < 1e-12);
        assert!(hoyer(array![2.0, 2.0, 2.0, 2.0].view()).abs() < 1e-12);
    }

    #[test]
    fn uniform_entropy_is_log_n() {
        let p = Array1::from_elem(7, 1.0 / 7.0);
        assert!((entropy(p.view()) - 7f64.ln()).abs() < 1e-12);
    }
}
