//! Probability models read off a data matrix and its factorization.
//!
//! Normalizing `P` gives the joint `p(pi, i)`. Normalizing each basis column
//! gives `p(pi|b)`, and the weights, carrying the basis column mass, give
//! `p(b, i)`. The product `sum_b p(pi|b) p(b, i)` is the mixture approximation
//! `p_hat(pi, i)`. None of these depend on how the mass is split between a
//! basis column and its weight row.

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::nmf::Factorization;

/// `p(pi, i) = P / sum(P)` and its marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub joint: Array2<f64>,
    pub marg_pixel: Array1<f64>,
    pub marg_image: Array1<f64>,
    /// Total mass of the unnormalized matrix.
    pub total: f64,
}

pub fn to_joint(m: &DataMatrix) -> Result<JointModel> {
    let total = m.total();
    if !(total > 0.0) {
        return Err(Error::Degenerate("matrix has no positive entry".into()));
    }
    let joint = m.values() / total;
    let marg_pixel = joint.sum_axis(Axis(1));
    let marg_image = joint.sum_axis(Axis(0));
    Ok(JointModel {
        joint,
        marg_pixel,
        marg_image,
        total,
    })
}

/// The mixture family derived from a factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct PccModel {
    pub data: JointModel,
    /// `p(pi|b)`, N x R, columns sum to 1.
    pub cond_pixel_given_basis: Array2<f64>,
    /// `p(b, i)`, R x M, sums to 1.
    pub joint_basis_image: Array2<f64>,
    /// `p(b)`.
    pub basis_prior: Array1<f64>,
    /// `p(i|b)`, zero rows where `p(b) = 0`.
    pub cond_image_given_basis: Array2<f64>,
    /// `p(pi|i)` from the data.
    pub cond_pixel_given_image: Array2<f64>,
    /// `p_hat(pi|i)` from the mixture.
    pub approx_cond: Array2<f64>,
    /// `p_hat(pi, i) = sum_b p(pi|b) p(b, i)`.
    pub approx_joint: Array2<f64>,
    /// Indices into the factorization's bases that survived (nonzero columns).
    pub kept_bases: Vec<usize>,
}

impl PccModel {
    pub fn rank(&self) -> usize {
        self.basis_prior.len()
    }

    pub fn pixels(&self) -> usize {
        self.data.joint.nrows()
    }

    pub fn images(&self) -> usize {
        self.data.joint.ncols()
    }

    /// `p_hat(i) = sum_b p(b, i)`.
    pub fn approx_marg_image(&self) -> Array1<f64> {
        self.joint_basis_image.sum_axis(Axis(0))
    }
}

fn normalize_columns(a: &Array2<f64>, what: &str) -> Result<Array2<f64>> {
    let sums = a.sum_axis(Axis(0));
    if let Some(i) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Degenerate(format!("{what} column {i} has zero mass")));
    }
    Ok(a / &sums)
}

/// Builds every probability of the mixture model from `f`.
///
/// Basis columns with zero mass are dropped (with a warning), reducing the
/// rank. `p(b, i)` is normalized by the mass of the reconstruction so that it
/// sums to one even when the fit does not conserve the total exactly.
pub fn derive_pcc(m: &DataMatrix, f: &Factorization) -> Result<PccModel> {
    if f.basis.nrows() != m.rows() || f.weights.ncols() != m.cols() {
        return Err(Error::Parameter(format!(
            "factorization is {}x{} but data is {}x{}",
            f.basis.nrows(),
            f.weights.ncols(),
            m.rows(),
            m.cols()
        )));
    }
    let data = to_joint(m)?;
    let cond_pixel_given_image = normalize_columns(m.values(), "image")?;

    let masses = f.basis.sum_axis(Axis(0));
    let kept_bases: Vec<usize> = (0..f.rank()).filter(|&b| masses[b] > 0.0).collect();
    if kept_bases.len() < f.rank() {
        log::warn!(
            "dropping {} zero-mass basis column(s); rank reduced to {}",
            f.rank() - kept_bases.len(),
            kept_bases.len()
        );
    }
    if kept_bases.is_empty() {
        return Err(Error::Degenerate("every basis column is zero".into()));
    }
    let basis = f.basis.select(Axis(1), &kept_bases);
    let weights = f.weights.select(Axis(0), &kept_bases);
    let masses = masses.select(Axis(0), &kept_bases);

    let cond_pixel_given_basis = &basis / &masses;
    let mut joint_basis_image = &weights * &masses.view().insert_axis(Axis(1));
    let approx_total = joint_basis_image.sum();
    if !(approx_total > 0.0) {
        return Err(Error::Degenerate("reconstruction has zero mass".into()));
    }
    joint_basis_image /= approx_total;

    let basis_prior = joint_basis_image.sum_axis(Axis(1));
    let mut cond_image_given_basis = joint_basis_image.clone();
    for (mut row, &prior) in cond_image_given_basis
        .axis_iter_mut(Axis(0))
        .zip(basis_prior.iter())
    {
        if prior > 0.0 {
            row /= prior;
        } else {
            row.fill(0.0);
        }
    }

    let approx_joint = cond_pixel_given_basis.dot(&joint_basis_image);
    let approx_cond = normalize_columns(&approx_joint, "reconstructed image")?;

    Ok(PccModel {
        data,
        cond_pixel_given_basis,
        joint_basis_image,
        basis_prior,
        cond_image_given_basis,
        cond_pixel_given_image,
        approx_cond,
        approx_joint,
        kept_bases,
    })
}

/// Largest relative deviation of the row sums and of the column sums of the
/// reconstruction from those of the data.
///
/// Rows or columns whose data sum is zero are measured against the mean sum
/// along the same axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalResiduals {
    pub row: f64,
    pub col: f64,
}

pub fn marginal_residuals(m: &DataMatrix, f: &Factorization) -> Result<MarginalResiduals> {
    if f.basis.nrows() != m.rows() || f.weights.ncols() != m.cols() {
        return Err(Error::Parameter("factorization shape disagrees with data".into()));
    }
    let approx = f.reconstruct();
    let worst = |axis: Axis| {
        let data = m.values().sum_axis(axis);
        let fit = approx.sum_axis(axis);
        let mean = data.mean().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        data.iter()
            .zip(fit.iter())
            .map(|(&d, &h)| (d - h).abs() / if d > 0.0 { d } else { mean })
            .fold(0.0, f64::max)
    };
    Ok(MarginalResiduals {
        row: worst(Axis(1)),
        col: worst(Axis(0)),
    })
}
