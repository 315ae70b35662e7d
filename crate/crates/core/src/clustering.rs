//! Natural clusters: images grouped under the basis that explains them.
//!
//! Image `i` joins the cluster of basis `b` when `p(i|b)` exceeds the image's
//! marginal `p(i)`, i.e. conditioning on `b` makes the image more likely.

use std::path::{Path, PathBuf};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_pgm_p2, DataMatrix};
use crate::error::{Error, Result};
use crate::nmf::Factorization;
use crate::prob_model::PccModel;

/// Relative margin by which `p(i|b)` must exceed `p(i)` to count as larger;
/// keeps rounding noise in a rank-one model out of the clusters.
const EXCESS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub image: usize,
    pub p_i_given_b: f64,
    /// Image marginal of the model, `sum_b p(b, i)`.
    pub p_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Column of the factorization's basis matrix.
    pub basis: usize,
    pub p_b: f64,
    pub members: Vec<Member>,
    /// True when fewer than `k` images qualified.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub require_positive: bool,
    /// Ordered by decreasing `p(b)`, ties by basis index.
    pub clusters: Vec<Cluster>,
}

/// Top `k` images per basis by `p(i|b)`, optionally restricted to images
/// with `p(i|b) > p(i)`. Clusters may overlap.
pub fn natural_clusters(pcc: &PccModel, k: usize, require_positive: bool) -> Result<ClusterReport> {
    if k == 0 {
        return Err(Error::Parameter("cluster size k must be at least 1".into()));
    }
    let marg = pcc.approx_marg_image();
    let mut order: Vec<usize> = (0..pcc.rank()).collect();
    order.sort_by(|&a, &b| pcc.basis_prior[b].total_cmp(&pcc.basis_prior[a]).then(a.cmp(&b)));

    let clusters = order
        .into_iter()
        .map(|b| {
            let row = pcc.cond_image_given_basis.row(b);
            let mut candidates: Vec<usize> = (0..pcc.images())
                .filter(|&i| !require_positive || row[i] > marg[i] * (1.0 + EXCESS_TOLERANCE))
                .collect();
            candidates.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
            let truncated = candidates.len() < k;
            candidates.truncate(k);
            let basis = pcc.kept_bases[b];
            if truncated {
                log::warn!(
                    "basis {basis}: only {} of {k} images qualify",
                    candidates.len()
                );
            }
            Cluster {
                basis,
                p_b: pcc.basis_prior[b],
                members: candidates
                    .into_iter()
                    .map(|i| Member {
                        image: i,
                        p_i_given_b: row[i],
                        p_i: marg[i],
                    })
                    .collect(),
                truncated,
            }
        })
        .collect();
    Ok(ClusterReport {
        k,
        require_positive,
        clusters,
    })
}

fn to_gray(v: ArrayView1<'_, f64>, max: f64) -> Vec<u8> {
    v.iter().map(|&x| {
        if max > 0.0 {
            (x / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MontageEntry {
    file: String,
    basis: usize,
    p_b: f64,
    members: Vec<Member>,
}

/// Writes one PGM strip per cluster (basis image, then its members, left to
/// right) into `dir`, plus `clusters.json` indexing the strips. Basis images
/// are scaled to their own maximum, data images to the data scale.
pub fn export_cluster_montage(
    report: &ClusterReport,
    m: &DataMatrix,
    f: &Factorization,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (h, w) = m
        .pixel_shape()
        .ok_or_else(|| Error::Parameter("image shape unknown; cannot render montage".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bound = m.scale().upper_bound();
    let mut paths = Vec::new();
    let mut index = Vec::new();
    for (pos, cluster) in report.clusters.iter().enumerate() {
        let basis = f.basis.column(cluster.basis);
        let basis_max = basis.iter().cloned().fold(0.0, f64::max);
        let mut tiles: Vec<Vec<u8>> = vec![to_gray(basis, basis_max)];
        for member in &cluster.members {
            tiles.push(to_gray(m.image(member.image), bound));
        }
        let width = w * tiles.len();
        let mut pixels = vec![0u8; width * h];
        for (t, tile) in tiles.iter().enumerate() {
            for y in 0..h {
                pixels[y * width + t * w..y * width + (t + 1) * w]
                    .copy_from_slice(&tile[y * w..(y + 1) * w]);
            }
        }
        let name = format!("cluster_{pos:03}_basis_{}.pgm", cluster.basis);
        let path = dir.join(&name);
        write_pgm_p2(&path, width, h, &pixels)?;
        index.push(MontageEntry {
            file: name,
            basis: cluster.basis,
            p_b: cluster.p_b,
            members: cluster.members.clone(),
        });
        paths.push(path);
    }
    let index_path = dir.join("clusters.json");
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(&index_path, json + "\n").map_err(|e| Error::io(&index_path, e))?;
    Ok(paths)
}
