use nalgebra::DMatrix;
use ndarray::Array2;

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};

/// Best rank-`rank` approximation of `m` in Frobenius norm. Entries may be negative.
pub fn truncated_svd(m: &DataMatrix, rank: usize) -> Result<Array2<f64>> {
    let (n, cols) = (m.rows(), m.cols());
    if rank < 1 || rank > n.min(cols) {
        return Err(Error::Parameter(format!(
            "rank {rank} outside 1..={}",
            n.min(cols)
        )));
    }
    let a = DMatrix::from_fn(n, cols, |i, j| m.values()[[i, j]]);
    let svd = a.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]).then(x.cmp(&y)));

    let mut out = Array2::zeros((n, cols));
    for &k in order.iter().take(rank) {
        let sk = s[k];
        for i in 0..n {
            let ui = u[(i, k)] * sk;
            if ui == 0.0 {
                continue;
            }
            for j in 0..cols {
                out[[i, j]] += ui * vt[(k, j)];
            }
        }
    }
    Ok(out)
}
