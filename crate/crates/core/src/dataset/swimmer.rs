//! Synthetic "swimmer" images: a fixed torso plus four limbs, each limb in one
//! of four positions, giving 4^4 = 256 binary 13x13 images.
//!
//! Layout on the 13x13 grid (row, col), torso in column 6:
//!
//! * torso: rows 1..=11 of column 6 (11 pixels, present in every image);
//! * each limb is a 2-pixel segment; arms hang off row 3, legs off row 9,
//!   left limbs use columns 4-5 and right limbs mirror them onto 7-8.
//!
//! All 16 limb variants are pixel-disjoint from each other and from the torso,
//! so the matrix is exactly the sum of 17 binary parts. Two images with no limb
//! in common overlap only on the torso, giving a cosine distance of
//! `1 - 11/19 ~= 0.421` between them.

use ndarray::Array2;

use super::{DataMatrix, Scale};
use crate::error::{Error, Result};

const SIDE: usize = 13;
const TORSO_COL: usize = 6;

/// Left-arm positions; the right arm is the mirror image.
const ARM: [[(usize, usize); 2]; 4] = [
    [(3, 5), (3, 4)],
    [(2, 5), (1, 4)],
    [(4, 5), (5, 4)],
    [(1, 5), (0, 5)],
];

/// Left-leg positions; the right leg is the mirror image.
const LEG: [[(usize, usize); 2]; 4] = [
    [(9, 5), (9, 4)],
    [(8, 5), (7, 4)],
    [(10, 5), (11, 4)],
    [(11, 5), (12, 5)],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwimmerSpec {
    pub image_side: usize,
    pub limb_positions: usize,
    pub limb_count: usize,
}

impl Default for SwimmerSpec {
    fn default() -> Self {
        SwimmerSpec {
            image_side: SIDE,
            limb_positions: 4,
            limb_count: 4,
        }
    }
}

impl SwimmerSpec {
    fn validate(&self) -> Result<()> {
        if *self != SwimmerSpec::default() {
            return Err(Error::Config(format!(
                "only the 13x13 swimmer with 4 limbs in 4 positions is supported, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn image_count(&self) -> usize {
        self.limb_positions.pow(self.limb_count as u32)
    }

    pub fn pixel_count(&self) -> usize {
        self.image_side * self.image_side
    }
}

/// Pixel index sets (row-major flattened) of the torso and every limb variant.
#[derive(Debug, Clone)]
pub struct SwimmerParts {
    pub torso: Vec<usize>,
    /// `limbs[l][p]` is limb `l` in position `p`.
    pub limbs: Vec<Vec<Vec<usize>>>,
}

impl SwimmerParts {
    /// Limb positions of image `i`: limb `l` sits in position `(i / 4^l) % 4`.
    pub fn positions_of(&self, image: usize) -> Vec<usize> {
        let k = self.limbs[0].len();
        (0..self.limbs.len())
            .map(|l| (image / k.pow(l as u32)) % k)
            .collect()
    }
}

fn flat(r: usize, c: usize) -> usize {
    r * SIDE + c
}

fn mirror(cells: &[(usize, usize); 2]) -> Vec<usize> {
    cells
        .iter()
        .map(|&(r, c)| flat(r, 2 * TORSO_COL - c))
        .collect()
}

fn plain(cells: &[(usize, usize); 2]) -> Vec<usize> {
    cells.iter().map(|&(r, c)| flat(r, c)).collect()
}

pub fn swimmer_parts(spec: &SwimmerSpec) -> Result<SwimmerParts> {
    spec.validate()?;
    let torso = (1..=11).map(|r| flat(r, TORSO_COL)).collect();
    let limbs = vec![
        ARM.iter().map(plain).collect(),
        ARM.iter().map(mirror).collect(),
        LEG.iter().map(plain).collect(),
        LEG.iter().map(mirror).collect(),
    ];
    Ok(SwimmerParts { torso, limbs })
}

/// The 17 binary parts as columns of `B` (torso first, then limb-major) and
/// their 0/1 memberships as `W`, so that `B W` is the swimmer matrix.
pub fn swimmer_factors(spec: &SwimmerSpec) -> Result<(Array2<f64>, Array2<f64>)> {
    let parts = swimmer_parts(spec)?;
    let n = spec.pixel_count();
    let m = spec.image_count();
    let k = spec.limb_positions;
    let rank = 1 + spec.limb_count * k;

    let mut basis = Array2::zeros((n, rank));
    for &p in &parts.torso {
        basis[[p, 0]] = 1.0;
    }
    for (l, limb) in parts.limbs.iter().enumerate() {
        for (pos, pixels) in limb.iter().enumerate() {
            for &p in pixels {
                basis[[p, 1 + l * k + pos]] = 1.0;
            }
        }
    }

    let mut weights = Array2::zeros((rank, m));
    for i in 0..m {
        weights[[0, i]] = 1.0;
        for (l, pos) in parts.positions_of(i).into_iter().enumerate() {
            weights[[1 + l * k + pos, i]] = 1.0;
        }
    }
    Ok((basis, weights))
}

/// Deterministic 169x256 binary swimmer matrix.
pub fn generate_swimmer(spec: &SwimmerSpec) -> Result<DataMatrix> {
    let parts = swimmer_parts(spec)?;
    let mut values = Array2::zeros((spec.pixel_count(), spec.image_count()));
    for i in 0..spec.image_count() {
        for &p in &parts.torso {
            values[[p, i]] = 1.0;
        }
        for (l, pos) in parts.positions_of(i).into_iter().enumerate() {
            for &p in &parts.limbs[l][pos] {
                values[[p, i]] = 1.0;
            }
        }
    }
    DataMatrix::new(values, Scale::Unit)?.with_pixel_shape(spec.image_side, spec.image_side)
}
