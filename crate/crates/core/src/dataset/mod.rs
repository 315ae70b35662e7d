//! Image datasets as nonnegative pixel-by-image matrices.
//!
//! Rows index pixels, columns index images. The perturbations here (rescaling,
//! symmetric flip noise, binarization) are the only data manipulations the rest
//! of the crate relies on.

mod io;
mod swimmer;

pub use io::{
    load_matrix, read_csv_array, read_pgm, save_csv, sidecar_path, write_csv_array, write_pgm_p2,
    write_sidecar, MatrixFormat, PgmImage, Sidecar,
};
pub use swimmer::{generate_swimmer, swimmer_parts, swimmer_factors, SwimmerParts, SwimmerSpec};

use ndarray::{s, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value range a [`DataMatrix`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Gray levels in `[0, 255]`.
    Raw255,
    /// Intensities in `[0, 1]`.
    Unit,
}

impl Scale {
    pub fn upper_bound(self) -> f64 {
        match self {
            Scale::Raw255 => 255.0,
            Scale::Unit => 1.0,
        }
    }

    fn infer(values: &Array2<f64>) -> Self {
        if values.iter().any(|&v| v > 1.0) {
            Scale::Raw255
        } else {
            Scale::Unit
        }
    }
}

/// Nonnegative `N x M` matrix, one column per image.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    pixel_shape: Option<(usize, usize)>,
    scale: Scale,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, scale: Scale) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter(format!(
                "data matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        let upper = scale.upper_bound();
        for ((r, c), &v) in values.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!(
                    "entry ({r}, {c}) = {v} is not a finite nonnegative value"
                )));
            }
            if v > upper {
                return Err(Error::Parameter(format!(
                    "entry ({r}, {c}) = {v} exceeds the {scale:?} bound {upper}"
                )));
            }
        }
        Ok(DataMatrix {
            values,
            pixel_shape: None,
            scale,
        })
    }

    /// Builds a matrix whose scale is `Raw255` if any entry exceeds 1.
    pub fn with_inferred_scale(values: Array2<f64>) -> Result<Self> {
        let scale = Scale::infer(&values);
        Self::new(values, scale)
    }

    pub fn with_pixel_shape(mut self, height: usize, width: usize) -> Result<Self> {
        if height * width != self.rows() {
            return Err(Error::Parameter(format!(
                "pixel shape {height}x{width} does not cover {} rows",
                self.rows()
            )));
        }
        self.pixel_shape = Some((height, width));
        Ok(self)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn pixel_shape(&self) -> Option<(usize, usize)> {
        self.pixel_shape
    }

    pub fn image(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.column(i)
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Same geometry and scale, new values. Callers guarantee the bounds.
    fn map_values(&self, values: Array2<f64>, scale: Scale) -> Self {
        DataMatrix {
            values,
            pixel_shape: self.pixel_shape,
            scale,
        }
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn select_columns(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.cols() {
            return Err(Error::Parameter(format!(
                "column range {start}..{end} invalid for {} columns",
                self.cols()
            )));
        }
        Ok(self.map_values(self.values.slice(s![.., start..end]).to_owned(), self.scale))
    }
}

/// Divides raw gray levels by 255.
pub fn rescale(m: &DataMatrix) -> DataMatrix {
    match m.scale {
        Scale::Unit => {
            log::warn!("rescale: matrix is already unit-scaled, leaving it unchanged");
            m.clone()
        }
        Scale::Raw255 => m.map_values(m.values.mapv(|v| v / 255.0), Scale::Unit),
    }
}

fn require_unit(m: &DataMatrix, op: &str) -> Result<()> {
    if m.scale != Scale::Unit {
        return Err(Error::Parameter(format!(
            "{op} needs a unit-scaled matrix; rescale it first"
        )));
    }
    Ok(())
}

/// Symmetric flip noise: each entry becomes `1 - x` with probability `xi`.
///
/// One uniform draw per entry from a ChaCha8 stream seeded with `seed`,
/// consumed in row-major order. An entry flips when its draw is below `xi`.
pub fn apply_flip_noise(m: &DataMatrix, xi: f64, seed: u64) -> Result<DataMatrix> {
    require_unit(m, "flip noise")?;
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::Parameter(format!("noise probability {xi} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.values.clone();
    // Array2 from the standard constructors is row-major, so iter_mut walks rows first.
    for v in out.iter_mut() {
        let u: f64 = rng.random();
        if u < xi {
            *v = 1.0 - *v;
        }
    }
    Ok(m.map_values(out, Scale::Unit))
}

/// Threshold at 0.5: `x >= 0.5` maps to 1, everything else to 0.
pub fn binarize(m: &DataMatrix) -> Result<DataMatrix> {
    require_unit(m, "binarize")?;
    let out = m.values.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok(m.map_values(out, Scale::Unit))
}
