//! CSV and PGM ingestion plus CSV/JSON output for data matrices.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataMatrix, Scale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    /// One row per pixel, comma separated, no header.
    Csv,
    /// Directory of equal-sized PGM images, one column each, in filename order.
    PgmDir,
}

/// Metadata written next to every CSV matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: usize,
    pub cols: usize,
    pub scale: Scale,
    pub source: String,
    pub seed: Option<u64>,
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl Sidecar {
    pub fn for_matrix(m: &DataMatrix, source: impl Into<String>) -> Self {
        Sidecar {
            rows: m.rows(),
            cols: m.cols(),
            scale: m.scale(),
            source: source.into(),
            seed: None,
            xi: None,
            height: m.pixel_shape().map(|s| s.0),
            width: m.pixel_shape().map(|s| s.1),
        }
    }
}

/// `swim.csv` -> `swim.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<DataMatrix> {
    let m = match format {
        MatrixFormat::Csv => {
            let values = read_csv_array(path)?;
            check_nonnegative(path, &values)?;
            let mut m = DataMatrix::with_inferred_scale(values)
                .map_err(|e| Error::format(path, e.to_string()))?;
            if let Some(sc) = read_sidecar(&sidecar_path(path)) {
                if let (Some(h), Some(w)) = (sc.height, sc.width) {
                    if h * w == m.rows() {
                        m = m.with_pixel_shape(h, w)?;
                    }
                }
            }
            m
        }
        MatrixFormat::PgmDir => load_pgm_dir(path)?,
    };
    reject_empty_images(path, &m)?;
    Ok(m)
}

fn read_sidecar(path: &Path) -> Option<Sidecar> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn check_nonnegative(path: &Path, values: &Array2<f64>) -> Result<()> {
    for ((r, c), &v) in values.indexed_iter() {
        if v < 0.0 || !v.is_finite() {
            return Err(Error::format(
                path,
                format!("row {}, column {}: value {v} is not nonnegative", r + 1, c + 1),
            ));
        }
    }
    Ok(())
}

fn reject_empty_images(path: &Path, m: &DataMatrix) -> Result<()> {
    for i in 0..m.cols() {
        if m.image(i).iter().all(|&v| v == 0.0) {
            return Err(Error::format(
                path,
                format!("image (column) {} is entirely zero", i + 1),
            ));
        }
    }
    Ok(())
}

/// Plain numeric CSV into a dense array. Errors name 1-based row/column.
pub fn read_csv_array(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(
                    path,
                    format!("row {}, column {}: cannot parse {field:?}", lineno + 1, col + 1),
                )
            })?;
            data.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::format(
                    path,
                    format!("row {} has {count} fields, expected {w}", lineno + 1),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = width.ok_or_else(|| Error::format(path, "no data rows"))?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row widths checked"))
}

/// Writes every entry with Rust's shortest round-trip float formatting.
pub fn write_csv_array(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 4);
    for row in values.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_csv(path: &Path, m: &DataMatrix) -> Result<()> {
    write_csv_array(path, m.values())
}

pub fn write_sidecar(csv_path: &Path, sidecar: &Sidecar) -> Result<()> {
    let path = sidecar_path(csv_path);
    let text = serde_json::to_string_pretty(sidecar)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// A decoded grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub pixels: Vec<u32>,
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_token(&mut self) -> Option<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()
    }

    fn next_uint(&mut self) -> Option<u32> {
        self.next_token()?.parse().ok()
    }
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut tok = Tokens { bytes: &bytes, pos: 0 };
    let magic = tok
        .next_token()
        .ok_or_else(|| Error::format(path, "empty file"))?;
    let binary = match magic {
        "P2" => false,
        "P5" => true,
        other => return Err(Error::format(path, format!("unsupported magic {other:?}"))),
    };
    let bad_header = || Error::format(path, "malformed PGM header");
    let width = tok.next_uint().ok_or_else(bad_header)? as usize;
    let height = tok.next_uint().ok_or_else(bad_header)? as usize;
    let maxval = tok.next_uint().ok_or_else(bad_header)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad_header());
    }
    let count = width * height;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tok.pos + 1;
        let sample = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(start..start + count * sample)
            .ok_or_else(|| Error::format(path, "truncated P5 raster"))?;
        if sample == 1 {
            pixels.extend(raster.iter().map(|&b| b as u32));
        } else {
            pixels.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32),
            );
        }
    } else {
        for k in 0..count {
            let v = tok.next_uint().ok_or_else(|| {
                Error::format(path, format!("missing or invalid sample {}", k + 1))
            })?;
            pixels.push(v);
        }
    }
    if let Some(k) = pixels.iter().position(|&v| v > maxval) {
        return Err(Error::format(path, format!("sample {} exceeds maxval", k + 1)));
    }
    Ok(PgmImage {
        width,
        height,
        maxval,
        pixels,
    })
}

pub fn write_pgm_p2(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Samples are mapped onto `[0, 255]` when `maxval != 255`.
fn load_pgm_dir(dir: &Path) -> Result<DataMatrix> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format(dir, "no .pgm files found"));
    }

    let mut shape = None;
    let mut columns = Vec::with_capacity(files.len());
    for file in &files {
        let img = read_pgm(file)?;
        match shape {
            None => shape = Some((img.height, img.width)),
            Some(s) if s != (img.height, img.width) => {
                return Err(Error::format(
                    file,
                    format!(
                        "image is {}x{}, expected {}x{}",
                        img.height, img.width, s.0, s.1
                    ),
                ))
            }
            _ => {}
        }
        let factor = 255.0 / img.maxval as f64;
        columns.push(
            img.pixels
                .iter()
                .map(|&v| if img.maxval == 255 { v as f64 } else { v as f64 * factor })
                .collect::<Vec<_>>(),
        );
    }
    let (h, w) = shape.expect("at least one file");
    let n = h * w;
    let values = Array2::from_shape_fn((n, columns.len()), |(p, i)| columns[i][p]);
    DataMatrix::with_inferred_scale(values)?.with_pixel_shape(h, w)
}
