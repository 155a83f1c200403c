//! Injected feature vectors: the "NFV1" file format, a hand-crafted stand-in
//! extractor, and train-split standardization.
//!
//! File layout: `"NFV1" | u32 count | u32 dim | count*dim f32`, all
//! little-endian, rows in manifest order.

use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

use super::image::load_image;
use super::manifest::DatasetManifest;

pub const MAGIC: &[u8; 4] = b"NFV1";
pub const HIST_BINS: usize = 16;
pub const RADIAL_BINS: usize = 16;
/// Length of the unpadded stand-in descriptor for an RGB image.
pub const NATURAL_DIM: usize = 3 * HIST_BINS + 3 * 3 * 3 * 2 + 3 * RADIAL_BINS;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    /// Row-major, `count * dim`.
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        ensure!(dim > 0, Error::Data("feature dimension must be positive".into()));
        ensure!(
            values.len() % dim == 0,
            Error::Data(format!("{} values do not form rows of {dim}", values.len()))
        );
        Ok(FeatureMatrix { dim, values })
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(
            bytes.len() >= 12 && &bytes[..4] == MAGIC,
            Error::Data("not an NFV1 feature file".into())
        );
        let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let expected = 12 + 4 * count * dim;
        ensure!(
            bytes.len() == expected,
            Error::Data(format!(
                "feature file declares {count}x{dim} ({expected} bytes) but holds {}",
                bytes.len()
            ))
        );
        let values = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dim, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Stand-in descriptor for one `[3, H, W]` image in `[0, 1]`:
/// per-channel 16-bin intensity histograms (fractions), mean and variance of
/// each channel over a 3x3 block grid, and per-channel mean intensity in 16
/// concentric rings around the image center. Zero-padded or truncated to
/// `dim`.
pub fn standin_features<T: Real>(image: &Tensor<T>, dim: usize) -> Result<Vec<f32>> {
    let (c, h, w) = image.chw("standin_features")?;
    let x = image.data();
    let plane = h * w;
    let mut f = Vec::with_capacity(NATURAL_DIM);
    for ch in 0..c {
        let mut hist = [0usize; HIST_BINS];
        for &v in &x[ch * plane..(ch + 1) * plane] {
            let b = (v.as_f64().clamp(0.0, 1.0) * HIST_BINS as f64) as usize;
            hist[b.min(HIST_BINS - 1)] += 1;
        }
        f.extend(hist.iter().map(|&n| n as f64 / plane as f64));
    }
    for ch in 0..c {
        for by in 0..3 {
            for bx in 0..3 {
                let (y0, y1) = (by * h / 3, (by + 1) * h / 3);
                let (x0, x1) = (bx * w / 3, (bx + 1) * w / 3);
                let mut sum = 0.0;
                let mut sq = 0.0;
                let n = ((y1 - y0) * (x1 - x0)).max(1) as f64;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let v = x[(ch * h + y) * w + xx].as_f64();
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / n;
                f.push(mean);
                f.push((sq / n - mean * mean).max(0.0));
            }
        }
    }
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let r_max = (cy * cy + cx * cx).sqrt();
    for ch in 0..c {
        let mut sums = [0.0f64; RADIAL_BINS];
        let mut counts = [0usize; RADIAL_BINS];
        for y in 0..h {
            for xx in 0..w {
                let (dy, dx) = (y as f64 + 0.5 - cy, xx as f64 + 0.5 - cx);
                let r = (dy * dy + dx * dx).sqrt() / r_max;
                let b = ((r * RADIAL_BINS as f64) as usize).min(RADIAL_BINS - 1);
                sums[b] += x[(ch * h + y) * w + xx].as_f64();
                counts[b] += 1;
            }
        }
        f.extend(
            sums.iter()
                .zip(&counts)
                .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 }),
        );
    }
    let mut out: Vec<f32> = f.into_iter().map(|v| v as f32).collect();
    out.resize(dim, 0.0);
    Ok(out)
}

/// Stand-in features of every manifest image, computed on the full
/// uncropped image, in manifest order.
pub fn extract_features(manifest: &DatasetManifest, dim: usize) -> Result<FeatureMatrix> {
    ensure!(dim > 0, Error::Config("feature dimension must be positive".into()));
    let mut values = Vec::with_capacity(manifest.len() * dim);
    for i in 0..manifest.len() {
        let img = load_image::<f32>(&manifest.image_path(i))?;
        values.extend(standin_features(&img, dim)?);
    }
    FeatureMatrix::new(dim, values)
}

/// Per-dimension affine standardization fitted on training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance dimensions get unit scale.
    pub fn fit(features: &FeatureMatrix, rows: &[usize]) -> Result<Self> {
        ensure!(!rows.is_empty(), Error::Data("cannot standardize zero rows".into()));
        let d = features.dim;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, &v) in mean.iter_mut().zip(features.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, &v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Real>(&self, row: &[f32]) -> Result<Vec<T>> {
        ensure!(
            row.len() == self.mean.len(),
            Error::shape(
                "standardize",
                format!("row has {} values, statistics cover {}", row.len(), self.mean.len())
            )
        );
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| T::of((v as f64 - m) / s))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_size_is_header_plus_payload() {
        let m = FeatureMatrix::new(4, (0..12).map(|i| i as f32 * 0.5).collect()).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 12 + 48);
        assert_eq!(FeatureMatrix::from_bytes(&bytes).unwrap(), m);
        assert!(FeatureMatrix::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn black_image_puts_all_mass_in_first_bin() {
        let img = Tensor::<f32>::zeros(&[3, 50, 50]);
        let f = standin_features(&img, NATURAL_DIM).unwrap();
        for ch in 0..3 {
            assert_eq!(f[ch * HIST_BINS], 1.0);
            assert!(f[ch * HIST_BINS + 1..(ch + 1) * HIST_BINS].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pads_and_truncates() {
        let img = Tensor::<f32>::filled(&[3, 10, 10], 0.5);
        let long = standin_features(&img, NATURAL_DIM + 5).unwrap();
        assert_eq!(long.len(), NATURAL_DIM + 5);
        assert!(long[NATURAL_DIM..].iter().all(|&v| v == 0.0));
        let short = standin_features(&img, 7).unwrap();
        assert_eq!(short, long[..7].to_vec());
    }

    #[test]
    fn standardizer_centers_training_rows() {
        let m = FeatureMatrix::new(2, vec![1.0, 5.0, 3.0, 5.0, 100.0, 5.0]).unwrap();
        let s = Standardizer::fit(&m, &[0, 1]).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply::<f64>(m.row(0)).unwrap(), vec![-1.0, 0.0]);
        assert!(s.apply::<f64>(&[1.0]).is_err());
    }
}
