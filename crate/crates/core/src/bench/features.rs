//! Fixed per-pixel featurizer: raw channels, local statistics and a seeded
//! bank of zero-sum 3x3 filters, standardized with statistics fitted once.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::render::LabeledImage;
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

const LOCAL_RADIUS: isize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    /// Each filter is 3 channels x 3 x 3, flattened channel-major.
    filters: Vec<Vec<f64>>,
    shift: Vec<f64>,
    scale: Vec<f64>,
    fitted: bool,
}

impl Featurizer {
    pub const BASE_CHANNELS: usize = 9;

    pub fn new(n_filters: usize, seed: u64) -> Result<Self> {
        let dim = Self::BASE_CHANNELS + n_filters;
        if !(16..=64).contains(&dim) {
            return Err(Error::Config(format!(
                "featurizer dimension {dim} outside [16, 64]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filters = (0..n_filters)
            .map(|_| {
                let mut w: Vec<f64> = (0..27).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mean = w.iter().sum::<f64>() / 27.0;
                let norm = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
                for v in &mut w {
                    *v = (*v - mean) / norm;
                }
                w
            })
            .collect();
        Ok(Self {
            filters,
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
            fitted: false,
        })
    }

    pub fn dim(&self) -> usize {
        Self::BASE_CHANNELS + self.filters.len()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    /// Fits per-channel standardization on the given images. Only legal once.
    pub fn fit(&mut self, images: &[LabeledImage]) -> Result<()> {
        if self.fitted {
            return Err(Error::State("featurizer already fitted".into()));
        }
        if images.is_empty() {
            return Err(Error::State("cannot fit featurizer on no images".into()));
        }
        let d = self.dim();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for img in images {
            let raw = self.raw(img);
            for row in raw.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        for j in 0..d {
            let mean = sum[j] / n as f64;
            let var = (sq[j] / n as f64 - mean * mean).max(0.0);
            self.shift[j] = mean;
            // Unit variance per channel, then 1/sqrt(D) so pixel vectors have unit mean energy.
            let unit = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
            self.scale[j] = unit / (d as f64).sqrt();
        }
        self.fitted = true;
        Ok(())
    }

    /// Replaces the standardization statistics; used only by unfrozen configurations.
    pub fn refit(&mut self, images: &[LabeledImage]) -> Result<()> {
        self.fitted = false;
        self.fit(images)
    }

    /// Unstandardized features, one row per pixel in row-major order.
    fn raw(&self, img: &LabeledImage) -> Array2<f64> {
        let (h, w, _) = img.rgb.dim();
        let px = Array3::from_shape_fn((h, w, 3), |(y, x, c)| img.rgb[[y, x, c]] as f64 / 255.0);
        let at = |y: isize, x: isize, c: usize| {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            px[[yy, xx, c]]
        };
        let mut out = Array2::<f64>::zeros((h * w, self.dim()));
        let area = ((2 * LOCAL_RADIUS + 1) * (2 * LOCAL_RADIUS + 1)) as f64;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut row = out.row_mut(y as usize * w + x as usize);
                for c in 0..3 {
                    row[c] = at(y, x, c);
                    let (mut s, mut s2) = (0.0, 0.0);
                    for dy in -LOCAL_RADIUS..=LOCAL_RADIUS {
                        for dx in -LOCAL_RADIUS..=LOCAL_RADIUS {
                            let v = at(y + dy, x + dx, c);
                            s += v;
                            s2 += v * v;
                        }
                    }
                    let m = s / area;
                    row[3 + c] = m;
                    row[6 + c] = (s2 / area - m * m).max(0.0).sqrt();
                }
                for (k, f) in self.filters.iter().enumerate() {
                    let mut r = 0.0;
                    for c in 0..3 {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let idx = c * 9 + ((dy + 1) * 3 + (dx + 1)) as usize;
                                r += f[idx] * at(y + dy, x + dx, c);
                            }
                        }
                    }
                    row[Self::BASE_CHANNELS + k] = r.abs();
                }
            }
        }
        out
    }

    /// Standardized per-pixel features (H*W rows, `dim()` columns).
    pub fn transform(&self, img: &LabeledImage) -> Array2<f64> {
        let mut out = self.raw(img);
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.shift[j]) * self.scale[j];
            }
        }
        out
    }

    /// Content hash over all parameters, used to prove the featurizer stayed frozen.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        for f in &self.filters {
            for v in f {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in self.shift.iter().chain(&self.scale) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(self.fitted as u8);
        sha256_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn flat(v: u8) -> LabeledImage {
        LabeledImage {
            rgb: Array3::from_elem((16, 16, 3), v),
            labels: Array2::zeros((16, 16)),
        }
    }

    #[test]
    fn dimension_bounds() {
        assert!(Featurizer::new(6, 0).is_err());
        assert_eq!(Featurizer::new(15, 0).unwrap().dim(), 24);
        assert!(Featurizer::new(56, 0).is_err());
    }

    #[test]
    fn constant_image_has_zero_texture() {
        let f = Featurizer::new(15, 4).unwrap();
        let x = f.transform(&flat(128));
        for row in x.rows() {
            for j in 6..24 {
                assert!(row[j].abs() < 1e-12);
            }
            assert!((row[0] - 128.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_standardizes_and_is_one_shot() {
        let mut f = Featurizer::new(15, 4).unwrap();
        let before = f.hash();
        f.fit(&[flat(40), flat(200)]).unwrap();
        assert_ne!(before, f.hash());
        let a = f.transform(&flat(40));
        let b = f.transform(&flat(200));
        let r = 1.0 / 24f64.sqrt();
        assert!((a[[0, 0]] + r).abs() < 1e-9);
        assert!((b[[0, 0]] - r).abs() < 1e-9);
        assert!(matches!(f.fit(&[flat(1)]), Err(Error::State(_))));
    }

    #[test]
    fn seeded() {
        assert_eq!(Featurizer::new(15, 9).unwrap(), Featurizer::new(15, 9).unwrap());
        assert_ne!(Featurizer::new(15, 9).unwrap().hash(), Featurizer::new(15, 10).unwrap().hash());
    }
}
