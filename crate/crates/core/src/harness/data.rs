use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, SeededRng};

/// Equal-size grayscale images with pixels in `[0, 1]`, stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageSet {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        let size = height * width;
        if size == 0 || pixels.is_empty() || !pixels.len().is_multiple_of(size) {
            return Err(Error::shape(format!(
                "{} pixels do not form {height}x{width} images",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_images(images: &[DenseTensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("empty image list"))?;
        let [h, w] = *first.shape() else {
            return Err(Error::shape(format!("image shape {:?}", first.shape())));
        };
        let mut pixels = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.shape() != [h, w] {
                return Err(Error::shape(format!(
                    "image {:?} among {h}x{w} images",
                    img.shape()
                )));
            }
            pixels.extend_from_slice(img.data());
        }
        Self::new(h, w, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image_tensor(&self, i: usize) -> DenseTensor {
        DenseTensor::new(vec![self.height, self.width], self.image(i).to_vec())
            .expect("image shape is validated at construction")
    }

    /// Images `indices` as a `[B, H, W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<DenseTensor> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.height * self.width);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("image {i} of {}", self.len())));
            }
            data.extend_from_slice(self.image(i));
        }
        DenseTensor::new(vec![indices.len(), self.height, self.width], data)
    }

    pub fn all(&self) -> DenseTensor {
        DenseTensor::new(vec![self.len(), self.height, self.width], self.pixels.clone())
            .expect("image shape is validated at construction")
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Procedural images: each is a linear gradient, a few Gaussian blobs on a
/// flat background, or a checkerboard, clamped to `[0, 1]`.
///
/// * gradient: `0.5 + a * ((x - cx) cos t + (y - cy) sin t) / max(H, W)`, `a ~ U(0.5, 1)`, `t ~ U(0, 2 pi)`;
/// * blobs: background `U(0.2, 0.8)` plus 1 to 3 blobs of signed amplitude `U(0.2, 0.5)` and width `U(1.5, 4)` px;
/// * checkerboard: cell size 2 to 6 px, random phase, levels `lo ~ U(0.1, 0.4)` and `1 - lo`.
pub fn gen_synthetic_dataset(n: usize, size: (usize, usize), seed: u64) -> Result<ImageSet> {
    let (h, w) = size;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("{n} images of {h}x{w}")));
    }
    let mut rng = SeededRng::new(seed);
    let mut pixels = Vec::with_capacity(n * h * w);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    for _ in 0..n {
        let start = pixels.len();
        match rng.below(3) {
            0 => {
                let a = 0.5 + 0.5 * rng.next_f64();
                let t = 2.0 * PI * rng.next_f64();
                let scale = h.max(w) as f64;
                for y in 0..h {
                    for x in 0..w {
                        let d = (x as f64 - cx) * t.cos() + (y as f64 - cy) * t.sin();
                        pixels.push(0.5 + a * d / scale);
                    }
                }
            }
            1 => {
                let bg = 0.2 + 0.6 * rng.next_f64();
                let blobs: Vec<(f64, f64, f64, f64)> = (0..1 + rng.below(3))
                    .map(|_| {
                        let sign = if rng.below(2) == 0 { -1.0 } else { 1.0 };
                        let amp = sign * (0.2 + 0.3 * rng.next_f64());
                        let by = rng.next_f64() * h as f64;
                        let bx = rng.next_f64() * w as f64;
                        let r = 1.5 + 2.5 * rng.next_f64();
                        (amp, by, bx, r)
                    })
                    .collect();
                for y in 0..h {
                    for x in 0..w {
                        let mut v = bg;
                        for &(amp, by, bx, r) in &blobs {
                            let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                            v += amp * (-d2 / (2.0 * r * r)).exp();
                        }
                        pixels.push(v);
                    }
                }
            }
            _ => {
                let cell = 2 + rng.below(5);
                let (oy, ox) = (rng.below(cell), rng.below(cell));
                let lo = 0.1 + 0.3 * rng.next_f64();
                for y in 0..h {
                    for x in 0..w {
                        let parity = ((y + oy) / cell + (x + ox) / cell) % 2;
                        pixels.push(if parity == 0 { lo } else { 1.0 - lo });
                    }
                }
            }
        }
        for v in &mut pixels[start..] {
            *v = v.clamp(0.0, 1.0);
        }
    }
    ImageSet::new(h, w, pixels)
}
