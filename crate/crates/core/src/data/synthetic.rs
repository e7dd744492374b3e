use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::rng::{stream, Prng};
use crate::tensor::Tensor;

/// Largest blob count; labels are `(blobs - 1) * 2 + orientation`, so there
/// are `2 * MAX_BLOBS` classes.
pub const MAX_BLOBS: usize = 5;
pub const SYNTHETIC_CLASSES: u32 = 2 * MAX_BLOBS as u32;

// Warm palette: red-leaning blobs on a muted background.
const BASE_RANGE: [(f64, f64); 3] = [(0.35, 0.55), (0.3, 0.5), (0.25, 0.45)];
const BLOB_RANGE: [(f64, f64); 3] = [(0.1, 0.45), (-0.1, 0.25), (-0.3, 0.05)];

/// Procedural images: a linear colour gradient (horizontal or vertical)
/// overlaid with 1..=5 Gaussian blobs, clamped to `[0, 1]`.
pub fn gen_synthetic(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Result<DatasetHandle> {
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::EmptyDataset(format!("synthetic dataset of {n}x{c}x{h}x{w}")));
    }
    let mut rng = Prng::derive(seed, stream::SYNTHETIC);
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c * plane);
    let mut labels = Vec::with_capacity(n);
    let mut img = vec![0.0f64; c * plane];
    let size = h.max(w) as f64;
    for _ in 0..n {
        let blobs = 1 + rng.below(MAX_BLOBS);
        let vertical = rng.below(2);
        labels.push(((blobs - 1) * 2 + vertical) as u32);
        for ch in 0..c {
            let (lo, hi) = BASE_RANGE[ch % 3];
            let base = rng.uniform(lo, hi);
            let slope = rng.uniform(-0.15, 0.15);
            for y in 0..h {
                for x in 0..w {
                    let t = if vertical == 1 {
                        y as f64 / (h.max(2) - 1) as f64
                    } else {
                        x as f64 / (w.max(2) - 1) as f64
                    };
                    img[ch * plane + y * w + x] = base + slope * t;
                }
            }
        }
        for _ in 0..blobs {
            let cy = rng.uniform(0.0, h as f64);
            let cx = rng.uniform(0.0, w as f64);
            let sigma = rng.uniform(0.15, 0.3) * size;
            let colour: Vec<f64> = (0..c)
                .map(|ch| {
                    let (lo, hi) = BLOB_RANGE[ch % 3];
                    rng.uniform(lo, hi)
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    let r2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let k = (-r2 / (2.0 * sigma * sigma)).exp();
                    for (ch, col) in colour.iter().enumerate() {
                        img[ch * plane + y * w + x] += col * k;
                    }
                }
            }
        }
        data.extend(img.iter().map(|&v| v.clamp(0.0, 1.0) as f32));
    }
    DatasetHandle::new(Tensor::new(vec![n, c, h, w], data)?, labels, format!("synthetic(seed={seed})"))
}
