//! Datasets and file formats: CIFAR binaries, procedural images, `.zft`
//! tensors and CSV reports.

pub mod cifar;
pub mod csv_report;
pub mod synthetic;
pub mod tensor_file;

pub use cifar::{read_cifar_binary, CifarVariant};
pub use csv_report::{csv_string, fmt_sig6, write_csv_report, CsvRow};
pub use synthetic::{gen_synthetic, SYNTHETIC_CLASSES};
pub use tensor_file::{read_tensor_file, tensor_from_bytes, tensor_to_bytes, write_tensor_file};

use crate::error::{Error, Result};
use crate::rng::{stream, Prng};
use crate::tensor::Tensor;

/// Images `[N, C, H, W]` in `[0, 1]` with one integer label each.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub source: String,
}

impl DatasetHandle {
    pub fn new(images: Tensor, labels: Vec<u32>, source: impl Into<String>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Shape(format!("dataset images must be [N, C, H, W], got {:?}", images.shape())));
        }
        if labels.len() != images.batch_len() {
            return Err(Error::Shape(format!(
                "{} labels for {} images",
                labels.len(),
                images.batch_len()
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset(format!("empty subset of {}", self.source)));
        }
        Ok(Self {
            images: self.images.gather(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source: self.source.clone(),
        })
    }

    /// Items whose label is in `classes`, in original order.
    pub fn filter_classes(&self, classes: &[u32]) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        if idx.is_empty() {
            return Err(Error::EmptyDataset(format!("no images of classes {classes:?} in {}", self.source)));
        }
        self.subset(&idx)
    }

    /// Seeded `(train, test)` split with `round(len * test_fraction)` test
    /// items (at least one of each when possible).
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) || self.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} items with test fraction {test_fraction}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        Prng::derive(seed, stream::SPLIT).shuffle(&mut order);
        let n_test = ((self.len() as f64 * test_fraction).round() as usize).clamp(1, self.len() - 1);
        let (test, train) = order.split_at(n_test);
        let (mut train, mut test) = (train.to_vec(), test.to_vec());
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    /// 2x2 average pooling of every image.
    pub fn downsample2x(&self) -> Result<Self> {
        let [n, c, h, w]: [usize; 4] = self.images.shape().try_into().unwrap();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("cannot halve {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.images.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks_exact(h * w) {
            for y in 0..oh {
                for x in 0..ow {
                    let a = plane[2 * y * w + 2 * x] + plane[2 * y * w + 2 * x + 1];
                    let b = plane[(2 * y + 1) * w + 2 * x] + plane[(2 * y + 1) * w + 2 * x + 1];
                    out.push(((a + b) * 0.25).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(Tensor::new(vec![n, c, oh, ow], out)?, self.labels.clone(), self.source.clone())
    }
}
