use std::path::Path;

use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

const PIXELS: usize = 3 * 32 * 32;

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }
}

/// Parses the CIFAR binary layout: label byte(s) then 1024 R, 1024 G and
/// 1024 B bytes, row-major. CIFAR-100 records carry (coarse, fine); the fine
/// label is kept.
pub fn parse_cifar(buf: &[u8], variant: CifarVariant, source: &str) -> Result<DatasetHandle> {
    let rec = variant.record_len();
    if buf.is_empty() || buf.len() % rec != 0 {
        return Err(Error::format(
            "cifar",
            format!("{} bytes is not a positive multiple of the {rec}-byte record", buf.len()),
        ));
    }
    let n = buf.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for r in buf.chunks_exact(rec) {
        labels.push(r[variant.label_bytes() - 1] as u32);
        pixels.extend(r[variant.label_bytes()..].iter().map(|&b| b as f32 / 255.0));
    }
    DatasetHandle::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, source)
}

pub fn read_cifar_binary(path: impl AsRef<Path>, variant: CifarVariant) -> Result<DatasetHandle> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar(&buf, variant, &path.display().to_string())
}
