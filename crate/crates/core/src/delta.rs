//! `.zfp` sparse patches with digest-verified, overwrite-based restoration.
//!
//! Layout (little-endian): `"ZFDP"`, version `u16`, flags `u16`, model digest
//! (32 bytes), gamma `f64`, layer count `u32`; then per layer a layer id
//! `u32`, entry count `u64` and that many `(index u32, adapted f32,
//! original f32)` records.

use std::path::Path;

use crate::bytes::ByteReader;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::sam::{check_ratio, SparseDelta};

const MAGIC: &[u8; 4] = b"ZFDP";
const VERSION: u16 = 1;
pub const PATCH_HEADER_BYTES: usize = 4 + 2 + 2 + 32 + 8 + 4;
pub const LAYER_STUB_BYTES: usize = 4 + 8;
pub const ENTRY_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchEntry {
    pub index: u32,
    pub adapted: f32,
    pub original: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayer {
    pub layer_id: u32,
    /// Strictly ascending by index.
    pub entries: Vec<PatchEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaPatch {
    pub model_digest: Digest,
    pub gamma: f64,
    /// Strictly ascending by layer id.
    pub layers: Vec<PatchLayer>,
}

/// Byte accounting of a patch file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSize {
    pub entries: usize,
    /// Four bytes per modified value, indices and originals excluded.
    pub value_bytes: usize,
    pub file_bytes: usize,
}

impl DeltaPatch {
    /// Keeps the entries whose adapted value differs from the original, so
    /// the entry count is the l0 norm of the delta.
    pub fn from_delta(delta: &SparseDelta, pristine: &ModelParams) -> Result<Self> {
        check_ratio(delta.gamma)?;
        let layers = delta
            .layers
            .iter()
            .map(|l| {
                let layer_id = u32::try_from(l.layer_id)
                    .map_err(|_| Error::Layout(format!("layer id {} out of range", l.layer_id)))?;
                let entries = l
                    .entries
                    .iter()
                    .filter(|e| e.adapted.to_bits() != e.original.to_bits())
                    .map(|e| PatchEntry {
                        index: e.index,
                        adapted: e.adapted,
                        original: e.original,
                    })
                    .collect();
                Ok(PatchLayer { layer_id, entries })
            })
            .collect::<Result<Vec<_>>>()?;
        let patch = Self {
            model_digest: pristine.digest(),
            gamma: delta.gamma,
            layers,
        };
        patch.check_structure()?;
        patch.validate_against(pristine)?;
        for (l, t) in patch.layers.iter().zip(pristine.param_tensors()) {
            if l.entries.iter().any(|e| t.data()[e.index as usize].to_bits() != e.original.to_bits()) {
                return Err(Error::Layout(format!("delta for layer {} was not extracted from this model", l.layer_id)));
            }
        }
        Ok(patch)
    }

    pub fn entry_count(&self) -> usize {
        self.layers.iter().map(|l| l.entries.len()).sum()
    }

    pub fn size(&self) -> PatchSize {
        let entries = self.entry_count();
        PatchSize {
            entries,
            value_bytes: 4 * entries,
            file_bytes: PATCH_HEADER_BYTES + LAYER_STUB_BYTES * self.layers.len() + ENTRY_BYTES * entries,
        }
    }

    fn check_structure(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::format("zfp", reason));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("sparsity ratio {} outside (0, 1]", self.gamma));
        }
        for w in self.layers.windows(2) {
            if w[0].layer_id >= w[1].layer_id {
                return bad(format!("layer ids {} and {} out of order", w[0].layer_id, w[1].layer_id));
            }
        }
        for l in &self.layers {
            for w in l.entries.windows(2) {
                if w[0].index >= w[1].index {
                    return bad(format!(
                        "layer {}: indices {} and {} not strictly ascending",
                        l.layer_id, w[0].index, w[1].index
                    ));
                }
            }
            if l.entries.iter().any(|e| !e.adapted.is_finite() || !e.original.is_finite()) {
                return bad(format!("layer {}: non-finite value", l.layer_id));
            }
        }
        Ok(())
    }

    /// Checks layer ids, index bounds and the sparsity budget against a
    /// model's layout. One patch layer is expected per parameterized layer.
    pub fn validate_against(&self, model: &ModelParams) -> Result<()> {
        let slots = model.param_slots();
        if slots.len() != self.layers.len() {
            return Err(Error::Layout(format!(
                "patch has {} layers, model has {} parameterized layers",
                self.layers.len(),
                slots.len()
            )));
        }
        for (slot, l) in slots.iter().zip(&self.layers) {
            if slot.layer_id != l.layer_id as usize {
                return Err(Error::Layout(format!(
                    "patch layer {} where the model has parameterized layer {}",
                    l.layer_id, slot.layer_id
                )));
            }
            let p = slot.spec.param_count();
            if let Some(e) = l.entries.iter().find(|e| e.index as usize >= p) {
                return Err(Error::Layout(format!(
                    "layer {}: index {} out of range for {p} parameters",
                    l.layer_id, e.index
                )));
            }
        }
        let budget = (self.gamma * model.param_count() as f64).floor() as usize;
        if self.entry_count() > budget {
            return Err(Error::Layout(format!(
                "{} entries exceed the budget of {budget} at ratio {}",
                self.entry_count(),
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size().file_bytes);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.model_digest.0);
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&l.layer_id.to_le_bytes());
            out.extend_from_slice(&(l.entries.len() as u64).to_le_bytes());
            for e in &l.entries {
                out.extend_from_slice(&e.index.to_le_bytes());
                out.extend_from_slice(&e.adapted.to_le_bytes());
                out.extend_from_slice(&e.original.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "zfp");
        if r.take(4)? != MAGIC {
            return Err(Error::format("zfp", "bad magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format("zfp", format!("unsupported version {version}")));
        }
        let flags = r.u16()?;
        if flags != 0 {
            return Err(Error::format("zfp", format!("unknown flags {flags:#06x}")));
        }
        let model_digest = Digest(r.take(32)?.try_into().unwrap());
        let gamma = r.f64()?;
        let n_layers = r.u32()? as usize;
        if n_layers > r.remaining() / LAYER_STUB_BYTES {
            return Err(Error::format("zfp", format!("truncated: {n_layers} layers declared")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let layer_id = r.u32()?;
            let n = r.u64()?;
            if n > (r.remaining() / ENTRY_BYTES) as u64 {
                return Err(Error::format("zfp", format!("truncated: layer {layer_id} declares {n} entries")));
            }
            let mut entries = Vec::with_capacity(n as usize);
            for _ in 0..n {
                entries.push(PatchEntry {
                    index: r.u32()?,
                    adapted: r.f32()?,
                    original: r.f32()?,
                });
            }
            layers.push(PatchLayer { layer_id, entries });
        }
        r.finish()?;
        let patch = Self {
            model_digest,
            gamma,
            layers,
        };
        patch.check_structure()?;
        Ok(patch)
    }
}

/// Builds the patch of `delta` and writes it to `path`.
pub fn export_patch(delta: &SparseDelta, pristine: &ModelParams, path: impl AsRef<Path>) -> Result<DeltaPatch> {
    let patch = DeltaPatch::from_delta(delta, pristine)?;
    write_patch(&patch, path)?;
    Ok(patch)
}

pub fn write_patch(patch: &DeltaPatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, patch.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_patch(path: impl AsRef<Path>) -> Result<DeltaPatch> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DeltaPatch::from_bytes(&buf)
}

pub fn verify_digest(params: &ModelParams, patch: &DeltaPatch) -> bool {
    params.digest() == patch.model_digest
}

fn mismatch(expected: Digest, found: Digest) -> Error {
    Error::DigestMismatch {
        expected: expected.to_hex(),
        found: found.to_hex(),
    }
}

fn overwrite(params: &ModelParams, patch: &DeltaPatch, pick: impl Fn(&PatchEntry) -> f32) -> Result<ModelParams> {
    patch.validate_against(params)?;
    let mut out = params.clone();
    for (slot, l) in patch.layers.iter().enumerate() {
        let data = out.slot_tensor_mut(slot).data_mut();
        for e in &l.entries {
            data[e.index as usize] = pick(e);
        }
    }
    Ok(out)
}

/// Writes the adapted values into a copy of the pristine parameters. The
/// input must carry the patch's model digest.
pub fn apply_patch(params: &ModelParams, patch: &DeltaPatch) -> Result<ModelParams> {
    let found = params.digest();
    if found != patch.model_digest {
        return Err(mismatch(patch.model_digest, found));
    }
    overwrite(params, patch, |e| e.adapted)
}

/// Writes the stored originals back and checks that the result carries the
/// patch's model digest.
pub fn revert_patch(params: &ModelParams, patch: &DeltaPatch) -> Result<ModelParams> {
    let restored = overwrite(params, patch, |e| e.original)?;
    let found = restored.digest();
    if found != patch.model_digest {
        return Err(mismatch(patch.model_digest, found));
    }
    Ok(restored)
}
