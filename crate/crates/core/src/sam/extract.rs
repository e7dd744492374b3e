use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::sam::state::SamState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEntry {
    pub index: u32,
    pub delta: f32,
    /// `original + delta`, computed exactly as in `effective_params`.
    pub adapted: f32,
    pub original: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDelta {
    pub layer_id: usize,
    /// Sorted by index.
    pub entries: Vec<DeltaEntry>,
}

/// The masked entries of an optimized SAM, one record per parameterized
/// layer (possibly empty).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDelta {
    pub gamma: f64,
    pub layers: Vec<LayerDelta>,
}

impl SparseDelta {
    /// Number of stored entries across layers.
    pub fn entry_count(&self) -> usize {
        self.layers.iter().map(|l| l.entries.len()).sum()
    }

    /// Entries whose modification is nonzero, i.e. the l0 norm of the delta.
    pub fn nonzero_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.entries)
            .filter(|e| e.adapted.to_bits() != e.original.to_bits())
            .count()
    }
}

pub fn extract_delta(sam: &SamState, pristine: &ModelParams) -> Result<SparseDelta> {
    sam.check_layout(pristine)?;
    let mut layers = Vec::with_capacity(sam.layers.len());
    for (t, l) in pristine.param_tensors().zip(&sam.layers) {
        if t.len() > u32::MAX as usize {
            return Err(Error::Layout(format!("layer {} too large to index", l.layer_id)));
        }
        let entries = l
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| {
                let original = t.data()[i];
                DeltaEntry {
                    index: i as u32,
                    delta: l.values[i],
                    adapted: original + l.values[i],
                    original,
                }
            })
            .collect();
        layers.push(LayerDelta {
            layer_id: l.layer_id,
            entries,
        });
    }
    Ok(SparseDelta {
        gamma: sam.hyper.gamma,
        layers,
    })
}
