//! Mask changes produced by one score update and their first-order loss
//! estimate.
//!
//! Keep-counts are fixed per layer, so every entry that joins the mask is
//! matched by one that leaves it. To first order the loss changes by
//! `sum_{i in I} dL/dm_i - sum_{j in J} dL/dm_j`, and since an entering
//! index must have overtaken every leaving one, `max_I dL/dm < min_J dL/dm`,
//! which makes the estimate negative.

/// Entries that entered (`I`) and left (`J`) one layer's mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSwap {
    pub layer_id: usize,
    pub entering: Vec<usize>,
    pub leaving: Vec<usize>,
    /// Mask gradient at each entering index.
    pub grad_entering: Vec<f32>,
    /// Mask gradient at each leaving index.
    pub grad_leaving: Vec<f32>,
}

/// First-order loss change of a swap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDeltaEstimate {
    pub delta: f64,
    /// `max` of the mask gradient over entering indices.
    pub g_entering_max: Option<f32>,
    /// `min` of the mask gradient over leaving indices.
    pub g_leaving_min: Option<f32>,
}

impl LossDeltaEstimate {
    pub fn no_swap(&self) -> bool {
        self.g_entering_max.is_none()
    }

    /// Whether the ordering `max_I < min_J` and `delta < 0` both hold.
    /// Vacuously true for an empty swap.
    pub fn is_descent(&self) -> bool {
        match (self.g_entering_max, self.g_leaving_min) {
            (Some(i), Some(j)) => i < j && self.delta < 0.0,
            _ => true,
        }
    }
}

impl MaskSwap {
    pub(crate) fn between(layer_id: usize, before: &[bool], after: &[bool], grad_mask: &[f32]) -> Self {
        let mut swap = MaskSwap {
            layer_id,
            entering: Vec::new(),
            leaving: Vec::new(),
            grad_entering: Vec::new(),
            grad_leaving: Vec::new(),
        };
        for (i, (&b, &a)) in before.iter().zip(after).enumerate() {
            match (b, a) {
                (false, true) => {
                    swap.entering.push(i);
                    swap.grad_entering.push(grad_mask[i]);
                }
                (true, false) => {
                    swap.leaving.push(i);
                    swap.grad_leaving.push(grad_mask[i]);
                }
                _ => {}
            }
        }
        swap
    }

    /// `M = |I| = |J|`.
    pub fn len(&self) -> usize {
        self.entering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entering.is_empty() && self.leaving.is_empty()
    }
}

pub fn predicted_loss_delta(swap: &MaskSwap) -> LossDeltaEstimate {
    if swap.is_empty() {
        return LossDeltaEstimate {
            delta: 0.0,
            g_entering_max: None,
            g_leaving_min: None,
        };
    }
    let gained: f64 = swap.grad_entering.iter().map(|&g| g as f64).sum();
    let lost: f64 = swap.grad_leaving.iter().map(|&g| g as f64).sum();
    LossDeltaEstimate {
        delta: gained - lost,
        g_entering_max: swap.grad_entering.iter().copied().reduce(f32::max),
        g_leaving_min: swap.grad_leaving.iter().copied().reduce(f32::min),
    }
}
