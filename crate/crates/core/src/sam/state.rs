use crate::error::{Error, Result};
use crate::nn::loss::{loss_mse, mse_grad};
use crate::nn::{Graph, ModelParams, Side};
use crate::rng::{stream, Prng};
use crate::sam::allocate::{allocate_sparsity, keep_counts, Allocation};
use crate::sam::mask::topk_mask;
use crate::sam::swap::MaskSwap;
use crate::tensor::Tensor;

/// How the modification vector `v` receives its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VGradMode {
    /// `dL/dv = g` for every entry: the straight-through estimate is applied
    /// to the `v` path too, so masked-out candidates keep learning.
    #[default]
    Dense,
    /// `dL/dv = g * m`; masked-out entries stay frozen.
    Masked,
}

impl std::str::FromStr for VGradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(VGradMode::Dense),
            "masked" => Ok(VGradMode::Masked),
            _ => Err(Error::InvalidArgument(format!("unknown v-grad mode {s:?}"))),
        }
    }
}

/// Hyperparameters of a SAM run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamHyper {
    pub gamma: f64,
    pub alpha_s: f32,
    pub alpha_v: f32,
    pub v_grad_mode: VGradMode,
    pub allocation: Allocation,
}

impl SamHyper {
    /// `alpha_s = 1`, `alpha_v = 1e-4` as used for the CIFAR-scale runs.
    pub fn reference(gamma: f64) -> Self {
        Self {
            gamma,
            alpha_s: 1.0,
            alpha_v: 1e-4,
            v_grad_mode: VGradMode::Dense,
            allocation: Allocation::Linear,
        }
    }
}

/// SAM decomposition of one parameterized layer: `delta = mask * values`,
/// with `mask = topk(scores, keep)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamLayer {
    pub layer_id: usize,
    pub side: Side,
    pub scores: Vec<f32>,
    pub values: Vec<f32>,
    pub mask: Vec<bool>,
    pub ratio: f64,
    pub keep: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamState {
    pub layers: Vec<SamLayer>,
    pub hyper: SamHyper,
}

/// Output of [`sam_gradients`].
#[derive(Debug, Clone)]
pub struct SamGradients {
    /// Loss of the effective parameters on the batch.
    pub loss: f64,
    /// `None` when `v` is held fixed.
    pub values: Option<Vec<Vec<f32>>>,
    pub mask: Vec<Vec<f32>>,
}

impl SamState {
    /// Total number of kept entries, `sum_k keep_k`.
    pub fn kept(&self) -> usize {
        self.layers.iter().map(|l| l.keep).sum()
    }

    fn side_ratio(&self, side: Side) -> f64 {
        let (kept, total) = self
            .layers
            .iter()
            .filter(|l| l.side == side)
            .fold((0, 0), |(k, n), l| (k + l.keep, n + l.scores.len()));
        if total == 0 {
            0.0
        } else {
            kept as f64 / total as f64
        }
    }

    /// Aggregate encoder ratio `gamma_E`.
    pub fn encoder_ratio(&self) -> f64 {
        self.side_ratio(Side::Encoder)
    }

    /// Aggregate decoder ratio `gamma_D`.
    pub fn decoder_ratio(&self) -> f64 {
        self.side_ratio(Side::Decoder)
    }

    pub fn check_layout(&self, model: &ModelParams) -> Result<()> {
        let slots = model.param_slots();
        let ok = slots.len() == self.layers.len()
            && slots.iter().zip(&self.layers).all(|(s, l)| {
                s.layer_id == l.layer_id
                    && s.spec.param_count() == l.scores.len()
                    && l.values.len() == l.scores.len()
                    && l.mask.len() == l.scores.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Layout("SAM state does not match the model".into()))
        }
    }

    /// Rebuilds every mask from the current scores.
    pub fn refresh_masks(&mut self) -> Result<()> {
        for l in &mut self.layers {
            l.mask = topk_mask(&l.scores, l.keep)?;
        }
        Ok(())
    }
}

/// Allocates per-layer ratios, draws scores from a standard normal, zeroes
/// the modifications and derives the masks.
pub fn init_sam(model: &ModelParams, hyper: &SamHyper, seed: u64) -> Result<SamState> {
    for (name, a) in [("alpha_s", hyper.alpha_s), ("alpha_v", hyper.alpha_v)] {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative, got {a}")));
        }
    }
    let specs: Vec<_> = model.layers().map(|(_, _, l)| *l).collect();
    let ratios = allocate_sparsity(&specs, hyper.gamma, hyper.allocation)?;
    let slots = model.param_slots();
    let sizes: Vec<usize> = slots.iter().map(|s| s.spec.param_count()).collect();
    let keep = keep_counts(&ratios, &sizes, hyper.gamma);
    let mut rng = Prng::derive(seed, stream::SCORES);
    let mut layers = Vec::with_capacity(slots.len());
    for ((slot, &ratio), &keep) in slots.iter().zip(&ratios).zip(&keep) {
        let p = slot.spec.param_count();
        let scores: Vec<f32> = (0..p).map(|_| rng.normal() as f32).collect();
        let mask = topk_mask(&scores, keep)?;
        layers.push(SamLayer {
            layer_id: slot.layer_id,
            side: slot.side,
            scores,
            values: vec![0.0; p],
            mask,
            ratio,
            keep,
        });
    }
    Ok(SamState {
        layers,
        hyper: *hyper,
    })
}

/// `p* + m * v`, elementwise. Unmasked entries are copied untouched.
pub fn effective_params(pristine: &ModelParams, sam: &SamState) -> Result<ModelParams> {
    sam.check_layout(pristine)?;
    let mut out = pristine.clone();
    for (t, l) in out.param_tensors_mut().zip(&sam.layers) {
        for ((p, &m), &v) in t.data_mut().iter_mut().zip(&l.mask).zip(&l.values) {
            if m {
                *p += v;
            }
        }
    }
    Ok(out)
}

/// Gradients of the batch loss with respect to `v` and `m`.
///
/// With `g = dL/d(effective param)`, the mask gradient is `g * v` and stands
/// in for the score gradient. The `v` gradient follows [`VGradMode`];
/// `fixed_values` suppresses it.
pub fn sam_gradients(
    pristine: &ModelParams,
    sam: &SamState,
    inputs: &Tensor,
    targets: &Tensor,
    fixed_values: bool,
) -> Result<SamGradients> {
    let effective = effective_params(pristine, sam)?;
    let mut graph = Graph::new();
    let fwd = graph.forward(&effective, inputs)?;
    let targets = targets.clone().reshape(fwd.outcome.shape().to_vec())?;
    let loss = loss_mse(&fwd.outcome, &targets)?;
    let grads = graph.backward(&effective, &mse_grad(&fwd.outcome, &targets)?)?;
    let mut gv = Vec::with_capacity(sam.layers.len());
    let mut gm = Vec::with_capacity(sam.layers.len());
    for (g, l) in grads.tensors().zip(&sam.layers) {
        let (v, m) = split_gradient(g.data(), l, sam.hyper.v_grad_mode);
        gm.push(m);
        if !fixed_values {
            gv.push(v);
        }
    }
    if gm.iter().chain(&gv).any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("SAM gradients".into()));
    }
    Ok(SamGradients {
        loss,
        values: (!fixed_values).then_some(gv),
        mask: gm,
    })
}

/// Chain rule through `delta_i = m_i * v_i` for one layer, given
/// `g = dL/d(effective param)`. Returns `(dL/dv, dL/dm)`.
pub(crate) fn split_gradient(g: &[f32], layer: &SamLayer, mode: VGradMode) -> (Vec<f32>, Vec<f32>) {
    let gm = g.iter().zip(&layer.values).map(|(&g, &v)| g * v).collect();
    let gv = match mode {
        VGradMode::Dense => g.to_vec(),
        VGradMode::Masked => g
            .iter()
            .zip(&layer.mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect(),
    };
    (gv, gm)
}

/// `v <- v - alpha_v * dv`, `s <- s - alpha_s * dm`, then masks are rebuilt.
/// Returns the per-layer mask changes. The state is untouched on error.
pub fn sam_step(sam: &mut SamState, grads: &SamGradients) -> Result<Vec<MaskSwap>> {
    if grads.mask.len() != sam.layers.len()
        || grads.values.as_ref().is_some_and(|v| v.len() != sam.layers.len())
        || sam.layers.iter().enumerate().any(|(k, l)| {
            grads.mask[k].len() != l.scores.len()
                || grads.values.as_ref().is_some_and(|v| v[k].len() != l.scores.len())
        })
    {
        return Err(Error::Layout("SAM gradients do not match the state".into()));
    }
    let (alpha_s, alpha_v) = (sam.hyper.alpha_s, sam.hyper.alpha_v);
    let mut updates = Vec::with_capacity(sam.layers.len());
    for (k, l) in sam.layers.iter().enumerate() {
        let gm = &grads.mask[k];
        let scores: Vec<f32> = l.scores.iter().zip(gm).map(|(&s, &g)| s - alpha_s * g).collect();
        let values = grads
            .values
            .as_ref()
            .map(|gv| l.values.iter().zip(&gv[k]).map(|(&v, &g)| v - alpha_v * g).collect::<Vec<f32>>());
        if scores.iter().any(|v| !v.is_finite()) || values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("SAM update of layer {}", l.layer_id)));
        }
        let mask = topk_mask(&scores, l.keep)?;
        updates.push((scores, values, mask));
    }
    let mut swaps = Vec::with_capacity(sam.layers.len());
    for ((l, (scores, values, mask)), gm) in sam.layers.iter_mut().zip(updates).zip(&grads.mask) {
        swaps.push(MaskSwap::between(l.layer_id, &l.mask, &mask, gm));
        l.scores = scores;
        if let Some(v) = values {
            l.values = v;
        }
        l.mask = mask;
    }
    Ok(swaps)
}
