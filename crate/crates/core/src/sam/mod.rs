//! Sparse additive modification (SAM) optimizer.
//!
//! A modification of the pre-trained parameters is written `delta = m * v`
//! with a binary mask `m` and a continuous vector `v`. The mask keeps the
//! top-scoring entries of each layer; scores are trained with a
//! straight-through estimate, so the budget `sum_k keep_k <= gamma * N`
//! holds after every step.

pub mod allocate;
pub mod extract;
pub mod mask;
pub mod optimize;
pub mod state;
pub mod swap;

pub(crate) use allocate::check_ratio;
pub use allocate::{allocate_sparsity, keep_counts, Allocation};
pub use extract::{extract_delta, DeltaEntry, LayerDelta, SparseDelta};
pub use mask::topk_mask;
pub use optimize::{optimize_sam, run_sam, SamRun, SamSchedule, Supervision, MIN_IMPROVEMENT, PATIENCE};
pub use state::{effective_params, init_sam, sam_gradients, sam_step, SamGradients, SamHyper, SamLayer, SamState, VGradMode};
pub use swap::{predicted_loss_delta, LossDeltaEstimate, MaskSwap};
