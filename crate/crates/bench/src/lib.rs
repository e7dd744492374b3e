//! Fixtures shared by the benchmarks.

use zfda_core::data::gen_synthetic;
use zfda_core::nn::{build_autoencoder, ModelParams, Topology};
use zfda_core::sam::{init_sam, SamHyper, SamState};
use zfda_core::Tensor;

/// The untrained desk autoencoder; timing does not depend on the weights.
pub fn desk_model() -> ModelParams {
    build_autoencoder(&Topology::desk().config().unwrap(), 0).unwrap()
}

/// One training batch of synthetic desk images.
pub fn desk_batch(batch: usize) -> Tensor {
    gen_synthetic(batch, 3, 16, 16, 0).unwrap().images
}

pub fn desk_sam(model: &ModelParams, gamma: f64) -> SamState {
    init_sam(model, &SamHyper::reference(gamma), 0).unwrap()
}
