use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(outcome: &Tensor, target: &Tensor) -> Result<()> {
    if outcome.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "outcome {:?} vs target {:?}",
            outcome.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements, accumulated in `f64`.
pub fn loss_mse(outcome: &Tensor, target: &Tensor) -> Result<f64> {
    check_shapes(outcome, target)?;
    let sum: f64 = outcome
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| {
            let d = o as f64 - t as f64;
            d * d
        })
        .sum();
    Ok(sum / outcome.len() as f64)
}

/// Gradient of [`loss_mse`] with respect to `outcome`.
pub fn mse_grad(outcome: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_shapes(outcome, target)?;
    let scale = 2.0 / outcome.len() as f32;
    let data = outcome
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| scale * (o - t))
        .collect();
    Tensor::new(outcome.shape().to_vec(), data)
}
