use crate::error::{Error, Result};
use crate::nn::loss::{loss_mse, mse_grad};
use crate::nn::model::{Gradients, Graph, ModelParams};
use crate::rng::{stream, Prng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
}

impl TrainConfig {
    /// Pre-training schedule of the reference CIFAR setup: 40 epochs at 0.01.
    pub fn reference_pretrain() -> Self {
        Self {
            epochs: 40,
            lr: 0.01,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: ModelParams,
    /// Mean batch loss of each epoch, measured before each update.
    pub loss_log: Vec<f64>,
}

/// `p <- p - lr * g` over aligned tensor lists. Nothing is written unless every
/// gradient is finite.
pub fn sgd_update(params: &mut [Tensor], grads: &[Tensor], lr: f32) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Layout("gradients do not match parameters".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

pub fn sgd_step(model: &mut ModelParams, grads: &Gradients, lr: f32) -> Result<()> {
    let ne = model.encoder().params().len();
    if grads.encoder.len() != ne || grads.decoder.len() != model.decoder().params().len() {
        return Err(Error::Layout("gradients do not match parameters".into()));
    }
    if grads.tensors().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    sgd_update(model.encoder_mut().params_mut(), &grads.encoder, lr)?;
    sgd_update(model.decoder_mut().params_mut(), &grads.decoder, lr)
}

/// Reconstruction loss of `x` and its gradients.
pub fn reconstruction_step(model: &ModelParams, x: &Tensor) -> Result<(f64, Gradients)> {
    let mut graph = Graph::new();
    let fwd = graph.forward(model, x)?;
    let target = x.clone().reshape(fwd.outcome.shape().to_vec())?;
    let loss = loss_mse(&fwd.outcome, &target)?;
    let grads = graph.backward(model, &mse_grad(&fwd.outcome, &target)?)?;
    Ok((loss, grads))
}

/// Shuffled mini-batches for one epoch; the last partial batch is kept.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut Prng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Full-parameter SGD on reconstruction MSE. Shared by pre-training and the
/// dense fine-tuning baselines.
pub(crate) fn fit(
    model: &mut ModelParams,
    data: &Tensor,
    cfg: &TrainConfig,
    seed: u64,
    stage: &'static str,
) -> Result<Vec<f64>> {
    if data.batch_len() == 0 {
        return Err(Error::EmptyDataset(stage.into()));
    }
    let mut rng = Prng::derive(seed, stream::SHUFFLE);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in epoch_batches(data.batch_len(), cfg.batch_size, &mut rng) {
            let x = data.gather(&batch)?;
            let (loss, grads) = match reconstruction_step(model, &x) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { stage, epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { stage, epoch });
            }
            match sgd_step(model, &grads, cfg.lr) {
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { stage, epoch }),
                r => r?,
            }
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        log.push(total / count as f64);
    }
    Ok(log)
}

/// Joint encoder/decoder training on reconstruction MSE.
pub fn pretrain(model: &ModelParams, dataset: &Tensor, cfg: &TrainConfig, seed: u64) -> Result<TrainRun> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("pre-training needs at least one epoch".into()));
    }
    let mut model = model.clone();
    let loss_log = fit(&mut model, dataset, cfg, seed, "pretrain")?;
    Ok(TrainRun { model, loss_log })
}

/// Mean reconstruction MSE over `data`, evaluated in fixed-size chunks.
pub fn eval_mse(model: &ModelParams, data: &Tensor) -> Result<f64> {
    eval_with(data, |x| model.reconstruct(x))
}

pub(crate) fn eval_with(data: &Tensor, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<f64> {
    const CHUNK: usize = 256;
    let n = data.batch_len();
    let mut sum = 0.0;
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let x = data.gather(&idx)?;
        let out = f(&x)?;
        sum += loss_mse(&out, &x)? * x.len() as f64;
    }
    Ok(sum / data.len() as f64)
}
