use crate::error::{Error, Result};
use crate::nn::train::epoch_batches;
use crate::nn::ModelParams;
use crate::rng::{stream, Prng};
use crate::sam::state::{init_sam, sam_gradients, sam_step, SamHyper, SamState};
use crate::tensor::Tensor;

/// Early stopping: stop once the best epoch loss has improved by less than
/// this for [`PATIENCE`] consecutive epochs.
pub const MIN_IMPROVEMENT: f64 = 1e-5;
pub const PATIENCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamSchedule {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Training pairs for the domain loss. Reconstruction uses the inputs as
/// targets.
#[derive(Debug, Clone, Copy)]
pub struct Supervision<'a> {
    pub inputs: &'a Tensor,
    pub targets: Option<&'a Tensor>,
}

impl<'a> Supervision<'a> {
    pub fn reconstruct(inputs: &'a Tensor) -> Self {
        Self { inputs, targets: None }
    }

    pub fn regress(inputs: &'a Tensor, targets: &'a Tensor) -> Self {
        Self {
            inputs,
            targets: Some(targets),
        }
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let x = self.inputs.gather(idx)?;
        let y = match self.targets {
            Some(t) => t.gather(idx)?,
            None => x.clone(),
        };
        Ok((x, y))
    }
}

#[derive(Debug, Clone)]
pub struct SamRun {
    pub state: SamState,
    /// Mean batch loss per epoch, measured before each update.
    pub loss_log: Vec<f64>,
    /// Number of mask swaps (summed over layers) per epoch.
    pub swap_log: Vec<usize>,
}

/// Full SAM optimization: init, then repeated batch gradient and update
/// steps until the epoch cap or early stop.
pub fn optimize_sam(
    pristine: &ModelParams,
    data: Supervision<'_>,
    hyper: &SamHyper,
    schedule: &SamSchedule,
    seed: u64,
) -> Result<SamRun> {
    let state = init_sam(pristine, hyper, seed)?;
    run_sam(pristine, state, data, schedule, seed)
}

/// Runs the optimization loop from an existing state.
pub fn run_sam(
    pristine: &ModelParams,
    mut state: SamState,
    data: Supervision<'_>,
    schedule: &SamSchedule,
    seed: u64,
) -> Result<SamRun> {
    let n = data.inputs.batch_len();
    if n == 0 {
        return Err(Error::EmptyDataset("SAM domain".into()));
    }
    if data.targets.is_some_and(|t| t.batch_len() != n) {
        return Err(Error::Shape("targets and inputs differ in length".into()));
    }
    state.check_layout(pristine)?;
    let mut rng = Prng::derive(seed, stream::SHUFFLE);
    let mut loss_log = Vec::new();
    let mut swap_log = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..schedule.epochs {
        let mut total = 0.0;
        let mut swaps = 0;
        for batch in epoch_batches(n, schedule.batch_size, &mut rng) {
            let (x, y) = data.batch(&batch)?;
            let grads = match sam_gradients(pristine, &state, &x, &y, false) {
                Err(Error::NonFinite(_)) => return Err(diverged(epoch, &state)),
                r => r?,
            };
            if !grads.loss.is_finite() {
                return Err(diverged(epoch, &state));
            }
            let step = match sam_step(&mut state, &grads) {
                Err(Error::NonFinite(_)) => return Err(diverged(epoch, &state)),
                r => r?,
            };
            swaps += step.iter().map(|s| s.len()).sum::<usize>();
            total += grads.loss * batch.len() as f64;
        }
        let epoch_loss = total / n as f64;
        loss_log.push(epoch_loss);
        swap_log.push(swaps);
        if best - epoch_loss < MIN_IMPROVEMENT {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= PATIENCE {
            break;
        }
    }
    Ok(SamRun {
        state,
        loss_log,
        swap_log,
    })
}

fn diverged(epoch: usize, state: &SamState) -> Error {
    Error::SamDiverged {
        epoch,
        last_state: Box::new(state.clone()),
    }
}
