//! Semantic-communication harness: domains, adaptation, cross-pairing of
//! encoders and decoders, misalignment measurement, re-alignment baselines
//! and restoration.

mod transform;

pub use transform::{apply_transform, transform_batch, Transform};

use crate::data::{fmt_sig6, CsvRow, DatasetHandle};
use crate::delta::{revert_patch, DeltaPatch};
use crate::error::{Error, Result};
use crate::nn::loss::{loss_mse, mse_grad};
use crate::nn::train::{epoch_batches, eval_with, fit, sgd_update};
use crate::nn::{LayerSpec, ModelParams, Network, TrainConfig, TrainRun};
use crate::rng::{stream, Prng};
use crate::sam::{effective_params, extract_delta, optimize_sam, SamHyper, SamRun, SamSchedule, SparseDelta, Supervision};
use crate::tensor::Tensor;

/// A local domain: filtered, transformed images.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub transform: Transform,
    pub class_filter: Option<Vec<u32>>,
    pub source: String,
}

impl Domain {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn make_domain(dataset: &DatasetHandle, class_filter: Option<&[u32]>, transform: Transform) -> Result<Domain> {
    let selected = match class_filter {
        Some(c) => dataset.filter_classes(c)?,
        None => dataset.clone(),
    };
    Ok(Domain {
        images: transform_batch(&selected.images, transform)?,
        labels: selected.labels,
        transform,
        class_filter: class_filter.map(<[u32]>::to_vec),
        source: selected.source,
    })
}

/// Dense fine-tuning of every parameter on the domain's reconstruction loss.
/// Zero epochs return an unchanged copy.
pub fn adapt_full(model: &ModelParams, domain: &Domain, cfg: &TrainConfig, seed: u64) -> Result<TrainRun> {
    if domain.is_empty() {
        return Err(Error::EmptyDataset("adaptation domain".into()));
    }
    let mut adapted = model.clone();
    let loss_log = fit(&mut adapted, &domain.images, cfg, seed, "adapt")?;
    Ok(TrainRun {
        model: adapted,
        loss_log,
    })
}

/// Result of a sparse adaptation.
#[derive(Debug, Clone)]
pub struct ZfdaOutcome {
    pub adapted: ModelParams,
    pub delta: SparseDelta,
    pub patch: DeltaPatch,
    pub run: SamRun,
}

pub fn adapt_zfda(
    model: &ModelParams,
    domain: &Domain,
    hyper: &SamHyper,
    schedule: &SamSchedule,
    seed: u64,
) -> Result<ZfdaOutcome> {
    let run = optimize_sam(model, Supervision::reconstruct(&domain.images), hyper, schedule, seed)?;
    let adapted = effective_params(model, &run.state)?;
    let delta = extract_delta(&run.state, model)?;
    let patch = DeltaPatch::from_delta(&delta, model)?;
    Ok(ZfdaOutcome {
        adapted,
        delta,
        patch,
        run,
    })
}

/// Encoder of `tx` feeding the decoder of `rx`.
pub fn cross_pair(tx: &ModelParams, rx: &ModelParams) -> Result<ModelParams> {
    ModelParams::new(tx.encoder().clone(), rx.decoder().clone())
}

/// `x_hat = g_rx(f_tx(x))` over an identity link.
pub fn sc_round_trip(tx: &ModelParams, rx: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let semantics = tx.encode(x)?;
    rx.decode(&semantics)?.reshape(x.shape().to_vec())
}

pub fn psnr_db(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}

/// One evaluated encoder/decoder pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub eval_set: String,
    pub encoder: String,
    pub decoder: String,
    pub mse: f64,
    pub psnr_db: f64,
    /// Loss increase over the jointly trained pair on the same eval set.
    pub misalignment_j: f64,
}

impl CsvRow for AlignmentReport {
    fn header() -> Vec<&'static str> {
        vec!["eval_set", "encoder", "decoder", "mse", "psnr_db", "misalignment_j"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.eval_set.clone(),
            self.encoder.clone(),
            self.decoder.clone(),
            fmt_sig6(self.mse),
            fmt_sig6(self.psnr_db),
            fmt_sig6(self.misalignment_j),
        ]
    }
}

/// Reconstruction MSE of a pairing over `eval_set`.
pub fn pair_mse(tx: &ModelParams, rx: &ModelParams, eval_set: &Tensor) -> Result<f64> {
    if eval_set.batch_len() == 0 {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    eval_with(eval_set, |x| sc_round_trip(tx, rx, x))
}

/// Names identify the eval set and the two endpoints in the report.
#[derive(Debug, Clone, Copy)]
pub struct PairIds<'a> {
    pub eval_set: &'a str,
    pub encoder: &'a str,
    pub decoder: &'a str,
}

pub fn eval_alignment(
    tx: &ModelParams,
    rx: &ModelParams,
    eval_set: &Tensor,
    pristine_loss: f64,
    ids: PairIds<'_>,
) -> Result<AlignmentReport> {
    let mse = pair_mse(tx, rx, eval_set)?;
    Ok(report(mse, pristine_loss, ids))
}

fn report(mse: f64, pristine_loss: f64, ids: PairIds<'_>) -> AlignmentReport {
    AlignmentReport {
        eval_set: ids.eval_set.into(),
        encoder: ids.encoder.into(),
        decoder: ids.decoder.into(),
        mse,
        psnr_db: psnr_db(mse),
        misalignment_j: mse - pristine_loss,
    }
}

/// Joint fine-tune of a cross pair on shared data: each iteration is one
/// full-batch gradient step. Returns the re-tuned pair as one model.
pub fn realign_tuning(tx: &ModelParams, rx: &ModelParams, shared: &Tensor, iterations: usize, lr: f32) -> Result<ModelParams> {
    if shared.batch_len() == 0 {
        return Err(Error::EmptyDataset("shared data".into()));
    }
    let mut pair = cross_pair(tx, rx)?;
    let cfg = TrainConfig {
        epochs: iterations,
        lr,
        batch_size: shared.batch_len(),
    };
    fit(&mut pair, shared, &cfg, 0, "tuning")?;
    Ok(pair)
}

/// Two-layer dense map `Dense(b, 2b) -> ReLU -> Dense(2b, b)` inserted
/// between a frozen encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Equalizer {
    pub net: Network,
}

impl Equalizer {
    /// Starts as the exact identity: `relu(x) - relu(-x) = x`.
    pub fn identity(width: usize) -> Result<Self> {
        let mut w1 = vec![0.0f32; 2 * width * width + 2 * width];
        for i in 0..width {
            w1[i * width + i] = 1.0;
            w1[(width + i) * width + i] = -1.0;
        }
        let mut w2 = vec![0.0f32; 2 * width * width + width];
        for i in 0..width {
            w2[i * 2 * width + i] = 1.0;
            w2[i * 2 * width + width + i] = -1.0;
        }
        let net = Network::new(
            vec![LayerSpec::dense(width, 2 * width), LayerSpec::ReLU, LayerSpec::dense(2 * width, width)],
            vec![Tensor::from_vec(w1)?, Tensor::from_vec(w2)?],
        )?;
        Ok(Self { net })
    }

    pub fn reconstruct(&self, tx: &ModelParams, rx: &ModelParams, x: &Tensor) -> Result<Tensor> {
        let s = self.net.forward(&tx.encode(x)?)?;
        rx.decode(&s)?.reshape(x.shape().to_vec())
    }

    pub fn mse(&self, tx: &ModelParams, rx: &ModelParams, eval_set: &Tensor) -> Result<f64> {
        if eval_set.batch_len() == 0 {
            return Err(Error::EmptyDataset("evaluation set".into()));
        }
        eval_with(eval_set, |x| self.reconstruct(tx, rx, x))
    }
}

/// Trains an identity-initialized equalizer on `||g_rx(E(f_tx(x))) - x||^2`
/// with both endpoints frozen.
pub fn realign_equalizer(tx: &ModelParams, rx: &ModelParams, shared: &Tensor, cfg: &TrainConfig, seed: u64) -> Result<Equalizer> {
    if shared.batch_len() == 0 {
        return Err(Error::EmptyDataset("shared data".into()));
    }
    let width = tx.encoder().output_len();
    if width != rx.decoder().input_len() {
        return Err(Error::Shape(format!(
            "encoder emits {width} values, decoder expects {}",
            rx.decoder().input_len()
        )));
    }
    let mut eq = Equalizer::identity(width)?;
    let mut rng = Prng::derive(seed, stream::EQUALIZER);
    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(shared.batch_len(), cfg.batch_size, &mut rng) {
            let x = shared.gather(&batch)?;
            let mut step = || -> Result<()> {
                let s = tx.encode(&x)?;
                let eq_trace = eq.net.forward_traced(&s)?;
                let dec_trace = rx.decoder().forward_traced(eq_trace.output())?;
                let target = x.clone().reshape(dec_trace.output().shape().to_vec())?;
                let loss = loss_mse(dec_trace.output(), &target)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("equalizer loss".into()));
                }
                let g = rx.decoder().backward(&dec_trace, &mse_grad(dec_trace.output(), &target)?)?;
                let ge = eq.net.backward(&eq_trace, &g.input)?;
                sgd_update(eq.net.params_mut(), &ge.params, cfg.lr)
            };
            match step() {
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { stage: "equalizer", epoch }),
                r => r?,
            }
        }
    }
    Ok(eq)
}

/// Zero-forget restoration: overwrites every patched entry with its stored
/// original and checks the pristine digest.
pub fn restore_alignment(adapted: &ModelParams, patch: &DeltaPatch) -> Result<ModelParams> {
    revert_patch(adapted, patch)
}
