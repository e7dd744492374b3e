//! Desk-scale experiment suites: misalignment, sparsity sweep and ablation.

use crate::align::{
    adapt_full, adapt_zfda, make_domain, pair_mse, psnr_db, realign_equalizer, realign_tuning,
    restore_alignment, Domain, Transform,
};
use crate::data::{fmt_sig6, CsvRow, DatasetHandle};
use crate::error::{Error, Result};
use crate::nn::{build_autoencoder, eval_mse, pretrain, ModelParams, Side, Topology, TrainConfig};
use crate::sam::{Allocation, SamHyper, SamSchedule};
use crate::tensor::Tensor;

/// Every knob of the desk pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub topology: Topology,
    pub model_seed: u64,
    pub split_seed: u64,
    pub pretrain_classes: Vec<u32>,
    pub domain_classes: Vec<u32>,
    /// Held-out share of both the pre-training and the domain images.
    pub test_fraction: f64,
    pub pretrain: TrainConfig,
    pub adapt: TrainConfig,
    pub sam: SamHyper,
    pub sam_schedule: SamSchedule,
    pub transforms: Vec<Transform>,
    pub gammas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Pre-training-distribution images available to both ends for
    /// re-alignment.
    pub shared_size: usize,
    pub tuning_iterations: usize,
    pub tuning_lr: f32,
    pub equalizer: TrainConfig,
}

impl DeskConfig {
    pub fn desk() -> Self {
        Self {
            topology: Topology::desk(),
            model_seed: 0,
            split_seed: 0,
            pretrain_classes: (0..6).collect(),
            domain_classes: (6..10).collect(),
            test_fraction: 0.2,
            pretrain: TrainConfig {
                epochs: 100,
                lr: 3.0,
                batch_size: 32,
            },
            adapt: TrainConfig {
                epochs: 10,
                lr: 0.3,
                batch_size: 32,
            },
            sam: SamHyper {
                gamma: 0.01,
                alpha_s: 10_000.0,
                alpha_v: 0.3,
                v_grad_mode: Default::default(),
                allocation: Allocation::Linear,
            },
            sam_schedule: SamSchedule {
                epochs: 30,
                batch_size: 32,
            },
            transforms: Transform::defaults().to_vec(),
            gammas: vec![0.0003, 0.001, 0.003, 0.01],
            seeds: vec![0, 1, 2],
            shared_size: 256,
            tuning_iterations: 8,
            tuning_lr: 3.0,
            equalizer: TrainConfig {
                epochs: 30,
                lr: 1.0,
                batch_size: 32,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.config()?;
        let disjoint = self.pretrain_classes.iter().all(|c| !self.domain_classes.contains(c));
        if !disjoint {
            return Err(Error::InvalidArgument("pre-training and domain classes overlap".into()));
        }
        if self.pretrain_classes.is_empty() || self.domain_classes.is_empty() {
            return Err(Error::InvalidArgument("class lists must be nonempty".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("test fraction {}", self.test_fraction)));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("no seeds".into()));
        }
        for &g in &self.gammas {
            crate::sam::check_ratio(g)?;
        }
        crate::sam::check_ratio(self.sam.gamma)
    }
}

/// Data splits of a desk run.
#[derive(Debug, Clone)]
pub struct DeskData {
    pub pretrain_train: Tensor,
    /// Held-out pre-training-distribution images; the eval set for J.
    pub pretrain_eval: Tensor,
    pub domain_train: DatasetHandle,
    pub domain_test: DatasetHandle,
    pub shared: Tensor,
}

impl DeskData {
    pub fn prepare(pool: &DatasetHandle, cfg: &DeskConfig) -> Result<Self> {
        cfg.validate()?;
        let pre = pool.filter_classes(&cfg.pretrain_classes)?;
        let dom = pool.filter_classes(&cfg.domain_classes)?;
        let (pre_train, pre_eval) = pre.split(cfg.test_fraction, cfg.split_seed)?;
        let (dom_train, dom_test) = dom.split(cfg.test_fraction, cfg.split_seed)?;
        let shared_idx: Vec<usize> = (0..cfg.shared_size.min(pre_train.len())).collect();
        let shared = pre_train.subset(&shared_idx)?.images;
        Ok(Self {
            pretrain_train: pre_train.images,
            pretrain_eval: pre_eval.images,
            domain_train: dom_train,
            domain_test: dom_test,
            shared,
        })
    }

    /// Train and test views of one domain shift.
    pub fn domain(&self, t: Transform) -> Result<(Domain, Domain)> {
        Ok((make_domain(&self.domain_train, None, t)?, make_domain(&self.domain_test, None, t)?))
    }
}

/// A pre-trained model with its data.
#[derive(Debug, Clone)]
pub struct Desk {
    pub config: DeskConfig,
    pub data: DeskData,
    pub pristine: ModelParams,
    pub pretrain_log: Vec<f64>,
    /// `L(theta*, phi*)` on the held-out pre-training images.
    pub pristine_eval_mse: f64,
}

impl Desk {
    pub fn pretrain(pool: &DatasetHandle, config: DeskConfig) -> Result<Self> {
        let data = DeskData::prepare(pool, &config)?;
        let init = build_autoencoder(&config.topology.config()?, config.model_seed)?;
        let run = pretrain(&init, &data.pretrain_train, &config.pretrain, config.model_seed)?;
        Self::with_model(config, data, run.model, run.loss_log)
    }

    pub fn with_model(config: DeskConfig, data: DeskData, pristine: ModelParams, pretrain_log: Vec<f64>) -> Result<Self> {
        let pristine_eval_mse = pair_mse(&pristine, &pristine, &data.pretrain_eval)?;
        Ok(Self {
            config,
            data,
            pristine,
            pretrain_log,
            pristine_eval_mse,
        })
    }

    /// Misalignment loss of a pairing on the held-out pre-training images.
    pub fn misalignment(&self, tx: &ModelParams, rx: &ModelParams) -> Result<f64> {
        Ok(pair_mse(tx, rx, &self.data.pretrain_eval)? - self.pristine_eval_mse)
    }

    fn hyper(&self, gamma: f64) -> SamHyper {
        SamHyper { gamma, ..self.config.sam }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisalignmentRow {
    pub transform: Transform,
    /// The end that was adapted; the other stays pristine.
    pub adapted_side: Side,
    pub method: &'static str,
    pub seed: u64,
    pub mse: f64,
    pub psnr_db: f64,
    pub misalignment_j: f64,
    pub note: &'static str,
}

impl CsvRow for MisalignmentRow {
    fn header() -> Vec<&'static str> {
        vec!["transform", "adapted_side", "method", "seed", "mse", "psnr_db", "misalignment_j", "note"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.transform.to_string(),
            self.adapted_side.as_str().into(),
            self.method.into(),
            self.seed.to_string(),
            fmt_sig6(self.mse),
            fmt_sig6(self.psnr_db),
            fmt_sig6(self.misalignment_j),
            self.note.into(),
        ]
    }
}

pub const SIMPLIFIED_BASELINE: &str = "simplified baseline";

/// For every transform, seed and adapted side: the misaligned pair, the two
/// re-alignment baselines and the restored sparse adaptation.
pub fn misalignment_suite(desk: &Desk) -> Result<Vec<MisalignmentRow>> {
    let cfg = &desk.config;
    let base = desk.pristine_eval_mse;
    let eval = &desk.data.pretrain_eval;
    let mut rows = Vec::new();
    for &t in &cfg.transforms {
        let (train, _) = desk.data.domain(t)?;
        for &seed in &cfg.seeds {
            let full = adapt_full(&desk.pristine, &train, &cfg.adapt, seed)?.model;
            let zfda = adapt_zfda(&desk.pristine, &train, &desk.hyper(cfg.sam.gamma), &cfg.sam_schedule, seed)?;
            let restored = restore_alignment(&zfda.adapted, &zfda.patch)?;
            for side in [Side::Encoder, Side::Decoder] {
                let (tx, rx) = match side {
                    Side::Encoder => (&full, &desk.pristine),
                    Side::Decoder => (&desk.pristine, &full),
                };
                let mut push = |method, mse: f64, note| {
                    rows.push(MisalignmentRow {
                        transform: t,
                        adapted_side: side,
                        method,
                        seed,
                        mse,
                        psnr_db: psnr_db(mse),
                        misalignment_j: mse - base,
                        note,
                    })
                };
                push("misaligned", pair_mse(tx, rx, eval)?, "");
                let tuned = realign_tuning(tx, rx, &desk.data.shared, cfg.tuning_iterations, cfg.tuning_lr)?;
                push("tuning", eval_mse(&tuned, eval)?, SIMPLIFIED_BASELINE);
                let eq = realign_equalizer(tx, rx, &desk.data.shared, &cfg.equalizer, seed)?;
                push("equalizer", eq.mse(tx, rx, eval)?, SIMPLIFIED_BASELINE);
                let (tx, rx) = match side {
                    Side::Encoder => (&restored, &desk.pristine),
                    Side::Decoder => (&desk.pristine, &restored),
                };
                push("zfda-restore", pair_mse(tx, rx, eval)?, "");
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub transform: Transform,
    pub method: &'static str,
    /// `None` for dense fine-tuning.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub domain_mse: f64,
    pub domain_psnr_db: f64,
    /// PSNR on the pre-training eval set after restoring the pristine model
    /// (sparse) or of the adapted model itself (dense).
    pub alignment_psnr_db: f64,
    pub alignment_j: f64,
    pub patch_entries: usize,
    pub patch_bytes: usize,
    pub value_bytes: usize,
    pub checkpoint_bytes: usize,
    pub patch_fraction: f64,
}

impl CsvRow for SweepRow {
    fn header() -> Vec<&'static str> {
        vec![
            "transform",
            "method",
            "gamma",
            "seed",
            "domain_mse",
            "domain_psnr_db",
            "alignment_psnr_db",
            "alignment_j",
            "patch_entries",
            "patch_bytes",
            "value_bytes",
            "checkpoint_bytes",
            "patch_fraction",
        ]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.transform.to_string(),
            self.method.into(),
            self.gamma.map(fmt_sig6).unwrap_or_default(),
            self.seed.to_string(),
            fmt_sig6(self.domain_mse),
            fmt_sig6(self.domain_psnr_db),
            fmt_sig6(self.alignment_psnr_db),
            fmt_sig6(self.alignment_j),
            self.patch_entries.to_string(),
            self.patch_bytes.to_string(),
            self.value_bytes.to_string(),
            self.checkpoint_bytes.to_string(),
            fmt_sig6(self.patch_fraction),
        ]
    }
}

/// Dense `f32` checkpoint size used as the denominator of patch fractions.
pub fn dense_checkpoint_bytes(model: &ModelParams) -> usize {
    4 * model.param_count()
}

/// Dense fine-tuning plus sparse adaptation at every ratio of the grid, for
/// every transform and seed. Each sparse run is restored and checked.
pub fn zfda_sweep(desk: &Desk) -> Result<Vec<SweepRow>> {
    let cfg = &desk.config;
    let ckpt = dense_checkpoint_bytes(&desk.pristine);
    let mut rows = Vec::new();
    for &t in &cfg.transforms {
        let (train, test) = desk.data.domain(t)?;
        for &seed in &cfg.seeds {
            let full = adapt_full(&desk.pristine, &train, &cfg.adapt, seed)?.model;
            let mse = eval_mse(&full, &test.images)?;
            let align = eval_mse(&full, &desk.data.pretrain_eval)?;
            rows.push(SweepRow {
                transform: t,
                method: "full",
                gamma: None,
                seed,
                domain_mse: mse,
                domain_psnr_db: psnr_db(mse),
                alignment_psnr_db: psnr_db(align),
                alignment_j: align - desk.pristine_eval_mse,
                patch_entries: 0,
                patch_bytes: 0,
                value_bytes: 0,
                checkpoint_bytes: ckpt,
                patch_fraction: 0.0,
            });
            for &gamma in &cfg.gammas {
                let out = adapt_zfda(&desk.pristine, &train, &desk.hyper(gamma), &cfg.sam_schedule, seed)?;
                let mse = eval_mse(&out.adapted, &test.images)?;
                let restored = restore_alignment(&out.adapted, &out.patch)?;
                let align = eval_mse(&restored, &desk.data.pretrain_eval)?;
                let size = out.patch.size();
                rows.push(SweepRow {
                    transform: t,
                    method: "zfda",
                    gamma: Some(gamma),
                    seed,
                    domain_mse: mse,
                    domain_psnr_db: psnr_db(mse),
                    alignment_psnr_db: psnr_db(align),
                    alignment_j: align - desk.pristine_eval_mse,
                    patch_entries: size.entries,
                    patch_bytes: size.file_bytes,
                    value_bytes: size.value_bytes,
                    checkpoint_bytes: ckpt,
                    patch_fraction: size.file_bytes as f64 / ckpt as f64,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Optimized,
    /// Scores never move (`alpha_s = 0`), so the random initial mask stays.
    Frozen,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Optimized => "optimized",
            MaskMode::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub transform: Transform,
    pub mask: MaskMode,
    pub allocation: Allocation,
    pub gamma: f64,
    pub seed: u64,
    pub domain_mse: f64,
    pub domain_psnr_db: f64,
}

impl CsvRow for AblationRow {
    fn header() -> Vec<&'static str> {
        vec!["transform", "mask", "allocation", "gamma", "seed", "domain_mse", "domain_psnr_db"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.transform.to_string(),
            self.mask.as_str().into(),
            self.allocation.as_str().into(),
            fmt_sig6(self.gamma),
            self.seed.to_string(),
            fmt_sig6(self.domain_mse),
            fmt_sig6(self.domain_psnr_db),
        ]
    }
}

/// One sparse adaptation under a given mask mode and allocation; returns the
/// domain test MSE.
pub fn ablation_cell(desk: &Desk, t: Transform, mask: MaskMode, allocation: Allocation, seed: u64) -> Result<f64> {
    let (train, test) = desk.data.domain(t)?;
    let mut hyper = SamHyper {
        allocation,
        ..desk.config.sam
    };
    if mask == MaskMode::Frozen {
        hyper.alpha_s = 0.0;
    }
    let out = adapt_zfda(&desk.pristine, &train, &hyper, &desk.config.sam_schedule, seed)?;
    eval_mse(&out.adapted, &test.images)
}

/// {optimized, frozen} masks x {linear, uniform} allocation at the
/// configured ratio.
pub fn ablation_suite(desk: &Desk) -> Result<Vec<AblationRow>> {
    let cfg = &desk.config;
    let mut rows = Vec::new();
    for &t in &cfg.transforms {
        for mask in [MaskMode::Optimized, MaskMode::Frozen] {
            for allocation in [Allocation::Linear, Allocation::Uniform] {
                for &seed in &cfg.seeds {
                    let mse = ablation_cell(desk, t, mask, allocation, seed)?;
                    rows.push(AblationRow {
                        transform: t,
                        mask,
                        allocation,
                        gamma: cfg.sam.gamma,
                        seed,
                        domain_mse: mse,
                        domain_psnr_db: psnr_db(mse),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// One line of a training loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub loss: f64,
}

impl CsvRow for LossRow {
    fn header() -> Vec<&'static str> {
        vec!["epoch", "loss"]
    }

    fn record(&self) -> Vec<String> {
        vec![self.epoch.to_string(), fmt_sig6(self.loss)]
    }
}

pub fn loss_rows(log: &[f64]) -> Vec<LossRow> {
    log.iter()
        .enumerate()
        .map(|(i, &loss)| LossRow { epoch: i + 1, loss })
        .collect()
}
