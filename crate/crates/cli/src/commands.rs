use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use zfda_core::align::{adapt_full, adapt_zfda, eval_alignment, pair_mse, psnr_db, PairIds};
use zfda_core::data::{
    csv_string, gen_synthetic, read_cifar_binary, read_tensor_file, write_csv_report, write_tensor_file, CifarVariant,
    CsvRow, DatasetHandle,
};
use zfda_core::delta::{apply_patch, load_patch, revert_patch, verify_digest, write_patch, DeltaPatch};
use zfda_core::experiment::{ablation_suite, loss_rows, misalignment_suite, zfda_sweep, Desk, DeskData};
use zfda_core::nn::checkpoint::{read_checkpoint, write_checkpoint};
use zfda_core::nn::{eval_mse, ModelParams};
use zfda_core::{Digest, Error, Tensor};

use crate::config::{ConfigError, DatasetKind, Settings};
use crate::{Method, PatchAction, Suite};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_DIGEST: u8 = 4;
pub const EXIT_SHAPE: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(e: ConfigError) -> Self {
        Self::new(EXIT_CONFIG, e.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::NoForward => EXIT_CONFIG,
            Error::EmptyDataset(_) | Error::Format { .. } | Error::Io { .. } | Error::Csv(_) => EXIT_DATA,
            Error::Diverged { .. } | Error::SamDiverged { .. } | Error::NonFinite(_) => EXIT_DIVERGED,
            Error::DigestMismatch { .. } => EXIT_DIGEST,
            Error::Shape(_) | Error::LayerChain { .. } | Error::Layout(_) => EXIT_SHAPE,
        };
        Self::new(code, e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_DATA, format!("{}: {e}", path.display()))
}

/// Creates the output directory and echoes the resolved config into it.
fn prepare_output(s: &Settings) -> Result<()> {
    fs::create_dir_all(&s.output_dir).map_err(|e| io_err(&s.output_dir, e))?;
    let path = s.output_dir.join("resolved.conf");
    fs::write(&path, s.raw.echo()).map_err(|e| io_err(&path, e))
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::new(EXIT_DATA, format!("{key} is not set")))
}

fn load_pool(s: &Settings) -> Result<DatasetHandle> {
    let size = s.desk.topology.image_size;
    let channels = s.desk.topology.image_channels;
    let pool = match s.dataset {
        DatasetKind::Synthetic => gen_synthetic(s.synthetic_count, channels, size, size, s.data_seed)?,
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let variant = if s.dataset == DatasetKind::Cifar10 {
                CifarVariant::Cifar10
            } else {
                CifarVariant::Cifar100
            };
            let full = read_cifar_binary(required(&s.data_path, "data_path")?, variant)?;
            if s.full_resolution {
                full
            } else {
                full.downsample2x()?
            }
        }
        DatasetKind::Tensor => {
            let images = read_tensor_file(required(&s.data_path, "data_path")?)?;
            let labels = read_tensor_file(required(&s.labels_path, "labels_path")?)?;
            let labels = labels
                .data()
                .iter()
                .map(|&l| {
                    (l >= 0.0 && l.fract() == 0.0 && l <= u32::MAX as f32)
                        .then_some(l as u32)
                        .ok_or_else(|| CliError::new(EXIT_DATA, format!("labels_path: label {l} is not a class index")))
                })
                .collect::<Result<Vec<u32>>>()?;
            let source = s.data_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            DatasetHandle::new(images, labels, source)?
        }
    };
    let want = [channels, size, size];
    if pool.image_shape() != want {
        return Err(CliError::new(
            EXIT_DATA,
            format!("images are {:?} but the topology expects {want:?}", pool.image_shape()),
        ));
    }
    Ok(pool)
}

fn checkpoint_path(s: &Settings) -> PathBuf {
    s.checkpoint.clone().unwrap_or_else(|| s.output_dir.join("pristine.zfm"))
}

/// Loads the pristine checkpoint and checks it against `pristine_digest`
/// when one is configured.
fn load_pristine(s: &Settings) -> Result<ModelParams> {
    let path = checkpoint_path(s);
    let model = read_checkpoint(&path)?;
    if let Some(want) = s.pristine_digest {
        let found = model.digest();
        if found != want {
            return Err(CliError::new(
                EXIT_DIGEST,
                format!("{}: digest {} does not match pristine_digest {}", path.display(), found.to_hex(), want.to_hex()),
            ));
        }
    }
    Ok(model)
}

fn write_digest(digest: Digest, path: &Path) -> Result<()> {
    fs::write(path, format!("{}\n", digest.to_hex())).map_err(|e| io_err(path, e))
}

pub fn pretrain(s: &Settings) -> Result<()> {
    prepare_output(s)?;
    let pool = load_pool(s)?;
    let desk = Desk::pretrain(&pool, s.desk.clone())?;
    let ckpt = s.output_dir.join("pristine.zfm");
    write_checkpoint(&desk.pristine, &ckpt)?;
    let digest = desk.pristine.digest();
    write_digest(digest, &s.output_dir.join("pristine.sha256"))?;
    write_csv_report(&loss_rows(&desk.pretrain_log), s.output_dir.join("pretrain_loss.csv"))?;
    println!("checkpoint {}", ckpt.display());
    println!("params {}", desk.pristine.param_count());
    println!("eval mse {} psnr {:.3} dB", desk.pristine_eval_mse, psnr_db(desk.pristine_eval_mse));
    println!("digest {}", digest.to_hex());
    Ok(())
}

pub fn adapt(s: &Settings, method: Method) -> Result<()> {
    prepare_output(s)?;
    let pristine = load_pristine(s)?;
    let pool = load_pool(s)?;
    let data = DeskData::prepare(&pool, &s.desk)?;
    let (train, test) = data.domain(s.transform)?;
    let (adapted, loss_log) = match method {
        Method::Full => {
            let run = adapt_full(&pristine, &train, &s.desk.adapt, s.seed)?;
            let path = s.output_dir.join("adapted_full.zfm");
            write_checkpoint(&run.model, &path)?;
            println!("checkpoint {}", path.display());
            (run.model, run.loss_log)
        }
        Method::Zfda => {
            let out = adapt_zfda(&pristine, &train, &s.desk.sam, &s.desk.sam_schedule, s.seed)?;
            let ckpt = s.output_dir.join("adapted_zfda.zfm");
            let patch_path = s.output_dir.join("patch.zfp");
            write_checkpoint(&out.adapted, &ckpt)?;
            write_patch(&out.patch, &patch_path)?;
            verify_restore(&ckpt, &patch_path, &pristine)?;
            let n = pristine.param_count();
            let entries = out.patch.entry_count();
            println!("checkpoint {}", ckpt.display());
            println!("patch {}", patch_path.display());
            println!(
                "patch entries {entries} of {n} params ({:.4}%), {} bytes",
                100.0 * entries as f64 / n as f64,
                out.patch.size().file_bytes
            );
            println!("restore verified {}", pristine.digest().to_hex());
            (out.adapted, out.run.loss_log)
        }
    };
    write_csv_report(&loss_rows(&loss_log), s.output_dir.join("domain_loss.csv"))?;
    let mse = eval_mse(&adapted, &test.images)?;
    println!("domain {} test mse {mse} psnr {:.3} dB", s.transform, psnr_db(mse));
    Ok(())
}

/// Reads the written files back and checks that reverting the patch yields
/// the pristine parameters bit for bit.
fn verify_restore(ckpt: &Path, patch: &Path, pristine: &ModelParams) -> Result<()> {
    let adapted = read_checkpoint(ckpt)?;
    let patch = load_patch(patch)?;
    let fail = |why: String| CliError::new(EXIT_DIGEST, format!("zero-forget restore failed: {why}"));
    let restored = revert_patch(&adapted, &patch).map_err(|e| fail(e.to_string()))?;
    if restored.canonical_bytes() != pristine.canonical_bytes() {
        return Err(fail(format!(
            "restored digest {} differs from pristine {}",
            restored.digest().to_hex(),
            pristine.digest().to_hex()
        )));
    }
    Ok(())
}

pub fn align_eval(s: &Settings, encoder: &Path, decoder: &Path) -> Result<()> {
    prepare_output(s)?;
    let pristine = load_pristine(s)?;
    let tx = read_checkpoint(encoder)?;
    let rx = read_checkpoint(decoder)?;
    let pool = load_pool(s)?;
    let data = DeskData::prepare(&pool, &s.desk)?;
    let eval = &data.pretrain_eval;
    let base = pair_mse(&pristine, &pristine, eval)?;
    let name = |p: &Path| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let (enc, dec) = (name(encoder), name(decoder));
    let ids = PairIds {
        eval_set: "pretrain-eval",
        encoder: &enc,
        decoder: &dec,
    };
    let row = eval_alignment(&tx, &rx, eval, base, ids)?;
    let path = s.output_dir.join("alignment.csv");
    append_csv(&path, std::slice::from_ref(&row))?;
    println!("mse {} psnr {} dB J {}", row.mse, row.psnr_db, row.misalignment_j);
    Ok(())
}

/// Appends rows, writing the header only when the file is new.
fn append_csv<R: CsvRow>(path: &Path, rows: &[R]) -> Result<()> {
    let text = csv_string(rows)?;
    let exists = path.exists();
    let body = if exists {
        text.split_once('\n').map(|(_, rest)| rest).unwrap_or("")
    } else {
        &text
    };
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| io_err(path, e))
}

fn mismatch(e: Error) -> CliError {
    CliError::new(EXIT_DIGEST, format!("patch does not match checkpoint: {e}"))
}

pub fn patch(action: PatchAction, checkpoint: &Path, patch: &Path, out: Option<&Path>) -> Result<()> {
    let model = read_checkpoint(checkpoint)?;
    let delta: DeltaPatch = load_patch(patch)?;
    delta.validate_against(&model).map_err(mismatch)?;
    let out = || out.ok_or_else(|| CliError::new(EXIT_CONFIG, "--out is required for apply and revert"));
    match action {
        PatchAction::Verify => {
            if verify_digest(&model, &delta) {
                println!("OK pristine {}", model.digest().to_hex());
            } else if revert_patch(&model, &delta).is_ok() {
                println!("OK adapted {}", model.digest().to_hex());
            } else {
                return Err(CliError::new(
                    EXIT_DIGEST,
                    format!(
                        "checkpoint {} is neither the pristine model of the patch nor its adapted form",
                        model.digest().to_hex()
                    ),
                ));
            }
        }
        PatchAction::Apply => {
            let out = out()?;
            let adapted = apply_patch(&model, &delta)?;
            write_checkpoint(&adapted, out)?;
            println!("OK {}", adapted.digest().to_hex());
        }
        PatchAction::Revert => {
            let out = out()?;
            let restored = revert_patch(&model, &delta)?;
            write_checkpoint(&restored, out)?;
            println!("OK {}", restored.digest().to_hex());
        }
    }
    Ok(())
}

/// The pristine model from `checkpoint` when set, otherwise pre-trained in
/// place and saved next to the tables.
fn desk(s: &Settings, pool: &DatasetHandle) -> Result<Desk> {
    if s.checkpoint.is_some() {
        let data = DeskData::prepare(pool, &s.desk)?;
        return Ok(Desk::with_model(s.desk.clone(), data, load_pristine(s)?, Vec::new())?);
    }
    let desk = Desk::pretrain(pool, s.desk.clone())?;
    write_checkpoint(&desk.pristine, s.output_dir.join("pristine.zfm"))?;
    write_digest(desk.pristine.digest(), &s.output_dir.join("pristine.sha256"))?;
    write_csv_report(&loss_rows(&desk.pretrain_log), s.output_dir.join("pretrain_loss.csv"))?;
    Ok(desk)
}

pub fn experiment(s: &Settings, suite: Suite) -> Result<()> {
    prepare_output(s)?;
    let pool = load_pool(s)?;
    let desk = desk(s, &pool)?;
    let path = match suite {
        Suite::Misalignment => {
            let rows = misalignment_suite(&desk)?;
            if let Some(r) = rows.iter().find(|r| r.method == "zfda-restore" && r.misalignment_j != 0.0) {
                return Err(CliError::new(
                    EXIT_DIGEST,
                    format!("restored pair {} {} has J = {}", r.transform, r.adapted_side.as_str(), r.misalignment_j),
                ));
            }
            let path = s.output_dir.join("misalignment.csv");
            write_csv_report(&rows, &path)?;
            path
        }
        Suite::ZfdaSweep => {
            let rows = zfda_sweep(&desk)?;
            let path = s.output_dir.join("zfda_sweep.csv");
            write_csv_report(&rows, &path)?;
            path
        }
        Suite::Ablation => {
            let rows = ablation_suite(&desk)?;
            let path = s.output_dir.join("ablation.csv");
            write_csv_report(&rows, &path)?;
            path
        }
    };
    println!("wrote {}", path.display());
    Ok(())
}

pub fn gen_data(s: &Settings) -> Result<()> {
    prepare_output(s)?;
    let size = s.desk.topology.image_size;
    let pool = gen_synthetic(s.synthetic_count, s.desk.topology.image_channels, size, size, s.data_seed)?;
    let labels = Tensor::new(vec![pool.len()], pool.labels.iter().map(|&l| l as f32).collect())?;
    let images_path = s.output_dir.join("images.zft");
    let labels_path = s.output_dir.join("labels.zft");
    write_tensor_file(&images_path, &pool.images)?;
    write_tensor_file(&labels_path, &labels)?;
    println!("wrote {} and {}", images_path.display(), labels_path.display());
    Ok(())
}
