//! `train` and `baseline-train`: supervised training of the frame-to-tatum
//! transcriber (optionally LM-regularized) and of the frame-level
//! comparison model.

use std::path::Path;

use anyhow::anyhow;
use tatumscribe_core::train::{train_baseline, train_transcriber, LmKind, TrainItem};

use crate::config::RunConfig;
use crate::dataset::load_split;
use crate::error::{runtime, validation, CliResult};
use crate::formats::{ensure_dir, read_language_model, write_checkpoint, write_train_log, Manifest};

fn load_train_val(
    manifest_path: &Path,
) -> CliResult<(Vec<TrainItem>, Option<Vec<TrainItem>>)> {
    let manifest = Manifest::read(manifest_path)?;
    let train: Vec<TrainItem> = load_split(manifest_path, &manifest, "train")?
        .into_iter()
        .map(|(_, item)| item)
        .collect();
    let val = if manifest.split("val").is_empty() {
        None
    } else {
        Some(
            load_split(manifest_path, &manifest, "val")?
                .into_iter()
                .map(|(_, item)| item)
                .collect(),
        )
    };
    Ok((train, val))
}

pub fn run(
    cfg: &mut RunConfig,
    manifest_path: &Path,
    lm_path: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    ensure_dir(out)?;
    let lm = lm_path.map(read_language_model).transpose()?;

    // The model file decides the kind; gamma/alpha defaults follow it
    // unless the config pinned them explicitly.
    let kind = match &lm {
        Some(m) => m.kind(),
        None => "none",
    };
    cfg.train.lm_kind = kind.to_string();
    let train_cfg = cfg.train.to_core()?;
    if train_cfg.alpha > 0.0 && lm.is_none() {
        return Err(validation(anyhow!(
            "alpha = {} needs a language model (pass --lm)",
            train_cfg.alpha
        )));
    }
    let arch = cfg.transcriber.to_core();
    let (train_set, val_set) = load_train_val(manifest_path)?;
    log::info!(
        "training transcriber on {} songs (lm: {kind}, gamma {}, alpha {})",
        train_set.len(),
        train_cfg.gamma,
        train_cfg.alpha
    );
    let (model, logs) =
        train_transcriber(&train_set, val_set.as_deref(), lm.as_ref(), &arch, &train_cfg)
            .map_err(runtime)?;

    write_checkpoint(&out.join("crnn.tscb"), model.params())?;
    write_train_log(&out.join("train-log.csv"), &logs)?;
    cfg.dump_effective(out)?;
    if let Some(last) = logs.last() {
        match last.val_f {
            Some(v) => println!(
                "epoch {}: train F={:.3} val F={v:.3}",
                last.epoch, last.train_f
            ),
            None => println!("epoch {}: train F={:.3}", last.epoch, last.train_f),
        }
    }
    println!("wrote {}", out.join("crnn.tscb").display());
    Ok(())
}

pub fn run_baseline(cfg: &mut RunConfig, manifest_path: &Path, out: &Path) -> CliResult<()> {
    ensure_dir(out)?;
    cfg.train.lm_kind = LmKind::None.name().to_string();
    let train_cfg = cfg.train.to_core()?;
    let arch = cfg.transcriber.to_core();
    let peak = cfg.peak_pick.to_core();
    let (train_set, val_set) = load_train_val(manifest_path)?;
    log::info!(
        "training frame-level baseline on {} songs (beta {})",
        train_set.len(),
        cfg.baseline.beta
    );
    let (model, logs) = train_baseline(
        &train_set,
        val_set.as_deref(),
        &arch,
        &train_cfg,
        cfg.baseline.beta,
        &peak,
    )
    .map_err(runtime)?;

    write_checkpoint(&out.join("frame.tscb"), model.params())?;
    write_train_log(&out.join("train-log.csv"), &logs)?;
    cfg.dump_effective(out)?;
    if let Some(last) = logs.last() {
        println!("epoch {}: train F={:.3}", last.epoch, last.train_f);
    }
    println!("wrote {}", out.join("frame.tscb").display());
    Ok(())
}
