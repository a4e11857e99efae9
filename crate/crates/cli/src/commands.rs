//! The five subcommands as plain functions over paths and a [`RunConfig`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use resattn::data::io::list_pngs;
use resattn::data::{
    load_image, load_mask, load_split, match_files, save_mask, tta_predict, write_corpus,
    DihedralTransform,
};
use resattn::model::{Accounting, Checkpoint, ModelConfig, Network};
use resattn::train::{EpochRecord, Evaluation, Trainer};
use resattn::{Error, Result};

use crate::config::RunConfig;

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const METRICS_FILE: &str = "metrics.txt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn checkpoint(trainer: &Trainer, rec: Option<&EpochRecord>) -> Checkpoint {
    let ckpt = Checkpoint::from_network(&trainer.net)
        .with_optimizer(&trainer.opt)
        .with_meta("epochs_done", trainer.epochs_done)
        .with_meta("seed", trainer.config.seed);
    match rec {
        Some(r) => ckpt.with_meta("epoch", r.epoch).with_meta("val_dsc", r.dsc),
        None => ckpt,
    }
}

/// Summary of a finished training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// The epoch whose weights are in `best.ckpt`, if any epoch ran.
    pub best: Option<EpochRecord>,
}

/// Trains on `data/train`, validates on `data/validation` after every epoch
/// and writes `config.txt`, `train_log.csv`, `best.ckpt` and `last.ckpt` to
/// `out`. With zero epochs both checkpoints hold the initial weights.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = load_split(data, "train")?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let val_set = load_split(data, "validation")?;
    create_dir(out)?;
    cfg.write_to_dir(out)?;

    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    writeln!(log, "epoch,seg_loss,dsc").map_err(|e| Error::io(&log_path, e))?;

    let net = Network::new(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(net, cfg.train.clone())?;
    let (best_path, last_path) = (out.join(BEST_CKPT), out.join(LAST_CKPT));
    checkpoint(&trainer, None).save(&best_path)?;

    let mut best: Option<EpochRecord> = None;
    let records = trainer.fit(&train_set, &val_set, |rec, t| {
        writeln!(log, "{},{},{}", rec.epoch, rec.seg_loss, rec.dsc)
            .and_then(|_| log.flush())
            .map_err(|e| Error::io(&log_path, e))?;
        // Without a validation split the latest epoch counts as best.
        if best.is_none_or(|b| rec.dsc > b.dsc || rec.dsc.is_nan()) {
            best = Some(*rec);
            checkpoint(t, Some(rec)).save(&best_path)?;
        }
        Ok(())
    })?;
    checkpoint(&trainer, records.last()).save(&last_path)?;
    Ok(TrainOutcome { log: records, best })
}

/// Loads a checkpoint. When `model` is given the weights must match its
/// layout; otherwise the checkpoint's own config is used.
pub fn load_network(path: &Path, model: Option<&ModelConfig>) -> Result<Network<f32>> {
    let ckpt = Checkpoint::load(path)?;
    match model {
        Some(m) => Network::from_weights(m.clone(), ckpt.weights),
        None => ckpt.into_network(),
    }
}

/// Writes a 0/255 mask with the input's name and dimensions for every PNG
/// in `images`. Returns the written paths.
pub fn predict(
    cfg: &RunConfig,
    net: &Network<f32>,
    images: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let names = list_pngs(images)?;
    if names.is_empty() {
        return Err(Error::Empty("image directory"));
    }
    create_dir(out)?;
    cfg.write_to_dir(out)?;
    let transforms: &[DihedralTransform] = if cfg.tta {
        &DihedralTransform::ALL
    } else {
        &[DihedralTransform::Identity]
    };
    let mut written = Vec::with_capacity(names.len());
    for name in names {
        let image = load_image(images.join(&name))?;
        let mask = tta_predict(
            net,
            &image,
            transforms,
            cfg.train.patch_size,
            cfg.train.threshold,
        )?;
        let path = out.join(&name);
        save_mask(&path, &mask)?;
        written.push(path);
    }
    Ok(written)
}

/// Scores the masks in `pred` against same-named masks in `gt`.
pub fn evaluate(cfg: &RunConfig, pred: &Path, gt: &Path) -> Result<Evaluation> {
    let pairs = match_files(pred, gt)?;
    let mut preds = Vec::with_capacity(pairs.len());
    let mut gts = Vec::with_capacity(pairs.len());
    for (p, g) in &pairs {
        let (p, g) = (load_mask(p)?, load_mask(g)?);
        if p.shape() != g.shape() {
            let (ps, gs) = (p.shape(), g.shape());
            return Err(Error::DimensionMismatch {
                image_hw: (ps.h as u32, ps.w as u32),
                mask_hw: (gs.h as u32, gs.w as u32),
            });
        }
        preds.push(p);
        gts.push(g);
    }
    Evaluation::from_masks(&preds, &gts, cfg.train.patch_size)
}

/// Human-readable metrics block, one `name value` per line.
pub fn format_evaluation(e: &Evaluation) -> String {
    let mut s = String::new();
    for (level, r) in [
        ("patch_micro", &e.patch_micro),
        ("patch_macro", &e.patch_macro),
        ("image_micro", &e.image_micro),
        ("image_macro", &e.image_macro),
    ] {
        for (name, v) in r.scores() {
            s.push_str(&format!("{level}_{name} {v:.6}\n"));
        }
    }
    s
}

/// Per-layer table plus totals for an `h × w` input.
pub fn info(model: &ModelConfig, h: usize, w: usize) -> Result<String> {
    let acc = Accounting::of(model, h, w)?;
    Ok(format!(
        "{}\nparams {}\nflops {} ({:.2} GFLOPs at {h}x{w})\n",
        acc.table(),
        acc.total_params(),
        acc.total_flops(),
        acc.total_flops() as f64 / 1e9
    ))
}

/// Writes a synthetic corpus in the `train`/`validation` layout.
pub fn synth(out: &Path, n_train: usize, n_val: usize, seed: u64, size: usize) -> Result<()> {
    if size == 0 {
        return Err(Error::Config("size must be positive".into()));
    }
    write_corpus(out, n_train, n_val, seed, size)?;
    let path = out.join("synth.txt");
    std::fs::write(
        &path,
        format!("n_train={n_train}\nn_val={n_val}\nseed={seed}\nsize={size}\n"),
    )
    .map_err(|e| Error::io(&path, e))
}
