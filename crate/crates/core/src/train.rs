//! Patch-based training loop and patch/image-level evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::augment::{augment_train, AugmentConfig};
use crate::data::io::Sample;
use crate::data::patch::{extract_patches, PATCH_SIZE};
use crate::data::tta::{tta_predict, PatchModel};
use crate::data::DihedralTransform;
use crate::error::{Error, Result};
use crate::loss::{seg_loss, LossWeights};
use crate::metrics::{binarize, ConfusionCounts, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::Network;
use crate::nn::Mode;
use crate::optim::{Lamb, LambConfig};
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: LambConfig,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
    pub patch_size: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            optimizer: LambConfig::default(),
            loss: LossWeights::default(),
            augment: AugmentConfig::default(),
            patch_size: PATCH_SIZE,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's steps.
    pub seg_loss: f64,
    /// Patch-level micro DSC on the validation set.
    pub dsc: f64,
}

/// splitmix64 over the concatenated words; decorrelates per-epoch and
/// per-sample RNG streams derived from one run seed.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    words
        .iter()
        .fold(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)), |h, &w| {
            mix(h ^ w.wrapping_add(0x9e37_79b9_7f4a_7c15))
        })
}

/// Image and mask tiles of every sample, in sample then row-major order.
pub fn patch_pairs(samples: &[Sample], size: usize) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    samples
        .iter()
        .flat_map(|s| {
            let (images, _) = extract_patches(&s.image, size);
            let (masks, _) = extract_patches(&s.mask, size);
            images.into_iter().zip(masks)
        })
        .collect()
}

/// Network, optimizer state and the number of completed epochs.
pub struct Trainer {
    pub net: Network<f32>,
    pub opt: Lamb<f32>,
    pub config: TrainConfig,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(net: Network<f32>, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 || config.patch_size == 0 {
            return Err(Error::Config(
                "batch_size and patch_size must be positive".into(),
            ));
        }
        let opt = Lamb::new(config.optimizer, &net.weights().params);
        Ok(Trainer {
            net,
            opt,
            config,
            epochs_done: 0,
        })
    }

    /// One gradient step on a batch of patches; returns the loss.
    pub fn step(&mut self, images: &[Tensor<f32>], masks: &[Tensor<f32>]) -> Result<f64> {
        let x = Tensor::stack(images)?;
        let g = Tensor::stack(masks)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let f = self.net.forward(&mut tape, xv, Mode::Train)?;
        let loss = seg_loss(&mut tape, f.output, &g, self.config.loss)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite("seg_loss"));
        }
        tape.backward(loss)?;
        let grads = self.net.weights().take_grads(&mut tape, &f.params);
        self.opt.step(&mut self.net.weights_mut().params, &grads)?;
        self.net.apply_batch_stats(&f);
        Ok(value)
    }

    /// Augments every sample with its own RNG stream, tiles, shuffles and
    /// takes one pass of steps. Returns the mean loss.
    pub fn train_epoch(&mut self, train: &[Sample]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let epoch = self.epochs_done;
        let cfg = self.config.clone();
        let augmented = par::map_range(train.len(), |i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, i as u64]));
            augment_train(&train[i], &cfg.augment, &mut rng)
        });
        let mut pairs = patch_pairs(&augmented, cfg.patch_size);
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[epoch as u64, u64::MAX],
        )));

        let mut total = 0.0;
        let mut steps = 0;
        for batch in pairs.chunks(cfg.batch_size) {
            let (images, masks): (Vec<_>, Vec<_>) = batch.iter().cloned().unzip();
            let loss = self.step(&images, &masks).map_err(|e| match e {
                Error::NonFinite(_) | Error::NonFiniteGradient(_) => {
                    Error::NonFiniteLoss { epoch, step: steps }
                }
                other => other,
            })?;
            total += loss;
            steps += 1;
        }
        self.epochs_done += 1;
        Ok(total / steps as f64)
    }

    /// Trains for the remaining epochs. After each one the validation set is
    /// scored and `on_epoch` sees the record and the trainer, which is where
    /// callers keep the best checkpoint.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochRecord, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::new();
        while self.epochs_done < self.config.epochs {
            let epoch = self.epochs_done;
            let seg_loss = self.train_epoch(train)?;
            let dsc = if val.is_empty() {
                f64::NAN
            } else {
                evaluate(
                    &self.net,
                    val,
                    self.config.patch_size,
                    self.config.threshold,
                    false,
                )?
                .patch_micro
                .dsc
            };
            let rec = EpochRecord {
                epoch,
                seg_loss,
                dsc,
            };
            on_epoch(&rec, self)?;
            log.push(rec);
        }
        Ok(log)
    }
}

/// Micro and macro scores at patch and image granularity.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub patch_micro: MetricsReport,
    pub patch_macro: MetricsReport,
    pub image_micro: MetricsReport,
    pub image_macro: MetricsReport,
}

impl Evaluation {
    /// Scores binary predictions against ground truth, pairwise.
    ///
    /// Both are tiled the same way; padding is background in both and only
    /// adds true negatives at patch level.
    pub fn from_masks(preds: &[Tensor<f32>], gts: &[Tensor<f32>], size: usize) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        if preds.len() != gts.len() {
            return Err(Error::InvalidShape {
                op: "evaluate",
                reason: format!("{} predictions for {} masks", preds.len(), gts.len()),
            });
        }
        let mut images = Vec::with_capacity(preds.len());
        let mut patches = Vec::new();
        for (p, g) in preds.iter().zip(gts) {
            images.push(ConfusionCounts::from_masks(p, g)?.report());
            let (pp, _) = extract_patches(p, size);
            let (gp, _) = extract_patches(g, size);
            for (a, b) in pp.iter().zip(&gp) {
                patches.push(ConfusionCounts::from_masks(a, b)?.report());
            }
        }
        let micro =
            |r: &[MetricsReport]| r.iter().map(|x| x.counts).sum::<ConfusionCounts>().report();
        Ok(Evaluation {
            patch_micro: micro(&patches),
            patch_macro: MetricsReport::macro_average(&patches).expect("non-empty"),
            image_micro: micro(&images),
            image_macro: MetricsReport::macro_average(&images).expect("non-empty"),
        })
    }

    pub fn to_record(&self) -> String {
        [
            self.patch_micro.to_record("patch_micro_"),
            self.patch_macro.to_record("patch_macro_"),
            self.image_micro.to_record("image_micro_"),
            self.image_macro.to_record("image_macro_"),
        ]
        .concat()
    }
}

/// Binary masks for `samples`, optionally with 8-transform TTA.
pub fn predict_masks<M: PatchModel<f32>>(
    model: &M,
    samples: &[Sample],
    size: usize,
    threshold: f64,
    tta: bool,
) -> Result<Vec<Tensor<f32>>> {
    let transforms: &[DihedralTransform] = if tta {
        &DihedralTransform::ALL
    } else {
        &[DihedralTransform::Identity]
    };
    samples
        .iter()
        .map(|s| tta_predict(model, &s.image, transforms, size, threshold))
        .collect()
}

pub fn evaluate<M: PatchModel<f32>>(
    model: &M,
    samples: &[Sample],
    size: usize,
    threshold: f64,
    tta: bool,
) -> Result<Evaluation> {
    let preds = predict_masks(model, samples, size, threshold, tta)?;
    let gts: Vec<_> = samples.iter().map(|s| binarize(&s.mask, 0.5)).collect();
    Evaluation::from_masks(&preds, &gts, size)
}
