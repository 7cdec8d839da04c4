use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Checkpoint, Prefetcher, TrainConfig, TrainError};
use crate::dataset::{DatasetManifest, ManifestEntry, Split};
use crate::io::load_volume;
use crate::losses::{argmax_channels, dice_loss, dice_masks, one_hot};
use crate::nn::{Model, Tape, Tensor};
use crate::ops::resize_area;
use crate::optim::{Adam, AdamConfig};
use crate::volume::{binarize, Volume};

/// Binarize at 0.5, then area-resize to the network grid. Shared by
/// training, validation and reconstruction.
pub fn preprocess(vol: &Volume, resize: [usize; 3]) -> Volume {
    resize_area(&binarize(vol, 0.5), resize)
}

/// `(1, 1, z, y, x)` tensor over the volume's voxels (x fastest).
pub fn volume_to_tensor(vol: &Volume) -> Tensor<f32> {
    let [nx, ny, nz] = vol.dims();
    Tensor::from_vec([1, 1, nz, ny, nx], vol.to_f32_vec()).expect("dims match data")
}

/// One preprocessed training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    /// One-hot {background, foreground} of the resized complete skull.
    pub target: Tensor<f32>,
    pub target_mask: Vec<u8>,
}

fn load(manifest: &DatasetManifest, rel: &Path) -> Result<Volume, TrainError> {
    let path = manifest.resolve(rel);
    load_volume(&path).map_err(|source| TrainError::Data { path, source })
}

pub fn load_sample(manifest: &DatasetManifest, entry: &ManifestEntry, resize: [usize; 3]) -> Result<Sample, TrainError> {
    let defective = entry
        .defective
        .as_deref()
        .ok_or_else(|| TrainError::Config(format!("entry {} has no defective file", entry.id)))?;
    let input = volume_to_tensor(&preprocess(&load(manifest, defective)?, resize));
    let complete = binarize(&preprocess(&load(manifest, &entry.complete)?, resize), 0.5);
    let target_mask = complete.as_u8().expect("binarize yields u8").to_vec();
    let [nx, ny, nz] = resize;
    let target = one_hot(&target_mask, [nz, ny, nx])?;
    Ok(Sample {
        input,
        target,
        target_mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub losses: Vec<f32>,
    pub mean_loss: f64,
    pub val_dice: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best_val_dice: Option<f64>,
    pub history: Vec<EpochStats>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

fn sample_pool(
    manifest: &DatasetManifest,
    entries: &[ManifestEntry],
    order: Vec<usize>,
    cfg: &TrainConfig,
) -> Prefetcher<usize, Result<Sample, TrainError>> {
    let manifest = Arc::new(manifest.clone());
    let entries: Arc<Vec<ManifestEntry>> = Arc::new(entries.to_vec());
    let resize = cfg.resize;
    let f = Arc::new(move |&i: &usize| load_sample(&manifest, &entries[i], resize));
    Prefetcher::new(order, cfg.workers, 2 * cfg.workers.max(1) * cfg.batch_size, f)
}

/// Mean foreground dice of argmax predictions at network resolution.
fn validate(model: &Model<f32>, manifest: &DatasetManifest, val: &[ManifestEntry], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for s in sample_pool(manifest, val, (0..val.len()).collect(), cfg) {
        let s = s?;
        let logits = model.infer(&s.input)?;
        let pred = &argmax_channels(&logits)[0];
        total += dice_masks(pred, &s.target_mask);
    }
    Ok(total / val.len() as f64)
}

/// Trains (or resumes) on the train split, validating on the val split.
/// Writes `last.skrc` every epoch and `best.skrc` on each new best
/// validation dice (ties keep the earlier epoch).
pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig, resume: Option<Checkpoint>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train_set: Vec<ManifestEntry> = manifest.pairs(Split::Train).into_iter().cloned().collect();
    let val_set: Vec<ManifestEntry> = manifest.pairs(Split::Val).into_iter().cloned().collect();
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }

    let (mut model, mut opt, start, mut best) = match resume {
        Some(ck) => {
            if let Some(why) = cfg.resume_mismatch(&ck.config) {
                return Err(TrainError::ResumeMismatch(why));
            }
            (ck.model, ck.optimizer, ck.epoch, ck.best_val_dice)
        }
        None => {
            let model = Model::<f32>::build(cfg.model.clone(), cfg.seed)?;
            let opt = Adam::new(AdamConfig::with_lr(cfg.lr as f32), model.num_params())?;
            (model, opt, 0, None)
        }
    };

    let mut history = Vec::new();
    let mut step = (start * train_set.len().div_ceil(cfg.batch_size)) as u64;
    let mut last = None;
    for epoch in start + 1..=cfg.epochs.max(start) {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let mut pool = sample_pool(manifest, &train_set, order, cfg);
        let mut losses = Vec::new();
        loop {
            let batch: Vec<Sample> = pool.by_ref().take(cfg.batch_size).collect::<Result<_, _>>()?;
            if batch.is_empty() {
                break;
            }
            let inputs: Vec<Tensor<f32>> = batch.iter().map(|s| s.input.clone()).collect();
            let targets: Vec<Tensor<f32>> = batch.into_iter().map(|s| s.target).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::stack(&inputs)?);
            let t = tape.leaf(Tensor::stack(&targets)?);
            let fwd = model.forward(&mut tape, x, true)?;
            let loss = dice_loss(&mut tape, fwd.logits, t)?;
            let value = tape.value(loss)?.item();
            tape.backward(loss)?;
            model.collect_grads(&tape, &fwd);
            opt.step(model.params_mut())?;
            step += 1;
            log::info!("epoch={epoch} step={step} loss={value:.6}");
            losses.push(value);
        }
        drop(pool);

        let val_dice = if !val_set.is_empty() && (epoch % cfg.validate_every == 0 || epoch == cfg.epochs) {
            let d = validate(&model, manifest, &val_set, cfg)?;
            log::info!("epoch={epoch} val_dice={d:.6}");
            Some(d)
        } else {
            None
        };
        let improved = matches!((val_dice, best), (Some(d), None) if d.is_finite())
            || matches!((val_dice, best), (Some(d), Some(b)) if d > b);
        if improved {
            best = val_dice;
        }
        let ck = Checkpoint {
            config: cfg.clone(),
            epoch,
            val_dice,
            best_val_dice: best,
            model: model.clone(),
            optimizer: opt.clone(),
        };
        ck.save(&cfg.checkpoint_dir.join("last.skrc"))?;
        if improved {
            ck.save(&cfg.checkpoint_dir.join("best.skrc"))?;
        }
        let mean_loss = losses.iter().map(|&l| l as f64).sum::<f64>() / losses.len() as f64;
        history.push(EpochStats {
            epoch,
            losses,
            mean_loss,
            val_dice,
        });
        last = Some(ck);
    }
    let last = last.unwrap_or_else(|| Checkpoint {
        config: cfg.clone(),
        epoch: start,
        val_dice: None,
        best_val_dice: best,
        model,
        optimizer: opt,
    });
    Ok(TrainOutcome {
        last,
        best_val_dice: best,
        history,
    })
}
