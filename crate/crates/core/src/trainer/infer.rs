use serde::{Deserialize, Serialize};

use super::train::{preprocess, volume_to_tensor};
use super::{Checkpoint, TrainError};
use crate::dataset::{DatasetManifest, ManifestEntry, Split};
use crate::defect::DefectKind;
use crate::io::load_volume;
use crate::losses::{argmax_channels, dice_masks, DiceScores};
use crate::ops::resize_area;
use crate::volume::{binarize, Volume, VoxelData};

/// Predicts the complete skull for a defective one, on the input's grid.
pub fn reconstruct(ck: &Checkpoint, defective: &Volume) -> Result<Volume, TrainError> {
    let resize = ck.config.resize;
    let x = volume_to_tensor(&preprocess(defective, resize));
    let logits = ck.model.infer(&x)?;
    let mask = argmax_channels(&logits).swap_remove(0);
    let small = Volume::from_u8(resize, mask).expect("resize dims are valid");
    let back = binarize(&resize_area(&small, defective.dims()), 0.5);
    Ok(back
        .with_geometry(defective.spacing(), defective.origin())
        .expect("input geometry is valid"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    pub defect_kind: Option<DefectKind>,
    pub dice_foreground: f64,
    pub dice_both: f64,
    /// Foreground dice inside the implant's bounding box.
    pub border_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub cases: Vec<CaseReport>,
    pub dice_foreground: Summary,
    pub dice_both: Summary,
    pub border_dice: Summary,
}

fn bbox(mask: &[u8], dims: [usize; 3]) -> Option<([usize; 3], [usize; 3])> {
    let [nx, ny, _] = dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    let mut any = false;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m != 0) {
        let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a] + 1);
        }
        any = true;
    }
    any.then_some((lo, hi))
}

fn restrict(mask: &[u8], dims: [usize; 3], lo: [usize; 3], hi: [usize; 3]) -> Vec<u8> {
    let [nx, ny, _] = dims;
    let mut out = Vec::new();
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            let row = nx * (y + ny * z);
            out.extend_from_slice(&mask[row + lo[0]..row + hi[0]]);
        }
    }
    out
}

fn load(manifest: &DatasetManifest, rel: &std::path::Path) -> Result<Volume, TrainError> {
    let path = manifest.resolve(rel);
    load_volume(&path).map_err(|source| TrainError::Data { path, source })
}

fn mask_of(v: &Volume) -> Vec<u8> {
    match binarize(v, 0.5).into_data() {
        VoxelData::U8(d) => d,
        VoxelData::F32(_) => unreachable!("binarize yields u8"),
    }
}

/// Scores `predict(defective, entry)` against each complete skull of `split`.
pub fn evaluate_with(
    manifest: &DatasetManifest,
    split: Split,
    mut predict: impl FnMut(&Volume, &ManifestEntry) -> Result<Volume, TrainError>,
) -> Result<EvalReport, TrainError> {
    let entries = manifest.pairs(split);
    if entries.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let mut cases = Vec::new();
    for e in entries {
        let defective = load(manifest, e.defective.as_deref().expect("pair"))?;
        let complete = load(manifest, &e.complete)?;
        let implant = load(manifest, e.implant.as_deref().expect("pair"))?;
        let pred = predict(&defective, e)?;
        if pred.dims() != complete.dims() {
            return Err(crate::ops::OpsError::DimsMismatch(pred.dims(), complete.dims()).into());
        }
        let (p, t) = (mask_of(&pred), mask_of(&complete));
        let scores = DiceScores::of_masks(&p, &t);
        let border = match bbox(&mask_of(&implant), complete.dims()) {
            Some((lo, hi)) => dice_masks(&restrict(&p, complete.dims(), lo, hi), &restrict(&t, complete.dims(), lo, hi)),
            None => scores.foreground,
        };
        cases.push(CaseReport {
            id: e.id.clone(),
            defect_kind: e.defect_kind,
            dice_foreground: scores.foreground,
            dice_both: scores.both,
            border_dice: border,
        });
    }
    let col = |f: fn(&CaseReport) -> f64| Summary::of(&cases.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        split,
        dice_foreground: col(|c| c.dice_foreground),
        dice_both: col(|c| c.dice_both),
        border_dice: col(|c| c.border_dice),
        cases,
    })
}

pub fn evaluate(ck: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<EvalReport, TrainError> {
    evaluate_with(manifest, split, |d, _| reconstruct(ck, d))
}
