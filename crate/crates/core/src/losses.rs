//! Soft Dice loss for training and hard Dice scores for validation.

use crate::nn::{NnError, Tape, Tensor, Var};
use crate::ops::OpsError;
use crate::scalar::Real;
use crate::volume::Volume;

/// Smoothing added to both numerator and denominator of the soft Dice.
pub const DICE_SMOOTH: f64 = 1e-5;

/// `1 - mean soft Dice` over channels and batch items of
/// `softmax_channels(logits)` against a one-hot `target`.
pub fn dice_loss<T: Real>(tape: &mut Tape<T>, logits: Var, target: Var) -> Result<Var, NnError> {
    let p = tape.softmax_channels(logits)?;
    let d = tape.soft_dice(p, target, T::lit(DICE_SMOOTH))?;
    tape.affine(d, -T::one(), T::one())
}

/// `2|A ∩ B| / (|A| + |B|)` from raw counts; 1 when both sets are empty.
pub fn dice_from_counts(inter: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Dice of two binary masks given as 0/1 bytes.
pub fn dice_masks(a: &[u8], b: &[u8]) -> f64 {
    let (mut i, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        i += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    dice_from_counts(i, na, nb)
}

pub fn dice_metric(pred: &Volume, truth: &Volume) -> Result<f64, OpsError> {
    if pred.dims() != truth.dims() {
        return Err(OpsError::DimsMismatch(pred.dims(), truth.dims()));
    }
    let a = pred.as_u8().filter(|_| pred.is_binary()).ok_or(OpsError::NotBinary)?;
    let b = truth.as_u8().filter(|_| truth.is_binary()).ok_or(OpsError::NotBinary)?;
    Ok(dice_masks(a, b))
}

/// Foreground Dice and the mean of background and foreground Dice.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiceScores {
    pub foreground: f64,
    pub both: f64,
}

impl DiceScores {
    pub fn of_masks(pred: &[u8], truth: &[u8]) -> Self {
        let inv = |m: &[u8]| m.iter().map(|&v| (v == 0) as u8).collect::<Vec<u8>>();
        let fg = dice_masks(pred, truth);
        let bg = dice_masks(&inv(pred), &inv(truth));
        Self {
            foreground: fg,
            both: (fg + bg) / 2.0,
        }
    }
}

/// Per-voxel argmax over channels for each batch item; ties go to the
/// lower channel. With two channels this is the 0/1 foreground mask.
pub fn argmax_channels<T: Real>(logits: &Tensor<T>) -> Vec<Vec<u8>> {
    let [n, c, ..] = logits.shape();
    let len = logits.numel() / (n * c).max(1);
    let d = logits.data();
    (0..n)
        .map(|b| {
            (0..len)
                .map(|i| {
                    let mut best = 0;
                    for ch in 1..c {
                        if d[(b * c + ch) * len + i] > d[(b * c + best) * len + i] {
                            best = ch;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

/// One-hot `(1, 2, D, H, W)` tensor {background, foreground} of a binary mask.
pub fn one_hot<T: Real>(mask: &[u8], spatial: [usize; 3]) -> Result<Tensor<T>, NnError> {
    let mut data = Vec::with_capacity(2 * mask.len());
    data.extend(mask.iter().map(|&m| if m == 0 { T::one() } else { T::zero() }));
    data.extend(mask.iter().map(|&m| if m == 0 { T::zero() } else { T::one() }));
    Tensor::from_vec([1, 2, spatial[0], spatial[1], spatial[2]], data)
}
