//! Similarity registration of binary masks and implant extraction by
//! subtraction.
//!
//! The optimizer maximizes the dice of Gaussian-smoothed masks over
//! translation, a rotation vector and log-scale, coarse to fine.

mod field;
mod simplex;
mod transform;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use field::Field;
use transform::{resample_onto, Grid, VoxelMap};

pub use simplex::{Minimum, NelderMead};
pub use transform::{apply_transform, quat_angle, quat_conj, quat_from_rotation_vector, quat_mul, SimilarityTransform};

use crate::losses::dice_masks;
use crate::ops::{boolean, largest_component, BoolOp, OpsError};
use crate::scalar::Real;
use crate::volume::{Volume, VoxelData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("{0} volume has no foreground")]
    EmptyForeground(&'static str),
    #[error("implant is empty after subtraction")]
    EmptyImplant,
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error(transparent)]
    Ops(#[from] OpsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOptions {
    /// Smoothing in voxels of each pyramid level.
    pub sigma: f64,
    /// Post-alignment hard dice needed to report convergence.
    pub success_dice: f64,
    /// Pyramid shrink factors, coarse to fine.
    pub levels: Vec<usize>,
    /// Extra simplex runs per level, each re-based at the best point so far.
    pub restarts: usize,
    /// Tolerances are in units of the initial simplex steps.
    pub simplex: NelderMead,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            success_dice: 0.80,
            levels: vec![4, 2, 1],
            restarts: 1,
            simplex: NelderMead {
                max_evals: 1000,
                ftol: 1e-6,
                xtol: 0.05,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult<T> {
    pub transform: SimilarityTransform<T>,
    /// Hard dice of the resampled moving mask against the fixed mask.
    pub dice: f64,
    pub converged: bool,
    /// Simplex iterations over all levels and restarts.
    pub iterations: usize,
}

fn mask(vol: &Volume) -> Result<&[u8], RegistrationError> {
    match vol.data() {
        VoxelData::U8(d) if vol.is_binary() => Ok(d),
        _ => Err(OpsError::NotBinary.into()),
    }
}

/// Foreground centroid and trace of the covariance, in world mm.
fn moments<T: Real>(vol: &Volume, which: &'static str) -> Result<([T; 3], T), RegistrationError> {
    let grid = Grid::<T>::of(vol);
    let [nx, ny, _] = grid.dims;
    let pts: Vec<[T; 3]> = mask(vol)?
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0)
        .map(|(i, _)| grid.to_world([i % nx, (i / nx) % ny, i / (nx * ny)].map(T::count)))
        .collect();
    if pts.is_empty() {
        return Err(RegistrationError::EmptyForeground(which));
    }
    let n = T::count(pts.len());
    let c = [0, 1, 2].map(|a| pts.iter().map(|p| p[a]).sum::<T>() / n);
    let trace = pts
        .iter()
        .map(|p| (0..3).map(|a| (p[a] - c[a]) * (p[a] - c[a])).sum::<T>())
        .sum::<T>()
        / n;
    Ok((c, trace))
}

/// Moves `base` by `theta = [tx, ty, tz, rx, ry, rz, ln s]`.
fn perturb<T: Real>(base: &SimilarityTransform<T>, theta: &[T]) -> SimilarityTransform<T> {
    let dq = quat_from_rotation_vector([theta[3], theta[4], theta[5]]);
    let mut q = quat_mul(dq, base.quaternion);
    let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
    q = q.map(|v| v / n);
    SimilarityTransform {
        scale: base.scale * theta[6].exp(),
        quaternion: q,
        translation_mm: [0, 1, 2].map(|a| base.translation_mm[a] + theta[a]),
        center_mm: base.center_mm,
    }
}

struct Level<T> {
    moving: Field<T>,
    fixed: Field<T>,
    /// `Σ F²` over the fixed field.
    fixed_sq: T,
    support: ([usize; 3], [usize; 3]),
}

impl<T: Real> Level<T> {
    /// Fixed-grid voxel box that can receive nonzero warped values.
    fn target_box(&self, tf: &SimilarityTransform<T>) -> Option<([usize; 3], [usize; 3])> {
        let (lo, hi) = self.support;
        let mut bmin = [T::infinity(); 3];
        let mut bmax = [T::neg_infinity(); 3];
        for k in 0..8 {
            let corner = [0, 1, 2].map(|a| if k >> a & 1 == 0 { lo[a] } else { hi[a] });
            let p = self.fixed.grid.to_voxel(tf.apply(self.moving.grid.to_world(corner.map(T::count))));
            for a in 0..3 {
                bmin[a] = bmin[a].min(p[a]);
                bmax[a] = bmax[a].max(p[a]);
            }
        }
        let dims = self.fixed.grid.dims;
        let mut out_lo = [0; 3];
        let mut out_hi = [0; 3];
        for a in 0..3 {
            let l = (bmin[a].floor() - T::one()).max(T::zero()).to_f64_lossy();
            let h = (bmax[a].ceil() + T::one()).min(T::count(dims[a] - 1)).to_f64_lossy();
            if !(l <= h) {
                return None;
            }
            out_lo[a] = l as usize;
            out_hi[a] = h as usize;
        }
        Some((out_lo, out_hi))
    }

    /// `2ΣwF / (Σw² + ΣF²)`, which reaches 1 exactly when the warped
    /// moving field equals the fixed one.
    fn soft_dice(&self, tf: &SimilarityTransform<T>) -> T {
        let Some((lo, hi)) = self.target_box(tf) else {
            return T::zero();
        };
        let map = VoxelMap::pullback(tf, &self.moving.grid, &self.fixed.grid);
        let [nx, ny, _] = self.fixed.grid.dims;
        let mdims = self.moving.grid.dims;
        let partial: Vec<(T, T)> = (lo[2]..=hi[2])
            .into_par_iter()
            .map(|z| {
                let (mut num, mut mass) = (T::zero(), T::zero());
                let dx = [map.m[0][0], map.m[1][0], map.m[2][0]];
                for y in lo[1]..=hi[1] {
                    let mut p = map.at([lo[0], y, z].map(T::count));
                    let row = nx * (y + ny * z);
                    for x in lo[0]..=hi[0] {
                        let w = transform::sample_trilinear(&self.moving.data, mdims, p, false);
                        num += w * self.fixed.data[row + x];
                        mass += w * w;
                        for a in 0..3 {
                            p[a] += dx[a];
                        }
                    }
                }
                (num, mass)
            })
            .collect();
        let (num, mass) = partial
            .into_iter()
            .fold((T::zero(), T::zero()), |(a, b), (c, d)| (a + c, b + d));
        let denom = mass + self.fixed_sq;
        if denom > T::zero() {
            T::lit(2.0) * num / denom
        } else {
            T::zero()
        }
    }
}

/// Moment-based start: centroids aligned, scale from the ratio of
/// second-moment traces, no rotation. Rotates about the moving centroid.
pub fn initial_transform<T: Real>(moving: &Volume, fixed: &Volume) -> Result<SimilarityTransform<T>, RegistrationError> {
    let (cm, tm) = moments::<T>(moving, "moving")?;
    let (cf, tf) = moments::<T>(fixed, "fixed")?;
    let scale = if tm > T::zero() && tf > T::zero() {
        (tf / tm).sqrt()
    } else {
        T::one()
    };
    SimilarityTransform::new(
        scale,
        [T::one(), T::zero(), T::zero(), T::zero()],
        [0, 1, 2].map(|a| cf[a] - cm[a]),
        cm,
    )
}

/// Hard dice of `moving` resampled through `tf` onto `fixed`'s grid.
pub fn aligned_dice<T: Real>(moving: &Volume, fixed: &Volume, tf: &SimilarityTransform<T>) -> Result<f64, RegistrationError> {
    let warped = resample_onto(moving, tf, &Grid::of(fixed));
    let VoxelData::U8(w) = warped else {
        return Err(OpsError::NotBinary.into());
    };
    Ok(dice_masks(&w, mask(fixed)?))
}

pub fn register_similarity<T: Real>(moving: &Volume, fixed: &Volume) -> Result<RegistrationResult<T>, RegistrationError> {
    register_similarity_with(moving, fixed, &RegistrationOptions::default())
}

/// Finds `T` with `fixed ≈ apply_transform(moving, T)`.
///
/// Starts from the moment estimate or from no motion, whichever overlaps
/// better. Volumes that are already nearly aligned but differ in content
/// (a complete skull against a defective one) shift the moments, so the
/// identity start wins there.
pub fn register_similarity_with<T: Real>(
    moving: &Volume,
    fixed: &Volume,
    opts: &RegistrationOptions,
) -> Result<RegistrationResult<T>, RegistrationError> {
    let from_moments = initial_transform::<T>(moving, fixed)?;
    let identity = SimilarityTransform::identity(from_moments.center_mm);
    let init = if aligned_dice(moving, fixed, &identity)? > aligned_dice(moving, fixed, &from_moments)? {
        identity
    } else {
        from_moments
    };
    refine_similarity_with(moving, fixed, init, opts)
}

/// Coarse-to-fine refinement of `init`; see [`register_similarity_with`].
pub fn refine_similarity_with<T: Real>(
    moving: &Volume,
    fixed: &Volume,
    init: SimilarityTransform<T>,
    opts: &RegistrationOptions,
) -> Result<RegistrationResult<T>, RegistrationError> {
    init.validate()?;
    moments::<T>(moving, "moving")?;
    moments::<T>(fixed, "fixed")?;
    let mut best = init;
    let mut iterations = 0;
    for &shrink in &opts.levels {
        let shrink = shrink.max(1);
        if shrink > 1 && moving.dims().iter().chain(&fixed.dims()).any(|&n| n / shrink < 4) {
            continue;
        }
        let mf = Field::<T>::level(moving, shrink, opts.sigma);
        let Some(support) = mf.support() else { continue };
        let ff = Field::<T>::level(fixed, shrink, opts.sigma);
        let level = Level {
            fixed_sq: ff.data.iter().map(|&v| v * v).sum(),
            moving: mf,
            fixed: ff,
            support,
        };
        let f = T::count(shrink);
        let mean_spacing = level.fixed.grid.spacing.iter().copied().sum::<T>() / T::lit(3.0);
        let half_voxel = mean_spacing / T::lit(2.0);
        let steps: Vec<T> = [half_voxel; 3]
            .into_iter()
            .chain([T::lit(0.025) * f; 3])
            .chain([T::lit(0.0125) * f])
            .collect();
        let mut cost = T::one() - level.soft_dice(&best);
        // Restarts alternate the simplex orientation; two fruitless runs
        // in a row end the level.
        let mut idle = 0;
        for run in 0..=opts.restarts {
            let base = best;
            let sign = if run % 2 == 0 { T::one() } else { -T::one() };
            let m = opts.simplex.minimize(
                |u: &[T]| {
                    let theta: Vec<T> = u.iter().zip(&steps).map(|(&a, &s)| a * s).collect();
                    T::one() - level.soft_dice(&perturb(&base, &theta))
                },
                &[T::zero(); 7],
                &[sign; 7],
            );
            iterations += m.iterations;
            if m.value < cost - T::lit(1e-9) {
                let theta: Vec<T> = m.x.iter().zip(&steps).map(|(&a, &s)| a * s).collect();
                best = perturb(&base, &theta);
                cost = m.value;
                idle = 0;
            } else {
                idle += 1;
                if idle == 2 {
                    break;
                }
            }
        }
        log::debug!("level 1/{shrink}: soft dice {:.5} after {iterations} iterations", (T::one() - cost).to_f64_lossy());
    }
    let mut transform = SimilarityTransform::new(best.scale, best.quaternion, best.translation_mm, best.center_mm)?;
    let mut dice = aligned_dice(moving, fixed, &transform)?;
    // The smoothed objective can prefer a pose with worse hard overlap when
    // one mask has structure the other lacks; never return worse than init.
    let init_dice = aligned_dice(moving, fixed, &init)?;
    if init_dice > dice {
        log::debug!("refinement lowered hard dice {init_dice:.4} -> {dice:.4}; keeping the initial transform");
        transform = init;
        dice = init_dice;
    }
    Ok(RegistrationResult {
        transform,
        dice,
        converged: dice >= opts.success_dice,
        iterations,
    })
}

pub fn extract_implant<T: Real>(reconstruction: &Volume, defective: &Volume) -> Result<(Volume, RegistrationResult<T>), RegistrationError> {
    extract_implant_with(reconstruction, defective, &RegistrationOptions::default())
}

/// Aligns the reconstruction to the defective input, subtracts, and keeps
/// the largest 26-connected piece. Unconverged registrations still yield
/// an implant; check `converged`.
pub fn extract_implant_with<T: Real>(
    reconstruction: &Volume,
    defective: &Volume,
    opts: &RegistrationOptions,
) -> Result<(Volume, RegistrationResult<T>), RegistrationError> {
    if reconstruction.dims() != defective.dims() {
        return Err(OpsError::DimsMismatch(reconstruction.dims(), defective.dims()).into());
    }
    let reg = register_similarity_with::<T>(reconstruction, defective, opts)?;
    let aligned = defective
        .with_data(resample_onto(reconstruction, &reg.transform, &Grid::of(defective)))
        .expect("same grid");
    let implant = largest_component(&boolean(&aligned, defective, BoolOp::Subtract)?)?;
    if implant.count_nonzero() == 0 {
        return Err(RegistrationError::EmptyImplant);
    }
    Ok((implant, reg))
}
