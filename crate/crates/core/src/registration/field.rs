//! Smoothed mask fields on a resolution pyramid.

use super::transform::Grid;
use crate::ops::resize_area;
use crate::scalar::Real;
use crate::volume::Volume;

/// Scalar field with world geometry.
#[derive(Debug, Clone)]
pub(crate) struct Field<T> {
    pub grid: Grid<T>,
    pub data: Vec<T>,
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Convolves along one axis; outside the grid counts as zero.
fn smooth_axis<T: Real>(src: &[T], dims: [usize; 3], axis: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as i64;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis] as i64;
    let mut out = vec![T::zero(); src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let c = ((i / stride) % dims[axis]) as i64;
        let base = i - c as usize * stride;
        let mut acc = T::zero();
        for (k, &w) in taps.iter().enumerate() {
            let j = c + k as i64 - r;
            if (0..n).contains(&j) {
                acc += w * src[base + j as usize * stride];
            }
        }
        *o = acc;
    }
    out
}

pub(crate) fn gaussian_smooth<T: Real>(data: &[T], dims: [usize; 3], sigma: f64) -> Vec<T> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let taps: Vec<T> = gaussian_taps(sigma).into_iter().map(T::lit).collect();
    let mut cur = data.to_vec();
    for axis in 0..3 {
        cur = smooth_axis(&cur, dims, axis, &taps);
    }
    cur
}

impl<T: Real> Field<T> {
    /// `mask` box-averaged down by `shrink`, then smoothed with `sigma`
    /// voxels of the reduced grid.
    pub fn level(mask: &Volume, shrink: usize, sigma: f64) -> Self {
        let full = Grid::<T>::of(mask);
        let dims = full.dims.map(|n| ((n + shrink / 2) / shrink).max(1));
        let (grid, raw) = if dims == full.dims {
            (full, mask.to_f32_vec())
        } else {
            let ratio = [0, 1, 2].map(|a| T::count(full.dims[a]) / T::count(dims[a]));
            let grid = Grid {
                dims,
                spacing: [0, 1, 2].map(|a| full.spacing[a] * ratio[a]),
                // Centre of the first coarse cell.
                origin: [0, 1, 2].map(|a| full.origin[a] + (ratio[a] - T::one()) / T::lit(2.0) * full.spacing[a]),
            };
            (grid, resize_area(mask, dims).to_f32_vec())
        };
        let raw: Vec<T> = raw.into_iter().map(|v| T::lit(v as f64)).collect();
        Self {
            data: gaussian_smooth(&raw, grid.dims, sigma),
            grid,
        }
    }

    /// Inclusive voxel bounds of the nonzero values.
    pub fn support(&self) -> Option<([usize; 3], [usize; 3])> {
        let [nx, ny, _] = self.grid.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        let mut any = false;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &v)| v != T::zero()) {
            let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }
}
