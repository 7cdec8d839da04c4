//! Area (box-filter) resampling.
//!
//! Along one axis with `n` input and `m` output samples, output sample `j`
//! covers the input interval `[j*n/m, (j+1)*n/m)`. Its value is the
//! overlap-weighted mean of the input samples it touches. Working in units
//! of `1/m`, input sample `i` spans `[i*m, (i+1)*m)` and output sample `j`
//! spans `[j*n, (j+1)*n)`, so every weight is an integer overlap divided by
//! `n`. The 3D filter is the separable product of the three axis filters.

use crate::volume::{Volume, VoxelData};

/// Sparse row of the 1D resampling matrix: `(input index, weight)`.
type Taps = Vec<(usize, f64)>;

fn axis_taps(n: usize, m: usize) -> Vec<Taps> {
    (0..m)
        .map(|j| {
            let lo = j * n;
            let hi = (j + 1) * n;
            let first = lo / m;
            let last = (hi - 1) / m;
            (first..=last)
                .filter_map(|i| {
                    let a = lo.max(i * m);
                    let b = hi.min((i + 1) * m);
                    (b > a).then(|| (i, (b - a) as f64 / n as f64))
                })
                .collect()
        })
        .collect()
}

/// Resamples one axis of a dense `[nx, ny, nz]` array.
fn resample_axis(src: &[f64], dims: [usize; 3], axis: usize, m: usize) -> (Vec<f64>, [usize; 3]) {
    let n = dims[axis];
    let mut out_dims = dims;
    out_dims[axis] = m;
    if n == m {
        return (src.to_vec(), out_dims);
    }
    let taps = axis_taps(n, m);
    let stride_in = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let stride_out = match axis {
        0 => 1,
        1 => out_dims[0],
        _ => out_dims[0] * out_dims[1],
    };
    let total: usize = out_dims.iter().product();
    let mut out = vec![0.0f64; total];
    // Iterate over all lines parallel to `axis`.
    let (outer, inner) = match axis {
        0 => (dims[1] * dims[2], 1),
        1 => (dims[2], dims[0]),
        _ => (1, dims[0] * dims[1]),
    };
    for o in 0..outer {
        for p in 0..inner {
            let (base_in, base_out) = match axis {
                0 => (o * dims[0], o * m),
                1 => (o * dims[0] * dims[1] + p, o * out_dims[0] * out_dims[1] + p),
                _ => (p, p),
            };
            for (j, row) in taps.iter().enumerate() {
                let mut acc = 0.0;
                for &(i, w) in row {
                    acc += w * src[base_in + i * stride_in];
                }
                out[base_out + j * stride_out] = acc;
            }
        }
    }
    (out, out_dims)
}

/// Exact box-filter resize to `target` dims. The result is always F32 and its
/// spacing is scaled by the per-axis size ratio; the origin is kept.
///
/// # Panics
/// If any target dimension is zero.
pub fn resize_area(vol: &Volume, target: [usize; 3]) -> Volume {
    assert!(target.iter().all(|&t| t >= 1), "resize target must be >= 1 on every axis");
    let mut buf: Vec<f64> = match vol.data() {
        VoxelData::U8(v) => v.iter().map(|&b| b as f64).collect(),
        VoxelData::F32(v) => v.iter().map(|&f| f as f64).collect(),
    };
    let mut dims = vol.dims();
    for axis in 0..3 {
        let (next, d) = resample_axis(&buf, dims, axis, target[axis]);
        buf = next;
        dims = d;
    }
    let src = vol.dims();
    let sp = vol.spacing();
    let spacing = [
        (sp[0] as f64 * src[0] as f64 / target[0] as f64) as f32,
        (sp[1] as f64 * src[1] as f64 / target[1] as f64) as f32,
        (sp[2] as f64 * src[2] as f64 / target[2] as f64) as f32,
    ];
    Volume::new(
        target,
        spacing,
        vol.origin(),
        VoxelData::F32(buf.into_iter().map(|v| v as f32).collect()),
    )
    .expect("resize output satisfies volume invariants")
}
