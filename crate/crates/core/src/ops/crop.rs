use super::OpsError;
use crate::volume::{Volume, VoxelData};

/// Half-open voxel box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRegion {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CropRegion {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self { lo: [0; 3], hi: dims }
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<(), OpsError> {
        let ok = (0..3).all(|a| self.lo[a] < self.hi[a] && self.hi[a] <= dims[a]);
        if ok {
            Ok(())
        } else {
            Err(OpsError::RegionOutOfBounds {
                lo: self.lo,
                hi: self.hi,
                dims,
            })
        }
    }
}

fn copy_box<T: Copy>(src: &[T], src_dims: [usize; 3], region: &CropRegion) -> Vec<T> {
    let [cx, cy, cz] = region.dims();
    let mut out = Vec::with_capacity(cx * cy * cz);
    for z in region.lo[2]..region.hi[2] {
        for y in region.lo[1]..region.hi[1] {
            let row = region.lo[0] + src_dims[0] * (y + src_dims[1] * z);
            out.extend_from_slice(&src[row..row + cx]);
        }
    }
    out
}

/// Extracts `region`; the origin moves by `lo * spacing`.
pub fn crop(vol: &Volume, region: &CropRegion) -> Result<Volume, OpsError> {
    let dims = vol.dims();
    region.validate(dims)?;
    let data = match vol.data() {
        VoxelData::U8(v) => VoxelData::U8(copy_box(v, dims, region)),
        VoxelData::F32(v) => VoxelData::F32(copy_box(v, dims, region)),
    };
    let sp = vol.spacing();
    let o = vol.origin();
    let origin = [
        o[0] + region.lo[0] as f32 * sp[0],
        o[1] + region.lo[1] as f32 * sp[1],
        o[2] + region.lo[2] as f32 * sp[2],
    ];
    Ok(Volume::new(region.dims(), sp, origin, data).expect("cropped volume is valid"))
}

/// Keeps `slices` axial (z) slices centred in the volume. Volumes with
/// `slices` or fewer slices are returned unchanged.
pub fn crop_axial_centered(vol: &Volume, slices: usize) -> Result<Volume, OpsError> {
    let dims = vol.dims();
    if slices == 0 {
        return Err(OpsError::RegionOutOfBounds {
            lo: [0; 3],
            hi: [dims[0], dims[1], 0],
            dims,
        });
    }
    if slices >= dims[2] {
        return Ok(vol.clone());
    }
    let lo = (dims[2] - slices) / 2;
    crop(
        vol,
        &CropRegion::new([0, 0, lo], [dims[0], dims[1], lo + slices]),
    )
}

/// Inverse of [`crop`]: embeds `vol` at offset `lo` in a zero volume of
/// `dims`, restoring the original origin.
pub fn pad(vol: &Volume, dims: [usize; 3], lo: [usize; 3]) -> Result<Volume, OpsError> {
    let inner = vol.dims();
    let hi = [lo[0] + inner[0], lo[1] + inner[1], lo[2] + inner[2]];
    CropRegion::new(lo, hi).validate(dims)?;
    fn place<T: Copy + Default>(src: &[T], inner: [usize; 3], dims: [usize; 3], lo: [usize; 3]) -> Vec<T> {
        let mut out = vec![T::default(); dims.iter().product()];
        for z in 0..inner[2] {
            for y in 0..inner[1] {
                let s = inner[0] * (y + inner[1] * z);
                let d = lo[0] + dims[0] * (lo[1] + y + dims[1] * (lo[2] + z));
                out[d..d + inner[0]].copy_from_slice(&src[s..s + inner[0]]);
            }
        }
        out
    }
    let data = match vol.data() {
        VoxelData::U8(v) => VoxelData::U8(place(v, inner, dims, lo)),
        VoxelData::F32(v) => VoxelData::F32(place(v, inner, dims, lo)),
    };
    let sp = vol.spacing();
    let o = vol.origin();
    let origin = [
        o[0] - lo[0] as f32 * sp[0],
        o[1] - lo[1] as f32 * sp[1],
        o[2] - lo[2] as f32 * sp[2],
    ];
    Ok(Volume::new(dims, sp, origin, data).expect("padded volume is valid"))
}
