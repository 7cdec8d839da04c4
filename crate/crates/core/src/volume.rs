//! The voxel grid shared by every stage of the pipeline.
//!
//! Voxels are stored row-major with x varying fastest:
//! `index = x + nx * (y + ny * z)`.

use thiserror::Error;

/// Errors raised when a [`Volume`] would violate its invariants.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must all be >= 1, got {0:?}")]
    ZeroDim([usize; 3]),
    #[error("voxel count overflows for dimensions {0:?}")]
    TooLarge([usize; 3]),
    #[error("spacing must be finite and > 0, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error("origin must be finite, got {0:?}")]
    BadOrigin([f32; 3]),
    #[error("data length {actual} does not match dimensions {dims:?} ({expected} voxels)")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    U8,
    F32,
}

/// Voxel payload.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            VoxelData::U8(_) => DType::U8,
            VoxelData::F32(_) => DType::F32,
        }
    }
}

/// Checks dims and returns the voxel count.
pub fn voxel_count(dims: [usize; 3]) -> Result<usize, VolumeError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::ZeroDim(dims));
    }
    dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or(VolumeError::TooLarge(dims))
}

/// A 3D voxel grid with physical geometry (spacing and origin in mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    origin: [f32; 3],
    data: VoxelData,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        origin: [f32; 3],
        data: VoxelData,
    ) -> Result<Self, VolumeError> {
        let expected = voxel_count(dims)?;
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::BadOrigin(origin));
        }
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    /// All-zero U8 volume with unit spacing and zero origin.
    pub fn zeros_u8(dims: [usize; 3]) -> Result<Self, VolumeError> {
        let n = voxel_count(dims)?;
        Self::new(dims, [1.0; 3], [0.0; 3], VoxelData::U8(vec![0; n]))
    }

    pub fn from_u8(dims: [usize; 3], data: Vec<u8>) -> Result<Self, VolumeError> {
        Self::new(dims, [1.0; 3], [0.0; 3], VoxelData::U8(data))
    }

    pub fn from_f32(dims: [usize; 3], data: Vec<f32>) -> Result<Self, VolumeError> {
        Self::new(dims, [1.0; 3], [0.0; 3], VoxelData::F32(data))
    }

    /// Same geometry as `self`, new payload.
    pub fn with_data(&self, data: VoxelData) -> Result<Self, VolumeError> {
        Self::new(self.dims, self.spacing, self.origin, data)
    }

    pub fn with_geometry(mut self, spacing: [f32; 3], origin: [f32; 3]) -> Result<Self, VolumeError> {
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::BadOrigin(origin));
        }
        self.spacing = spacing;
        self.origin = origin;
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    pub fn into_data(self) -> VoxelData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            VoxelData::U8(v) => Some(v),
            VoxelData::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            VoxelData::F32(v) => Some(v),
            VoxelData::U8(_) => None,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Voxel value as f32 regardless of dtype.
    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        let i = self.index(x, y, z);
        match &self.data {
            VoxelData::U8(v) => v[i] as f32,
            VoxelData::F32(v) => v[i],
        }
    }

    /// Payload converted to f32.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            VoxelData::U8(v) => v.iter().map(|&b| b as f32).collect(),
            VoxelData::F32(v) => v.clone(),
        }
    }

    /// True for U8 volumes containing only 0 and 1.
    pub fn is_binary(&self) -> bool {
        matches!(&self.data, VoxelData::U8(v) if v.iter().all(|&b| b <= 1))
    }

    /// Number of nonzero voxels.
    pub fn count_nonzero(&self) -> usize {
        match &self.data {
            VoxelData::U8(v) => v.iter().filter(|&&b| b != 0).count(),
            VoxelData::F32(v) => v.iter().filter(|&&f| f != 0.0).count(),
        }
    }

    /// Physical position (mm) of a voxel centre.
    pub fn voxel_to_world(&self, ijk: [f64; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.origin[a] as f64 + ijk[a] * self.spacing[a] as f64;
        }
        p
    }
}

/// Voxel-wise thresholding: `1` iff value > `threshold`. Geometry is kept.
pub fn binarize(vol: &Volume, threshold: f32) -> Volume {
    let out: Vec<u8> = match vol.data() {
        VoxelData::U8(v) => v.iter().map(|&b| u8::from(b as f32 > threshold)).collect(),
        VoxelData::F32(v) => v.iter().map(|&f| u8::from(f > threshold)).collect(),
    };
    vol.with_data(VoxelData::U8(out))
        .expect("binarize preserves voxel count")
}
