//! Voxel-level operations: resizing, cropping, set algebra, connected
//! components, morphology and phantom generation.

mod boolean;
mod components;
mod crop;
mod morphology;
mod phantom;
mod resize;

use thiserror::Error;

pub use boolean::{boolean, BoolOp};
pub use components::{component_sizes, largest_component, label_components};
pub use crop::{crop, crop_axial_centered, pad, CropRegion};
pub use morphology::{dilate, erode, opening};
pub use phantom::{make_phantom, PhantomGeometry, PhantomSpec};
pub use resize::resize_area;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpsError {
    #[error("region {lo:?}..{hi:?} is invalid for dimensions {dims:?}")]
    RegionOutOfBounds {
        lo: [usize; 3],
        hi: [usize; 3],
        dims: [usize; 3],
    },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("volume is not binary (expected U8 with values 0/1)")]
    NotBinary,
    #[error("phantom does not fit: {0}")]
    SpecDoesNotFit(String),
}
