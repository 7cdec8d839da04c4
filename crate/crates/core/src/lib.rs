//! Volumetric skull reconstruction toolkit.
//!
//! NRRD/NIfTI volume I/O, voxel operations and phantoms, synthetic cranial
//! and facial defects, a small reverse-mode autodiff engine with a 3D
//! convolutional autoencoder, training/evaluation, and similarity
//! registration for implant extraction.
//!
//! Numeric code is generic over [`scalar::Real`]; the aliases below fix the
//! precisions the pipeline runs at.

pub mod dataset;
pub mod defect;
pub mod io;
pub mod losses;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod registration;
pub mod scalar;
pub mod trainer;
pub mod volume;

pub use volume::Volume;

/// Network tensors are single precision.
pub type Tensor = nn::Tensor<f32>;
pub type Model = nn::Model<f32>;
pub type Adam = optim::Adam<f32>;
/// Registration runs in double precision.
pub type Similarity = registration::SimilarityTransform<f64>;
pub type Registration = registration::RegistrationResult<f64>;
