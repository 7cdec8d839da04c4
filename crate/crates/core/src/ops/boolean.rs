use super::OpsError;
use crate::volume::{Volume, VoxelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    Union,
    Intersect,
    /// `a ∧ ¬b`
    Subtract,
}

pub(crate) fn require_binary(v: &Volume) -> Result<&[u8], OpsError> {
    match v.data() {
        VoxelData::U8(d) if d.iter().all(|&b| b <= 1) => Ok(d),
        _ => Err(OpsError::NotBinary),
    }
}

/// Voxelwise set operation on two binary volumes. The result takes `a`'s
/// geometry.
pub fn boolean(a: &Volume, b: &Volume, op: BoolOp) -> Result<Volume, OpsError> {
    if a.dims() != b.dims() {
        return Err(OpsError::DimsMismatch(a.dims(), b.dims()));
    }
    let da = require_binary(a)?;
    let db = require_binary(b)?;
    let out: Vec<u8> = da
        .iter()
        .zip(db)
        .map(|(&x, &y)| match op {
            BoolOp::Union => x | y,
            BoolOp::Intersect => x & y,
            BoolOp::Subtract => x & (1 - y),
        })
        .collect();
    Ok(a.with_data(VoxelData::U8(out)).expect("same dims"))
}
