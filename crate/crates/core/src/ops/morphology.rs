//! Binary erosion/dilation with the 6-connected cross.
//! Outside the grid counts as background.

use super::boolean::require_binary;
use super::OpsError;
use crate::volume::{Volume, VoxelData};

fn step(src: &[u8], dims: [usize; 3], erode: bool) -> Vec<u8> {
    let [nx, ny, nz] = dims;
    let mut out = vec![0u8; src.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let at = |dx: i64, dy: i64, dz: i64| -> u8 {
                    let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 || qz >= nz as i64 {
                        0
                    } else {
                        src[qx as usize + nx * (qy as usize + ny * qz as usize)]
                    }
                };
                let n = [
                    at(-1, 0, 0),
                    at(1, 0, 0),
                    at(0, -1, 0),
                    at(0, 1, 0),
                    at(0, 0, -1),
                    at(0, 0, 1),
                ];
                out[i] = if erode {
                    src[i] & n.iter().fold(1, |a, &b| a & b)
                } else {
                    src[i] | n.iter().fold(0, |a, &b| a | b)
                };
            }
        }
    }
    out
}

fn repeat(vol: &Volume, radius: usize, erode: bool) -> Result<Volume, OpsError> {
    let mut cur = require_binary(vol)?.to_vec();
    for _ in 0..radius {
        cur = step(&cur, vol.dims(), erode);
    }
    Ok(vol.with_data(VoxelData::U8(cur)).expect("same dims"))
}

pub fn erode(vol: &Volume, radius: usize) -> Result<Volume, OpsError> {
    repeat(vol, radius, true)
}

pub fn dilate(vol: &Volume, radius: usize) -> Result<Volume, OpsError> {
    repeat(vol, radius, false)
}

/// Erosion followed by dilation; removes structures thinner than
/// `2 * radius + 1` voxels. The result is a subset of the input.
pub fn opening(vol: &Volume, radius: usize) -> Result<Volume, OpsError> {
    let eroded = erode(vol, radius)?;
    let opened = dilate(&eroded, radius)?;
    // Dilation can grow past the original near the grid border; clip it.
    let src = vol.as_u8().expect("checked binary");
    let clipped = opened
        .as_u8()
        .expect("binary")
        .iter()
        .zip(src)
        .map(|(&a, &b)| a & b)
        .collect();
    Ok(vol.with_data(VoxelData::U8(clipped)).expect("same dims"))
}
