//! 26-connected component labeling (two-pass, union-find).

use super::boolean::require_binary;
use super::OpsError;
use crate::volume::{Volume, VoxelData};

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Keeps the smaller root so roots stay at their earliest label.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels foreground voxels of a binary volume. Labels start at 1 and are
/// numbered by each component's smallest voxel index; 0 is background.
/// Returns the label image and the component count.
pub fn label_components(vol: &Volume) -> Result<(Vec<u32>, usize), OpsError> {
    let data = require_binary(vol)?;
    let [nx, ny, nz] = vol.dims();
    let mut labels = vec![0u32; data.len()];
    let mut ds = DisjointSet::new();

    // The 13 neighbours that precede a voxel in scan order.
    let mut prev = Vec::with_capacity(13);
    for dz in -1i64..=0 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                if before {
                    prev.push((dx, dy, dz));
                }
            }
        }
    }

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if data[i] == 0 {
                    continue;
                }
                let mut label = 0u32;
                for &(dx, dy, dz) in &prev {
                    let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 {
                        continue;
                    }
                    let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                    let l = labels[j];
                    if l != 0 {
                        if label == 0 {
                            label = l;
                        } else if l != label {
                            ds.union(label, l);
                        }
                    }
                }
                if label == 0 {
                    label = ds.make();
                }
                labels[i] = label;
            }
        }
    }

    // Compact roots to 1..=count in order of first appearance.
    let mut remap = vec![0u32; ds.parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = ds.find(*l) as usize;
        if remap[root] == 0 {
            count += 1;
            remap[root] = count;
        }
        *l = remap[root];
    }
    Ok((labels, count as usize))
}

/// Voxel count per label; index 0 is unused.
pub fn component_sizes(labels: &[u32], count: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; count + 1];
    for &l in labels {
        if l != 0 {
            sizes[l as usize] += 1;
        }
    }
    sizes
}

/// Keeps only the largest 26-connected component; ties go to the component
/// whose first voxel comes earliest in scan order.
pub fn largest_component(vol: &Volume) -> Result<Volume, OpsError> {
    let (labels, count) = label_components(vol)?;
    if count == 0 {
        return Ok(vol.clone());
    }
    let sizes = component_sizes(&labels, count);
    let mut best = 1;
    for l in 2..=count {
        if sizes[l] > sizes[best] {
            best = l;
        }
    }
    let out = labels.iter().map(|&l| u8::from(l as usize == best)).collect();
    Ok(vol.with_data(VoxelData::U8(out)).expect("same dims"))
}
