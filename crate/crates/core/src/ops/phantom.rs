//! Synthetic skull phantoms: an ellipsoidal shell (cranium) with a solid
//! block protruding anteriorly (+y) below the equator (face/jaw).
//!
//! Axis convention: +x right, +y anterior, +z superior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OpsError;
use crate::volume::{Volume, VoxelData};

/// Nominal phantom shape; the seed perturbs radii, centre and face size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    /// Shell thickness in voxels.
    pub thickness: f64,
    /// Outer ellipsoid radii in voxels.
    pub radii: [f64; 3],
    /// How far the face block reaches beyond the outer shell along +y.
    pub face_depth: f64,
    /// Face block extent along x.
    pub face_width: f64,
    /// Face block extent along z.
    pub face_height: f64,
    /// Relative seed-driven perturbation of radii and face size.
    pub jitter: f64,
}

impl PhantomSpec {
    /// Proportional defaults for a grid of `dims`.
    pub fn for_dims(dims: [usize; 3], seed: u64) -> Self {
        let [nx, ny, nz] = dims.map(|d| d as f64);
        let min = nx.min(ny).min(nz);
        Self {
            seed,
            dims,
            thickness: (min / 14.0).round().max(2.0),
            radii: [0.33 * nx, 0.36 * ny, 0.32 * nz],
            face_depth: 0.07 * ny,
            face_width: 0.36 * nx,
            face_height: 0.18 * nz,
            jitter: 0.04,
        }
    }

    /// Seed-resolved geometry; checks that everything fits in the grid.
    pub fn geometry(&self) -> Result<PhantomGeometry, OpsError> {
        let bad = |m: String| Err(OpsError::SpecDoesNotFit(m));
        if self.dims.iter().any(|&d| d == 0) {
            return bad(format!("dims {:?}", self.dims));
        }
        if !(self.thickness >= 1.0) {
            return bad(format!("thickness {} < 1", self.thickness));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 0.5)", self.jitter));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut jit = |scale: f64| 1.0 + self.jitter * (2.0 * rng.gen::<f64>() - 1.0) * scale;
        let radii = [
            self.radii[0] * jit(1.0),
            self.radii[1] * jit(1.0),
            self.radii[2] * jit(1.0),
        ];
        let face_depth = self.face_depth * jit(1.0);
        let face_width = self.face_width * jit(1.0);
        let face_height = self.face_height * jit(1.0);
        let shift = [jit(10.0) - 1.0, jit(10.0) - 1.0, jit(10.0) - 1.0];
        let center = [
            (self.dims[0] as f64 - 1.0) / 2.0 + shift[0].clamp(-1.0, 1.0),
            (self.dims[1] as f64 - 1.0) / 2.0 + shift[1].clamp(-1.0, 1.0),
            (self.dims[2] as f64 - 1.0) / 2.0 + shift[2].clamp(-1.0, 1.0),
        ];

        if radii.iter().any(|&r| r - self.thickness < 1.0) {
            return bad(format!(
                "radii {radii:?} leave no cavity inside a {}-voxel shell",
                self.thickness
            ));
        }
        for a in 0..3 {
            let lo = center[a] - radii[a];
            let hi = center[a] + radii[a];
            if lo < 0.0 || hi > self.dims[a] as f64 - 1.0 {
                return bad(format!("shell exceeds grid along axis {a}"));
            }
        }
        let face_lo = [
            center[0] - face_width / 2.0,
            center[1] + 0.5 * radii[1],
            center[2] - 0.15 * radii[2] - face_height,
        ];
        let face_hi = [
            center[0] + face_width / 2.0,
            center[1] + radii[1] + face_depth,
            center[2] - 0.15 * radii[2],
        ];
        if face_width <= 0.0 || face_height <= 0.0 || face_depth < 0.0 {
            return bad("face block must have positive size".into());
        }
        if face_height > 0.75 * radii[2] {
            return bad("face block taller than the lower cranium".into());
        }
        if face_width > 1.4 * radii[0] {
            return bad("face block wider than the cranium".into());
        }
        for a in 0..3 {
            if face_lo[a] < 0.0 || face_hi[a] > self.dims[a] as f64 - 1.0 {
                return bad(format!("face block exceeds grid along axis {a}"));
            }
        }
        Ok(PhantomGeometry {
            dims: self.dims,
            center,
            outer_radii: radii,
            thickness: self.thickness,
            face_lo,
            face_hi,
        })
    }
}

/// Resolved phantom shape in voxel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    pub dims: [usize; 3],
    pub center: [f64; 3],
    pub outer_radii: [f64; 3],
    pub thickness: f64,
    pub face_lo: [f64; 3],
    pub face_hi: [f64; 3],
}

impl PhantomGeometry {
    pub fn inner_radii(&self) -> [f64; 3] {
        self.outer_radii.map(|r| r - self.thickness)
    }

    pub fn in_shell(&self, p: [f64; 3]) -> bool {
        let q = |r: [f64; 3]| -> f64 {
            (0..3)
                .map(|a| ((p[a] - self.center[a]) / r[a]).powi(2))
                .sum()
        };
        q(self.outer_radii) <= 1.0 && q(self.inner_radii()) > 1.0
    }

    pub fn in_face(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.face_lo[a] && p[a] <= self.face_hi[a])
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.in_shell(p) || self.in_face(p)
    }
}

/// Rasterizes a phantom as a binary U8 volume with unit spacing.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Volume, OpsError> {
    let g = spec.geometry()?;
    let [nx, ny, nz] = spec.dims;
    let mut data = vec![0u8; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if g.contains([x as f64, y as f64, z as f64]) {
                    data[x + nx * (y + ny * z)] = 1;
                }
            }
        }
    }
    Ok(Volume::new(spec.dims, [1.0; 3], [0.0; 3], VoxelData::U8(data)).expect("valid dims"))
}
