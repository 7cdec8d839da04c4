//! Synthetic defect injection.
//!
//! A defect removes a region `R` from a complete binary skull:
//! `defective = complete ∧ ¬R` and `implant = complete ∧ R`. Cranial defects
//! use a discrete ball; facial defects remove everything anterior of a cut
//! plane inside an axial band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Volume, VoxelData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefectError {
    #[error("defect region does not intersect the skull")]
    EmptyImplant,
    #[error("input volume is not binary")]
    NotBinary,
    #[error("invalid defect parameters: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Cranial,
    Facial,
}

impl DefectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefectKind::Cranial => "cranial",
            DefectKind::Facial => "facial",
        }
    }
}

impl std::fmt::Display for DefectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Direction that counts as anterior for facial cuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnteriorAxis {
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-y")]
    MinusY,
}

impl Default for AnteriorAxis {
    fn default() -> Self {
        AnteriorAxis::PlusY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CranialParams {
    /// Ball centre as fractions of `(dims - 1)`; `None` samples a foreground
    /// voxel in the superior third of the skull's bounding box.
    pub center: Option<[f64; 3]>,
    /// Ball radius as a fraction of the smallest dimension.
    pub radius: f64,
}

impl Default for CranialParams {
    fn default() -> Self {
        Self {
            center: None,
            radius: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FacialParams {
    /// Voxels whose anterior fraction exceeds this are removed.
    pub plane: f64,
    /// Axial band `[lo, hi)` as fractions of the z extent.
    pub z_band: [f64; 2],
    pub anterior: AnteriorAxis,
}

impl Default for FacialParams {
    fn default() -> Self {
        Self {
            plane: 0.72,
            z_band: [0.0, 0.5],
            anterior: AnteriorAxis::PlusY,
        }
    }
}

/// Full description of one defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub seed: u64,
    #[serde(default)]
    pub cranial: CranialParams,
    #[serde(default)]
    pub facial: FacialParams,
}

impl DefectSpec {
    pub fn cranial(seed: u64, params: CranialParams) -> Self {
        Self {
            kind: DefectKind::Cranial,
            seed,
            cranial: params,
            facial: FacialParams::default(),
        }
    }

    pub fn facial(seed: u64, params: FacialParams) -> Self {
        Self {
            kind: DefectKind::Facial,
            seed,
            cranial: CranialParams::default(),
            facial: params,
        }
    }

    pub fn validate(&self) -> Result<(), DefectError> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        match self.kind {
            DefectKind::Cranial => {
                let c = &self.cranial;
                if !(c.radius > 0.0 && c.radius.is_finite()) {
                    return Err(DefectError::InvalidSpec(format!("radius {} must be > 0", c.radius)));
                }
                if let Some(ctr) = c.center {
                    if !ctr.iter().all(|&v| frac(v)) {
                        return Err(DefectError::InvalidSpec(format!("centre {ctr:?} outside [0,1]^3")));
                    }
                }
            }
            DefectKind::Facial => {
                let f = &self.facial;
                if !frac(f.plane) {
                    return Err(DefectError::InvalidSpec(format!("plane {} outside [0,1]", f.plane)));
                }
                let [lo, hi] = f.z_band;
                if !(frac(lo) && frac(hi) && lo < hi) {
                    return Err(DefectError::InvalidSpec(format!("z band {lo}..{hi}")));
                }
            }
        }
        Ok(())
    }
}

/// Output of a defect injection.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectPair {
    pub defective: Volume,
    pub implant: Volume,
}

fn binary_data(v: &Volume) -> Result<&[u8], DefectError> {
    match v.data() {
        VoxelData::U8(d) if d.iter().all(|&b| b <= 1) => Ok(d),
        _ => Err(DefectError::NotBinary),
    }
}

fn split_by_region(
    complete: &Volume,
    data: &[u8],
    inside: impl Fn(usize, usize, usize) -> bool,
) -> Result<DefectPair, DefectError> {
    let [nx, ny, nz] = complete.dims();
    let mut defective = data.to_vec();
    let mut implant = vec![0u8; data.len()];
    let mut removed = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if data[i] == 1 && inside(x, y, z) {
                    defective[i] = 0;
                    implant[i] = 1;
                    removed += 1;
                }
            }
        }
    }
    if removed == 0 {
        return Err(DefectError::EmptyImplant);
    }
    Ok(DefectPair {
        defective: complete.with_data(VoxelData::U8(defective)).expect("same dims"),
        implant: complete.with_data(VoxelData::U8(implant)).expect("same dims"),
    })
}

/// Resolves the ball centre and radius in voxel units.
pub fn cranial_ball(complete: &Volume, spec: &DefectSpec) -> Result<([f64; 3], f64), DefectError> {
    let data = binary_data(complete)?;
    let dims = complete.dims();
    let min_dim = *dims.iter().min().expect("3 dims") as f64;
    let radius = spec.cranial.radius * min_dim;
    let center = match spec.cranial.center {
        Some(frac) => [
            frac[0] * (dims[0] as f64 - 1.0),
            frac[1] * (dims[1] as f64 - 1.0),
            frac[2] * (dims[2] as f64 - 1.0),
        ],
        None => {
            let (zmin, zmax) = match foreground_z_range(data, dims) {
                Some(r) => r,
                None => return Err(DefectError::EmptyImplant),
            };
            let span = zmax - zmin + 1;
            let z_cut = zmax + 1 - span.div_ceil(3);
            let plane = dims[0] * dims[1];
            let candidates: Vec<usize> = (z_cut * plane..(zmax + 1) * plane)
                .filter(|&i| data[i] == 1)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let pick = candidates[rng.gen_range(0..candidates.len())];
            let [x, y, z] = complete.coords(pick);
            [x as f64, y as f64, z as f64]
        }
    };
    Ok((center, radius))
}

fn foreground_z_range(data: &[u8], dims: [usize; 3]) -> Option<(usize, usize)> {
    let plane = dims[0] * dims[1];
    let first = data.iter().position(|&b| b == 1)? / plane;
    let last = data.iter().rposition(|&b| b == 1)? / plane;
    Some((first, last))
}

/// Removes a discrete ball: voxel `p` is inside iff `|p - c|^2 <= r^2`.
pub fn inject_cranial(complete: &Volume, spec: &DefectSpec) -> Result<DefectPair, DefectError> {
    if spec.kind != DefectKind::Cranial {
        return Err(DefectError::InvalidSpec("expected a cranial spec".into()));
    }
    spec.validate()?;
    let data = binary_data(complete)?;
    let (c, r) = cranial_ball(complete, spec)?;
    let r2 = r * r;
    split_by_region(complete, data, |x, y, z| {
        let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2
    })
}

/// Anterior position of a voxel as a fraction in (0, 1).
pub fn anterior_fraction(axis: AnteriorAxis, dims: [usize; 3], x: usize, y: usize) -> f64 {
    let (v, n) = match axis {
        AnteriorAxis::PlusX | AnteriorAxis::MinusX => (x, dims[0]),
        AnteriorAxis::PlusY | AnteriorAxis::MinusY => (y, dims[1]),
    };
    let f = (v as f64 + 0.5) / n as f64;
    match axis {
        AnteriorAxis::PlusX | AnteriorAxis::PlusY => f,
        AnteriorAxis::MinusX | AnteriorAxis::MinusY => 1.0 - f,
    }
}

/// Removes voxels anterior of the cut plane within the axial band.
pub fn inject_facial(complete: &Volume, spec: &DefectSpec) -> Result<DefectPair, DefectError> {
    if spec.kind != DefectKind::Facial {
        return Err(DefectError::InvalidSpec("expected a facial spec".into()));
    }
    spec.validate()?;
    let data = binary_data(complete)?;
    let dims = complete.dims();
    let p = &spec.facial;
    let [zlo, zhi] = p.z_band;
    split_by_region(complete, data, |x, y, z| {
        let zf = (z as f64 + 0.5) / dims[2] as f64;
        zf >= zlo && zf < zhi && anterior_fraction(p.anterior, dims, x, y) > p.plane
    })
}

/// Dispatches on `spec.kind`.
pub fn inject(complete: &Volume, spec: &DefectSpec) -> Result<DefectPair, DefectError> {
    match spec.kind {
        DefectKind::Cranial => inject_cranial(complete, spec),
        DefectKind::Facial => inject_facial(complete, spec),
    }
}
