use serde::{Deserialize, Serialize};

use super::RegistrationError;
use crate::scalar::Real;
use crate::volume::{Volume, VoxelData};

/// Hamilton product `a * b` of `[w, x, y, z]` quaternions.
pub fn quat_mul<T: Real>(a: [T; 4], b: [T; 4]) -> [T; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_conj<T: Real>(q: [T; 4]) -> [T; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Unit quaternion rotating by `|r|` radians about `r`.
pub fn quat_from_rotation_vector<T: Real>(r: [T; 3]) -> [T; 4] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let half = theta / T::lit(2.0);
    // sin(θ/2)/θ, with its series near zero.
    let k = if theta < T::lit(1e-8) {
        T::lit(0.5) - theta * theta / T::lit(48.0)
    } else {
        half.sin() / theta
    };
    [half.cos(), r[0] * k, r[1] * k, r[2] * k]
}

/// Rotation angle in `[0, π]` radians.
pub fn quat_angle<T: Real>(q: [T; 4]) -> T {
    let v = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    T::lit(2.0) * v.atan2(q[0].abs())
}

fn quat_matrix<T: Real>(q: [T; 4]) -> [[T; 3]; 3] {
    let [w, x, y, z] = q;
    let two = T::lit(2.0);
    let one = T::one();
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

fn mat_vec<T: Real>(m: &[[T; 3]; 3], v: [T; 3]) -> [T; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn mat_t_vec<T: Real>(m: &[[T; 3]; 3], v: [T; 3]) -> [T; 3] {
    [0, 1, 2].map(|c| m[0][c] * v[0] + m[1][c] * v[1] + m[2][c] * v[2])
}

fn add<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// `p ↦ s·R·(p − c) + c + t` in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform<T> {
    pub scale: T,
    /// Unit quaternion `[w, x, y, z]`.
    pub quaternion: [T; 4],
    pub translation_mm: [T; 3],
    pub center_mm: [T; 3],
}

impl<T: Real> SimilarityTransform<T> {
    /// Normalizes the quaternion; rejects non-positive scale and a zero or
    /// non-finite quaternion.
    pub fn new(scale: T, quaternion: [T; 4], translation_mm: [T; 3], center_mm: [T; 3]) -> Result<Self, RegistrationError> {
        let n = quaternion.iter().map(|&c| c * c).sum::<T>().sqrt();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(RegistrationError::InvalidTransform(format!("quaternion {quaternion:?}")));
        }
        let t = Self {
            scale,
            quaternion: quaternion.map(|c| c / n),
            translation_mm,
            center_mm,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn identity(center_mm: [T; 3]) -> Self {
        Self {
            scale: T::one(),
            quaternion: [T::one(), T::zero(), T::zero(), T::zero()],
            translation_mm: [T::zero(); 3],
            center_mm,
        }
    }

    /// Checks `scale > 0`, a unit quaternion (within 1e-6) and finite vectors.
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: String| Err(RegistrationError::InvalidTransform(m));
        if !(self.scale > T::zero()) || !self.scale.is_finite() {
            return bad(format!("scale {} must be positive", self.scale));
        }
        let n = self.quaternion.iter().map(|&c| c * c).sum::<T>().sqrt();
        if !((n - T::one()).abs() <= T::lit(1e-6)) {
            return bad(format!("quaternion norm {n} is not 1"));
        }
        if self.translation_mm.iter().chain(&self.center_mm).any(|c| !c.is_finite()) {
            return bad("non-finite translation or centre".into());
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> [[T; 3]; 3] {
        quat_matrix(self.quaternion)
    }

    pub fn rotation_angle(&self) -> T {
        quat_angle(self.quaternion)
    }

    pub fn apply(&self, p: [T; 3]) -> [T; 3] {
        let r = self.rotation_matrix();
        let q = mat_vec(&r, sub(p, self.center_mm)).map(|c| c * self.scale);
        add(add(q, self.center_mm), self.translation_mm)
    }

    pub fn apply_inverse(&self, q: [T; 3]) -> [T; 3] {
        let r = self.rotation_matrix();
        let d = sub(sub(q, self.center_mm), self.translation_mm);
        add(mat_t_vec(&r, d).map(|c| c / self.scale), self.center_mm)
    }

    /// The inverse map, about the same centre.
    pub fn inverse(&self) -> Self {
        let conj = quat_conj(self.quaternion);
        let back = mat_vec(&quat_matrix(conj), self.translation_mm).map(|c| -c / self.scale);
        Self {
            scale: T::one() / self.scale,
            quaternion: conj,
            translation_mm: back,
            center_mm: self.center_mm,
        }
    }

    /// `self ∘ first`: apply `first`, then `self`. Uses `first`'s centre.
    pub fn compose(&self, first: &Self) -> Self {
        let c = first.center_mm;
        let moved = add(c, first.translation_mm);
        let t = sub(self.apply(moved), c);
        let mut q = quat_mul(self.quaternion, first.quaternion);
        let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
        q = q.map(|v| v / n);
        Self {
            scale: self.scale * first.scale,
            quaternion: q,
            translation_mm: t,
            center_mm: c,
        }
    }

    /// The same map expressed about another centre.
    pub fn recentered(&self, center_mm: [T; 3]) -> Self {
        let t = sub(self.apply(center_mm), center_mm);
        Self {
            translation_mm: t,
            center_mm,
            ..*self
        }
    }

    pub fn cast<U: Real>(&self) -> SimilarityTransform<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        SimilarityTransform {
            scale: c(self.scale),
            quaternion: self.quaternion.map(c),
            translation_mm: self.translation_mm.map(c),
            center_mm: self.center_mm.map(c),
        }
    }
}

/// Voxel lattice with world geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Grid<T> {
    pub dims: [usize; 3],
    pub spacing: [T; 3],
    pub origin: [T; 3],
}

impl<T: Real> Grid<T> {
    pub fn of(vol: &Volume) -> Self {
        Self {
            dims: vol.dims(),
            spacing: vol.spacing().map(|s| T::lit(s as f64)),
            origin: vol.origin().map(|o| T::lit(o as f64)),
        }
    }

    pub fn to_world(&self, i: [T; 3]) -> [T; 3] {
        [0, 1, 2].map(|a| self.origin[a] + i[a] * self.spacing[a])
    }

    pub fn to_voxel(&self, p: [T; 3]) -> [T; 3] {
        [0, 1, 2].map(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }
}

/// Affine map between voxel index spaces: `i_src = m · i_dst + v`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VoxelMap<T> {
    pub m: [[T; 3]; 3],
    pub v: [T; 3],
}

impl<T: Real> VoxelMap<T> {
    /// Pulls `dst` voxels back through `tf` into `src` voxel coordinates.
    pub fn pullback(tf: &SimilarityTransform<T>, src: &Grid<T>, dst: &Grid<T>) -> Self {
        let v = src.to_voxel(tf.apply_inverse(dst.origin));
        let mut m = [[T::zero(); 3]; 3];
        for c in 0..3 {
            let mut e = dst.origin;
            e[c] += dst.spacing[c];
            let col = src.to_voxel(tf.apply_inverse(e));
            for r in 0..3 {
                m[r][c] = col[r] - v[r];
            }
        }
        Self { m, v }
    }

    pub fn at(&self, i: [T; 3]) -> [T; 3] {
        add(mat_vec(&self.m, i), self.v)
    }
}

/// Distance below which a sample coordinate snaps to the lattice, so the
/// identity map reproduces voxels exactly.
const SNAP: f64 = 1e-6;

fn snap<T: Real>(x: T) -> T {
    let r = x.round();
    if (x - r).abs() < T::lit(SNAP) {
        r
    } else {
        x
    }
}

fn floor_i64(x: f64) -> i64 {
    let i = x as i64;
    if (i as f64) > x {
        i - 1
    } else {
        i
    }
}

/// Trilinear interpolation; lattice points outside the grid read as zero.
/// With `snap`, coordinates within `SNAP` of the lattice are rounded first.
pub(crate) fn sample_trilinear<T: Real>(data: &[T], dims: [usize; 3], p: [T; 3], snap_to_lattice: bool) -> T {
    let [nx, ny, nz] = dims;
    let p = if snap_to_lattice { p.map(snap) } else { p };
    let pf = p.map(|c| c.to_f64_lossy());
    let base = pf.map(floor_i64);
    let w = [0, 1, 2].map(|a| p[a] - T::lit(base[a] as f64));
    let (sx, sy) = (1, nx);
    let sz = nx * ny;
    let inside = base[0] >= 0
        && base[1] >= 0
        && base[2] >= 0
        && base[0] + 1 < nx as i64
        && base[1] + 1 < ny as i64
        && base[2] + 1 < nz as i64;
    if inside {
        let i = base[0] as usize + nx * (base[1] as usize + ny * base[2] as usize);
        let lerp = |a: T, b: T, t: T| a + t * (b - a);
        let c00 = lerp(data[i], data[i + sx], w[0]);
        let c10 = lerp(data[i + sy], data[i + sy + sx], w[0]);
        let c01 = lerp(data[i + sz], data[i + sz + sx], w[0]);
        let c11 = lerp(data[i + sz + sy], data[i + sz + sy + sx], w[0]);
        return lerp(lerp(c00, c10, w[1]), lerp(c01, c11, w[1]), w[2]);
    }
    if base.iter().zip(&dims).any(|(&b, &n)| b < -1 || b >= n as i64) {
        return T::zero();
    }
    let mut acc = T::zero();
    for dz in 0..2 {
        let z = base[2] + dz;
        let wz = if dz == 0 { T::one() - w[2] } else { w[2] };
        if wz == T::zero() || z < 0 || z >= nz as i64 {
            continue;
        }
        for dy in 0..2 {
            let y = base[1] + dy;
            let wy = if dy == 0 { T::one() - w[1] } else { w[1] };
            if wy == T::zero() || y < 0 || y >= ny as i64 {
                continue;
            }
            let row = nx * (y as usize + ny * z as usize);
            for dx in 0..2 {
                let x = base[0] + dx;
                let wx = if dx == 0 { T::one() - w[0] } else { w[0] };
                if wx == T::zero() || x < 0 || x >= nx as i64 {
                    continue;
                }
                acc += wz * wy * wx * data[row + x as usize];
            }
        }
    }
    acc
}

fn nearest_index<T: Real>(dims: [usize; 3], p: [T; 3]) -> Option<usize> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (p[a] + T::lit(0.5)).floor().to_f64_lossy();
        if !(r >= 0.0 && r < dims[a] as f64) {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]))
}

/// `out(x) = vol(T⁻¹(x))` on `dst`'s lattice.
pub(crate) fn resample_onto<T: Real>(vol: &Volume, tf: &SimilarityTransform<T>, dst: &Grid<T>) -> VoxelData {
    let map = VoxelMap::pullback(tf, &Grid::of(vol), dst);
    let [nx, ny, nz] = dst.dims;
    let src_dims = vol.dims();
    let coords = (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])));
    let at = |c: [usize; 3]| map.at(c.map(T::count));
    match vol.data() {
        VoxelData::U8(d) => VoxelData::U8(
            coords
                .map(|c| nearest_index(src_dims, at(c)).map_or(0, |i| d[i]))
                .collect(),
        ),
        VoxelData::F32(d) => {
            let src: Vec<T> = d.iter().map(|&v| T::lit(v as f64)).collect();
            VoxelData::F32(
                coords
                    .map(|c| sample_trilinear(&src, src_dims, at(c), true).to_f32_lossy())
                    .collect(),
            )
        }
    }
}

/// Resamples `vol` through `tf` on its own grid: nearest neighbour for U8,
/// trilinear for F32, zero outside.
pub fn apply_transform<T: Real>(vol: &Volume, tf: &SimilarityTransform<T>) -> Volume {
    let data = resample_onto(vol, tf, &Grid::of(vol));
    vol.with_data(data).expect("same grid")
}
