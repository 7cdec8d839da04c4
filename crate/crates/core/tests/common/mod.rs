#![allow(dead_code)]

use std::path::Path;

use skullrec::dataset::{build_pairs, split_dataset, DatasetManifest, ManifestEntry, PairOptions, SplitCounts};
use skullrec::io::save_volume;
use skullrec::nn::Tensor;
use skullrec::ops::{make_phantom, PhantomSpec};

/// Writes `n` phantom completes into `dir` and returns the input manifest.
pub fn write_completes(dir: &Path, n: usize, dims: [usize; 3], seed0: u64) -> DatasetManifest {
    std::fs::create_dir_all(dir.join("completes")).unwrap();
    let entries = (0..n)
        .map(|i| {
            let v = make_phantom(&PhantomSpec::for_dims(dims, seed0 + i as u64)).unwrap();
            let rel = format!("completes/skull_{i:03}.nrrd");
            save_volume(&v, &dir.join(&rel)).unwrap();
            ManifestEntry::complete_only(format!("skull_{i:03}"), rel)
        })
        .collect();
    DatasetManifest::new(entries, dir)
}

/// Completes split by `counts`, paired with the given options.
pub fn make_pairs(dir: &Path, n: usize, dims: [usize; 3], counts: SplitCounts, opts: &PairOptions, seed: u64) -> DatasetManifest {
    let input = write_completes(dir, n, dims, seed);
    let split = split_dataset(&input.entries, counts, seed).unwrap();
    let input = DatasetManifest::new(split, dir);
    let out = dir.join("pairs").join("manifest.json");
    let m = build_pairs(&input, opts, seed, &out).unwrap();
    m.save(&out).unwrap();
    DatasetManifest::load(&out).unwrap()
}

/// Random volume with dims ≤ `max_dim`³, random geometry and either a
/// binary U8 or arbitrary finite F32 payload.
pub fn random_volume(rng: &mut impl rand::Rng, max_dim: usize) -> skullrec::Volume {
    use skullrec::volume::VoxelData;
    let dims = [0; 3].map(|_| rng.gen_range(1..=max_dim));
    let n = dims.iter().product();
    let data = if rng.gen::<bool>() {
        VoxelData::U8((0..n).map(|_| rng.gen_range(0..=1)).collect())
    } else {
        VoxelData::F32(
            (0..n)
                .map(|_| loop {
                    let v = f32::from_bits(rng.gen());
                    if v.is_finite() {
                        break v;
                    }
                })
                .collect(),
        )
    };
    let spacing = [0; 3].map(|_| rng.gen_range(0.1f32..4.0));
    let origin = [0; 3].map(|_| rng.gen_range(-200.0f32..200.0));
    skullrec::Volume::new(dims, spacing, origin, data).unwrap()
}

/// Bitwise equality, so signed zeros and payload bits are compared exactly.
pub fn same_bits(a: &skullrec::Volume, b: &skullrec::Volume) -> bool {
    use skullrec::volume::VoxelData;
    let bits = |v: &[f32; 3]| v.map(f32::to_bits);
    let data = match (a.data(), b.data()) {
        (VoxelData::U8(x), VoxelData::U8(y)) => x == y,
        (VoxelData::F32(x), VoxelData::F32(y)) => x.iter().map(|v| v.to_bits()).eq(y.iter().map(|v| v.to_bits())),
        _ => false,
    };
    data && a.dims() == b.dims() && bits(&a.spacing()) == bits(&b.spacing()) && bits(&a.origin()) == bits(&b.origin())
}

/// Applies a few random byte edits to the first `head` bytes: overwrite,
/// insert, delete or truncate.
pub fn mutate(bytes: &[u8], head: usize, rng: &mut impl rand::Rng) -> Vec<u8> {
    let mut out = bytes.to_vec();
    for _ in 0..rng.gen_range(1..=4) {
        let span = head.min(out.len()).max(1);
        let at = rng.gen_range(0..span);
        match rng.gen_range(0..5) {
            0 | 1 if at < out.len() => out[at] = rng.gen(),
            2 if at < out.len() => {
                // Nudge a digit so lengths and sizes change plausibly.
                out[at] = b"0123456789 -.\n"[rng.gen_range(0..14)];
            }
            3 => out.insert(at.min(out.len()), rng.gen()),
            _ if at < out.len() && rng.gen::<bool>() => {
                out.remove(at);
            }
            _ => out.truncate(at),
        }
    }
    out
}

fn at(shape: [usize; 5], n: usize, c: usize, z: i64, y: i64, x: i64) -> Option<usize> {
    let [_, cs, d, h, w] = shape;
    if z < 0 || y < 0 || x < 0 || z >= d as i64 || y >= h as i64 || x >= w as i64 {
        return None;
    }
    Some((((n * cs + c) * d + z as usize) * h + y as usize) * w + x as usize)
}

/// Direct nested-loop cross-correlation.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Tensor<f64> {
    let [n, ci, d, h, wd] = x.shape();
    let [co, _, k, _, _] = w.shape();
    let out_dim = |len: usize| (len + 2 * p - k) / s + 1;
    let os = [n, co, out_dim(d), out_dim(h), out_dim(wd)];
    let mut out = Tensor::zeros(os);
    for bn in 0..n {
        for o in 0..co {
            for oz in 0..os[2] {
                for oy in 0..os[3] {
                    for ox in 0..os[4] {
                        let mut acc = b[o];
                        for c in 0..ci {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (oz * s + kz) as i64 - p as i64;
                                        let iy = (oy * s + ky) as i64 - p as i64;
                                        let ix = (ox * s + kx) as i64 - p as i64;
                                        if let Some(i) = at(x.shape(), bn, c, iz, iy, ix) {
                                            let wi = (((o * ci + c) * k + kz) * k + ky) * k + kx;
                                            acc += x.data()[i] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                        }
                        let oi = at(os, bn, o, oz as i64, oy as i64, ox as i64).unwrap();
                        out.data_mut()[oi] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Direct scatter form of the transposed convolution.
pub fn naive_convt(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize, op: usize) -> Tensor<f64> {
    let [n, ci, d, h, wd] = x.shape();
    let [_, co, k, _, _] = w.shape();
    let out_dim = |len: usize| (len - 1) * s + k + op - 2 * p;
    let os = [n, co, out_dim(d), out_dim(h), out_dim(wd)];
    let mut out = Tensor::zeros(os);
    for bn in 0..n {
        for o in 0..co {
            for z in 0..os[2] {
                for y in 0..os[3] {
                    for xx in 0..os[4] {
                        let oi = at(os, bn, o, z as i64, y as i64, xx as i64).unwrap();
                        out.data_mut()[oi] = b[o];
                    }
                }
            }
        }
        for c in 0..ci {
            for iz in 0..d {
                for iy in 0..h {
                    for ix in 0..wd {
                        let xv = x.data()[at(x.shape(), bn, c, iz as i64, iy as i64, ix as i64).unwrap()];
                        for o in 0..co {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let oz = (iz * s + kz) as i64 - p as i64;
                                        let oy = (iy * s + ky) as i64 - p as i64;
                                        let ox = (ix * s + kx) as i64 - p as i64;
                                        if let Some(oi) = at(os, bn, o, oz, oy, ox) {
                                            let wi = (((c * co + o) * k + kz) * k + ky) * k + kx;
                                            out.data_mut()[oi] += xv * w.data()[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
