//! Strided 3D convolution kernels.
//!
//! Both convolution flavours pair a "small" grid with a "big" grid through
//! `big = small * stride + k - padding` per axis (for `conv3d` small is the
//! output, for `conv_transpose3d` small is the input). Every forward and
//! backward pass is one of three accumulations over that relation:
//! gather (`small += w * big`), scatter (`big += w * small`) and dot
//! (`sum small * big`). Each output slab is produced by one task in a fixed
//! loop order, so results do not depend on the thread count.

use std::ops::Range;

use rayon::prelude::*;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geom {
    pub small: [usize; 3],
    pub big: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: usize,
    pub padding: usize,
}

impl Geom {
    /// Values of `small` along one axis whose partner lies in `[0, big)`.
    #[inline]
    fn range(&self, axis: usize, k: usize) -> Range<usize> {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let top = self.big[axis] + p;
        if top <= k {
            return 0..0;
        }
        let hi = ((top - 1 - k) / s + 1).min(self.small[axis]);
        lo..hi.max(lo)
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Calls `f(small_start, big_start, len)` for every row segment of the tap;
    /// element `j` of a segment pairs `small_start + j` with `big_start + j * stride`.
    #[inline]
    fn visit(&self, tap: usize, mut f: impl FnMut(usize, usize, usize)) {
        let [_, kh, kw] = self.kernel;
        let kz = tap / (kh * kw);
        let ky = (tap / kw) % kh;
        let kx = tap % kw;
        let (s, p) = (self.stride, self.padding);
        let rx = self.range(2, kx);
        if rx.is_empty() {
            return;
        }
        for sz in self.range(0, kz) {
            let bz = sz * s + kz - p;
            for sy in self.range(1, ky) {
                let by = sy * s + ky - p;
                let srow = (sz * self.small[1] + sy) * self.small[2];
                let brow = (bz * self.big[1] + by) * self.big[2];
                f(srow + rx.start, brow + rx.start * s + kx - p, rx.len());
            }
        }
    }
}

#[inline]
fn gather<T: Real>(dst_small: &mut [T], src_big: &[T], w: T, g: &Geom, tap: usize) {
    let s = g.stride;
    g.visit(tap, |ss, bs, len| {
        let d = &mut dst_small[ss..ss + len];
        if s == 1 {
            for (dv, &bv) in d.iter_mut().zip(&src_big[bs..bs + len]) {
                *dv += w * bv;
            }
        } else {
            for (j, dv) in d.iter_mut().enumerate() {
                *dv += w * src_big[bs + j * s];
            }
        }
    });
}

#[inline]
fn scatter<T: Real>(dst_big: &mut [T], src_small: &[T], w: T, g: &Geom, tap: usize) {
    let s = g.stride;
    g.visit(tap, |ss, bs, len| {
        let a = &src_small[ss..ss + len];
        if s == 1 {
            for (dv, &av) in dst_big[bs..bs + len].iter_mut().zip(a) {
                *dv += w * av;
            }
        } else {
            for (j, &av) in a.iter().enumerate() {
                dst_big[bs + j * s] += w * av;
            }
        }
    });
}

#[inline]
fn dot<T: Real>(small: &[T], big: &[T], g: &Geom, tap: usize) -> T {
    let s = g.stride;
    let mut acc = T::zero();
    g.visit(tap, |ss, bs, len| {
        for (j, &a) in small[ss..ss + len].iter().enumerate() {
            acc += a * big[bs + j * s];
        }
    });
    acc
}

/// `conv3d` forward. `x`: (N,Ci,big), `w`: (Co,Ci,k), returns (N,Co,small).
pub fn conv_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, n: usize, ci: usize, co: usize, g: &Geom) -> Vec<T> {
    let (sl, bl, taps) = (g.small_len(), g.big_len(), g.taps());
    let mut out = vec![T::zero(); n * co * sl];
    out.par_chunks_mut(sl).enumerate().for_each(|(slab, dst)| {
        let (bn, o) = (slab / co, slab % co);
        if let Some(b) = b {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..ci {
            let src = &x[(bn * ci + c) * bl..(bn * ci + c + 1) * bl];
            let wk = &w[(o * ci + c) * taps..(o * ci + c + 1) * taps];
            for (tap, &wv) in wk.iter().enumerate() {
                gather(dst, src, wv, g, tap);
            }
        }
    });
    out
}

/// `conv3d` input gradient: returns (N,Ci,big).
pub fn conv_backward_input<T: Real>(dy: &[T], w: &[T], n: usize, ci: usize, co: usize, g: &Geom) -> Vec<T> {
    let (sl, bl, taps) = (g.small_len(), g.big_len(), g.taps());
    let mut dx = vec![T::zero(); n * ci * bl];
    dx.par_chunks_mut(bl).enumerate().for_each(|(slab, dst)| {
        let (bn, c) = (slab / ci, slab % ci);
        for o in 0..co {
            let src = &dy[(bn * co + o) * sl..(bn * co + o + 1) * sl];
            let wk = &w[(o * ci + c) * taps..(o * ci + c + 1) * taps];
            for (tap, &wv) in wk.iter().enumerate() {
                scatter(dst, src, wv, g, tap);
            }
        }
    });
    dx
}

/// `conv3d` weight gradient: returns (Co,Ci,k).
pub fn conv_backward_weight<T: Real>(dy: &[T], x: &[T], n: usize, ci: usize, co: usize, g: &Geom) -> Vec<T> {
    let (sl, bl, taps) = (g.small_len(), g.big_len(), g.taps());
    let mut dw = vec![T::zero(); co * ci * taps];
    dw.par_chunks_mut(ci * taps).enumerate().for_each(|(o, dst)| {
        for c in 0..ci {
            for tap in 0..taps {
                let mut acc = T::zero();
                for bn in 0..n {
                    let small = &dy[(bn * co + o) * sl..(bn * co + o + 1) * sl];
                    let big = &x[(bn * ci + c) * bl..(bn * ci + c + 1) * bl];
                    acc += dot(small, big, g, tap);
                }
                dst[c * taps + tap] = acc;
            }
        }
    });
    dw
}

/// `conv_transpose3d` forward. `x`: (N,Ci,small), `w`: (Ci,Co,k), returns (N,Co,big).
pub fn convt_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, n: usize, ci: usize, co: usize, g: &Geom) -> Vec<T> {
    let (sl, bl, taps) = (g.small_len(), g.big_len(), g.taps());
    let mut out = vec![T::zero(); n * co * bl];
    out.par_chunks_mut(bl).enumerate().for_each(|(slab, dst)| {
        let (bn, o) = (slab / co, slab % co);
        if let Some(b) = b {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..ci {
            let src = &x[(bn * ci + c) * sl..(bn * ci + c + 1) * sl];
            let wk = &w[(c * co + o) * taps..(c * co + o + 1) * taps];
            for (tap, &wv) in wk.iter().enumerate() {
                scatter(dst, src, wv, g, tap);
            }
        }
    });
    out
}

/// `conv_transpose3d` input gradient: returns (N,Ci,small).
pub fn convt_backward_input<T: Real>(dy: &[T], w: &[T], n: usize, ci: usize, co: usize, g: &Geom) -> Vec<T> {
    let (sl, bl, taps) = (g.small_len(), g.big_len(), g.taps());
    let mut dx = vec![T::zero(); n * ci * sl];
    dx.par_chunks_mut(sl).enumerate().for_each(|(slab, dst)| {
        let (bn, c) = (slab / ci, slab % ci);
        for o in 0..co {
            let src = &dy[(bn * co + o) * bl..(bn * co + o + 1) * bl];
            let wk = &w[(c * co + o) * taps..(c * co + o + 1) * taps];
            for (tap, &wv) in wk.iter().enumerate() {
                gather(dst, src, wv, g, tap);
            }
        }
    });
    dx
}

/// `conv_transpose3d` weight gradient: returns (Ci,Co,k).
pub fn convt_backward_weight<T: Real>(dy: &[T], x: &[T], n: usize, ci: usize, co: usize, g: &Geom) -> Vec<T> {
    let (sl, bl, taps) = (g.small_len(), g.big_len(), g.taps());
    let mut dw = vec![T::zero(); ci * co * taps];
    dw.par_chunks_mut(co * taps).enumerate().for_each(|(c, dst)| {
        for o in 0..co {
            for tap in 0..taps {
                let mut acc = T::zero();
                for bn in 0..n {
                    let small = &x[(bn * ci + c) * sl..(bn * ci + c + 1) * sl];
                    let big = &dy[(bn * co + o) * bl..(bn * co + o + 1) * bl];
                    acc += dot(small, big, g, tap);
                }
                dst[o * taps + tap] = acc;
            }
        }
    });
    dw
}

/// Per-channel sum over batch and space: bias gradient.
pub fn channel_sums<T: Real>(dy: &[T], n: usize, c: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for bn in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let s = &dy[(bn * c + ch) * len..(bn * c + ch + 1) * len];
            let mut acc = T::zero();
            for &v in s {
                acc += v;
            }
            *o += acc;
        }
    }
    out
}
