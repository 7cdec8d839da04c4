//! Define-by-run tape. Every op appends a node holding its output; one
//! backward pass walks the nodes in reverse, writes gradients into the leaf
//! tensors that asked for them and then drops the intermediate values.

use super::kernels::{self, Geom};
use super::{NnError, Tensor};
use crate::scalar::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: Geom },
    ConvT { x: Var, w: Var, b: Option<Var>, geom: Geom },
    Relu { x: Var },
    PRelu { x: Var, alpha: Var },
    Softmax { x: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, scale: T },
    Sum { x: Var },
    SoftDice { probs: Var, target: Var, eps: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => value.requires_grad,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, vars: &[Var]) -> Result<(), NnError> {
        if self.consumed {
            return Err(NnError::NoTape);
        }
        match vars.iter().find(|v| v.0 >= self.nodes.len()) {
            Some(v) => Err(NnError::UnknownVar(v.0)),
            None => Ok(()),
        }
    }

    /// Adds an input tensor. It receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>, NnError> {
        self.nodes.get(v.0).map(|n| &n.value).ok_or(NnError::UnknownVar(v.0))
    }

    /// Removes a leaf's tensor (with its gradient) from the tape.
    pub fn take(&mut self, v: Var) -> Result<Tensor<T>, NnError> {
        let node = self.nodes.get_mut(v.0).ok_or(NnError::UnknownVar(v.0))?;
        Ok(std::mem::replace(&mut node.value, Tensor::zeros([0; 5])))
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0)?.value.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn shape(&self, v: Var) -> [usize; 5] {
        self.nodes[v.0].value.shape()
    }

    fn conv_check(&self, x: Var, w: Var, b: Option<Var>, transposed: bool) -> Result<(usize, usize, [usize; 3]), NnError> {
        let [_, xc, ..] = self.shape(x);
        let [w0, w1, kd, kh, kw] = self.shape(w);
        let (ci, co) = if transposed { (w0, w1) } else { (w1, w0) };
        if xc != ci {
            return Err(NnError::ShapeMismatch(format!(
                "input has {xc} channels, weight expects {ci}"
            )));
        }
        if let Some(b) = b {
            if self.nodes[b.0].value.numel() != co {
                return Err(NnError::ShapeMismatch(format!("bias must have {co} elements")));
            }
        }
        Ok((ci, co, [kd, kh, kw]))
    }

    /// Cross-correlation. `w`: (Cout, Cin, kd, kh, kw); isotropic stride and padding.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var, NnError> {
        self.check(&[x, w])?;
        if let Some(b) = b {
            self.check(&[b])?;
        }
        if stride == 0 {
            return Err(NnError::InvalidConfig("stride must be positive".into()));
        }
        let (ci, co, kernel) = self.conv_check(x, w, b, false)?;
        let xs = self.shape(x);
        let mut small = [0; 3];
        for a in 0..3 {
            let span = xs[2 + a] + 2 * padding;
            if span < kernel[a] {
                return Err(NnError::ShapeMismatch(format!("kernel larger than padded input on axis {a}")));
            }
            small[a] = (span - kernel[a]) / stride + 1;
        }
        let geom = Geom {
            small,
            big: [xs[2], xs[3], xs[4]],
            kernel,
            stride,
            padding,
        };
        let out = kernels::conv_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            b.map(|b| self.nodes[b.0].value.data()),
            xs[0],
            ci,
            co,
            &geom,
        );
        let t = Tensor::from_vec([xs[0], co, small[0], small[1], small[2]], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv { x, w, b, geom }, &inputs))
    }

    /// Transposed convolution. `w`: (Cin, Cout, kd, kh, kw). Output extent is
    /// `(n - 1) * stride - 2 * padding + k + output_padding`.
    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var, NnError> {
        self.check(&[x, w])?;
        if let Some(b) = b {
            self.check(&[b])?;
        }
        if stride == 0 || output_padding >= stride.max(padding + 1) {
            return Err(NnError::InvalidConfig(format!(
                "stride {stride} / output_padding {output_padding}"
            )));
        }
        let (ci, co, kernel) = self.conv_check(x, w, b, true)?;
        let xs = self.shape(x);
        let mut big = [0; 3];
        for a in 0..3 {
            let span = (xs[2 + a] - 1) * stride + kernel[a] + output_padding;
            if span <= 2 * padding {
                return Err(NnError::ShapeMismatch(format!("empty output on axis {a}")));
            }
            big[a] = span - 2 * padding;
        }
        let geom = Geom {
            small: [xs[2], xs[3], xs[4]],
            big,
            kernel,
            stride,
            padding,
        };
        let out = kernels::convt_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            b.map(|b| self.nodes[b.0].value.data()),
            xs[0],
            ci,
            co,
            &geom,
        );
        let t = Tensor::from_vec([xs[0], co, big[0], big[1], big[2]], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::ConvT { x, w, b, geom }, &inputs))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let src = &self.nodes[x.0].value;
        Tensor::from_vec(src.shape(), src.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(&[x])?;
        let t = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        Ok(self.push(t, Op::Relu { x }, &[x]))
    }

    /// Leaky ReLU with a single learnable slope.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var, NnError> {
        self.check(&[x, alpha])?;
        if self.nodes[alpha.0].value.numel() != 1 {
            return Err(NnError::ShapeMismatch("prelu slope must be a single value".into()));
        }
        let a = self.nodes[alpha.0].value.item();
        let t = self.map(x, |v| if v > T::zero() { v } else { a * v });
        Ok(self.push(t, Op::PRelu { x, alpha }, &[x, alpha]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var, NnError> {
        self.check(&[x])?;
        let t = self.map(x, |v| scale * v + shift);
        Ok(self.push(t, Op::Affine { x, scale }, &[x]))
    }

    /// Softmax over the channel axis at every voxel.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(&[x])?;
        let src = &self.nodes[x.0].value;
        let [n, c, ..] = src.shape();
        let len = src.numel() / (n * c).max(1);
        let xd = src.data();
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            let base = b * c * len;
            for i in 0..len {
                let mut m = T::neg_infinity();
                for ch in 0..c {
                    m = m.max(xd[base + ch * len + i]);
                }
                let mut z = T::zero();
                for ch in 0..c {
                    let e = (xd[base + ch * len + i] - m).exp();
                    out[base + ch * len + i] = e;
                    z += e;
                }
                for ch in 0..c {
                    out[base + ch * len + i] /= z;
                }
            }
        }
        let t = Tensor::from_vec(src.shape(), out)?;
        Ok(self.push(t, Op::Softmax { x }, &[x]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.check(&[a, b])?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(NnError::ShapeMismatch(format!("mul {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let d = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::from_vec(ta.shape(), d)?;
        Ok(self.push(t, Op::Mul { a, b }, &[a, b]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(&[x])?;
        let acc: f64 = self.nodes[x.0].value.data().iter().map(|v| v.to_f64_lossy()).sum();
        Ok(self.push(Tensor::scalar(T::lit(acc)), Op::Sum { x }, &[x]))
    }

    /// Mean over batch items and channels of
    /// `(2 sum(p t) + eps) / (sum(p) + sum(t) + eps)`.
    pub fn soft_dice(&mut self, probs: Var, target: Var, eps: T) -> Result<Var, NnError> {
        self.check(&[probs, target])?;
        let (p, t) = (&self.nodes[probs.0].value, &self.nodes[target.0].value);
        if p.shape() != t.shape() {
            return Err(NnError::ShapeMismatch(format!("dice {:?} vs {:?}", p.shape(), t.shape())));
        }
        let terms = dice_terms(p, t);
        let e = eps.to_f64_lossy();
        let acc: f64 = terms.iter().map(|&(i, s)| (2.0 * i + e) / (s + e)).sum();
        let v = T::lit(acc / terms.len() as f64);
        Ok(self.push(Tensor::scalar(v), Op::SoftDice { probs, target, eps }, &[probs, target]))
    }

    /// Reverse pass from a scalar. Consumes the tape: intermediate values are
    /// released and later calls fail with [`NnError::NoTape`].
    pub fn backward(&mut self, out: Var) -> Result<(), NnError> {
        self.check(&[out])?;
        let shape = self.shape(out);
        if self.nodes[out.0].value.numel() != 1 {
            return Err(NnError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => self.nodes[i].value.grad = Some(g),
                _ => self.propagate(i, &op, &g, &mut grads),
            }
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = Tensor::zeros([0; 5]);
            }
        }
        self.consumed = true;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, op: &Op<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        match *op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let [n, ci, ..] = shape(x);
                let co = shape(w)[0];
                if self.wants(x) {
                    accumulate(grads, x, kernels::conv_backward_input(g, val(w), n, ci, co, &geom));
                }
                if self.wants(w) {
                    accumulate(grads, w, kernels::conv_backward_weight(g, val(x), n, ci, co, &geom));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let len = g.len() / (n * co);
                    accumulate(grads, b, kernels::channel_sums(g, n, co, len));
                }
            }
            Op::ConvT { x, w, b, geom } => {
                let [n, ci, ..] = shape(x);
                let co = shape(w)[1];
                if self.wants(x) {
                    accumulate(grads, x, kernels::convt_backward_input(g, val(w), n, ci, co, &geom));
                }
                if self.wants(w) {
                    accumulate(grads, w, kernels::convt_backward_weight(g, val(x), n, ci, co, &geom));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let len = g.len() / (n * co);
                    accumulate(grads, b, kernels::channel_sums(g, n, co, len));
                }
            }
            Op::Relu { x } => {
                let d = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, x, d);
            }
            Op::PRelu { x, alpha } => {
                let a = self.nodes[alpha.0].value.item();
                if self.wants(x) {
                    let d = val(x).iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { a * gv }).collect();
                    accumulate(grads, x, d);
                }
                if self.wants(alpha) {
                    let mut acc = T::zero();
                    for (&v, &gv) in val(x).iter().zip(g) {
                        if v <= T::zero() {
                            acc += v * gv;
                        }
                    }
                    accumulate(grads, alpha, vec![acc]);
                }
            }
            Op::Affine { x, scale } => {
                accumulate(grads, x, g.iter().map(|&gv| scale * gv).collect());
            }
            Op::Softmax { x } => {
                let y = self.nodes[i].value.data();
                let [n, c, ..] = shape(x);
                let len = y.len() / (n * c).max(1);
                let mut d = vec![T::zero(); y.len()];
                for b in 0..n {
                    let base = b * c * len;
                    for v in 0..len {
                        let mut dot = T::zero();
                        for ch in 0..c {
                            let k = base + ch * len + v;
                            dot += y[k] * g[k];
                        }
                        for ch in 0..c {
                            let k = base + ch * len + v;
                            d[k] = y[k] * (g[k] - dot);
                        }
                    }
                }
                accumulate(grads, x, d);
            }
            Op::Mul { a, b } => {
                if self.wants(a) {
                    accumulate(grads, a, val(b).iter().zip(g).map(|(&v, &gv)| v * gv).collect());
                }
                if self.wants(b) {
                    accumulate(grads, b, val(a).iter().zip(g).map(|(&v, &gv)| v * gv).collect());
                }
            }
            Op::Sum { x } => {
                accumulate(grads, x, vec![g[0]; self.nodes[x.0].value.numel()]);
            }
            Op::SoftDice { probs, target, eps } => {
                let (p, t) = (&self.nodes[probs.0].value, &self.nodes[target.0].value);
                let terms = dice_terms(p, t);
                let scale = g[0] / T::count(terms.len());
                let [n, c, ..] = p.shape();
                let len = p.numel() / (n * c);
                let two = T::lit(2.0);
                if self.wants(probs) {
                    let mut d = vec![T::zero(); p.numel()];
                    for (k, &(inter, s)) in terms.iter().enumerate() {
                        let num = two * T::lit(inter) + eps;
                        let den = T::lit(s) + eps;
                        let td = &t.data()[k * len..(k + 1) * len];
                        for (dv, &tv) in d[k * len..(k + 1) * len].iter_mut().zip(td) {
                            *dv = scale * (two * tv * den - num) / (den * den);
                        }
                    }
                    accumulate(grads, probs, d);
                }
                if self.wants(target) {
                    let mut d = vec![T::zero(); t.numel()];
                    for (k, &(inter, s)) in terms.iter().enumerate() {
                        let num = two * T::lit(inter) + eps;
                        let den = T::lit(s) + eps;
                        let pd = &p.data()[k * len..(k + 1) * len];
                        for (dv, &pv) in d[k * len..(k + 1) * len].iter_mut().zip(pd) {
                            *dv = scale * (two * pv * den - num) / (den * den);
                        }
                    }
                    accumulate(grads, target, d);
                }
            }
        }
    }
}

/// `(sum p*t, sum p + sum t)` for every (batch, channel) slab.
/// Per (item, channel) `(sum(p t), sum(p) + sum(t))`, accumulated in f64.
fn dice_terms<T: Real>(p: &Tensor<T>, t: &Tensor<T>) -> Vec<(f64, f64)> {
    let [n, c, ..] = p.shape();
    let len = p.numel() / (n * c).max(1);
    (0..n * c)
        .map(|k| {
            let (pd, td) = (&p.data()[k * len..(k + 1) * len], &t.data()[k * len..(k + 1) * len]);
            let (mut i, mut s) = (0.0f64, 0.0f64);
            for (&a, &b) in pd.iter().zip(td) {
                let (a, b) = (a.to_f64_lossy(), b.to_f64_lossy());
                i += a * b;
                s += a + b;
            }
            (i, s)
        })
        .collect()
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot => *slot = Some(d),
    }
}
