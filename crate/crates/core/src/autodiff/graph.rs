//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation in evaluation order; leaves may borrow
//! parameter tensors so inference does not copy weights. [`Graph::backward`]
//! walks the tape once in reverse and returns gradients for every node that
//! depends on a leaf created with `requires_grad`.

use std::borrow::Cow;

use super::scalar::{axpy, dot, gemm, MatRef, Scalar};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

enum Op<T> {
    Leaf,
    Linear { w: Var, b: Option<Var>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    LogSoftmax(Var),
    Pick { a: Var, index: usize },
    Clamp01(Var),
    MaskedMse { a: Var, target: Vec<T>, mask: Vec<bool>, count: usize },
    Sum(Var),
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    in_channels: usize,
    out_channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by graph variable; `None` for nodes the loss does not reach.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.data()[0]
    }

    /// Borrowed leaf, e.g. a parameter tensor.
    pub fn param(&mut self, t: &'p Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, requires_grad)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// `W x + b` for `W: [out, in]`, `x: [in]`.
    pub fn linear(&mut self, w: Var, b: Option<Var>, x: Var) -> Var {
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "linear weight must be 2-d");
        let (out, inp) = (ws[0], ws[1]);
        assert_eq!(self.value(x).len(), inp, "linear input width");
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut y: Vec<T> = wv.chunks_exact(inp).map(|row| dot(row, xv)).collect();
        if let Some(b) = b {
            assert_eq!(self.value(b).len(), out, "linear bias width");
            for (yi, &bi) in y.iter_mut().zip(self.value(b).data()) {
                *yi += bi;
            }
        }
        let rg = self.rg(w) || self.rg(x) || b.map_or(false, |b| self.rg(b));
        self.push(
            Cow::Owned(Tensor::from_vec(&[out], y)),
            Op::Linear { w, b, x },
            rg,
        )
    }

    fn zip_op(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise length mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(av.shape(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(t), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map_op(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let av = self.value(a);
        let t = Tensor::from_vec(av.shape(), av.data().iter().map(|&x| f(x)).collect());
        let rg = self.rg(a);
        self.push(Cow::Owned(t), op, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.map_op(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_op(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn clamp01(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.max(T::zero()).min(T::one()), Op::Clamp01(a))
    }

    /// Flat concatenation; for `[C, H, W]` tensors this stacks channels.
    pub fn concat(&mut self, parts: &[Var], shape: &[usize]) -> Var {
        let mut data = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Cow::Owned(Tensor::from_vec(shape, data)),
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    /// Flat slice `[start, start + len)` as a 1-d tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let data = self.value(a).data()[start..start + len].to_vec();
        let rg = self.rg(a);
        self.push(
            Cow::Owned(Tensor::from_vec(&[len], data)),
            Op::Slice { a, start },
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        let rg = self.rg(a);
        self.push(Cow::Owned(t), Op::Reshape(a), rg)
    }

    /// Stride-1, zero-padded ("same") 2-d convolution.
    /// `x: [Cin, H, W]`, `w: [Cout, Cin, k, k]` with odd `k`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv input must be [C, H, W]");
        assert_eq!(ws.len(), 4, "conv weight must be [Cout, Cin, k, k]");
        assert_eq!(ws[1], xs[0], "conv input channels");
        assert_eq!(ws[2], ws[3], "square kernels only");
        assert_eq!(ws[2] % 2, 1, "odd kernels only");
        let geom = ConvGeom {
            in_channels: xs[0],
            out_channels: ws[0],
            height: xs[1],
            width: xs[2],
            kernel: ws[2],
        };
        assert_eq!(self.value(b).len(), geom.out_channels, "conv bias width");
        let hw = geom.height * geom.width;
        let cols = im2col(self.value(x).data(), &geom);
        let ckk = geom.in_channels * geom.kernel * geom.kernel;
        let mut out = Vec::with_capacity(geom.out_channels * hw);
        for &bias in self.value(b).data() {
            out.extend(std::iter::repeat(bias).take(hw));
        }
        gemm(
            MatRef::row_major(self.value(w).data(), geom.out_channels, ckk),
            MatRef::row_major(&cols, ckk, hw),
            T::one(),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(
            Cow::Owned(Tensor::from_vec(
                &[geom.out_channels, geom.height, geom.width],
                out,
            )),
            Op::Conv2d { x, w, b, geom },
            rg,
        )
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a).data();
        let max = av.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + av.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let data = av.iter().map(|&v| v - lse).collect();
        let rg = self.rg(a);
        self.push(
            Cow::Owned(Tensor::from_vec(&[av.len()], data)),
            Op::LogSoftmax(a),
            rg,
        )
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        let v = self.value(a).data()[index];
        let rg = self.rg(a);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::Pick { a, index }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::Sum(a), rg)
    }

    /// Mean of `(a - target)^2` over entries whose mask is set; zero when
    /// the mask is empty.
    pub fn masked_mse(&mut self, a: Var, target: Vec<T>, mask: Vec<bool>) -> Var {
        let av = self.value(a).data();
        assert_eq!(av.len(), target.len(), "mse target length");
        assert_eq!(av.len(), mask.len(), "mse mask length");
        let count = mask.iter().filter(|&&m| m).count();
        let mut s = T::zero();
        for ((&x, &t), &m) in av.iter().zip(&target).zip(&mask) {
            if m {
                s += (x - t) * (x - t);
            }
        }
        let v = if count == 0 {
            T::zero()
        } else {
            s / T::from_f64(count as f64)
        };
        let rg = self.rg(a);
        self.push(
            Cow::Owned(Tensor::scalar(v)),
            Op::MaskedMse {
                a,
                target,
                mask,
                count,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar root. Returns `None` for non-scalar roots.
    pub fn backward(&self, root: Var) -> Option<Gradients<T>> {
        if self.value(root).len() != 1 {
            return None;
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Some(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop_node(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { w, b, x } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let inp = xv.len();
                if let Some(gw) = self.acc(grads, *w) {
                    for (row, &go) in gw.chunks_exact_mut(inp).zip(g) {
                        if go != T::zero() {
                            axpy(go, xv, row);
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        axpy(T::one(), g, gb);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for (row, &go) in wv.chunks_exact(inp).zip(g) {
                        if go != T::zero() {
                            axpy(go, row, gx);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(grads, v) {
                        axpy(T::one(), g, ga);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(T::one(), g, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(-T::one(), g, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(*s, g, ga);
                }
            }
            Op::Relu(a) => {
                let out = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &gi), &o) in ga.iter_mut().zip(g).zip(out) {
                        if o > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &gi), &o) in ga.iter_mut().zip(g).zip(out) {
                        *d += gi * o * (T::one() - o);
                    }
                }
            }
            Op::Tanh(a) => {
                let out = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &gi), &o) in ga.iter_mut().zip(g).zip(out) {
                        *d += gi * (T::one() - o * o);
                    }
                }
            }
            Op::Clamp01(a) => {
                let inp = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(inp) {
                        if x >= T::zero() && x <= T::one() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        axpy(T::one(), &g[off..off + n], gp);
                    }
                    off += n;
                }
            }
            Op::Slice { a, start } => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(T::one(), g, &mut ga[*start..*start + g.len()]);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(T::one(), g, ga);
                }
            }
            Op::Conv2d { x, w, b, geom } => self.conv_backward(*x, *w, *b, geom, g, grads),
            Op::LogSoftmax(a) => {
                let out = node.value.data();
                let gsum: T = g.iter().copied().sum();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &gi), &o) in ga.iter_mut().zip(g).zip(out) {
                        *d += gi - o.exp() * gsum;
                    }
                }
            }
            Op::Pick { a, index } => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga[*index] += g[0];
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MaskedMse {
                a,
                target,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let av = self.value(*a).data();
                let k = T::from_f64(2.0 / *count as f64) * g[0];
                if let Some(ga) = self.acc(grads, *a) {
                    for (((d, &x), &t), &m) in ga.iter_mut().zip(av).zip(target).zip(mask) {
                        if m {
                            *d += k * (x - t);
                        }
                    }
                }
            }
        }
    }

    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        geom: &ConvGeom,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let hw = geom.height * geom.width;
        let ckk = geom.in_channels * geom.kernel * geom.kernel;
        if let Some(gb) = self.acc(grads, b) {
            for (d, row) in gb.iter_mut().zip(g.chunks_exact(hw)) {
                *d += row.iter().copied().sum::<T>();
            }
        }
        let gout = MatRef::row_major(g, geom.out_channels, hw);
        if self.rg(w) {
            let cols = im2col(self.value(x).data(), geom);
            let gw = self.acc(grads, w).expect("requires grad");
            gemm(gout, MatRef::row_major(&cols, ckk, hw).t(), T::one(), gw);
        }
        if self.rg(x) {
            let mut dcols = vec![T::zero(); ckk * hw];
            gemm(
                MatRef::row_major(self.value(w).data(), geom.out_channels, ckk).t(),
                gout,
                T::zero(),
                &mut dcols,
            );
            let gx = self.acc(grads, x).expect("requires grad");
            col2im_add(&dcols, geom, gx);
        }
    }
}

/// `[Cin*k*k, H*W]` patch matrix for a same-padded convolution.
fn im2col<T: Scalar>(x: &[T], geom: &ConvGeom) -> Vec<T> {
    let (h, w, k) = (geom.height, geom.width, geom.kernel);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::zero(); geom.in_channels * k * k * hw];
    for c in 0..geom.in_channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for oy in 0..h {
                    let sy = oy as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut cols[row + oy * w..row + (oy + 1) * w];
                    let s0 = (x_lo as isize + dx) as usize;
                    dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], geom: &ConvGeom, gx: &mut [T]) {
    let (h, w, k) = (geom.height, geom.width, geom.kernel);
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..geom.in_channels {
        let plane = &mut gx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for oy in 0..h {
                    let sy = oy as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let src = &cols[row + oy * w + x_lo..row + oy * w + x_hi];
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    axpy(T::one(), src, dst);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col/gemm.
    fn conv_reference(input: &[f64], w: &[f64], b: &[f64], cin: usize, cout: usize, h: usize, wd: usize, k: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; cout * h * wd];
        for co in 0..cout {
            for y in 0..h {
                for x in 0..wd {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = x as isize + kx as isize - pad;
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < wd as isize {
                                    s += w[((co * cin + ci) * k + ky) * k + kx] * input[(ci * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                    }
                    out[(co * h + y) * wd + x] = s;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let (cin, cout, h, wd, k) = (3, 4, 5, 7, 3);
        let x = pseudo(cin * h * wd, 1);
        let w = pseudo(cout * cin * k * k, 2);
        let b = pseudo(cout, 3);
        let mut g = Graph::<f64>::new();
        let xv = g.input(Tensor::from_vec(&[cin, h, wd], x.clone()));
        let wv = g.input(Tensor::from_vec(&[cout, cin, k, k], w.clone()));
        let bv = g.input(Tensor::from_vec(&[cout], b.clone()));
        let y = g.conv2d(xv, wv, bv);
        let want = conv_reference(&x, &w, &b, cin, cout, h, wd, k);
        for (a, e) in g.value(y).data().iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    /// Central differences on every input of a small composite expression.
    #[test]
    fn composite_gradient_matches_finite_differences() {
        let (cin, cout, h, wd, k) = (2, 3, 4, 5, 3);
        let x0 = pseudo(cin * h * wd, 7);
        let w0 = pseudo(cout * cin * k * k, 8);
        let b0 = pseudo(cout, 9);
        let lw0 = pseudo(6 * cout * h * wd, 10);
        let f = |x: &[f64], w: &[f64], b: &[f64], lw: &[f64], grad: bool| {
            let mut g = Graph::<f64>::new();
            let xv = g.input_with_grad(Tensor::from_vec(&[cin, h, wd], x.to_vec()));
            let wv = g.input_with_grad(Tensor::from_vec(&[cout, cin, k, k], w.to_vec()));
            let bv = g.input_with_grad(Tensor::from_vec(&[cout], b.to_vec()));
            let lwv = g.input_with_grad(Tensor::from_vec(&[6, cout * h * wd], lw.to_vec()));
            let c = g.conv2d(xv, wv, bv);
            let t = g.tanh(c);
            let flat = g.reshape(t, &[cout * h * wd]);
            let z = g.linear(lwv, None, flat);
            let s = g.sigmoid(z);
            let r = g.relu(z);
            let m = g.mul(s, r);
            let cat = g.concat(&[m, z], &[12]);
            let ls = g.log_softmax(cat);
            let p = g.pick(ls, 4);
            let sl = g.slice(cat, 2, 5);
            let q = g.masked_mse(sl, vec![0.1, 0.2, -0.3, 0.0, 0.5], vec![true, false, true, true, true]);
            let l = g.sub(q, p);
            let v = g.scalar(l);
            let grads = if grad {
                let gr = g.backward(l).unwrap();
                Some([xv, wv, bv, lwv].map(|v| gr.get(v).unwrap().to_vec()))
            } else {
                None
            };
            (v, grads)
        };
        let (_, grads) = f(&x0, &w0, &b0, &lw0, true);
        let grads = grads.unwrap();
        let inputs = [x0.clone(), w0.clone(), b0.clone(), lw0.clone()];
        let eps = 1e-6;
        for (which, base) in inputs.iter().enumerate() {
            for i in (0..base.len()).step_by(3) {
                let eval = |delta: f64| {
                    let mut args = inputs.clone();
                    args[which][i] += delta;
                    f(&args[0], &args[1], &args[2], &args[3], false).0
                };
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let an = grads[which][i];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "input {which}[{i}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn non_scalar_root_has_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.input_with_grad(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        assert!(g.backward(a).is_none());
    }
}
