use std::sync::Arc;

use super::kernels::{col2im, gemm, gemm_nt, gemm_tn, im2col, Window};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    SelectRows(Var, Vec<usize>),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize },
    ConvTranspose2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize },
    StraightThrough(Var),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|&p| self.rg(p));
        self.push(value, op, rg)
    }

    /// Differentiable leaf; its gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf sharing storage with a parameter store.
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.push_shared(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).map(f);
        self.derived(out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    /// `a[.., n] + b[n]`, broadcasting `b` over every leading index.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = tb.numel();
        if tb.shape().len() != 1 || ta.last_dim() != n || ta.shape().is_empty() {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        Ok(self.derived(out, Op::AddRow(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Var, offset: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + offset)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), T::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), T::ln)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let n = out.last_dim();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.derived(out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let n = out.last_dim();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.derived(out, Op::LogSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.derived(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / T::of(t.numel() as f64));
        self.derived(out, Op::Mean(a), &[a])
    }

    /// `Σ (a − b)²`, a common building block for Gaussian log-likelihoods.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.sum(sq))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (ta.shape(), tb.shape()) else {
            return Err(mismatch("matmul", ta, tb));
        };
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut data = vec![T::zero(); m * n];
        gemm(m, k, n, ta.data(), tb.data(), &mut data);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.derived(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?);
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::invalid(format!("concat axis {axis} out of range for rank {rank}")));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &p in parts {
            let t = self.value(p);
            let compatible = t.shape().len() == rank
                && t.shape().iter().enumerate().all(|(d, &s)| d == axis || s == first.shape()[d]);
            if !compatible {
                return Err(mismatch("concat", first, t));
            }
            shape[axis] += t.shape()[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.numel() / outer;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.derived(out, Op::Reshape(a), &[a]))
    }

    /// Gather rows (first-axis slices) by index; indices may repeat.
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rows = *t.shape().first().ok_or_else(|| Error::invalid("select_rows on a scalar"))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("select_rows index {bad} out of range {rows}")));
        }
        let width = t.numel() / rows;
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::SelectRows(a, indices.to_vec()), &[a]))
    }

    /// Forward value `hard`, gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor<T>) -> Result<Var> {
        if self.value(soft).shape() != hard.shape() {
            return Err(mismatch("straight_through", self.value(soft), &hard));
        }
        Ok(self.derived(hard, Op::StraightThrough(soft), &[soft]))
    }

    fn conv_window(
        op: &'static str,
        image: &Tensor<T>,
        weight: &Tensor<T>,
        channels: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Window> {
        let (&[_, c, h, w], &[_, _, kh, kw]) = (image.shape(), weight.shape()) else {
            return Err(mismatch(op, image, weight));
        };
        if c != channels || stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(mismatch(op, image, weight));
        }
        Ok(Window {
            channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.shape() != [channels] {
                return Err(Error::ShapeMismatch { op, lhs: tb.shape().to_vec(), rhs: vec![channels] });
            }
        }
        Ok(())
    }

    /// Cross-correlation of `input: [B,C,H,W]` with `weight: [OC,C,KH,KW]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (x, wt) = (self.value(input), self.value(weight));
        let in_ch = wt.shape().get(1).copied().unwrap_or(0);
        let win = Self::conv_window("conv2d", x, wt, in_ch, stride, padding)?;
        let oc = wt.shape()[0];
        self.check_bias("conv2d", bias, oc)?;
        let batch = x.shape()[0];
        let (rows, ohw) = (win.col_rows(), win.col_cols());
        let in_size = win.channels * win.height * win.width;
        let mut cols = vec![T::zero(); rows * ohw];
        let mut out = vec![T::zero(); batch * oc * ohw];
        for b in 0..batch {
            im2col(&win, &x.data()[b * in_size..(b + 1) * in_size], &mut cols);
            let dst = &mut out[b * oc * ohw..(b + 1) * oc * ohw];
            if let Some(bias) = bias {
                for (c, &bv) in self.value(bias).data().iter().enumerate() {
                    dst[c * ohw..(c + 1) * ohw].fill(bv);
                }
            }
            gemm(oc, rows, ohw, wt.data(), &cols, dst);
        }
        let out = Tensor::new(vec![batch, oc, win.out_h, win.out_w], out)?;
        let op = Op::Conv2d { input, weight, bias, stride, padding };
        let parents: Vec<Var> = [input, weight].into_iter().chain(bias).collect();
        Ok(self.derived(out, op, &parents))
    }

    /// Transposed convolution of `input: [B,C,H,W]` with `weight: [C,OC,KH,KW]`;
    /// output side is `(H−1)·stride − 2·padding + KH`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (x, wt) = (self.value(input), self.value(weight));
        let win = Self::transposed_window(x, wt, stride, padding)?;
        let (in_ch, oc) = (wt.shape()[0], wt.shape()[1]);
        self.check_bias("conv_transpose2d", bias, oc)?;
        let batch = x.shape()[0];
        let (rows, hw) = (win.col_rows(), win.col_cols());
        let out_size = oc * win.height * win.width;
        let mut cols = vec![T::zero(); rows * hw];
        let mut out = vec![T::zero(); batch * out_size];
        for b in 0..batch {
            cols.fill(T::zero());
            gemm_tn(rows, in_ch, hw, wt.data(), &x.data()[b * in_ch * hw..(b + 1) * in_ch * hw], &mut cols);
            let dst = &mut out[b * out_size..(b + 1) * out_size];
            if let Some(bias) = bias {
                let plane = win.height * win.width;
                for (c, &bv) in self.value(bias).data().iter().enumerate() {
                    dst[c * plane..(c + 1) * plane].fill(bv);
                }
            }
            col2im(&win, &cols, dst);
        }
        let out = Tensor::new(vec![batch, oc, win.height, win.width], out)?;
        let op = Op::ConvTranspose2d { input, weight, bias, stride, padding };
        let parents: Vec<Var> = [input, weight].into_iter().chain(bias).collect();
        Ok(self.derived(out, op, &parents))
    }

    /// Window of the equivalent forward convolution: output space of the
    /// transposed conv plays the role of the image, its input the columns.
    fn transposed_window(x: &Tensor<T>, wt: &Tensor<T>, stride: usize, padding: usize) -> Result<Window> {
        let (&[_, c, h, w], &[c2, oc, kh, kw]) = (x.shape(), wt.shape()) else {
            return Err(mismatch("conv_transpose2d", x, wt));
        };
        let oh = ((h - 1) * stride + kh).checked_sub(2 * padding);
        let ow = ((w - 1) * stride + kw).checked_sub(2 * padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) if c == c2 && stride > 0 && h > 0 && w > 0 => Ok(Window {
                channels: oc,
                height: oh,
                width: ow,
                kernel_h: kh,
                kernel_w: kw,
                stride,
                padding,
                out_h: h,
                out_w: w,
            }),
            _ => Err(mismatch("conv_transpose2d", x, wt)),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else { continue };
            self.propagate(node, g, before);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        let gd = g.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.rg(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v).to_vec()));
            f(slot.data_mut());
        };
        let elementwise = |dst: &mut [T], src: &[T], f: &dyn Fn(usize, T) -> T| {
            for (i, (d, &s)) in dst.iter_mut().zip(src).enumerate() {
                *d += f(i, s);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| elementwise(d, gd, &|_, s| s));
                acc(*b, &mut |d| elementwise(d, gd, &|_, s| s));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| elementwise(d, gd, &|_, s| s));
                acc(*b, &mut |d| elementwise(d, gd, &|_, s| -s));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| elementwise(d, gd, &|i, s| s * tb[i]));
                acc(*b, &mut |d| elementwise(d, gd, &|i, s| s * ta[i]));
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |d| elementwise(d, gd, &|_, s| s));
                acc(*b, &mut |d| {
                    for row in gd.chunks(d.len()) {
                        elementwise(d, row, &|_, s| s);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |d| elementwise(d, gd, &|_, s| s * *k)),
            Op::AddScalar(a) | Op::Reshape(a) | Op::StraightThrough(a) => {
                acc(*a, &mut |d| elementwise(d, gd, &|_, s| s))
            }
            Op::Exp(a) => acc(*a, &mut |d| elementwise(d, gd, &|i, s| s * y.data()[i])),
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |d| elementwise(d, gd, &|i, s| s / x[i]))
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |d| {
                    elementwise(d, gd, &|i, s| if x[i] > T::zero() { s } else { T::zero() })
                })
            }
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                elementwise(d, gd, &|i, s| {
                    let v = y.data()[i];
                    s * v * (T::one() - v)
                })
            }),
            Op::Square(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |d| elementwise(d, gd, &|i, s| s * (x[i] + x[i])))
            }
            Op::Softmax(a) => {
                let n = y.last_dim();
                acc(*a, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(gd.chunks(n)).zip(y.data().chunks(n)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&g, &p)| g * p).sum();
                        for ((dv, &gv), &p) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv += p * (gv - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let n = y.last_dim();
                acc(*a, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(gd.chunks(n)).zip(y.data().chunks(n)) {
                        let total: T = grow.iter().copied().sum();
                        for ((dv, &gv), &ly) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv += gv - ly.exp() * total;
                        }
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|v| *v += gd[0])),
            Op::Mean(a) => {
                let share = gd[0] / T::of(self.value(*a).numel() as f64);
                acc(*a, &mut |d| d.iter_mut().for_each(|v| *v += share))
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |d| gemm_nt(m, n, k, gd, tb.data(), d));
                acc(*b, &mut |d| gemm_tn(k, m, n, ta.data(), gd, d));
            }
            Op::Concat { parts, axis } => {
                let outer: usize = y.shape()[..*axis].iter().product();
                let out_chunk = y.numel() / outer;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.value(p).numel() / outer;
                    acc(p, &mut |d| {
                        for o in 0..outer {
                            let src = &gd[o * out_chunk + offset..o * out_chunk + offset + chunk];
                            elementwise(&mut d[o * chunk..(o + 1) * chunk], src, &|_, s| s);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::SelectRows(a, indices) => {
                let width = y.numel() / indices.len().max(1);
                acc(*a, &mut |d| {
                    for (r, &i) in indices.iter().enumerate() {
                        elementwise(&mut d[i * width..(i + 1) * width], &gd[r * width..(r + 1) * width], &|_, s| s);
                    }
                })
            }
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let (x, wt) = (self.value(*input), self.value(*weight));
                let win = Self::conv_window("conv2d", x, wt, wt.shape()[1], *stride, *padding)
                    .expect("validated in forward");
                let (oc, rows, ohw) = (wt.shape()[0], win.col_rows(), win.col_cols());
                let in_size = win.channels * win.height * win.width;
                let batch = x.shape()[0];
                if let Some(bias) = bias {
                    acc(*bias, &mut |d| {
                        for plane in gd.chunks(ohw).enumerate() {
                            d[plane.0 % oc] += plane.1.iter().copied().sum();
                        }
                    });
                }
                let mut cols = vec![T::zero(); rows * ohw];
                if self.rg(*weight) {
                    acc(*weight, &mut |d| {
                        for b in 0..batch {
                            im2col(&win, &x.data()[b * in_size..(b + 1) * in_size], &mut cols);
                            gemm_nt(oc, ohw, rows, &gd[b * oc * ohw..(b + 1) * oc * ohw], &cols, d);
                        }
                    });
                }
                acc(*input, &mut |d| {
                    for b in 0..batch {
                        cols.fill(T::zero());
                        gemm_tn(rows, oc, ohw, wt.data(), &gd[b * oc * ohw..(b + 1) * oc * ohw], &mut cols);
                        col2im(&win, &cols, &mut d[b * in_size..(b + 1) * in_size]);
                    }
                });
            }
            Op::ConvTranspose2d { input, weight, bias, stride, padding } => {
                let (x, wt) = (self.value(*input), self.value(*weight));
                let win = Self::transposed_window(x, wt, *stride, *padding).expect("validated in forward");
                let (in_ch, oc) = (wt.shape()[0], wt.shape()[1]);
                let (rows, hw) = (win.col_rows(), win.col_cols());
                let out_size = oc * win.height * win.width;
                let plane = win.height * win.width;
                let batch = x.shape()[0];
                if let Some(bias) = bias {
                    acc(*bias, &mut |d| {
                        for (p, chunk) in gd.chunks(plane).enumerate() {
                            d[p % oc] += chunk.iter().copied().sum();
                        }
                    });
                }
                let mut cols = vec![T::zero(); rows * hw];
                let mut grad_cols = Vec::with_capacity(batch);
                for b in 0..batch {
                    im2col(&win, &gd[b * out_size..(b + 1) * out_size], &mut cols);
                    grad_cols.push(cols.clone());
                }
                acc(*weight, &mut |d| {
                    for (b, gc) in grad_cols.iter().enumerate() {
                        gemm_nt(in_ch, hw, rows, &x.data()[b * in_ch * hw..(b + 1) * in_ch * hw], gc, d);
                    }
                });
                acc(*input, &mut |d| {
                    for (b, gc) in grad_cols.iter().enumerate() {
                        gemm(in_ch, rows, hw, wt.data(), gc, &mut d[b * in_ch * hw..(b + 1) * in_ch * hw]);
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// Result of [`Graph::backward`]: `∂loss/∂v` for every node reached.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros if the loss does not depend on it.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(graph.shape(v).to_vec()))
    }
}
