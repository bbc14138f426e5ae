use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::param::ParamStore;
use super::value::Tensor;

/// Floor applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Half-open window `[y0, y1) × [x0, x1)` on a C×H×W tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    AddBias { x: Var, bias: Var, axis: usize },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    SmoothL1(Var),
    Softmax { x: Var, axis: usize },
    ReduceSum { x: Var, axis: usize },
    SumAll(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom, c_out: usize },
    /// Output element `i` is input element `index[i]`; covers max-pooling,
    /// RoI pooling, reduce_max and row selection.
    Pick { x: Var, index: Vec<usize> },
    CrossEntropy { p: Var, target: Var },
    Reshape(Var),
    Stack(Vec<Var>),
}

/// A tape of executed operations, rebuilt for every forward pass.
///
/// Node indices are assigned in execution order, which is a valid
/// topological order; [`Graph::backward`] walks them in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    params: Vec<Option<String>>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        self.params.push(None);
        Var(self.values.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient during [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records the current value of the named parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let p = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        let v = self.push(p.value.clone(), Op::Leaf, p.requires_grad);
        self.params[v.0] = Some(name.to_string());
        Ok(v)
    }

    /// Gradient of the last backward pass w.r.t. `v`; all-zero when `v` was
    /// not on a path from the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.values[v.0].shape()),
        }
    }

    /// Gradients of every parameter leaf, keyed by parameter name. A
    /// parameter recorded several times yields several entries.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, Tensor)> + '_ {
        self.params.iter().enumerate().filter_map(|(i, name)| {
            let name = name.as_deref()?;
            let g = match self.grads.get(i).and_then(Option::as_ref) {
                Some(g) => g.clone(),
                None => Tensor::zeros(self.values[i].shape()),
            };
            Some((name, g))
        })
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(x), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(t, Op::AddConst(x), rg)
    }

    /// `x + bias`, with the vector `bias` broadcast along every axis of `x`
    /// except `axis`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.value(x).axis_split(axis)?;
        let tb = self.value(bias);
        if tb.numel() != n || tb.rank() > 1 {
            return Err(Error::dim("add_bias", self.shape(x), tb.shape()));
        }
        let b = tb.data();
        let mut t = self.value(x).clone();
        let d = t.data_mut();
        for o in 0..outer {
            for (j, &bj) in b.iter().enumerate() {
                let base = (o * n + j) * inner;
                for v in &mut d[base..base + inner] {
                    *v += bj;
                }
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias { x, bias, axis }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::abs);
        let rg = self.rg(x);
        self.push(t, Op::Abs(x), rg)
    }

    /// Huber loss with unit transition point, elementwise.
    pub fn smooth_l1(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 });
        let rg = self.rg(x);
        self.push(t, Op::SmoothL1(x), rg)
    }

    // ---- normalisation and reductions -----------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if !tx.is_finite() {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let (outer, n, inner) = tx.axis_split(axis)?;
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[at(j)] /= sum;
                }
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    fn reduced_shape(&self, x: Var, axis: usize) -> Vec<usize> {
        let mut s = self.shape(x).to_vec();
        s.remove(axis);
        s
    }

    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let (outer, n, inner) = tx.axis_split(axis)?;
        let src = tx.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let t = Tensor::new(&self.reduced_shape(x, axis), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::ReduceSum { x, axis }, rg))
    }

    /// Maximum along `axis`. The gradient flows only to the maximising
    /// element; ties go to the lowest flat index.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let (outer, n, inner) = tx.axis_split(axis)?;
        let src = tx.data();
        let mut index = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let at = (o * n + j) * inner + i;
                    if src[at] > src[best] {
                        best = at;
                    }
                }
                index.push(best);
            }
        }
        let shape = self.reduced_shape(x, axis);
        Ok(self.pick(x, index, &shape))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    // ---- convolution and pooling ----------------------------------------

    /// Cross-correlation of `x` (C_in×H×W) with `w` (C_out×C_in×k×k).
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || stride == 0 {
            return Err(Error::dim("conv2d", sx, sw));
        }
        let (c_in, h, wd) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        if k > h + 2 * pad || k > wd + 2 * pad {
            return Err(Error::dim("conv2d (kernel larger than padded input)", sx, sw));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (wd + 2 * pad - k) / stride + 1,
        };
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let mut out = vec![0.0; c_out * geom.col_cols()];
        kernels::gemm(c_out, geom.col_rows(), geom.col_cols(), self.value(w).data(), false, &cols, false, &mut out, 0.0);
        let t = Tensor::new(&[c_out, geom.h_out, geom.w_out], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(t, Op::Conv2d { x, w, geom, c_out }, rg))
    }

    /// Max pooling over k×k windows of a C×H×W tensor.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || k == 0 || stride == 0 || k > s[1] || k > s[2] {
            return Err(Error::Shape(format!("max_pool2d window {k} does not fit {s:?}")));
        }
        let (ho, wo) = ((s[1] - k) / stride + 1, (s[2] - k) / stride + 1);
        let windows: Vec<Window> = (0..ho)
            .flat_map(|oy| {
                (0..wo).map(move |ox| Window {
                    y0: oy * stride,
                    y1: oy * stride + k,
                    x0: ox * stride,
                    x1: ox * stride + k,
                })
            })
            .collect();
        let pooled = self.window_max(x, &windows, windows.len())?;
        self.reshape(pooled, &[s[0], ho, wo])
    }

    /// Per-channel maximum of `x` (C×H×W) over each window.
    ///
    /// Windows are consumed in groups of `group`; the output has shape
    /// `[windows.len() / group, C, group]`. Gradients route to the argmax
    /// (ties: lowest flat index).
    pub fn window_max(&mut self, x: Var, windows: &[Window], group: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::Shape(format!("window_max needs C×H×W, got {s:?}")));
        }
        if group == 0 || windows.is_empty() || windows.len() % group != 0 {
            return Err(Error::Shape(format!(
                "{} windows cannot be split into groups of {group}",
                windows.len()
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        for win in windows {
            if win.y0 >= win.y1 || win.x0 >= win.x1 || win.y1 > h || win.x1 > w {
                return Err(Error::Shape(format!("window {win:?} invalid for {s:?}")));
            }
        }
        let src = self.value(x).data();
        let items = windows.len() / group;
        let mut index = Vec::with_capacity(items * c * group);
        for item in windows.chunks_exact(group) {
            for ch in 0..c {
                let base = ch * h * w;
                let plane = &src[base..base + h * w];
                for win in item {
                    let mut best = win.y0 * w + win.x0;
                    let mut best_v = plane[best];
                    for y in win.y0..win.y1 {
                        let row = &plane[y * w + win.x0..y * w + win.x1];
                        for (dx, &v) in row.iter().enumerate() {
                            if v > best_v {
                                best_v = v;
                                best = y * w + win.x0 + dx;
                            }
                        }
                    }
                    index.push(base + best);
                }
            }
        }
        Ok(self.pick(x, index, &[items, c, group]))
    }

    fn pick(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Var {
        let src = self.value(x).data();
        let data = index.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape, data).expect("pick shape");
        let rg = self.rg(x);
        self.push(t, Op::Pick { x, index }, rg)
    }

    // ---- structure ------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let inner = self.shape(*first).to_vec();
        let mut data = Vec::with_capacity(xs.len() * self.value(*first).numel());
        for &v in xs {
            if self.shape(v) != inner.as_slice() {
                return Err(Error::dim("stack", &inner, self.shape(v)));
            }
            data.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&inner);
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(&shape, data)?, Op::Stack(xs.to_vec()), rg))
    }

    /// Slice `i` along the leading axis.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || i >= s[0] {
            return Err(Error::Shape(format!("select {i} out of range for {s:?}")));
        }
        let inner: usize = s[1..].iter().product();
        let index = (i * inner..(i + 1) * inner).collect();
        let shape = if s.len() == 1 { vec![] } else { s[1..].to_vec() };
        Ok(self.pick(x, index, &shape))
    }

    /// Rows of a matrix (or leading-axis slices) gathered in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || rows.is_empty() || rows.iter().any(|&r| r >= s[0]) {
            return Err(Error::Shape(format!("gather_rows {rows:?} invalid for {s:?}")));
        }
        let inner: usize = s[1..].iter().product();
        let index = rows.iter().flat_map(|&r| r * inner..(r + 1) * inner).collect();
        let mut shape = s.clone();
        shape[0] = rows.len();
        Ok(self.pick(x, index, &shape))
    }

    // ---- losses ---------------------------------------------------------

    /// `−Σ target · ln(max(p, 1e-12))` summed over every element; for a
    /// single distribution this is the categorical cross-entropy.
    pub fn cross_entropy(&mut self, p: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(p), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::dim("cross_entropy", tp.shape(), tt.shape()));
        }
        let loss: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&pi, &ti)| if ti == 0.0 { 0.0 } else { -ti * pi.max(LOG_CLAMP).ln() })
            .sum();
        let rg = self.rg(p) || self.rg(target);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { p, target }, rg))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Populates gradients of `loss` w.r.t. every node that requires one.
    /// Gradients from several uses of the same node are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = &self.values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut da, 0.0);
                    accumulate(grads, *a, sa, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut db, 0.0);
                    accumulate(grads, *b, sb, db);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let mut dx = vec![0.0; r * c];
                for a in 0..r {
                    for b in 0..c {
                        dx[b * r + a] = gd[a * c + b];
                    }
                }
                accumulate(grads, *x, self.shape(*x), dx);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        accumulate(grads, v, g.shape(), gd.to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.shape(), gd.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    accumulate(grads, *a, g.shape(), gd.iter().zip(vb).map(|(x, y)| x * y).collect());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.shape(), gd.iter().zip(va).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, g.shape(), gd.iter().map(|v| v * c).collect());
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                accumulate(grads, *x, self.shape(*x), gd.to_vec());
            }
            Op::AddBias { x, bias, axis } => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.shape(), gd.to_vec());
                }
                if self.rg(*bias) {
                    let (outer, n, inner) = g.axis_split(*axis).expect("axis");
                    let mut db = vec![0.0; n];
                    for o in 0..outer {
                        for (j, acc) in db.iter_mut().enumerate() {
                            let base = (o * n + j) * inner;
                            *acc += gd[base..base + inner].iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, *bias, self.shape(*bias), db);
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                let dx = gd.iter().zip(vx).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Sigmoid(x) => {
                let dx = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Tanh(x) => {
                let dx = gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Abs(x) => {
                let vx = self.value(*x).data();
                let dx = gd.iter().zip(vx).map(|(g, &v)| g * sign(v)).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::SmoothL1(x) => {
                let vx = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(vx)
                    .map(|(g, &v)| if v.abs() < 1.0 { g * v } else { g * sign(v) })
                    .collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = out.axis_split(*axis).expect("axis");
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + ii;
                        let dot: f64 = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::ReduceSum { x, axis } => {
                let sx = self.value(*x);
                let (outer, n, inner) = sx.axis_split(*axis).expect("axis");
                let mut dx = vec![0.0; sx.numel()];
                for o in 0..outer {
                    for j in 0..n {
                        let base = (o * n + j) * inner;
                        dx[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate(grads, *x, sx.shape(), dx);
            }
            Op::SumAll(x) => {
                let sx = self.value(*x);
                accumulate(grads, *x, sx.shape(), vec![gd[0]; sx.numel()]);
            }
            Op::Conv2d { x, w, geom, c_out } => {
                let rows = geom.col_rows();
                let cols_n = geom.col_cols();
                if self.rg(*w) {
                    let cols = kernels::im2col(self.value(*x).data(), geom);
                    let mut dw = vec![0.0; c_out * rows];
                    kernels::gemm(*c_out, cols_n, rows, gd, false, &cols, true, &mut dw, 0.0);
                    accumulate(grads, *w, self.shape(*w), dw);
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0; rows * cols_n];
                    kernels::gemm(rows, *c_out, cols_n, self.value(*w).data(), true, gd, false, &mut dcols, 0.0);
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    kernels::col2im(&dcols, geom, &mut dx);
                    accumulate(grads, *x, self.shape(*x), dx);
                }
            }
            Op::Pick { x, index } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (&src, &gi) in index.iter().zip(gd) {
                    dx[src] += gi;
                }
                accumulate(grads, *x, self.shape(*x), dx);
            }
            Op::CrossEntropy { p, target } => {
                let (vp, vt) = (self.value(*p).data(), self.value(*target).data());
                let s = gd[0];
                if self.rg(*p) {
                    let dp = vp
                        .iter()
                        .zip(vt)
                        .map(|(&pi, &ti)| if pi > LOG_CLAMP { -s * ti / pi } else { 0.0 })
                        .collect();
                    accumulate(grads, *p, self.shape(*p), dp);
                }
                if self.rg(*target) {
                    let dt = vp.iter().map(|&pi| -s * pi.max(LOG_CLAMP).ln()).collect();
                    accumulate(grads, *target, self.shape(*target), dt);
                }
            }
            Op::Stack(xs) => {
                let inner = gd.len() / xs.len();
                for (j, &v) in xs.iter().enumerate() {
                    if self.rg(v) {
                        accumulate(grads, v, self.shape(v), gd[j * inner..(j + 1) * inner].to_vec());
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    let t = Tensor::new(shape, data).expect("gradient shape");
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
