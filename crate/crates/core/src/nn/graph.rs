//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output value.
//! Parameters are borrowed from a [`ParamStore`] rather than copied.
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! every node that requires one; [`ParamStore::accumulate`] folds the
//! parameter part into the store.

use super::kernels::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::{Float, Tensor};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleChannels(Var, Var),
    ShiftChannels(Var, Var),
    ScaleItems(Var, Vec<F>),
    ChannelNorm { inv_std: Vec<F> },
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    SimpleGate(Var),
    GlobalAvgPool(Var),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    Sum(Var),
    MeanAbs { x: Var, weights: Vec<F> },
    MeanSq { x: Var, weights: Vec<F> },
}

enum Value<F> {
    Owned(Tensor<F>),
    Param(ParamId),
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    requires_grad: bool,
    /// Input of a channel norm, kept separately from the normalized output.
    norm_input: Option<Var>,
}

pub struct Graph<'p, F: Float> {
    store: Option<&'p ParamStore<F>>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, usize)>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, node)| self.grads[node].as_ref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params.iter().filter_map(|&(p, node)| self.grads[node].as_ref().map(|g| (p, g)))
    }
}

impl<F: Float> ParamStore<F> {
    /// Adds the parameter gradients from one backward pass to the stored ones.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (id, g) in grads.params() {
            let p = self.get_mut(id);
            for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

impl<'p, F: Float> Graph<'p, F> {
    pub fn new(store: &'p ParamStore<F>) -> Self {
        Graph { store: Some(store), nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    /// A graph without parameters, for pure tensor computations.
    pub fn detached() -> Self {
        Graph { store: None, nodes: Vec::new(), param_vars: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("parameter node without store").value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad, norm_input: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is computed for it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let trainable = self.store.expect("graph has no parameter store").get(id).trainable;
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad: trainable, norm_input: None });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, groups: usize) -> Result<Var> {
        let geom = ConvGeom::new(
            self.shape(x),
            self.shape(w),
            b.map(|b| self.shape(b)),
            stride,
            pad,
            groups,
        )?;
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn check_channel_vec(&self, x: Var, s: Var, what: &str) -> Result<()> {
        let [n, c, _, _] = self.shape(x);
        let [sn, sc, sh, sw] = self.shape(s);
        ensure!(
            (sn == n || sn == 1) && sc == c && sh == 1 && sw == 1,
            "{what}: per-channel operand has shape {:?}, input {:?}",
            self.shape(s),
            self.shape(x)
        );
        Ok(())
    }

    fn broadcast_channels(&self, x: Var, s: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let xv = self.value(x);
        let sv = self.value(s);
        let [n, c, h, w] = xv.shape();
        let hw = h * w;
        let mut out = xv.clone();
        for b in 0..n {
            let sb = if sv.n() == 1 { 0 } else { b };
            let o = out.item_mut(b);
            for ch in 0..c {
                let k = sv.data()[sb * c + ch];
                o[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v = f(*v, k));
            }
        }
        out
    }

    /// `x ⊙ s` with `s` of shape `(N or 1, C, 1, 1)` broadcast over space.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_channel_vec(x, s, "scale_channels")?;
        let out = self.broadcast_channels(x, s, |v, k| v * k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleChannels(x, s), rg))
    }

    /// `x + b` with `b` of shape `(N or 1, C, 1, 1)` broadcast over space.
    pub fn shift_channels(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_channel_vec(x, b, "shift_channels")?;
        let out = self.broadcast_channels(x, b, |v, k| v + k);
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::ShiftChannels(x, b), rg))
    }

    /// Multiplies batch item `i` by the constant `k[i]`.
    pub fn scale_items(&mut self, x: Var, k: Vec<F>) -> Result<Var> {
        ensure!(k.len() == self.shape(x)[0], "scale_items: {} factors for batch {}", k.len(), self.shape(x)[0]);
        let mut out = self.value(x).clone();
        for (i, &kv) in k.iter().enumerate() {
            out.item_mut(i).iter_mut().for_each(|v| *v *= kv);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScaleItems(x, k), rg))
    }

    /// Normalizes each spatial position over the channel axis (no affine).
    pub fn channel_norm(&mut self, x: Var, eps: F) -> Result<Var> {
        ensure!(eps > F::zero(), "channel_norm: eps must be positive");
        let (out, inv_std) = kernels::channel_norm(self.value(x), eps);
        let rg = self.rg(x);
        let v = self.push(out, Op::ChannelNorm { inv_std }, rg);
        self.nodes[v.0].norm_input = Some(x);
        Ok(v)
    }

    /// Channel layer normalization with per-channel affine `alpha`, `beta`
    /// of shape `(1, C, 1, 1)`.
    pub fn layer_norm_channel(&mut self, x: Var, alpha: Var, beta: Var, eps: F) -> Result<Var> {
        self.check_channel_vec(x, alpha, "layer_norm_channel alpha")?;
        self.check_channel_vec(x, beta, "layer_norm_channel beta")?;
        let n = self.channel_norm(x, eps)?;
        let s = self.scale_channels(n, alpha)?;
        self.shift_channels(s, beta)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::pixel_shuffle(self.value(x), r)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle(x, r), rg))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::pixel_unshuffle(self.value(x), r)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelUnshuffle(x, r), rg))
    }

    /// Splits channels in half and multiplies the halves.
    pub fn simple_gate(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        ensure!(c % 2 == 0, "simple_gate: channel count {c} is odd");
        let half = c / 2 * h * w;
        let xv = self.value(x);
        let mut out = Tensor::zeros([n, c / 2, h, w]);
        for b in 0..n {
            let xi = xv.item(b);
            let (a1, a2) = xi.split_at(half);
            for ((o, &p), &q) in out.item_mut(b).iter_mut().zip(a1).zip(a2) {
                *o = p * q;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SimpleGate(x), rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        ensure!(h * w > 0, "global_avg_pool: empty spatial extent");
        let hw = h * w;
        let xv = self.value(x);
        let mut out = Tensor::zeros([n, c, 1, 1]);
        let inv = F::one() / F::of(hw as f64);
        for b in 0..n {
            let xi = xv.item(b);
            for ch in 0..c {
                out.data_mut()[b * c + ch] = xi[ch * hw..(ch + 1) * hw].iter().copied().sum::<F>() * inv;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(F::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| F::one() / (F::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        ensure!(!xs.is_empty(), "concat: no inputs");
        let [n, _, h, w] = self.shape(xs[0]);
        let mut c_total = 0;
        for &x in xs {
            let [xn, xc, xh, xw] = self.shape(x);
            ensure!(
                xn == n && xh == h && xw == w,
                "concat: shape {:?} incompatible with {:?}",
                self.shape(x),
                self.shape(xs[0])
            );
            c_total += xc;
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for b in 0..n {
            let mut off = 0;
            for &x in xs {
                let src = self.value(x).item(b);
                out.item_mut(b)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    /// Channels `start .. start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        ensure!(start + len <= c, "slice_channels: {start}+{len} exceeds {c} channels");
        let hw = h * w;
        let mut out = Tensor::zeros([n, len, h, w]);
        for b in 0..n {
            let src = &self.value(x).item(b)[start * hw..(start + len) * hw];
            out.item_mut(b).copy_from_slice(src);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceChannels { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::full([1, 1, 1, 1], s), Op::Sum(x), rg)
    }

    /// `Σ_i weights[i] · mean(|x_i|)` over batch items.
    pub fn weighted_mean_abs(&mut self, x: Var, weights: Vec<F>) -> Result<Var> {
        let xv = self.value(x);
        ensure!(weights.len() == xv.n(), "weighted_mean_abs: {} weights for batch {}", weights.len(), xv.n());
        let inv = F::one() / F::of(xv.item_len() as f64);
        let s = (0..xv.n())
            .map(|i| weights[i] * xv.item(i).iter().map(|v| v.abs()).sum::<F>() * inv)
            .sum::<F>();
        let rg = self.rg(x);
        Ok(self.push(Tensor::full([1, 1, 1, 1], s), Op::MeanAbs { x, weights }, rg))
    }

    /// `Σ_i weights[i] · mean(x_i²)` over batch items.
    pub fn weighted_mean_sq(&mut self, x: Var, weights: Vec<F>) -> Result<Var> {
        let xv = self.value(x);
        ensure!(weights.len() == xv.n(), "weighted_mean_sq: {} weights for batch {}", weights.len(), xv.n());
        let inv = F::one() / F::of(xv.item_len() as f64);
        let s = (0..xv.n())
            .map(|i| weights[i] * xv.item(i).iter().map(|&v| v * v).sum::<F>() * inv)
            .sum::<F>();
        let rg = self.rg(x);
        Ok(self.push(Tensor::full([1, 1, 1, 1], s), Op::MeanSq { x, weights }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        ensure!(
            self.shape(loss) == [1, 1, 1, 1],
            "backward: loss must be a scalar, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full([1, 1, 1, 1], F::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, idx: usize, gy: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        let out = self.value(Var(idx));
        let mut acc = |v: Var, g: Tensor<F>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, &b) in t.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let g = kernels::conv2d_backward(self.value(*x), self.value(*w), gy, geom, need);
                if let Some(dx) = g.dx {
                    acc(*x, dx);
                }
                if let Some(dw) = g.dw {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, gy.zip_map(self.value(*b), |g, y| g * y).unwrap());
                }
                if self.rg(*b) {
                    acc(*b, gy.zip_map(self.value(*a), |g, x| g * x).unwrap());
                }
            }
            Op::ScaleChannels(x, s) => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let [n, c, h, w] = xv.shape();
                let hw = h * w;
                if self.rg(*x) {
                    let mut dx = gy.clone();
                    for b in 0..n {
                        let sb = if sv.n() == 1 { 0 } else { b };
                        let d = dx.item_mut(b);
                        for ch in 0..c {
                            let k = sv.data()[sb * c + ch];
                            d[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v *= k);
                        }
                    }
                    acc(*x, dx);
                }
                if self.rg(*s) {
                    let mut ds = Tensor::zeros(sv.shape());
                    for b in 0..n {
                        let sb = if sv.n() == 1 { 0 } else { b };
                        let (gi, xi) = (gy.item(b), xv.item(b));
                        for ch in 0..c {
                            let r = ch * hw..(ch + 1) * hw;
                            ds.data_mut()[sb * c + ch] +=
                                gi[r.clone()].iter().zip(&xi[r]).map(|(&a, &b)| a * b).sum::<F>();
                        }
                    }
                    acc(*s, ds);
                }
            }
            Op::ShiftChannels(x, s) => {
                acc(*x, gy.clone());
                if self.rg(*s) {
                    let sv = self.value(*s);
                    let [n, c, h, w] = gy.shape();
                    let hw = h * w;
                    let mut ds = Tensor::zeros(sv.shape());
                    for b in 0..n {
                        let sb = if sv.n() == 1 { 0 } else { b };
                        let gi = gy.item(b);
                        for ch in 0..c {
                            ds.data_mut()[sb * c + ch] += gi[ch * hw..(ch + 1) * hw].iter().copied().sum::<F>();
                        }
                    }
                    acc(*s, ds);
                }
            }
            Op::ScaleItems(x, k) => {
                let mut dx = gy.clone();
                for (i, &kv) in k.iter().enumerate() {
                    dx.item_mut(i).iter_mut().for_each(|v| *v *= kv);
                }
                acc(*x, dx);
            }
            Op::ChannelNorm { inv_std } => {
                let x = node.norm_input.expect("channel norm without input");
                acc(x, kernels::channel_norm_backward(out, inv_std, gy));
            }
            Op::PixelShuffle(x, r) => acc(*x, kernels::pixel_unshuffle(gy, *r).unwrap()),
            Op::PixelUnshuffle(x, r) => acc(*x, kernels::pixel_shuffle(gy, *r).unwrap()),
            Op::SimpleGate(x) => {
                let xv = self.value(*x);
                let half = xv.item_len() / 2;
                let mut dx = Tensor::zeros(xv.shape());
                for b in 0..xv.n() {
                    let xi = xv.item(b);
                    let gi = gy.item(b);
                    let d = dx.item_mut(b);
                    for p in 0..half {
                        d[p] = gi[p] * xi[half + p];
                        d[half + p] = gi[p] * xi[p];
                    }
                }
                acc(*x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let [n, c, h, w] = self.shape(*x);
                let hw = h * w;
                let inv = F::one() / F::of(hw as f64);
                let mut dx = Tensor::zeros([n, c, h, w]);
                for b in 0..n {
                    let d = dx.item_mut(b);
                    for ch in 0..c {
                        let gv = gy.data()[b * c + ch] * inv;
                        d[ch * hw..(ch + 1) * hw].fill(gv);
                    }
                }
                acc(*x, dx);
            }
            Op::Relu(x) => {
                acc(*x, gy.zip_map(self.value(*x), |g, v| if v > F::zero() { g } else { F::zero() }).unwrap())
            }
            Op::Sigmoid(x) => acc(*x, gy.zip_map(out, |g, s| g * s * (F::one() - s)).unwrap()),
            Op::Concat(xs) => {
                let n = gy.n();
                let mut off = 0;
                for &x in xs {
                    let shape = self.shape(x);
                    let len = shape[1] * shape[2] * shape[3];
                    if self.rg(x) {
                        let mut dx = Tensor::zeros(shape);
                        for b in 0..n {
                            dx.item_mut(b).copy_from_slice(&gy.item(b)[off..off + len]);
                        }
                        acc(x, dx);
                    }
                    off += len;
                }
            }
            Op::SliceChannels { x, start } => {
                let shape = self.shape(*x);
                let hw = shape[2] * shape[3];
                let mut dx = Tensor::zeros(shape);
                for b in 0..shape[0] {
                    let gi = gy.item(b);
                    dx.item_mut(b)[start * hw..start * hw + gi.len()].copy_from_slice(gi);
                }
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), gy.data()[0])),
            Op::MeanAbs { x, weights } => {
                let xv = self.value(*x);
                let inv = gy.data()[0] / F::of(xv.item_len() as f64);
                let mut dx = Tensor::zeros(xv.shape());
                for (b, &wt) in weights.iter().enumerate() {
                    let k = wt * inv;
                    for (d, &v) in dx.item_mut(b).iter_mut().zip(xv.item(b)) {
                        *d = if v > F::zero() {
                            k
                        } else if v < F::zero() {
                            -k
                        } else {
                            F::zero()
                        };
                    }
                }
                acc(*x, dx);
            }
            Op::MeanSq { x, weights } => {
                let xv = self.value(*x);
                let inv = gy.data()[0] / F::of(xv.item_len() as f64);
                let mut dx = Tensor::zeros(xv.shape());
                for (b, &wt) in weights.iter().enumerate() {
                    let k = F::of(2.0) * wt * inv;
                    for (d, &v) in dx.item_mut(b).iter_mut().zip(xv.item(b)) {
                        *d = k * v;
                    }
                }
                acc(*x, dx);
            }
        }
    }
}
