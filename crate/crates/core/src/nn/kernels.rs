//! Forward and backward kernels for the non-trivial primitives. Everything
//! here works on raw tensors; the tape in [`super::graph`] decides which
//! gradients are needed.

use super::float::{gemm, MatRef};
use super::{Float, Tensor};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(
        x: [usize; 4],
        weight: [usize; 4],
        bias: Option<[usize; 4]>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let [n, cin, h, w] = x;
        let [cout, cin_g, kh, kw] = weight;
        ensure!(stride >= 1, "conv2d stride must be >= 1");
        ensure!(groups >= 1, "conv2d groups must be >= 1");
        ensure!(
            cin % groups == 0 && cout % groups == 0,
            "conv2d: channels in {cin} / out {cout} not divisible by groups {groups}"
        );
        ensure!(
            cin_g == cin / groups,
            "conv2d: weight expects {cin_g} input channels per group, input has {} (C={cin}, groups={groups})",
            cin / groups
        );
        ensure!(kh >= 1 && kw >= 1, "conv2d: empty kernel");
        ensure!(
            h + 2 * pad >= kh && w + 2 * pad >= kw,
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        );
        if let Some(b) = bias {
            ensure!(b == [1, cout, 1, 1], "conv2d: bias shape {b:?}, expected [1, {cout}, 1, 1]");
        }
        Ok(ConvGeom {
            n,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
            groups,
        })
    }

    fn depthwise(&self) -> bool {
        self.groups == self.cin && self.cin == self.cout && self.groups > 1
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.oh, self.ow]
    }

    /// Output columns `ox` for which `ox*stride + k - pad` lands inside `[0, len)`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // ox*s + off >= 0  and  ox*s + off <= len - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_num = len as isize - 1 - off;
        let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
        let lo = (lo.max(0) as usize).min(out_len);
        let hi = (hi as usize).min(out_len);
        (lo, hi.max(lo))
    }
}

fn im2col<F: Float>(g: &ConvGeom, x: &[F], channels: usize, col: &mut [F]) {
    let ohw = g.oh * g.ow;
    for c in 0..channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[((c * g.kh + ky) * g.kw + kx) * ohw..][..ohw];
                let (x_lo, x_hi) = g.valid_range(kx, g.w, g.ow);
                for oy in 0..g.oh {
                    let out = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..x_lo].fill(F::zero());
                    out[x_hi..].fill(F::zero());
                    for ox in x_lo..x_hi {
                        out[ox] = src[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

fn col2im<F: Float>(g: &ConvGeom, col: &[F], channels: usize, dx: &mut [F]) {
    let ohw = g.oh * g.ow;
    for c in 0..channels {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &col[((c * g.kh + ky) * g.kw + kx) * ohw..][..ohw];
                let (x_lo, x_hi) = g.valid_range(kx, g.w, g.ow);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in x_lo..x_hi {
                        dst[ox * g.stride + kx - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    g: &ConvGeom,
) -> Tensor<F> {
    let mut out = Tensor::zeros(g.out_shape());
    let ohw = g.oh * g.ow;
    if g.depthwise() {
        depthwise_forward(x, weight, g, &mut out);
    } else {
        let cin_g = g.cin / g.groups;
        let cout_g = g.cout / g.groups;
        let k = cin_g * g.kh * g.kw;
        let mut col = if g.pointwise() { Vec::new() } else { vec![F::zero(); k * ohw] };
        for n in 0..g.n {
            for grp in 0..g.groups {
                let xs = &x.item(n)[grp * cin_g * g.h * g.w..(grp + 1) * cin_g * g.h * g.w];
                let cols: &[F] = if g.pointwise() {
                    xs
                } else {
                    im2col(g, xs, cin_g, &mut col);
                    &col
                };
                let wg = &weight.data()[grp * cout_g * k..(grp + 1) * cout_g * k];
                let o = &mut out.item_mut(n)[grp * cout_g * ohw..(grp + 1) * cout_g * ohw];
                gemm(cout_g, k, ohw, MatRef::rows(wg, k), MatRef::rows(cols, ohw), F::zero(), o);
            }
        }
    }
    if let Some(b) = bias {
        for n in 0..g.n {
            let o = out.item_mut(n);
            for (c, &bv) in b.data().iter().enumerate() {
                o[c * ohw..(c + 1) * ohw].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

fn depthwise_forward<F: Float>(x: &Tensor<F>, weight: &Tensor<F>, g: &ConvGeom, out: &mut Tensor<F>) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let kk = g.kh * g.kw;
    for n in 0..g.n {
        for c in 0..g.cin {
            let src = &x.item(n)[c * h * w..(c + 1) * h * w];
            let wk = &weight.data()[c * kk..(c + 1) * kk];
            let dst = &mut out.item_mut(n)[c * oh * ow..(c + 1) * oh * ow];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wk[ky * g.kw + kx];
                    let (x_lo, x_hi) = g.valid_range(kx, w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * ow + x_lo..oy * ow + x_hi];
                        if g.stride == 1 {
                            let s = &srow[x_lo + kx - g.pad..x_hi + kx - g.pad];
                            for (d, &sv) in drow.iter_mut().zip(s) {
                                *d += wv * sv;
                            }
                        } else {
                            for (i, d) in drow.iter_mut().enumerate() {
                                *d += wv * srow[(x_lo + i) * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution. Each output is computed only when requested.
pub struct ConvGrads<F> {
    pub dx: Option<Tensor<F>>,
    pub dw: Option<Tensor<F>>,
    pub db: Option<Tensor<F>>,
}

pub fn conv2d_backward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    gy: &Tensor<F>,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<F> {
    let (need_dx, need_dw, need_db) = need;
    let ohw = g.oh * g.ow;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape()));
    let db = need_db.then(|| {
        let mut db = Tensor::zeros([1, g.cout, 1, 1]);
        for n in 0..g.n {
            let gi = gy.item(n);
            for c in 0..g.cout {
                db.data_mut()[c] += gi[c * ohw..(c + 1) * ohw].iter().copied().sum::<F>();
            }
        }
        db
    });

    if g.depthwise() {
        depthwise_backward(x, weight, gy, g, dx.as_mut(), dw.as_mut());
        return ConvGrads { dx, dw, db };
    }

    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let k = cin_g * g.kh * g.kw;
    let mut col = if g.pointwise() { Vec::new() } else { vec![F::zero(); k * ohw] };
    for n in 0..g.n {
        for grp in 0..g.groups {
            let xs_range = grp * cin_g * g.h * g.w..(grp + 1) * cin_g * g.h * g.w;
            let gys = &gy.item(n)[grp * cout_g * ohw..(grp + 1) * cout_g * ohw];
            let wg = &weight.data()[grp * cout_g * k..(grp + 1) * cout_g * k];
            if let Some(dw) = dw.as_mut() {
                let xs = &x.item(n)[xs_range.clone()];
                let cols: &[F] = if g.pointwise() {
                    xs
                } else {
                    im2col(g, xs, cin_g, &mut col);
                    &col
                };
                let dwg = &mut dw.data_mut()[grp * cout_g * k..(grp + 1) * cout_g * k];
                gemm(cout_g, ohw, k, MatRef::rows(gys, ohw), MatRef::transposed(cols, ohw), F::one(), dwg);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.item_mut(n)[xs_range];
                if g.pointwise() {
                    gemm(k, cout_g, ohw, MatRef::transposed(wg, k), MatRef::rows(gys, ohw), F::one(), dxs);
                } else {
                    gemm(k, cout_g, ohw, MatRef::transposed(wg, k), MatRef::rows(gys, ohw), F::zero(), &mut col);
                    col2im(g, &col, cin_g, dxs);
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

fn depthwise_backward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    gy: &Tensor<F>,
    g: &ConvGeom,
    mut dx: Option<&mut Tensor<F>>,
    mut dw: Option<&mut Tensor<F>>,
) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let kk = g.kh * g.kw;
    for n in 0..g.n {
        for c in 0..g.cin {
            let src = &x.item(n)[c * h * w..(c + 1) * h * w];
            let gsrc = &gy.item(n)[c * oh * ow..(c + 1) * oh * ow];
            let wk = &weight.data()[c * kk..(c + 1) * kk];
            let mut dplane = dx.as_deref_mut().map(|d| &mut d.item_mut(n)[c * h * w..(c + 1) * h * w]);
            let mut dwk = [F::zero(); 64];
            let mut dwk_big = if kk > 64 { vec![F::zero(); kk] } else { Vec::new() };
            let acc_buf: &mut [F] = if kk > 64 { &mut dwk_big } else { &mut dwk[..kk] };
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wk[ky * g.kw + kx];
                    let (x_lo, x_hi) = g.valid_range(kx, w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let mut acc = F::zero();
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let grow = &gsrc[oy * ow + x_lo..oy * ow + x_hi];
                        if g.stride == 1 {
                            let lo = iy * w + x_lo + kx - g.pad;
                            let len = x_hi - x_lo;
                            if dw.is_some() {
                                acc += dot(grow, &src[lo..lo + len]);
                            }
                            if let Some(dp) = dplane.as_deref_mut() {
                                for (d, &gv) in dp[lo..lo + len].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for (i, &gv) in grow.iter().enumerate() {
                                let ix = iy * w + (x_lo + i) * g.stride + kx - g.pad;
                                acc += gv * src[ix];
                                if let Some(dp) = dplane.as_deref_mut() {
                                    dp[ix] += wv * gv;
                                }
                            }
                        }
                    }
                    acc_buf[ky * g.kw + kx] += acc;
                }
            }
            if let Some(dw) = dw.as_deref_mut() {
                for (d, &a) in dw.data_mut()[c * kk..(c + 1) * kk].iter_mut().zip(acc_buf.iter()) {
                    *d += a;
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    let mut lanes = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    lanes.iter().copied().sum::<F>() + tail
}

pub fn pixel_shuffle<F: Float>(x: &Tensor<F>, r: usize) -> Result<Tensor<F>> {
    let [n, c, h, w] = x.shape();
    ensure!(r >= 1, "pixel_shuffle: factor must be >= 1");
    ensure!(c % (r * r) == 0, "pixel_shuffle: channels {c} not divisible by {}", r * r);
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    let (oh, ow) = (h * r, w * r);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for co in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    let sp = &src[((b * c + ci) * h) * w..][..h * w];
                    for y in 0..h {
                        let drow = ((b * oc + co) * oh + y * r + i) * ow;
                        for xx in 0..w {
                            dst[drow + xx * r + j] = sp[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pixel_unshuffle<F: Float>(x: &Tensor<F>, r: usize) -> Result<Tensor<F>> {
    let [n, c, h, w] = x.shape();
    ensure!(r >= 1, "pixel_unshuffle: factor must be >= 1");
    ensure!(
        h % r == 0 && w % r == 0,
        "pixel_unshuffle: spatial size {h}x{w} not divisible by {r}"
    );
    let (oh, ow) = (h / r, w / r);
    let oc = c * r * r;
    let mut out = Tensor::zeros([n, oc, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let co = ci * r * r + i * r + j;
                    let dp = &mut dst[((b * oc + co) * oh) * ow..][..oh * ow];
                    for y in 0..oh {
                        let srow = ((b * c + ci) * h + y * r + i) * w;
                        for xx in 0..ow {
                            dp[y * ow + xx] = src[srow + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-position statistics over the channel axis. Returns the normalized
/// tensor and `1/sqrt(var + eps)` for each `(n, h, w)`.
pub fn channel_norm<F: Float>(x: &Tensor<F>, eps: F) -> (Tensor<F>, Vec<F>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let mut inv_std = vec![F::zero(); n * hw];
    let cf = F::of(c as f64);
    for b in 0..n {
        let xi = x.item(b);
        let mut mean = vec![F::zero(); hw];
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&xi[ch * hw..(ch + 1) * hw]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= cf);
        let mut var = vec![F::zero(); hw];
        for ch in 0..c {
            for ((s, &v), &m) in var.iter_mut().zip(&xi[ch * hw..(ch + 1) * hw]).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv = &mut inv_std[b * hw..(b + 1) * hw];
        for (i, s) in inv.iter_mut().zip(&var) {
            *i = F::one() / (*s / cf + eps).sqrt();
        }
        let oi = out.item_mut(b);
        for ch in 0..c {
            for p in 0..hw {
                oi[ch * hw + p] = (xi[ch * hw + p] - mean[p]) * inv[p];
            }
        }
    }
    (out, inv_std)
}

/// Backward of [`channel_norm`] given the normalized output `xhat`.
pub fn channel_norm_backward<F: Float>(xhat: &Tensor<F>, inv_std: &[F], gy: &Tensor<F>) -> Tensor<F> {
    let [n, c, h, w] = xhat.shape();
    let hw = h * w;
    let cf = F::of(c as f64);
    let mut dx = Tensor::zeros(xhat.shape());
    for b in 0..n {
        let xh = xhat.item(b);
        let g = gy.item(b);
        let mut mean_g = vec![F::zero(); hw];
        let mut mean_gx = vec![F::zero(); hw];
        for ch in 0..c {
            for p in 0..hw {
                let gv = g[ch * hw + p];
                mean_g[p] += gv;
                mean_gx[p] += gv * xh[ch * hw + p];
            }
        }
        let inv = &inv_std[b * hw..(b + 1) * hw];
        let d = dx.item_mut(b);
        for ch in 0..c {
            for p in 0..hw {
                let i = ch * hw + p;
                d[i] = inv[p] * (g[i] - mean_g[p] / cf - xh[i] * mean_gx[p] / cf);
            }
        }
    }
    dx
}
