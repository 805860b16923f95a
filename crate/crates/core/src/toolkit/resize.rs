//! Separable bicubic resampling.
//!
//! Pixel centres sit at half-integer positions (align-corners false) and
//! samples outside the image are clamped to the nearest edge pixel. When
//! shrinking, the kernel is stretched by the inverse scale so that every input
//! pixel contributes, which is the usual anti-aliased bicubic degradation.

use crate::error::{ensure, Result};
use crate::nn::{Float, Tensor};

pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn bicubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Contributions of input samples to one output sample.
#[derive(Clone, Debug)]
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..out_len)
        .map(|i| {
            let centre = (i as f64 + 0.5) / scale - 0.5;
            let lo = (centre - support).floor() as isize;
            let hi = (centre + support).ceil() as isize;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for j in lo..=hi {
                let w = stretch * bicubic_kernel(stretch * (centre - j as f64));
                if w == 0.0 {
                    continue;
                }
                index.push(j.clamp(0, in_len as isize - 1) as usize);
                weight.push(w);
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

/// Resizes every plane of an `(N, C, H, W)` tensor to `(out_h, out_w)`.
pub fn bicubic_resize<F: Float>(img: &Tensor<F>, out_h: usize, out_w: usize) -> Result<Tensor<F>> {
    ensure!(out_h > 0 && out_w > 0, "resize target {out_h}x{out_w} must be non-empty");
    let [n, c, h, w] = img.shape();
    ensure!(h > 0 && w > 0, "cannot resize an empty image");
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let mut tmp = vec![0.0f64; h * out_w];
    let src = img.data();
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[y * out_w + x] = taps.index.iter().zip(&taps.weight).map(|(&j, &k)| row[j].f64() * k).sum();
            }
        }
        let dst = &mut out.data_mut()[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (y, taps) in rows.iter().enumerate() {
            for x in 0..out_w {
                let v: f64 = taps.index.iter().zip(&taps.weight).map(|(&j, &k)| tmp[j * out_w + x] * k).sum();
                dst[y * out_w + x] = F::of(v);
            }
        }
    }
    Ok(out)
}

/// Degrades `hr` by `r` and upsamples it back, returning `(v, μ)`.
pub fn make_lr_pair<F: Float>(hr: &Tensor<F>, r: usize) -> Result<(Tensor<F>, Tensor<F>)> {
    let [_, _, h, w] = hr.shape();
    ensure!(r >= 1, "scale must be >= 1");
    ensure!(h % r == 0 && w % r == 0, "image {h}x{w} is not divisible by scale {r}");
    let v = bicubic_resize(hr, h / r, w / r)?;
    let mu = bicubic_resize(&v, h, w)?;
    Ok((v, mu))
}
