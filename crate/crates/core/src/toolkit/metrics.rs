//! Full-reference and no-reference image quality measures. Images are
//! `(N, C, H, W)` tensors in `[0, 1]`; multi-item tensors report the mean
//! over items.

use crate::error::{ensure, Result};
use crate::nn::{Float, Tensor};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub fn psnr<F: Float>(a: &Tensor<F>, b: &Tensor<F>, peak: f64) -> Result<f64> {
    ensure!(a.shape() == b.shape(), "psnr: shapes {:?} and {:?} differ", a.shape(), b.shape());
    ensure!(a.numel() > 0, "psnr: empty images");
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum::<f64>() / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Luminance planes `(N, H*W)`: Rec.601 weights for 3 channels, the channel
/// itself for 1.
pub fn luminance<F: Float>(img: &Tensor<F>) -> Result<Vec<Vec<f64>>> {
    let [n, c, h, w] = img.shape();
    ensure!(c == 1 || c == 3, "expected 1 or 3 channels, got {c}");
    Ok((0..n)
        .map(|i| {
            let item = img.item(i);
            if c == 1 {
                return item.iter().map(|v| v.f64()).collect();
            }
            (0..h * w)
                .map(|p| (0..3).map(|ch| LUMA[ch] * item[ch * h * w + p].f64()).sum())
                .collect()
        })
        .collect())
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filter of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|j| g[j] * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|j| g[j] * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity on luminance with an 11×11 Gaussian window
/// (σ = 1.5) over fully-contained windows, peak 1.
pub fn ssim<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    ensure!(a.shape() == b.shape(), "ssim: shapes {:?} and {:?} differ", a.shape(), b.shape());
    let [n, _, h, w] = a.shape();
    ensure!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
    );
    let (la, lb) = (luminance(a)?, luminance(b)?);
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for i in 0..n {
        let (x, y) = (&la[i], &lb[i]);
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(x, h, w, &g);
        let my = filter_valid(y, h, w, &g);
        let sxx = filter_valid(&prod(x, x), h, w, &g);
        let syy = filter_valid(&prod(y, y), h, w, &g);
        let sxy = filter_valid(&prod(x, y), h, w, &g);
        let mut acc = 0.0;
        for p in 0..mx.len() {
            let (ux, uy) = (mx[p], my[p]);
            let vx = sxx[p] - ux * ux;
            let vy = syy[p] - uy * uy;
            let cov = sxy[p] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / n as f64)
}

/// Mean over pixels of `sqrt((dx² + dy²) / 2)` using forward differences of
/// luminance; a sharpness proxy.
pub fn avg_gradient<F: Float>(img: &Tensor<F>) -> Result<f64> {
    let [n, _, h, w] = img.shape();
    ensure!(h >= 2 && w >= 2, "avg_gradient: image {h}x{w} needs at least 2x2 pixels");
    let lum = luminance(img)?;
    let mut total = 0.0;
    for y in &lum {
        let mut acc = 0.0;
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                let p = y[i * w + j];
                let dx = y[i * w + j + 1] - p;
                let dy = y[(i + 1) * w + j] - p;
                acc += ((dx * dx + dy * dy) / 2.0).sqrt();
            }
        }
        total += acc / ((h - 1) * (w - 1)) as f64;
    }
    Ok(total / n as f64)
}

/// Per-image scores and their means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub file: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ag: f64,
}

impl MetricReport {
    pub fn push<F: Float>(&mut self, file: impl Into<String>, pred: &Tensor<F>, gt: &Tensor<F>) -> Result<()> {
        self.rows.push(MetricRow {
            file: file.into(),
            psnr: psnr(pred, gt, 1.0)?,
            ssim: ssim(pred, gt)?,
            ag: avg_gradient(pred)?,
        });
        Ok(())
    }

    /// `(psnr, ssim, ag)` arithmetic means; zeros for an empty report.
    pub fn means(&self) -> (f64, f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let s = self.rows.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.psnr, a.1 + r.ssim, a.2 + r.ag));
        (s.0 / n, s.1 / n, s.2 / n)
    }

    /// Header `file,psnr,ssim,ag`, one row per image, then a `mean` row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["file", "psnr", "ssim", "ag"])?;
        for r in &self.rows {
            wr.write_record([r.file.clone(), format!("{:.6}", r.psnr), format!("{:.6}", r.ssim), format!("{:.6}", r.ag)])?;
        }
        let (p, s, a) = self.means();
        wr.write_record(["mean".to_string(), format!("{p:.6}"), format!("{s:.6}"), format!("{a:.6}")])?;
        wr.flush().map_err(|e| crate::Error::io("<csv>", e))?;
        Ok(())
    }
}
