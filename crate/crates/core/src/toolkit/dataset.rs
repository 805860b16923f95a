//! In-memory HR/LR/μ triples for training and evaluation.

use std::path::Path;

use rand::Rng;

use super::image_io::{list_pngs, read_png};
use super::resize::make_lr_pair;
use crate::error::{ensure, Result};
use crate::nn::{Float, Tensor};
use crate::train::Batch;

#[derive(Clone, Debug)]
pub struct PairedDataset<F> {
    pub names: Vec<String>,
    pub hr: Vec<Tensor<F>>,
    pub lr: Vec<Tensor<F>>,
    pub mu: Vec<Tensor<F>>,
    pub scale: usize,
}

impl<F: Float> PairedDataset<F> {
    /// Builds triples from `(1, 3, H, W)` HR images by bicubic degradation.
    pub fn from_images(names: Vec<String>, hr: Vec<Tensor<F>>, scale: usize) -> Result<Self> {
        ensure!(!hr.is_empty(), "dataset is empty");
        ensure!(names.len() == hr.len(), "{} names for {} images", names.len(), hr.len());
        let mut lr = Vec::with_capacity(hr.len());
        let mut mu = Vec::with_capacity(hr.len());
        for (name, img) in names.iter().zip(&hr) {
            ensure!(img.n() == 1 && img.c() == 3, "{name}: expected one RGB image, got {:?}", img.shape());
            let (v, m) = make_lr_pair(img, scale).map_err(|e| crate::Error::invalid(format!("{name}: {e}")))?;
            lr.push(v);
            mu.push(m);
        }
        Ok(PairedDataset { names, hr, lr, mu, scale })
    }

    /// Every PNG in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path, scale: usize) -> Result<Self> {
        let files = list_pngs(dir)?;
        ensure!(!files.is_empty(), "no PNG files in {}", dir.display());
        let mut names = Vec::with_capacity(files.len());
        let mut hr = Vec::with_capacity(files.len());
        for f in files {
            names.push(f.file_name().unwrap().to_string_lossy().into_owned());
            hr.push(read_png(&f)?);
        }
        Self::from_images(names, hr, scale)
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    /// Stacks whole images; all selected images must share a size.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<F>> {
        let pick = |v: &[Tensor<F>]| Tensor::stack(&indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>());
        Ok(Batch { x0: pick(&self.hr)?, v: pick(&self.lr)?, mu: pick(&self.mu)? })
    }

    /// Random batch of `size` items drawn with replacement. With `patch`, each
    /// item is a random HR crop of that side, aligned to the scale, with the
    /// matching LR and μ windows.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, patch: Option<usize>, rng: &mut R) -> Result<Batch<F>> {
        let indices: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len())).collect();
        let Some(p) = patch else {
            return self.batch(&indices);
        };
        let r = self.scale;
        ensure!(p % r == 0 && p % 8 == 0, "patch size {p} must be divisible by 8 and by the scale {r}");
        let (mut x0, mut v, mut mu) = (Vec::new(), Vec::new(), Vec::new());
        for i in indices {
            let [_, _, h, w] = self.hr[i].shape();
            ensure!(h >= p && w >= p, "{}: {h}x{w} is smaller than patch {p}", self.names[i]);
            let y = rng.random_range(0..=(h - p) / r) * r;
            let x = rng.random_range(0..=(w - p) / r) * r;
            x0.push(crop(&self.hr[i], y, x, p, p));
            mu.push(crop(&self.mu[i], y, x, p, p));
            v.push(crop(&self.lr[i], y / r, x / r, p / r, p / r));
        }
        Ok(Batch { x0: Tensor::stack(&x0)?, v: Tensor::stack(&v)?, mu: Tensor::stack(&mu)? })
    }
}

fn crop<F: Float>(img: &Tensor<F>, y: usize, x: usize, h: usize, w: usize) -> Tensor<F> {
    Tensor::from_fn([1, img.c(), h, w], |_, c, i, j| img.at(0, c, y + i, x + j))
}
