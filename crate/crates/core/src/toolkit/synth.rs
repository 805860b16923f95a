//! Procedural RGB images standing in for real training crops.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::write_png;
use crate::error::{ensure, Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Gradients,
    Checkers,
    Blobs,
    Mixed,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(Family::Gradients),
            "checkers" => Ok(Family::Checkers),
            "blobs" => Ok(Family::Blobs),
            "mixed" => Ok(Family::Mixed),
            _ => Err(Error::invalid(format!("unknown image family '{s}' (gradients|checkers|blobs|mixed)"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gradients => "gradients",
            Family::Checkers => "checkers",
            Family::Blobs => "blobs",
            Family::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub hr_size: usize,
    pub scale: usize,
    pub seed: u64,
    pub family: Family,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.count >= 1, "count must be >= 1");
        ensure!(self.scale >= 1, "scale must be >= 1");
        ensure!(
            self.hr_size > 0 && self.hr_size % 8 == 0 && self.hr_size % self.scale == 0,
            "hr_size {} must be a positive multiple of 8 and of the scale {}",
            self.hr_size,
            self.scale
        );
        Ok(())
    }
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// One `(1, 3, size, size)` image of the given family.
pub fn generate_image<R: Rng + ?Sized>(family: Family, size: usize, rng: &mut R) -> Tensor<f32> {
    let s = size as f32;
    match family {
        Family::Mixed => {
            let pick = [Family::Gradients, Family::Checkers, Family::Blobs][rng.random_range(0..3)];
            generate_image(pick, size, rng)
        }
        Family::Gradients => {
            let (c0, c1) = (color(rng), color(rng));
            let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let half = 0.5 * s * (dx.abs() + dy.abs());
            Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
                let p = (x as f32 + 0.5 - s / 2.0) * dx + (y as f32 + 0.5 - s / 2.0) * dy;
                let t = (p / half + 1.0) / 2.0;
                c0[c] + (c1[c] - c0[c]) * t
            })
        }
        Family::Checkers => {
            let (c0, c1) = (color(rng), color(rng));
            let cell = rng.random_range(2..=8usize);
            let (px, py) = (rng.random_range(0..2 * cell), rng.random_range(0..2 * cell));
            Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
                if ((x + px) / cell + (y + py) / cell) % 2 == 0 {
                    c0[c]
                } else {
                    c1[c]
                }
            })
        }
        Family::Blobs => {
            let bg = color(rng);
            let blobs: Vec<_> = (0..rng.random_range(3..=8))
                .map(|_| {
                    let centre = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                    let sigma = rng.random_range(s / 16.0..s / 4.0);
                    let tint: [f32; 3] = [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
                    (centre, sigma, tint)
                })
                .collect();
            Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
                let mut v = bg[c];
                for &((cx, cy), sigma, tint) in &blobs {
                    let d2 = (x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2);
                    v += tint[c] * (-d2 / (2.0 * sigma * sigma)).exp();
                }
                v
            })
        }
    }
    .clamp(0.0, 1.0)
}

/// Image `index` of a dataset, independent of how many images precede it.
pub fn dataset_image(spec: &DatasetSpec, index: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    generate_image(spec.family, spec.hr_size, &mut rng)
}

pub const MANIFEST: &str = "manifest.txt";

/// Writes `img_NNNN.png` files and a manifest; returns the image paths.
pub fn synth_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = format!(
        "# seed = {}\n# family = {}\n# hr_size = {}\n# scale = {}\n# count = {}\n",
        spec.seed, spec.family, spec.hr_size, spec.scale, spec.count
    );
    let mut paths = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let name = format!("img_{i:04}.png");
        let path = out_dir.join(&name);
        write_png(&path, &dataset_image(spec, i), 0)?;
        manifest.push_str(&name);
        manifest.push('\n');
        paths.push(path);
    }
    let mpath = out_dir.join(MANIFEST);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(paths)
}
