use rand::Rng;
use rand_distr::StandardNormal;

use super::Float;
use crate::error::{ensure, Result};

/// `(N, C, H, W)`.
pub type Shape = [usize; 4];

/// Dense rank-4 NCHW array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Float> Tensor<F> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: Shape, value: F) -> Self {
        Tensor { shape, data: vec![value; numel(shape)] }
    }

    pub fn from_vec(shape: Shape, data: Vec<F>) -> Result<Self> {
        ensure!(
            data.len() == numel(shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> F) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(numel(shape));
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(i, j, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Standard-normal entries.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| F::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Tensor { shape, data }
    }

    /// Uniform entries on `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape)).map(|_| F::of(rng.random_range(lo..hi))).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }
    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> F {
        self.data[self.offset(n, c, h, w)]
    }
    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: F) {
        let o = self.offset(n, c, h, w);
        self.data[o] = v;
    }

    /// Batch item `i` as a flat slice.
    pub fn item(&self, i: usize) -> &[F] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }
    pub fn item_mut(&mut self, i: usize) -> &mut [F] {
        let len = self.item_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        ensure!(numel(shape) == self.data.len(), "cannot reshape {:?} to {:?}", self.shape, shape);
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        ensure!(self.shape == other.shape, "shape mismatch {:?} vs {:?}", self.shape, other.shape);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }
    pub fn scale(&self, k: F) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        ensure!(self.shape == other.shape, "shape mismatch {:?} vs {:?}", self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }
    pub fn mean(&self) -> F {
        self.sum() / F::of(self.data.len().max(1) as f64)
    }
    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, &v| m.max(v.abs()))
    }
    pub fn sq_norm(&self) -> F {
        self.data.iter().map(|&v| v * v).sum()
    }
    pub fn max_abs_diff(&self, other: &Self) -> F {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| G::of(v.f64())).collect() }
    }

    /// Copies batch items `indices` into a new tensor.
    pub fn gather_items(&self, indices: &[usize]) -> Self {
        let len = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Tensor { shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]], data }
    }

    /// Concatenates tensors with matching `(C, H, W)` along the batch axis.
    pub fn stack(items: &[Tensor<F>]) -> Result<Self> {
        ensure!(!items.is_empty(), "cannot stack zero tensors");
        let [_, c, h, w] = items[0].shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            ensure!(
                t.shape[1..] == [c, h, w],
                "stack shape mismatch {:?} vs {:?}",
                t.shape,
                items[0].shape
            );
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: [n, c, h, w], data })
    }

    pub fn clamp(&self, lo: F, hi: F) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }
}

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}
