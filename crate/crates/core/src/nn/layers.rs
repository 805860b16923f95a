use rand::Rng;
use rand_distr::StandardNormal;

use super::{Float, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{ensure, Result};

/// How a convolution's weight is initialized. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Zero-mean normal with std `sqrt(2 / fan_in)`.
    He,
    Zero,
}

/// A convolution layer: parameter handles plus geometry.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(cin % groups == 0 && cout % groups == 0, "{name}: channels not divisible by groups");
        let shape = [cout, cin / groups, k, k];
        let fan_in = (cin / groups * k * k) as f64;
        let weight = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::He => {
                let std = (2.0 / fan_in).sqrt();
                let data = (0..cout * cin / groups * k * k)
                    .map(|_| F::of(std * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                Tensor::from_vec(shape, data)?
            }
        };
        let weight = store.add(format!("{name}.weight"), weight)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]))?) } else { None };
        let pad = if stride == 1 { (k - 1) / 2 } else { 0 };
        Ok(Conv2d { weight, bias, stride, pad, groups })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad, self.groups)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Sinusoidal step embedding: entry `2i` is `sin(t / 10000^(2i/dim))`,
/// entry `2i+1` the matching cosine.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    ensure!(dim % 2 == 0 && dim > 0, "time embedding dimension {dim} must be even and positive");
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / dim as f64);
        let arg = t as f64 / freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// Stacks the embeddings of `steps` into an `(N, dim, 1, 1)` tensor.
pub fn time_embedding_batch<F: Float>(steps: &[usize], dim: usize) -> Result<Tensor<F>> {
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        data.extend(time_embedding(t, dim)?.into_iter().map(F::of));
    }
    Tensor::from_vec([steps.len(), dim, 1, 1], data)
}
