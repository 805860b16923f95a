//! U-shaped noise predictor built from efficient activation blocks (EABs).

use rand::Rng;

use crate::error::{ensure, Result};
use crate::nn::layers::time_embedding_batch;
use crate::nn::{Conv2d, Float, Graph, Init, ParamId, ParamStore, Tensor, Var};

pub const NORM_EPS: f64 = 1e-6;
const DW_KERNELS: [usize; 3] = [3, 5, 7];

#[derive(Clone, Debug, PartialEq)]
pub struct EanetConfig {
    pub base_channels: usize,
    pub enc_counts: [usize; 4],
    pub dec_counts: [usize; 4],
    pub mid_count: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub time_dim: usize,
}

impl Default for EanetConfig {
    fn default() -> Self {
        EanetConfig {
            base_channels: 64,
            enc_counts: [14, 1, 1, 1],
            dec_counts: [1, 1, 1, 1],
            mid_count: 1,
            in_channels: 3,
            out_channels: 3,
            time_dim: 256,
        }
    }
}

impl EanetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.base_channels > 0 && self.base_channels % 2 == 0, "base_channels must be even and positive");
        ensure!(
            self.enc_counts.iter().chain(&self.dec_counts).all(|&c| c >= 1) && self.mid_count >= 1,
            "all block counts must be >= 1"
        );
        ensure!(self.time_dim >= 2 && self.time_dim % 4 == 0, "time_dim must be a positive multiple of 4");
        ensure!(self.in_channels > 0 && self.out_channels > 0, "channel counts must be positive");
        Ok(())
    }

    /// Width at U-Net level `l` (0 = full resolution).
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Efficient activation block.
#[derive(Clone, Debug)]
pub struct Eab {
    channels: usize,
    time_dim: usize,
    pub norm1: (ParamId, ParamId),
    pub mlp_in: Conv2d,
    pub mlp_out: Conv2d,
    pub lift: Conv2d,
    pub dw: Vec<Conv2d>,
    pub sca: Vec<Conv2d>,
    pub merge: Conv2d,
    pub norm2: (ParamId, ParamId),
    pub ffn_in: Conv2d,
    pub ffn_out: Conv2d,
}

impl Eab {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        time_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(channels % 2 == 0, "EAB channels {channels} must be even");
        let c = channels;
        let norm = |store: &mut ParamStore<F>, which: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                store.add(format!("{name}.{which}.alpha"), Tensor::full([1, c, 1, 1], F::one()))?,
                store.add(format!("{name}.{which}.beta"), Tensor::zeros([1, c, 1, 1]))?,
            ))
        };
        let norm1 = norm(store, "norm1")?;
        let mlp_in = Conv2d::new(store, &format!("{name}.mlp_in"), time_dim, time_dim, 1, 1, 1, true, Init::He, rng)?;
        // zero start: α = 1, β = 0
        let mlp_out = Conv2d::new(store, &format!("{name}.mlp_out"), time_dim / 2, 4 * c, 1, 1, 1, true, Init::Zero, rng)?;
        let lift = Conv2d::new(store, &format!("{name}.lift"), c, 2 * c, 1, 1, 1, true, Init::He, rng)?;
        let mut dw = Vec::new();
        let mut sca = Vec::new();
        for k in DW_KERNELS {
            dw.push(Conv2d::new(store, &format!("{name}.dw{k}"), 2 * c, 2 * c, k, 1, 2 * c, true, Init::He, rng)?);
            sca.push(Conv2d::new(store, &format!("{name}.sca{k}"), c, c, 1, 1, 1, true, Init::He, rng)?);
        }
        let merge = Conv2d::new(store, &format!("{name}.merge"), 3 * c, c, 1, 1, 1, true, Init::Zero, rng)?;
        let norm2 = norm(store, "norm2")?;
        let ffn_in = Conv2d::new(store, &format!("{name}.ffn_in"), c, 2 * c, 1, 1, 1, true, Init::He, rng)?;
        let ffn_out = Conv2d::new(store, &format!("{name}.ffn_out"), c, c, 1, 1, 1, true, Init::Zero, rng)?;
        Ok(Eab { channels, time_dim, norm1, mlp_in, mlp_out, lift, dw, sca, merge, norm2, ffn_in, ffn_out })
    }

    /// `t_emb` is `(N, time_dim, 1, 1)`; `None` bypasses the time modulation.
    pub fn forward<F: Float>(&self, g: &mut Graph<'_, F>, x: Var, t_emb: Option<Var>) -> Result<Var> {
        let [n, c, _, _] = g.shape(x);
        ensure!(c == self.channels, "EAB expects {} channels, got {c}", self.channels);
        let modulation = match t_emb {
            Some(te) => {
                let [tn, td, th, tw] = g.shape(te);
                ensure!(
                    tn == n && td == self.time_dim && th == 1 && tw == 1,
                    "EAB time embedding {:?}, expected [{n}, {}, 1, 1]",
                    g.shape(te),
                    self.time_dim
                );
                let h = self.mlp_in.forward(g, te)?;
                let h = g.simple_gate(h)?;
                let m = self.mlp_out.forward(g, h)?;
                let one = g.constant(Tensor::full([n, c, 1, 1], F::one()));
                let mut parts = Vec::with_capacity(4);
                for i in 0..4 {
                    parts.push(g.slice_channels(m, i * c, c)?);
                }
                let a1 = g.add(parts[0], one)?;
                let a2 = g.add(parts[2], one)?;
                Some((a1, parts[1], a2, parts[3]))
            }
            None => None,
        };

        let eps = F::of(NORM_EPS);
        let p1a = g.param(self.norm1.0);
        let p1b = g.param(self.norm1.1);
        let mut h = g.layer_norm_channel(x, p1a, p1b, eps)?;
        if let Some((a1, b1, _, _)) = modulation {
            h = g.scale_channels(h, a1)?;
            h = g.shift_channels(h, b1)?;
        }
        let f = self.lift.forward(g, h)?;
        let mut branches = Vec::with_capacity(3);
        for (dw, sca) in self.dw.iter().zip(&self.sca) {
            let b = dw.forward(g, f)?;
            let b = g.simple_gate(b)?;
            branches.push(simple_channel_attention(g, b, sca)?);
        }
        let cat = g.concat(&branches)?;
        let merged = self.merge.forward(g, cat)?;
        let y = g.add(x, merged)?;

        let p2a = g.param(self.norm2.0);
        let p2b = g.param(self.norm2.1);
        let mut h = g.layer_norm_channel(y, p2a, p2b, eps)?;
        if let Some((_, _, a2, b2)) = modulation {
            h = g.scale_channels(h, a2)?;
            h = g.shift_channels(h, b2)?;
        }
        let h = self.ffn_in.forward(g, h)?;
        let h = g.simple_gate(h)?;
        let h = self.ffn_out.forward(g, h)?;
        g.add(y, h)
    }
}

/// Global average pool, one 1×1 convolution, channel-wise rescale.
pub fn simple_channel_attention<F: Float>(g: &mut Graph<'_, F>, x: Var, conv: &Conv2d) -> Result<Var> {
    let a = g.global_avg_pool(x)?;
    let a = conv.forward(g, a)?;
    g.scale_channels(x, a)
}

#[derive(Clone, Debug)]
pub struct Eanet {
    pub config: EanetConfig,
    pub stem: Conv2d,
    pub encoders: Vec<Vec<Eab>>,
    pub downs: Vec<Conv2d>,
    pub middle: Vec<Eab>,
    pub ups: Vec<Conv2d>,
    pub decoders: Vec<Vec<Eab>>,
    pub head: Conv2d,
}

impl Eanet {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        config: &EanetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let td = config.time_dim;
        let ch = |l| config.level_channels(l);
        let stem = Conv2d::new(store, &format!("{name}.stem"), config.in_channels, ch(0), 3, 1, 1, true, Init::He, rng)?;
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        for level in 0..4 {
            let blocks = (0..config.enc_counts[level])
                .map(|i| Eab::new(store, &format!("{name}.enc.{level}.{i}"), ch(level), td, rng))
                .collect::<Result<Vec<_>>>()?;
            encoders.push(blocks);
            if level < 3 {
                downs.push(Conv2d::new(store, &format!("{name}.down.{level}"), ch(level), ch(level + 1), 2, 2, 1, true, Init::He, rng)?);
            }
        }
        let middle = (0..config.mid_count)
            .map(|i| Eab::new(store, &format!("{name}.mid.{i}"), ch(3), td, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for level in 0..4 {
            if level < 3 {
                ups.push(Conv2d::new(store, &format!("{name}.up.{level}"), ch(level + 1), 2 * ch(level + 1), 1, 1, 1, false, Init::He, rng)?);
            }
            let blocks = (0..config.dec_counts[level])
                .map(|i| Eab::new(store, &format!("{name}.dec.{level}.{i}"), ch(level), td, rng))
                .collect::<Result<Vec<_>>>()?;
            decoders.push(blocks);
        }
        let head = Conv2d::new(store, &format!("{name}.head"), ch(0), config.out_channels, 3, 1, 1, true, Init::Zero, rng)?;
        Ok(Eanet { config: config.clone(), stem, encoders, downs, middle, ups, decoders, head })
    }

    /// Predicted noise for condition `cond` at per-item steps `steps`.
    pub fn forward<F: Float>(&self, g: &mut Graph<'_, F>, cond: Var, steps: &[usize]) -> Result<Var> {
        let [n, c, h, w] = g.shape(cond);
        ensure!(c == self.config.in_channels, "eanet expects {} input channels, got {c}", self.config.in_channels);
        ensure!(
            h % 8 == 0 && w % 8 == 0 && h > 0 && w > 0,
            "eanet: spatial size {h}x{w} must be divisible by 8"
        );
        ensure!(steps.len() == n, "eanet: {} steps for batch {n}", steps.len());
        let te = g.constant(time_embedding_batch(steps, self.config.time_dim)?);

        let mut x = self.stem.forward(g, cond)?;
        let mut skips = Vec::with_capacity(4);
        for level in 0..4 {
            for block in &self.encoders[level] {
                x = block.forward(g, x, Some(te))?;
            }
            skips.push(x);
            if level < 3 {
                x = self.downs[level].forward(g, x)?;
            }
        }
        for block in &self.middle {
            x = block.forward(g, x, Some(te))?;
        }
        for level in (0..4).rev() {
            if level < 3 {
                x = self.ups[level].forward(g, x)?;
                x = g.pixel_shuffle(x, 2)?;
            }
            x = g.add(x, skips[level])?;
            for block in &self.decoders[level] {
                x = block.forward(g, x, Some(te))?;
            }
        }
        self.head.forward(g, x)
    }

    /// Every EAB in the network, encoder first.
    pub fn blocks(&self) -> impl Iterator<Item = &Eab> {
        self.encoders.iter().flatten().chain(&self.middle).chain(self.decoders.iter().flatten())
    }
}

/// Sum of parameter element counts.
pub fn count_parameters<F: Float>(store: &ParamStore<F>) -> usize {
    store.numel()
}
