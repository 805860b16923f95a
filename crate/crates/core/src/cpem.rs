//! Conditional prior enhancement: fold the noisy HR state down to LR scale,
//! fuse it with the LR image through residual channel-attention blocks,
//! shuffle back up and add a cheap 3×3 skip over `[μ, x_t]`.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::nn::{Conv2d, Float, Graph, Init, ParamStore, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct CpemConfig {
    pub n_rcab: usize,
    pub channels: usize,
    pub scale: usize,
    pub ca_reduction: usize,
    /// When false the condition is only the skip convolution over `[μ, x_t]`.
    pub enabled: bool,
}

impl Default for CpemConfig {
    fn default() -> Self {
        CpemConfig { n_rcab: 5, channels: 64, scale: 4, ca_reduction: 16, enabled: true }
    }
}

impl CpemConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels > 0, "cpem channels must be positive");
        ensure!(self.ca_reduction > 0, "cpem ca_reduction must be positive");
        ensure!(
            self.channels % self.ca_reduction == 0,
            "cpem channels {} not divisible by ca_reduction {}",
            self.channels,
            self.ca_reduction
        );
        ensure!(matches!(self.scale, 2 | 4), "scale must be 2 or 4, got {}", self.scale);
        Ok(())
    }
}

/// conv → ReLU → conv → channel attention (reduce, ReLU, expand, sigmoid),
/// plus the block input.
#[derive(Clone, Debug)]
pub struct Rcab {
    channels: usize,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub ca_down: Conv2d,
    pub ca_up: Conv2d,
}

impl Rcab {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mid = (channels / reduction).max(1);
        Ok(Rcab {
            channels,
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, 1, true, Init::He, rng)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, 1, true, Init::He, rng)?,
            ca_down: Conv2d::new(store, &format!("{name}.ca_down"), channels, mid, 1, 1, 1, true, Init::He, rng)?,
            ca_up: Conv2d::new(store, &format!("{name}.ca_up"), mid, channels, 1, 1, 1, true, Init::He, rng)?,
        })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let c = g.shape(x)[1];
        ensure!(c == self.channels, "rcab expects {} channels, got {c}", self.channels);
        let h = self.conv1.forward(g, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h)?;
        let a = g.global_avg_pool(h)?;
        let a = self.ca_down.forward(g, a)?;
        let a = g.relu(a);
        let a = self.ca_up.forward(g, a)?;
        let a = g.sigmoid(a);
        let h = g.scale_channels(h, a)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct Cpem {
    pub config: CpemConfig,
    pub head: Conv2d,
    pub rcabs: Vec<Rcab>,
    pub tail: Conv2d,
}

impl Cpem {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        config: &CpemConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let r2 = config.scale * config.scale;
        let c = config.channels;
        let head = Conv2d::new(store, &format!("{name}.head"), 3 + 3 * r2, c, 3, 1, 1, true, Init::He, rng)?;
        let rcabs = (0..config.n_rcab)
            .map(|i| Rcab::new(store, &format!("{name}.rcab.{i}"), c, config.ca_reduction, rng))
            .collect::<Result<_>>()?;
        let tail = Conv2d::new(store, &format!("{name}.tail"), c, 3 * r2, 3, 1, 1, true, Init::He, rng)?;
        Ok(Cpem { config: config.clone(), head, rcabs, tail })
    }

    /// `v`: `(N, 3, h, w)`; `xt_folded`: `(N, 3r², h, w)`. Returns `(N, 3, rh, rw)`.
    pub fn forward<F: Float>(&self, g: &mut Graph<'_, F>, v: Var, xt_folded: Var) -> Result<Var> {
        let r = self.config.scale;
        let [vn, vc, vh, vw] = g.shape(v);
        let [fn_, fc, fh, fw] = g.shape(xt_folded);
        ensure!(vc == 3, "cpem: LR image must have 3 channels, got {vc}");
        ensure!(
            fn_ == vn && fc == 3 * r * r && fh == vh && fw == vw,
            "cpem: folded state {:?} does not match LR {:?} at scale {r}",
            g.shape(xt_folded),
            g.shape(v)
        );
        let x = g.concat(&[v, xt_folded])?;
        let x = self.head.forward(g, x)?;
        let shallow = g.relu(x);
        let mut h = shallow;
        for block in &self.rcabs {
            h = block.forward(g, h)?;
        }
        let deep = g.add(h, shallow)?;
        let out = self.tail.forward(g, deep)?;
        g.pixel_shuffle(out, r)
    }
}

/// Builds `I_t = CPEM(v, Fold(x_t)) + conv3×3([μ, x_t])`.
#[derive(Clone, Debug)]
pub struct ConditionAssembler {
    pub scale: usize,
    pub cpem: Option<Cpem>,
    pub skip: Conv2d,
}

impl ConditionAssembler {
    pub fn new<F: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        config: &CpemConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let cpem = if config.enabled { Some(Cpem::new(store, &format!("{name}.cpem"), config, rng)?) } else { None };
        let skip = Conv2d::new(store, &format!("{name}.skip"), 6, 3, 3, 1, 1, true, Init::He, rng)?;
        Ok(ConditionAssembler { scale: config.scale, cpem, skip })
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<'_, F>, v: Var, x_t: Var, mu: Var) -> Result<Var> {
        let r = self.scale;
        let [n, c, h, w] = g.shape(x_t);
        let [vn, vc, vh, vw] = g.shape(v);
        ensure!(g.shape(mu) == g.shape(x_t), "condition: μ {:?} vs x_t {:?}", g.shape(mu), g.shape(x_t));
        ensure!(c == 3 && vc == 3, "condition: images must have 3 channels");
        ensure!(
            vn == n && vh * r == h && vw * r == w,
            "condition: LR {:?} is not HR {:?} downscaled by {r}",
            g.shape(v),
            g.shape(x_t)
        );
        let cat = g.concat(&[mu, x_t])?;
        let skip = self.skip.forward(g, cat)?;
        match &self.cpem {
            Some(cpem) => {
                let folded = g.pixel_unshuffle(x_t, r)?;
                let prior = cpem.forward(g, v, folded)?;
                g.add(prior, skip)
            }
            None => Ok(skip),
        }
    }
}
