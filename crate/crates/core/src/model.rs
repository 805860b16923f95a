//! The full denoiser `f_ψ`: condition assembly followed by the noise predictor.

use rand::Rng;

use crate::cpem::{ConditionAssembler, CpemConfig};
use crate::eanet::{Eanet, EanetConfig};
use crate::error::Result;
use crate::nn::{Float, Graph, ParamStore, Var};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub eanet: EanetConfig,
    pub cpem: CpemConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.eanet.validate()?;
        self.cpem.validate()
    }

    pub fn scale(&self) -> usize {
        self.cpem.scale
    }

    /// Canonical text stored in checkpoints and compared on load.
    pub fn echo(&self) -> String {
        let e = &self.eanet;
        let c = &self.cpem;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "channels = {}\nenc_counts = {}\ndec_counts = {}\nmid_count = {}\ntime_dim = {}\n\
             cpem_enabled = {}\ncpem_rcabs = {}\ncpem_channels = {}\ncpem_reduction = {}\nscale = {}\n",
            e.base_channels,
            list(&e.enc_counts),
            list(&e.dec_counts),
            e.mid_count,
            e.time_dim,
            c.enabled,
            c.n_rcab,
            c.channels,
            c.ca_reduction,
            c.scale
        )
    }
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: ModelConfig,
    pub condition: ConditionAssembler,
    pub eanet: Eanet,
}

impl Denoiser {
    /// Registers all parameters in `store` with fresh initial values.
    pub fn new<F: Float, R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<F>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let condition = ConditionAssembler::new(store, "cond", &config.cpem, rng)?;
        let eanet = Eanet::new(store, "eanet", &config.eanet, rng)?;
        Ok(Denoiser { config: config.clone(), condition, eanet })
    }

    /// `ε̄_t = f_ψ(I_t, t)` with `I_t` assembled from `(v, x_t, μ)`.
    pub fn forward<F: Float>(&self, g: &mut Graph<'_, F>, v: Var, x_t: Var, mu: Var, steps: &[usize]) -> Result<Var> {
        let cond = self.condition.forward(g, v, x_t, mu)?;
        self.eanet.forward(g, cond, steps)
    }
}
