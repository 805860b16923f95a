//! Super-resolution by integrating the reverse SDE from `x_T` to `x_0`
//! with a learned (or oracle) noise estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::model::Denoiser;
use crate::nn::{Float, Graph, ParamStore, Tensor};
use crate::schedule::NoiseSchedule;
use crate::sde::{self, DiffusionState};
use crate::toolkit::resize::bicubic_resize;

/// Seed of the fixed starting noise used in deterministic mode.
pub const DETERMINISTIC_SEED: u64 = 0;

/// Anything that estimates the noise in `x_t`.
pub trait NoisePredictor<F: Float> {
    fn scale(&self) -> usize;
    fn predict(&self, v: &Tensor<F>, x_t: &Tensor<F>, mu: &Tensor<F>, t: usize) -> Result<Tensor<F>>;
}

/// A trained denoiser with its parameters.
pub struct ModelPredictor<'a, F: Float> {
    pub model: &'a Denoiser,
    pub store: &'a ParamStore<F>,
}

impl<F: Float> NoisePredictor<F> for ModelPredictor<'_, F> {
    fn scale(&self) -> usize {
        self.model.config.scale()
    }

    fn predict(&self, v: &Tensor<F>, x_t: &Tensor<F>, mu: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        let mut g = Graph::new(self.store);
        let (vv, xv, mv) = (g.constant(v.clone()), g.constant(x_t.clone()), g.constant(mu.clone()));
        let eps = self.model.forward(&mut g, vv, xv, mv, &vec![t; v.n()])?;
        Ok(g.value(eps).clone())
    }
}

/// Ground-truth noise `(x_t − m_t)/√n_t` given the clean image.
pub struct OraclePredictor<'a, F: Float> {
    pub schedule: &'a NoiseSchedule,
    pub x0: Tensor<F>,
    pub scale: usize,
}

impl<F: Float> NoisePredictor<F> for OraclePredictor<'_, F> {
    fn scale(&self) -> usize {
        self.scale
    }

    fn predict(&self, _v: &Tensor<F>, x_t: &Tensor<F>, mu: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        sde::true_noise(self.schedule, x_t, &self.x0, mu, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    /// Number of reverse steps; `None` uses every schedule step.
    pub steps: Option<usize>,
    /// Inject diffusion noise on every step but the last.
    pub stochastic: bool,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { steps: None, stochastic: true, seed: 0 }
    }
}

/// Raw reverse-chain result before export clamping.
pub fn reverse_chain<F: Float, P: NoisePredictor<F>>(
    predictor: &P,
    s: &NoiseSchedule,
    v: &Tensor<F>,
    mu: &Tensor<F>,
    config: &SampleConfig,
) -> Result<Tensor<F>> {
    let n_steps = config.steps.unwrap_or(s.steps());
    ensure!(n_steps >= 1 && n_steps <= s.steps(), "sampling steps {n_steps} outside 1..={}", s.steps());
    let grid = s.respaced(n_steps)?;
    // deterministic mode ignores the caller's seed entirely
    let seed = if config.stochastic { config.seed } else { DETERMINISTIC_SEED };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = F::of(s.delta());
    let z = Tensor::<F>::randn(mu.shape(), &mut rng);
    let x_t = mu.zip_map(&z, |m, e| m + delta * e)?;
    let mut state = DiffusionState { x: x_t, t: s.steps() };
    for j in (0..n_steps).rev() {
        let t_prev = grid[j];
        let eps = predictor.predict(v, &state.x, mu, state.t)?;
        let inv_sd = F::of(1.0 / s.variance(state.t)?.sqrt());
        let score = eps.map(|e| -e * inv_sd);
        let noisy = config.stochastic && t_prev > 0;
        state = sde::reverse_em_step_to(s, &state, t_prev, mu, &score, &mut rng, noisy)?;
        // keep a diverging network from poisoning later steps
        if !state.x.is_finite() {
            state.x = state.x.zip_map(mu, |x, m| if x.is_finite() { x } else { m })?;
        }
    }
    Ok(state.x)
}

/// Upscales `v` by the predictor's factor. Output lies in `[0, 1]`.
pub fn sample_sr<F: Float, P: NoisePredictor<F>>(
    predictor: &P,
    s: &NoiseSchedule,
    v: &Tensor<F>,
    config: &SampleConfig,
) -> Result<Tensor<F>> {
    let r = predictor.scale();
    let [_, c, h, w] = v.shape();
    ensure!(c == 3, "expected an RGB image, got {c} channels");
    let (hh, ww) = (h * r, w * r);
    if hh % 8 != 0 || ww % 8 != 0 {
        let pad = |x: usize| (8 - x % 8) % 8;
        return Err(Error::invalid(format!(
            "output size {hh}x{ww} must be divisible by 8; pad the LR input by {}x{} pixels (bottom x right) to {}x{}",
            pad(hh).div_ceil(r),
            pad(ww).div_ceil(r),
            h + pad(hh).div_ceil(r),
            w + pad(ww).div_ceil(r)
        )));
    }
    let mu = bicubic_resize(v, hh, ww)?;
    let x0 = reverse_chain(predictor, s, v, &mu, config)?;
    Ok(x0.map(|x| if x.is_finite() { x.max(F::zero()).min(F::one()) } else { F::zero() }))
}
