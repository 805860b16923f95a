//! Maximum-likelihood objective: the network's noise estimate is turned
//! into a drift-only reverse step, which is compared with the closed-form
//! posterior mean of the previous state.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::model::Denoiser;
use crate::nn::{Float, Graph, Tensor, Var};
use crate::schedule::NoiseSchedule;
use crate::sde;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossNorm {
    #[default]
    L1,
    L2,
}

impl FromStr for LossNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossNorm::L1),
            "l2" => Ok(LossNorm::L2),
            _ => Err(Error::invalid(format!("loss_norm must be l1 or l2, got '{s}'"))),
        }
    }
}

impl fmt::Display for LossNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossNorm::L1 => "l1",
            LossNorm::L2 => "l2",
        })
    }
}

/// HR target, LR input and its bicubic upsample, batched.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F> {
    pub x0: Tensor<F>,
    pub v: Tensor<F>,
    pub mu: Tensor<F>,
}

/// Everything the loss needs besides the network output.
///
/// The predicted previous state is `x_t − λ_t(μ − x_t) − k_t ε̄`, with
/// `k_t = φ_t² / √n_t`; `offset` holds `x_t − λ_t(μ − x_t) − x*_{t−1}` so the
/// residual is `offset − k_t ε̄`.
#[derive(Clone, Debug)]
pub struct LossTargets<F> {
    pub x_t: Tensor<F>,
    pub offset: Tensor<F>,
    pub noise_gain: Vec<F>,
    pub weights: Vec<F>,
}

impl<F: Float> LossTargets<F> {
    /// The noise prediction that makes the residual vanish.
    pub fn oracle_prediction(&self) -> Tensor<F> {
        let mut out = self.offset.clone();
        for (i, &k) in self.noise_gain.iter().enumerate() {
            out.item_mut(i).iter_mut().for_each(|v| *v /= k);
        }
        out
    }
}

/// Diffuses `batch.x0` to `steps` and computes the regression targets.
/// `gamma` holds per-step weights indexed by `t − 1`; empty means all ones.
pub fn prepare_targets<F: Float, R: Rng + ?Sized>(
    s: &NoiseSchedule,
    batch: &Batch<F>,
    steps: &[usize],
    gamma: &[f64],
    rng: &mut R,
) -> Result<LossTargets<F>> {
    ensure!(steps.iter().all(|&t| t >= 1), "training steps must be >= 1, got {steps:?}");
    ensure!(
        gamma.is_empty() || gamma.len() == s.steps(),
        "gamma has {} entries for {} steps",
        gamma.len(),
        s.steps()
    );
    let (x_t, _) = sde::forward_marginal_sample_batch(s, &batch.x0, &batch.mu, steps, rng)?;
    let target = sde::ideal_reverse_state_batch(s, &x_t, &batch.x0, &batch.mu, steps)?;
    let n = steps.len() as f64;
    let mut offset = Tensor::zeros(x_t.shape());
    let mut noise_gain = Vec::with_capacity(steps.len());
    let mut weights = Vec::with_capacity(steps.len());
    for (i, &t) in steps.iter().enumerate() {
        let lam = F::of(s.lambda(t)?);
        noise_gain.push(F::of(s.phi_sq(t)? / s.variance(t)?.sqrt()));
        weights.push(F::of(gamma.get(t - 1).copied().unwrap_or(1.0) / n));
        let (xt, mu, tg) = (x_t.item(i), batch.mu.item(i), target.item(i));
        for (j, o) in offset.item_mut(i).iter_mut().enumerate() {
            *o = xt[j] - lam * (mu[j] - xt[j]) - tg[j];
        }
    }
    Ok(LossTargets { x_t, offset, noise_gain, weights })
}

/// Loss for a noise prediction `eps` already on the tape.
pub fn loss_from_prediction<F: Float>(g: &mut Graph<'_, F>, eps: Var, targets: &LossTargets<F>, norm: LossNorm) -> Result<Var> {
    ensure!(g.shape(eps) == targets.offset.shape(), "prediction {:?} vs target {:?}", g.shape(eps), targets.offset.shape());
    let scaled = g.scale_items(eps, targets.noise_gain.clone())?;
    let offset = g.constant(targets.offset.clone());
    let resid = g.sub(offset, scaled)?;
    match norm {
        LossNorm::L1 => g.weighted_mean_abs(resid, targets.weights.clone()),
        LossNorm::L2 => g.weighted_mean_sq(resid, targets.weights.clone()),
    }
}

/// Full forward pass: diffuse, predict noise, score the implied reverse step.
#[allow(clippy::too_many_arguments)]
pub fn compute_ml_loss<F: Float, R: Rng + ?Sized>(
    g: &mut Graph<'_, F>,
    model: &Denoiser,
    s: &NoiseSchedule,
    batch: &Batch<F>,
    steps: &[usize],
    gamma: &[f64],
    norm: LossNorm,
    rng: &mut R,
) -> Result<Var> {
    let targets = prepare_targets(s, batch, steps, gamma, rng)?;
    let v = g.constant(batch.v.clone());
    let xt = g.constant(targets.x_t.clone());
    let mu = g.constant(batch.mu.clone());
    let eps = model.forward(g, v, xt, mu, steps)?;
    loss_from_prediction(g, eps, &targets, norm)
}
