//! SDE mathematics on image tensors: closed-form marginals, an Euler–Maruyama
//! path simulator used as an oracle, conditional scores, reverse steps and the
//! one-step posterior mean.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};
use crate::nn::{Float, Tensor};
use crate::schedule::NoiseSchedule;

/// Current reverse-time state.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState<F> {
    pub x: Tensor<F>,
    pub t: usize,
}

fn same_shape<F: Float>(a: &Tensor<F>, b: &Tensor<F>, what: &str) -> Result<()> {
    ensure!(a.shape() == b.shape(), "{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    Ok(())
}

fn normal<F: Float, R: Rng + ?Sized>(rng: &mut R) -> F {
    F::of(rng.sample::<f64, _>(StandardNormal))
}

/// Marginal mean `m_t = μ + c_t (x_0 − μ)`.
pub fn marginal_mean<F: Float>(s: &NoiseSchedule, x0: &Tensor<F>, mu: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
    same_shape(x0, mu, "marginal_mean")?;
    let c = F::of(s.mean_coeff(t)?);
    x0.zip_map(mu, |x, m| m + c * (x - m))
}

/// Draws `x_t = m_t + √n_t ε` for a single step index shared by the batch.
pub fn forward_marginal_sample<F: Float, R: Rng + ?Sized>(
    s: &NoiseSchedule,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    t: usize,
    rng: &mut R,
) -> Result<(Tensor<F>, Tensor<F>)> {
    forward_marginal_sample_batch(s, x0, mu, &vec![t; x0.n()], rng)
}

/// As [`forward_marginal_sample`] with one step index per batch item.
pub fn forward_marginal_sample_batch<F: Float, R: Rng + ?Sized>(
    s: &NoiseSchedule,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    steps: &[usize],
    rng: &mut R,
) -> Result<(Tensor<F>, Tensor<F>)> {
    same_shape(x0, mu, "forward_marginal_sample")?;
    ensure!(steps.len() == x0.n(), "{} step indices for batch of {}", steps.len(), x0.n());
    let eps = Tensor::<F>::randn(x0.shape(), rng);
    let xt = reparameterize(s, x0, mu, &eps, steps)?;
    Ok((xt, eps))
}

/// `x_t = μ + c_t (x_0 − μ) + √n_t ε` for given noise.
pub fn reparameterize<F: Float>(
    s: &NoiseSchedule,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    eps: &Tensor<F>,
    steps: &[usize],
) -> Result<Tensor<F>> {
    same_shape(x0, mu, "reparameterize")?;
    same_shape(x0, eps, "reparameterize")?;
    ensure!(steps.len() == x0.n(), "{} step indices for batch of {}", steps.len(), x0.n());
    let mut out = Tensor::zeros(x0.shape());
    for (i, &t) in steps.iter().enumerate() {
        let c = F::of(s.mean_coeff(t)?);
        let sd = F::of(s.variance(t)?.sqrt());
        let (a, m, e) = (x0.item(i), mu.item(i), eps.item(i));
        for (j, o) in out.item_mut(i).iter_mut().enumerate() {
            *o = m[j] + c * (a[j] - m[j]) + sd * e[j];
        }
    }
    Ok(out)
}

/// Euler–Maruyama integration of the forward SDE from `x_0` to `x_T`, with
/// `substeps` sub-intervals per unit step and `λ`, `φ` held constant inside
/// each unit step. Every element evolves independently.
pub fn forward_path_simulate<F: Float, R: Rng + ?Sized>(
    s: &NoiseSchedule,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    substeps: usize,
    rng: &mut R,
) -> Result<Tensor<F>> {
    forward_path_simulate_with(s, x0, mu, substeps, true, rng)
}

/// [`forward_path_simulate`] with the diffusion term optionally switched off.
pub fn forward_path_simulate_with<F: Float, R: Rng + ?Sized>(
    s: &NoiseSchedule,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    substeps: usize,
    diffusion: bool,
    rng: &mut R,
) -> Result<Tensor<F>> {
    same_shape(x0, mu, "forward_path_simulate")?;
    ensure!(substeps >= 1, "substeps_per_step must be >= 1");
    let dt = 1.0 / substeps as f64;
    let mut x = x0.clone();
    for t in 1..=s.steps() {
        let l = F::of(s.lambda(t)? * dt);
        let g = F::of(if diffusion { (s.phi_sq(t)? * dt).sqrt() } else { 0.0 });
        for _ in 0..substeps {
            for (xv, &m) in x.data_mut().iter_mut().zip(mu.data()) {
                let mut next = *xv + l * (m - *xv);
                if diffusion {
                    next += g * normal::<F, R>(rng);
                }
                *xv = next;
            }
        }
    }
    Ok(x)
}

/// `∇ log p_t(x_t | x_0) = −(x_t − m_t) / n_t`.
pub fn conditional_score<F: Float>(
    s: &NoiseSchedule,
    x_t: &Tensor<F>,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    t: usize,
) -> Result<Tensor<F>> {
    same_shape(x_t, x0, "conditional_score")?;
    s.mean_coeff(t)?;
    if t == 0 {
        return Err(Error::SingularVariance);
    }
    let n = F::of(s.variance(t)?);
    let m = marginal_mean(s, x0, mu, t)?;
    x_t.zip_map(&m, |x, m| -(x - m) / n)
}

/// Noise that would produce `x_t` from `x_0`: `(x_t − m_t) / √n_t`.
pub fn true_noise<F: Float>(
    s: &NoiseSchedule,
    x_t: &Tensor<F>,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    t: usize,
) -> Result<Tensor<F>> {
    if t == 0 {
        return Err(Error::SingularVariance);
    }
    let sd = F::of(s.variance(t)?.sqrt());
    let m = marginal_mean(s, x0, mu, t)?;
    x_t.zip_map(&m, |x, m| (x - m) / sd)
}

/// One Euler–Maruyama step of the reverse SDE from `t` to `t − 1` with `dt = 1`:
/// `x_{t−1} = x_t − [λ_t (μ − x_t) − φ_t² score] + φ_t z`.
pub fn reverse_em_step<F: Float, R: Rng + ?Sized>(
    s: &NoiseSchedule,
    state: &DiffusionState<F>,
    mu: &Tensor<F>,
    score: &Tensor<F>,
    rng: &mut R,
    stochastic: bool,
) -> Result<DiffusionState<F>> {
    if state.t == 0 {
        return Err(Error::CannotStep);
    }
    reverse_em_step_to(s, state, state.t - 1, mu, score, rng, stochastic)
}

/// Reverse step from `state.t` directly to `t_prev` using the rate integrated
/// over the skipped interval.
pub fn reverse_em_step_to<F: Float, R: Rng + ?Sized>(
    s: &NoiseSchedule,
    state: &DiffusionState<F>,
    t_prev: usize,
    mu: &Tensor<F>,
    score: &Tensor<F>,
    rng: &mut R,
    stochastic: bool,
) -> Result<DiffusionState<F>> {
    if state.t == 0 {
        return Err(Error::CannotStep);
    }
    same_shape(&state.x, mu, "reverse_em_step")?;
    same_shape(&state.x, score, "reverse_em_step")?;
    let lam = s.lambda_between(t_prev, state.t)?;
    let phi_sq = 2.0 * s.delta() * s.delta() * lam;
    reverse_em_raw(&state.x, mu, score, lam, phi_sq, rng, stochastic).map(|x| DiffusionState { x, t: t_prev })
}

/// The Euler–Maruyama update for explicit `λ` and `φ²`.
pub fn reverse_em_raw<F: Float, R: Rng + ?Sized>(
    x: &Tensor<F>,
    mu: &Tensor<F>,
    score: &Tensor<F>,
    lambda: f64,
    phi_sq: f64,
    rng: &mut R,
    stochastic: bool,
) -> Result<Tensor<F>> {
    same_shape(x, mu, "reverse_em_raw")?;
    same_shape(x, score, "reverse_em_raw")?;
    let (l, p, g) = (F::of(lambda), F::of(phi_sq), F::of(phi_sq.sqrt()));
    let mut out = Tensor::zeros(x.shape());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let xv = x.data()[i];
        let drift = l * (mu.data()[i] - xv) - p * score.data()[i];
        *o = xv - drift;
        if stochastic {
            *o += g * normal::<F, R>(rng);
        }
    }
    Ok(out)
}

/// Closed-form one-step posterior mean
/// `x*_{t−1} = a_t (x_t − μ) + b_t (x_0 − μ) + μ`.
pub fn ideal_reverse_state<F: Float>(
    s: &NoiseSchedule,
    x_t: &Tensor<F>,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    t: usize,
) -> Result<Tensor<F>> {
    ideal_reverse_state_batch(s, x_t, x0, mu, &vec![t; x_t.n()])
}

/// [`ideal_reverse_state`] with one step index per batch item.
pub fn ideal_reverse_state_batch<F: Float>(
    s: &NoiseSchedule,
    x_t: &Tensor<F>,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    steps: &[usize],
) -> Result<Tensor<F>> {
    same_shape(x_t, x0, "ideal_reverse_state")?;
    same_shape(x_t, mu, "ideal_reverse_state")?;
    ensure!(steps.len() == x_t.n(), "{} step indices for batch of {}", steps.len(), x_t.n());
    let mut out = Tensor::zeros(x_t.shape());
    for (i, &t) in steps.iter().enumerate() {
        let (a, b) = s.posterior_coeffs(t)?;
        let (a, b) = (F::of(a), F::of(b));
        let (xt, x0i, m) = (x_t.item(i), x0.item(i), mu.item(i));
        for (j, o) in out.item_mut(i).iter_mut().enumerate() {
            *o = a * (xt[j] - m[j]) + b * (x0i[j] - m[j]) + m[j];
        }
    }
    Ok(out)
}

/// `E[x_{t−1} | x_t, x_0]` by combining the prior
/// `x_{t−1} | x_0 ~ N(μ + c_{t−1}(x_0 − μ), n_{t−1})` with the transition
/// `x_t | x_{t−1} ~ N(μ + γ (x_{t−1} − μ), δ²(1 − γ²))`, `γ = e^{−λ'_t}`,
/// through precision weighting. Shares no coefficients with
/// [`ideal_reverse_state`].
pub fn posterior_mean_oracle<F: Float>(
    s: &NoiseSchedule,
    x_t: &Tensor<F>,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    t: usize,
) -> Result<Tensor<F>> {
    same_shape(x_t, x0, "posterior_mean_oracle")?;
    same_shape(x_t, mu, "posterior_mean_oracle")?;
    s.posterior_coeffs(t)?;
    let prior_var = s.variance(t - 1)?;
    let prior_decay = s.mean_coeff(t - 1)?;
    let step = s.lambda_prime(t)?;
    Ok(posterior_mean_gaussian(x_t, x0, mu, prior_decay, prior_var, step, s.delta()))
}

/// Gaussian posterior mean for explicit prior decay/variance and step rate.
pub fn posterior_mean_gaussian<F: Float>(
    x_t: &Tensor<F>,
    x0: &Tensor<F>,
    mu: &Tensor<F>,
    prior_decay: f64,
    prior_var: f64,
    step_rate: f64,
    delta: f64,
) -> Tensor<F> {
    let gamma = (-step_rate).exp();
    let lik_var = delta * delta * (1.0 - gamma * gamma);
    let mut out = Tensor::zeros(x_t.shape());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let m = mu.data()[i].f64();
        let prior_dev = prior_decay * (x0.data()[i].f64() - m);
        let obs_dev = x_t.data()[i].f64() - m;
        // precision-weighted: (prior/Vp + γ obs/Vl) / (1/Vp + γ²/Vl), multiplied through by Vp·Vl
        let dev = if prior_var == 0.0 {
            prior_dev
        } else if lik_var == 0.0 {
            obs_dev / gamma
        } else {
            (lik_var * prior_dev + gamma * prior_var * obs_dev) / (lik_var + gamma * gamma * prior_var)
        };
        *o = F::of(m + dev);
    }
    out
}
