//! Discrete noise schedule of the mean-reverting SDE
//! `dx = λ_t (μ − x) dt + φ_t dw` with `φ_t² = 2 δ² λ_t`.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};

/// Target terminal mean coefficient `exp(−λ̄_T)`.
pub const TERMINAL_MEAN_COEFF: f64 = 0.005;

/// Default stationary standard deviation on `[0, 1]` images.
pub const DEFAULT_DELTA: f64 = 50.0 / 255.0;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_RAMP_RATIO: f64 = 10.0;

/// Functional form of `λ_t` before rescaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleShape {
    /// `λ_t` grows linearly so that `λ_T / λ_1 = ratio`.
    Linear { ratio: f64 },
    Constant,
}

impl Default for ScheduleShape {
    fn default() -> Self {
        ScheduleShape::Linear { ratio: DEFAULT_RAMP_RATIO }
    }
}

impl fmt::Display for ScheduleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleShape::Linear { .. } => f.write_str("linear"),
            ScheduleShape::Constant => f.write_str("constant"),
        }
    }
}

impl FromStr for ScheduleShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleShape::default()),
            "constant" => Ok(ScheduleShape::Constant),
            other => Err(Error::invalid(format!("unknown schedule shape {other:?} (expected linear|constant)"))),
        }
    }
}

/// Immutable per-step coefficients. Step indices run `0..=T`; per-step
/// quantities (`λ_t`, `φ_t²`, `λ'_t`) are defined for `t ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    delta: f64,
    shape: ScheduleShape,
    /// `lambda[t - 1] = λ_t`.
    lambda: Vec<f64>,
    /// `lambda_bar[t] = λ̄_t`, `lambda_bar[0] = 0`.
    lambda_bar: Vec<f64>,
    /// `lambda_prime[t - 1] = λ̄_t − λ̄_{t−1}`.
    lambda_prime: Vec<f64>,
    /// `phi_sq[t - 1] = 2 δ² λ_t`.
    phi_sq: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule whose cumulative rate reaches `−ln(0.005)` at `T`.
    pub fn build(steps: usize, delta: f64, shape: ScheduleShape) -> Result<Self> {
        ensure!(steps >= 1, "schedule needs at least one step");
        ensure!(delta > 0.0 && delta.is_finite(), "delta must be positive, got {delta}");
        let raw: Vec<f64> = match shape {
            ScheduleShape::Constant => vec![1.0; steps],
            ScheduleShape::Linear { ratio } => {
                ensure!(ratio >= 1.0 && ratio.is_finite(), "ramp ratio must be >= 1, got {ratio}");
                if steps == 1 {
                    vec![1.0]
                } else {
                    (0..steps).map(|i| 1.0 + (ratio - 1.0) * i as f64 / (steps - 1) as f64).collect()
                }
            }
        };
        let target = -TERMINAL_MEAN_COEFF.ln();
        let total: f64 = raw.iter().sum();
        let lambda: Vec<f64> = raw.iter().map(|r| r * target / total).collect();

        let mut lambda_bar = Vec::with_capacity(steps + 1);
        lambda_bar.push(0.0);
        let mut acc = 0.0;
        for &l in &lambda {
            acc += l;
            lambda_bar.push(acc);
        }
        let lambda_prime = lambda_bar.windows(2).map(|w| w[1] - w[0]).collect();
        let phi_sq = lambda.iter().map(|l| 2.0 * delta * delta * l).collect();
        Ok(NoiseSchedule { steps, delta, shape, lambda, lambda_bar, lambda_prime, phi_sq })
    }

    pub fn default_schedule() -> Self {
        Self::build(DEFAULT_STEPS, DEFAULT_DELTA, ScheduleShape::default()).expect("default schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn shape(&self) -> ScheduleShape {
        self.shape
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::IndexOutOfRange { index: t, max: self.steps });
        }
        Ok(())
    }

    fn check_step(&self, t: usize) -> Result<()> {
        self.check(t)?;
        if t == 0 {
            return Err(Error::IndexOutOfRange { index: 0, max: self.steps });
        }
        Ok(())
    }

    /// `λ_t` for `1 ≤ t ≤ T`.
    pub fn lambda(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.lambda[t - 1])
    }

    /// `λ̄_t` for `0 ≤ t ≤ T`.
    pub fn lambda_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.lambda_bar[t])
    }

    /// `λ'_t = λ̄_t − λ̄_{t−1}`.
    pub fn lambda_prime(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.lambda_prime[t - 1])
    }

    /// `φ_t² = 2 δ² λ_t`.
    pub fn phi_sq(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.phi_sq[t - 1])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambda
    }
    pub fn lambda_bars(&self) -> &[f64] {
        &self.lambda_bar
    }

    /// `c_t = exp(−λ̄_t)`, the decay of `x_0 − μ` in the marginal mean.
    pub fn mean_coeff(&self, t: usize) -> Result<f64> {
        Ok((-self.lambda_bar(t)?).exp())
    }

    /// `n_t = δ² (1 − exp(−2 λ̄_t))`.
    pub fn variance(&self, t: usize) -> Result<f64> {
        Ok(self.delta * self.delta * -(-2.0 * self.lambda_bar(t)?).exp_m1())
    }

    /// Weights `(a_t, b_t)` of the one-step posterior mean
    /// `x*_{t−1} = a_t (x_t − μ) + b_t (x_0 − μ) + μ`.
    pub fn posterior_coeffs(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        Ok(posterior_coeffs_from(self.lambda_bar[t - 1], self.lambda_bar[t]))
    }

    /// Rate integrated over `(t_prev, t]`: `Σ λ_z`. Equals `λ_t` for
    /// consecutive steps.
    pub fn lambda_between(&self, t_prev: usize, t: usize) -> Result<f64> {
        self.check(t)?;
        ensure!(t_prev < t, "lambda_between: {t_prev} must precede {t}");
        if t_prev + 1 == t {
            return Ok(self.lambda[t - 1]);
        }
        Ok(self.lambda[t_prev..t].iter().sum())
    }

    /// `steps + 1` increasing step indices `0 = t_0 < … < t_S = T` spaced as
    /// evenly as the integer grid allows.
    pub fn respaced(&self, steps: usize) -> Result<Vec<usize>> {
        ensure!(
            (1..=self.steps).contains(&steps),
            "sampling steps {steps} outside 1..={}",
            self.steps
        );
        Ok((0..=steps)
            .map(|j| ((j * self.steps) as f64 / steps as f64).round() as usize)
            .collect())
    }
}

/// Posterior weights for a step from cumulative rate `bar_prev` to `bar_t`.
/// A zero-length step returns `(1, 0)`.
pub fn posterior_coeffs_from(bar_prev: f64, bar_t: f64) -> (f64, f64) {
    let step = bar_t - bar_prev;
    if step <= 0.0 {
        return (1.0, 0.0);
    }
    // 1 − e^{−2x}, accurate for small x
    let one_minus = |x: f64| -(-2.0 * x).exp_m1();
    let denom = one_minus(bar_t);
    let a = one_minus(bar_prev) / denom * (-step).exp();
    let b = one_minus(step) / denom * (-bar_prev).exp();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_constant_step_carries_full_integral() {
        let s = NoiseSchedule::build(1, 0.2, ScheduleShape::Constant).unwrap();
        let target = -(0.005f64).ln();
        assert!((s.lambda(1).unwrap() - target).abs() < 1e-12);
        assert!((s.lambda_bar(1).unwrap() - 5.298317366548036).abs() < 1e-9);
    }

    #[test]
    fn default_schedule_reaches_terminal_target() {
        let s = NoiseSchedule::build(100, 50.0 / 255.0, ScheduleShape::default()).unwrap();
        let summed: f64 = s.lambdas().iter().sum();
        assert!((summed - 5.298317366548036).abs() < 1e-9);
        assert!((s.mean_coeff(100).unwrap() - 0.005).abs() < 1e-9);
        let l = s.lambdas();
        assert!((l[99] / l[0] - 10.0).abs() < 1e-9);
        assert!(l.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn phi_sq_follows_constraint() {
        let s = NoiseSchedule::build(7, 0.2, ScheduleShape::default()).unwrap();
        for t in 1..=7 {
            let l = s.lambda(t).unwrap();
            assert_eq!(s.phi_sq(t).unwrap(), 2.0 * 0.2 * 0.2 * l);
        }
        // direct substitution with λ = 0.1
        assert!((2.0f64 * 0.2 * 0.2 * 0.1 - 0.008).abs() < 1e-15);
    }

    #[test]
    fn telescoping_and_invariants() {
        let s = NoiseSchedule::default_schedule();
        let mut acc = 0.0;
        for t in 1..=s.steps() {
            acc += s.lambda(t).unwrap();
            assert_eq!(acc, s.lambda_bar(t).unwrap());
            assert_eq!(
                s.lambda_prime(t).unwrap(),
                s.lambda_bar(t).unwrap() - s.lambda_bar(t - 1).unwrap()
            );
            assert!(s.mean_coeff(t).unwrap() < s.mean_coeff(t - 1).unwrap());
            assert!(s.variance(t).unwrap() > s.variance(t - 1).unwrap());
        }
        assert_eq!(s.lambda_bar(0).unwrap(), 0.0);
        assert!(s.mean_coeff(100).unwrap() <= 0.005 + 1e-12);
        assert!(s.variance(100).unwrap() / (s.delta() * s.delta()) >= 0.99997);
    }

    #[test]
    fn coefficient_endpoints() {
        let s = NoiseSchedule::build(10, 0.2, ScheduleShape::default()).unwrap();
        assert_eq!(s.mean_coeff(0).unwrap(), 1.0);
        assert_eq!(s.variance(0).unwrap(), 0.0);
        let s2 = NoiseSchedule::build(100, 0.2, ScheduleShape::default()).unwrap();
        assert!((s2.variance(100).unwrap() - 0.04 * (1.0 - 0.005f64.powi(2))).abs() < 1e-12);
        for t in 0..=10 {
            let c = s.mean_coeff(t).unwrap();
            let n = s.variance(t).unwrap();
            assert!((n - 0.04 * (1.0 - c * c)).abs() < 1e-12);
            assert!(n < 0.04);
        }
    }

    #[test]
    fn posterior_coefficient_limits() {
        assert_eq!(posterior_coeffs_from(1.3, 1.3), (1.0, 0.0));
        let (a, b) = posterior_coeffs_from(1.3, 1.3 + 1e-12);
        assert!((a - 1.0).abs() < 1e-9 && b.abs() < 1e-9);
        let s = NoiseSchedule::default_schedule();
        let (a1, b1) = s.posterior_coeffs(1).unwrap();
        assert_eq!(a1, 0.0);
        assert!((b1 - 1.0).abs() < 1e-15);
        for t in 1..=100 {
            let (a, b) = s.posterior_coeffs(t).unwrap();
            assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn errors() {
        assert!(NoiseSchedule::build(0, 0.2, ScheduleShape::Constant).is_err());
        assert!(NoiseSchedule::build(10, 0.0, ScheduleShape::Constant).is_err());
        assert!(NoiseSchedule::build(10, -1.0, ScheduleShape::Constant).is_err());
        let s = NoiseSchedule::default_schedule();
        assert!(matches!(s.mean_coeff(101), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(s.variance(101), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(s.posterior_coeffs(0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn respacing_covers_the_grid() {
        let s = NoiseSchedule::default_schedule();
        let r = s.respaced(10).unwrap();
        assert_eq!(r.len(), 11);
        assert_eq!(r[0], 0);
        assert_eq!(*r.last().unwrap(), 100);
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(s.respaced(100).unwrap(), (0..=100).collect::<Vec<_>>());
        assert!(s.respaced(0).is_err());
        assert!(s.respaced(101).is_err());
    }
}
