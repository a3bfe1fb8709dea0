//! Bregman divergences, training weights, the `t <-> sigma` reparameterization,
//! noise-level sampling and the preconditioning coefficients for `T = 1`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPS_CIN: f64 = 0.01;
pub const EPS_NOISE: f64 = 1e-5;
/// Largest time at which [`weight_synthetic`] is evaluated.
pub const WEIGHT_T_CAP: f64 = 1.0 - 1e-6;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `1/2 sum (a_i - b_i)^2`.
pub fn bregman_quadratic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
}

/// `sum a_i ln a_i - a_i ln b_i - a_i + b_i` with `0 ln 0 = 0`.
pub fn bregman_entropic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    let mut acc = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if !(bi > 0.0) {
            return Err(Error::Domain(format!("entropic divergence needs b > 0, got {bi}")));
        }
        if ai < 0.0 {
            return Err(Error::Domain(format!("entropic divergence needs a >= 0, got {ai}")));
        }
        acc += entropic_scalar(ai, bi);
    }
    Ok(acc)
}

/// Scalar entropic divergence; callers guarantee `a >= 0`, `b > 0`.
#[inline]
pub fn entropic_scalar(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return b;
    }
    // roundoff can push the value slightly below zero when a ~ b
    (a * (a / b).ln() - a + b).max(0.0)
}

/// `(1 - t)^{-1/2}` with `t` capped at `1 - 1e-6`.
pub fn weight_synthetic(t: f64) -> f64 {
    (1.0 - t.min(WEIGHT_T_CAP)).powf(-0.5)
}

/// `sigma = -ln(t + eps_noise)`.
pub fn sigma_of_t(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [0, 1]")));
    }
    Ok(-(t + EPS_NOISE).ln())
}

/// `t = exp(-sigma) - eps_noise`.
pub fn t_of_sigma(sigma: f64) -> Result<f64> {
    let lo = -(1.0 + EPS_NOISE).ln();
    let hi = -EPS_NOISE.ln();
    let slack = 1e-12;
    if !(sigma >= lo - slack && sigma <= hi + slack) {
        return Err(Error::Range(format!("sigma = {sigma} outside [{lo}, {hi}]")));
    }
    Ok(((-sigma).exp() - EPS_NOISE).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    UniformTime,
    TruncatedGaussianSigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    #[serde(default)]
    pub mode: NoiseMode,
    #[serde(default = "default_mu_sigma")]
    pub mu_sigma: f64,
    #[serde(default = "default_gamma_sigma")]
    pub gamma_sigma: f64,
}

fn default_mu_sigma() -> f64 {
    2.0
}

fn default_gamma_sigma() -> f64 {
    1.0
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            mode: NoiseMode::UniformTime,
            mu_sigma: default_mu_sigma(),
            gamma_sigma: default_gamma_sigma(),
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.mode == NoiseMode::TruncatedGaussianSigma
            && !(self.gamma_sigma > 0.0 && self.gamma_sigma.is_finite() && self.mu_sigma.is_finite())
        {
            return Err(Error::Parameter(format!(
                "truncated Gaussian schedule needs finite mu_sigma and gamma_sigma > 0, got ({}, {})",
                self.mu_sigma, self.gamma_sigma
            )));
        }
        Ok(())
    }
}

/// Draws `(t, sigma)` from the schedule.
pub fn sample_noise_level<R: Rng + ?Sized>(schedule: &NoiseSchedule, rng: &mut R) -> (f64, f64) {
    match schedule.mode {
        NoiseMode::UniformTime => {
            let t: f64 = rng.random();
            (t, -(t + EPS_NOISE).ln())
        }
        NoiseMode::TruncatedGaussianSigma => {
            let hi = -EPS_NOISE.ln();
            let normal = Normal::new(schedule.mu_sigma, schedule.gamma_sigma)
                .expect("validated schedule");
            loop {
                let s = normal.sample(rng);
                if (0.0..=hi).contains(&s) {
                    return (((-s).exp() - EPS_NOISE).clamp(0.0, 1.0), s);
                }
            }
        }
    }
}

/// Preconditioning constants derived from the data mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preconditioner {
    pub mu_data: f64,
    pub sigma2_data: f64,
    pub eps_cin: f64,
}

impl Preconditioner {
    pub fn new(mu_data: f64, sigma2_data: f64) -> Result<Self> {
        if !(sigma2_data > 0.0 && sigma2_data.is_finite()) || !(mu_data >= 0.0) {
            return Err(Error::Parameter(format!(
                "preconditioning needs mu >= 0 and sigma2 > 0, got ({mu_data}, {sigma2_data})"
            )));
        }
        Ok(Self {
            mu_data,
            sigma2_data,
            eps_cin: EPS_CIN,
        })
    }

    pub fn with_eps_cin(mut self, eps: f64) -> Self {
        self.eps_cin = eps;
        self
    }

    pub fn coeffs(&self, t: f64) -> PrecondCoeffs {
        let (mu, s2, eps) = (self.mu_data, self.sigma2_data, self.eps_cin);
        let var_t = mu * t * (1.0 - t) + s2 * t * t;
        let c_in = 1.0 / (var_t + eps).sqrt();
        let s_in = -mu / s2.sqrt();
        let denom = mu * (1.0 - t) + s2 * t;
        let c_skip = s2 / denom;
        let c_out = (s2 * mu * (1.0 - t) / denom).max(0.0).sqrt();
        let bias = mu - c_skip * mu * t;
        let w_sq = 1.0 / (c_out * c_out + bias * bias + eps);
        PrecondCoeffs {
            c_in,
            s_in,
            c_skip,
            c_out,
            w_sq,
        }
    }
}

/// Coefficients of `m = c_skip x + c_out F(c_in x + s_in, sigma)` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondCoeffs {
    pub c_in: f64,
    pub s_in: f64,
    pub c_skip: f64,
    pub c_out: f64,
    pub w_sq: f64,
}

pub fn precond_coeffs(t: f64, mu_data: f64, sigma2_data: f64) -> Result<PrecondCoeffs> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [0, 1]")));
    }
    Ok(Preconditioner::new(mu_data, sigma2_data)?.coeffs(t))
}

/// Affine minimizer `b = b_skip x_t + b_out mu_data` of `E|X_1 - b|^2`.
pub fn baseline_affine(t: f64, mu_data: f64, sigma2_data: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [0, 1]")));
    }
    if !(sigma2_data > 0.0) {
        return Err(Error::Parameter(format!("sigma2 must be positive, got {sigma2_data}")));
    }
    let b_skip = sigma2_data / (mu_data * (1.0 - t) + sigma2_data * t);
    Ok((b_skip, 1.0 - t * b_skip))
}
