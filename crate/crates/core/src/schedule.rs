//! Diffusion-process math: the linear-β noise schedule, forward corruption,
//! the `ρ → t'` mapping and the reverse (ancestral) update.
//!
//! Timesteps are 1-based: `t ∈ 1..=T`, with `ᾱ_0 ≡ 1` standing for the clean
//! latent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Choice of the per-step noise scale `σ_t` in the reverse update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// `σ_t² = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    #[default]
    Posterior,
    /// `σ_t = 0`.
    Deterministic,
}

impl SigmaMode {
    pub fn code(self) -> u8 {
        match self {
            SigmaMode::Posterior => 0,
            SigmaMode::Deterministic => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SigmaMode::Posterior),
            1 => Some(SigmaMode::Deterministic),
            _ => None,
        }
    }
}

/// A latent tensor of shape `C'×H'×W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    shape: [usize; 3],
    values: Vec<f64>,
}

impl LatentCode {
    pub fn new(shape: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::shape("LatentCode::new", shape, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Generation("non-finite latent value".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Elementwise `a·self + b·other`.
    pub(crate) fn axpby(&self, a: f64, other: &LatentCode, b: f64) -> LatentCode {
        LatentCode {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &LatentCode, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(context, self.shape, other.shape));
        }
        Ok(())
    }

    pub(crate) fn ensure_finite(self) -> Result<Self> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Generation("non-finite latent value".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    sigma_mode: SigmaMode,
    beta_start: f64,
    beta_end: f64,
}

/// Linear-β schedule with posterior σ.
pub fn build_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(timesteps, beta_start, beta_end, SigmaMode::Posterior)
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64, sigma_mode: SigmaMode) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::config("timesteps", "T ≥ 1 required"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(
                "beta_start",
                format!("need 0 < beta_start ≤ beta_end < 1, got {beta_start}, {beta_end}"),
            ));
        }
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sigmas = (0..timesteps)
            .map(|i| match sigma_mode {
                SigmaMode::Deterministic => 0.0,
                SigmaMode::Posterior => {
                    let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                    ((1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]).sqrt()
                }
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
            sigma_mode,
            beta_start,
            beta_end,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    pub fn beta_bounds(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::OutOfRange {
                what: "timestep",
                detail: format!("{t} not in 1..={}", self.timesteps()),
            });
        }
        Ok(())
    }

    /// `β_t` for `t ∈ 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// `z_t = √ᾱ_t · z0 + √(1−ᾱ_t) · ε`.
pub fn forward_noise(z0: &LatentCode, t: usize, eps: &LatentCode, schedule: &NoiseSchedule) -> Result<LatentCode> {
    schedule.check_step(t)?;
    z0.ensure_same_shape(eps, "forward_noise")?;
    let ab = schedule.alpha_bar(t);
    Ok(z0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt()))
}

/// `t' = round(ρ·T)` clamped to `[0, T]`; `t' = 0` means no corruption.
pub fn rho_to_step(rho: f64, timesteps: usize) -> usize {
    let t = (rho.clamp(0.0, 1.0) * timesteps as f64).round();
    (t as usize).min(timesteps)
}

/// One ancestral reverse update from `t` to `t − 1`:
/// `(z_t − (1−α_t)/√(1−ᾱ_t) · ε_pred) / √α_t + σ_t ε'`.
///
/// At `t = 1` the noise term is dropped and the result is the clean latent.
pub fn reverse_step(
    z_t: &LatentCode,
    t: usize,
    eps_pred: &LatentCode,
    schedule: &NoiseSchedule,
    eps_prime: Option<&LatentCode>,
) -> Result<LatentCode> {
    schedule.check_step(t)?;
    z_t.ensure_same_shape(eps_pred, "reverse_step")?;
    let alpha = schedule.alpha(t);
    let coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let mean = z_t.axpby(inv, eps_pred, -coef * inv);
    let sigma = if t == 1 { 0.0 } else { schedule.sigma(t) };
    if sigma == 0.0 {
        return mean.ensure_finite();
    }
    let noise = eps_prime
        .ok_or_else(|| Error::InvalidInput(format!("reverse_step at t={t} needs ε' because σ_t = {sigma}")))?;
    mean.ensure_same_shape(noise, "reverse_step ε'")?;
    mean.axpby(1.0, noise, sigma).ensure_finite()
}

/// Deterministic jump from `t` to an earlier step `s` through the predicted
/// clean latent: `ẑ0 = (z_t − √(1−ᾱ_t) ε_pred)/√ᾱ_t`, then
/// `z_s = √ᾱ_s ẑ0 + √(1−ᾱ_s) ε_pred`. `s = 0` returns `ẑ0`.
pub fn rescale_step(
    z_t: &LatentCode,
    t: usize,
    s: usize,
    eps_pred: &LatentCode,
    schedule: &NoiseSchedule,
) -> Result<LatentCode> {
    schedule.check_step(t)?;
    if s >= t {
        return Err(Error::OutOfRange {
            what: "target step",
            detail: format!("{s} must be below {t}"),
        });
    }
    z_t.ensure_same_shape(eps_pred, "rescale_step")?;
    let ab_t = schedule.alpha_bar(t);
    let z0 = z_t.axpby(1.0 / ab_t.sqrt(), eps_pred, -(1.0 - ab_t).sqrt() / ab_t.sqrt());
    if s == 0 {
        return z0.ensure_finite();
    }
    let ab_s = schedule.alpha_bar(s);
    z0.axpby(ab_s.sqrt(), eps_pred, (1.0 - ab_s).sqrt()).ensure_finite()
}

/// `n_steps` strictly decreasing timesteps starting at `t'`.
///
/// Step `i` is `max(round(t'·(n−1−i)/(n−1)), n−i)`: uniform rounding on the
/// grid from `t'` to 0, lifted so the sequence always ends at 1. A single
/// step returns `[t']`.
pub fn make_step_sequence(t_start: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > t_start {
        return Err(Error::OutOfRange {
            what: "n_steps",
            detail: format!("need 1 ≤ n_steps ≤ t' = {t_start}, got {n_steps}"),
        });
    }
    if n_steps == 1 {
        return Ok(vec![t_start]);
    }
    let span = (n_steps - 1) as f64;
    Ok((0..n_steps)
        .map(|i| {
            let uniform = (t_start as f64 * (n_steps - 1 - i) as f64 / span).round() as usize;
            uniform.max(n_steps - i)
        })
        .collect())
}
