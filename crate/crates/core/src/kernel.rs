//! Squared-exponential covariance shared by every agent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel and noise hyperparameters. These are fixed inputs; nothing here is trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// σ_κ², the prior variance of the latent function.
    pub signal_variance: f64,
    pub lengthscale: f64,
    /// σ_ω², measurement-noise variance (one value shared by all output dimensions).
    pub noise_variance: f64,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl KernelConfig {
    pub fn new(
        signal_variance: f64,
        lengthscale: f64,
        noise_variance: f64,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        let cfg = KernelConfig {
            signal_variance,
            lengthscale,
            noise_variance,
            input_dim,
            output_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_variance) {
            return Err(Error::invalid(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !positive(self.lengthscale) {
            return Err(Error::invalid(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !positive(self.noise_variance) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("input and output dimensions must be at least 1"));
        }
        Ok(())
    }

    /// κ(0) = κ(x, x).
    #[inline]
    pub fn prior_variance(&self) -> f64 {
        self.signal_variance
    }

    /// Prior variance of a noisy observation, κ(0) + σ_ω².
    #[inline]
    pub fn prior_predictive_variance(&self) -> f64 {
        self.signal_variance + self.noise_variance
    }

    #[inline]
    pub fn noise_std(&self) -> f64 {
        self.noise_variance.sqrt()
    }

    /// κ(x, x′) without a length check; callers guarantee both slices have `input_dim` entries.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        let sq: f64 = x
            .iter()
            .zip(x_prime)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum();
        self.signal_variance * (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    pub fn eval(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        self.check_input(x_prime)?;
        Ok(self.eval_unchecked(x, x_prime))
    }

    /// Lipschitz constant of κ with respect to either argument: σ_κ² / (ℓ √e).
    pub fn lipschitz_constant(&self) -> f64 {
        self.signal_variance / (self.lengthscale * std::f64::consts::E.sqrt())
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "input has length {}, expected {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn check_output(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.output_dim {
            return Err(Error::invalid(format!(
                "output has length {}, expected {}",
                y.len(),
                self.output_dim
            )));
        }
        Ok(())
    }
}

/// Kernel function of a single input against a set of stored inputs.
pub fn kernel_vector(cfg: &KernelConfig, x: &[f64], stored: &[Vec<f64>]) -> Vec<f64> {
    stored.iter().map(|p| cfg.eval_unchecked(x, p)).collect()
}
