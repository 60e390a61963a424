//! Reparameterizable conditionals `q(z | eps)`.
//!
//! Two things are required of a conditional: sampling as `z = h(u; eps)` for
//! parameter-free noise `u`, and a closed-form `grad_z log q(z | eps)`. The
//! diagonal Gaussian covers every experiment; the exponential-family form
//! only exposes the score in `z`, which is all the entropy term needs.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean and (diagonal) standard deviation of a Gaussian conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCondParams {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl GaussianCondParams {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        check_dim("conditional scale", mean.len(), scale.len())?;
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "conditional scale must be positive, got {s}"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("conditional mean"));
        }
        Ok(Self { mean, scale })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `z = mean + scale * u`.
    pub fn reparameterize(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("reparameterization noise", self.dim(), u.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.scale)
            .zip(u)
            .map(|((m, s), u)| m + s * u)
            .collect())
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        check_dim("conditional log-density point", self.dim(), z.len())?;
        Ok(diag_gaussian_log_density(z, &self.mean, &self.scale))
    }

    /// `-(z - mean) / scale^2`.
    pub fn grad_log_density_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("conditional score point", self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((z, m), s)| -(z - m) / (s * s))
            .collect())
    }

    /// The same Gaussian written with sufficient statistics `(z, z^2)`.
    pub fn to_natural(&self) -> ExpFamCondParams {
        let d = self.dim();
        let mut eta = Vec::with_capacity(2 * d);
        eta.extend(self.mean.iter().zip(&self.scale).map(|(m, s)| m / (s * s)));
        eta.extend(self.scale.iter().map(|s| -0.5 / (s * s)));
        ExpFamCondParams {
            natural_param: eta,
            stats: SufficientStats::GaussianDiag { dim: d },
        }
    }
}

/// Unvalidated diagonal Gaussian log-density; hot path for mixture banks.
#[inline]
pub(crate) fn diag_gaussian_log_density(z: &[f64], mean: &[f64], scale: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((z, m), s) in z.iter().zip(mean).zip(scale) {
        let r = (z - m) / s;
        acc += r * r + 2.0 * s.ln();
    }
    -0.5 * (acc + z.len() as f64 * LN_2PI)
}

/// Sufficient statistics `t(z)` of an exponential-family conditional
/// `q(z | eps) ∝ exp(t(z)ᵀ eta(eps))`, base measure absorbed into `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SufficientStats {
    /// `t(z) = z` on all of ℝ^d; admissible for any `eta`.
    Linear { dim: usize },
    /// `t(z) = z` on `[0, ∞)^d`; admissible when `eta < 0`.
    Exponential { dim: usize },
    /// `t(z) = (z_1..z_d, z_1^2..z_d^2)`; admissible when the quadratic coefficients are negative.
    GaussianDiag { dim: usize },
}

impl SufficientStats {
    pub fn z_dim(&self) -> usize {
        match *self {
            SufficientStats::Linear { dim }
            | SufficientStats::Exponential { dim }
            | SufficientStats::GaussianDiag { dim } => dim,
        }
    }

    pub fn n_stats(&self) -> usize {
        match *self {
            SufficientStats::GaussianDiag { dim } => 2 * dim,
            _ => self.z_dim(),
        }
    }

    pub fn in_support(&self, z: &[f64]) -> bool {
        match self {
            SufficientStats::Exponential { .. } => z.iter().all(|&v| v >= 0.0),
            _ => z.iter().all(|v| v.is_finite()),
        }
    }

    fn admissible(&self, eta: &[f64]) -> bool {
        match *self {
            SufficientStats::Linear { .. } => true,
            SufficientStats::Exponential { .. } => eta.iter().all(|&e| e < 0.0),
            SufficientStats::GaussianDiag { dim } => eta[dim..].iter().all(|&e| e < 0.0),
        }
    }

    /// `(∇_z t(z))ᵀ eta`, without materializing the Jacobian.
    fn jacobian_transpose_apply(&self, z: &[f64], eta: &[f64]) -> Vec<f64> {
        match *self {
            SufficientStats::Linear { .. } | SufficientStats::Exponential { .. } => eta.to_vec(),
            SufficientStats::GaussianDiag { dim } => (0..dim)
                .map(|i| eta[i] + 2.0 * z[i] * eta[dim + i])
                .collect(),
        }
    }
}

/// Natural parameter together with the statistics it pairs with.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFamCondParams {
    natural_param: Vec<f64>,
    stats: SufficientStats,
}

impl ExpFamCondParams {
    pub fn new(natural_param: Vec<f64>, stats: SufficientStats) -> Result<Self> {
        check_dim("natural parameter", stats.n_stats(), natural_param.len())?;
        if !stats.admissible(&natural_param) {
            return Err(Error::InvalidArgument(
                "natural parameter outside the family's admissible domain".into(),
            ));
        }
        Ok(Self {
            natural_param,
            stats,
        })
    }

    pub fn natural_param(&self) -> &[f64] {
        &self.natural_param
    }

    pub fn stats(&self) -> SufficientStats {
        self.stats
    }

    /// `∇_z t(z)ᵀ eta`.
    pub fn grad_log_density_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("exponential-family point", self.stats.z_dim(), z.len())?;
        if !self.stats.in_support(z) {
            return Err(Error::InvalidArgument(
                "point outside the conditional's support".into(),
            ));
        }
        Ok(self.stats.jacobian_transpose_apply(z, &self.natural_param))
    }
}

/// `dim` iid standard normal draws.
pub fn sample_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `log N(x | 0, I)`.
pub fn standard_normal_log_density(x: &[f64]) -> f64 {
    -0.5 * (x.iter().map(|v| v * v).sum::<f64>() + x.len() as f64 * (2.0 * PI).ln())
}
