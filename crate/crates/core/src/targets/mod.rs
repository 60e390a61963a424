//! Inference targets: anything exposing `log p(x, z)` and its gradient in `z`.

mod dataset;
mod mlr;
mod toy;

pub use dataset::{gaussian_blobs, load_dataset, LabeledDataset, Preprocess, Standardizer};
pub use mlr::{
    mlr_grad_log_joint, mlr_log_joint, mlr_predictive_loglik, mlr_predictive_loglik_from_samples,
    mlr_predictive_loglik_points,
    MlrTarget,
};
pub use toy::{
    banana_grad, banana_log_density, multimodal_grad, multimodal_log_density, xshaped_grad,
    xshaped_log_density, ToyTarget,
};

use crate::conditional::standard_normal_log_density;
use crate::error::{check_dim, Error, Result};

pub trait TargetModel {
    fn dim(&self) -> usize;

    fn log_joint(&self, z: &[f64]) -> Result<f64>;

    fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>>;

    fn log_joint_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.log_joint(z)?, self.grad_log_joint(z)?))
    }

    /// Dataset size used for minibatch scaling; 0 for data-free targets.
    fn n_total(&self) -> usize {
        0
    }
}

impl<T: TargetModel + ?Sized> TargetModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        (**self).log_joint(z)
    }
    fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        (**self).grad_log_joint(z)
    }
    fn log_joint_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).log_joint_and_grad(z)
    }
    fn n_total(&self) -> usize {
        (**self).n_total()
    }
}

/// Normalized diagonal Gaussian `N(mean, diag(std^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_dim("gaussian target std", mean.len(), std.len())?;
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("target std must be positive".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_dim("target point", self.dim(), z.len())?;
        Ok(crate::conditional::diag_gaussian_log_density(z, &self.mean, &self.std))
    }

    fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("target point", self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| -(z - m) / (s * s))
            .collect())
    }
}

/// `p(x, z) = N(z | 0, 1) N(x | z, 1)` for one scalar observation; the
/// evidence is `N(x | 0, 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateNormalModel {
    pub x: f64,
}

impl ConjugateNormalModel {
    pub fn log_evidence(&self) -> f64 {
        -0.5 * (4.0 * std::f64::consts::PI).ln() - self.x * self.x / 4.0
    }
}

impl TargetModel for ConjugateNormalModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_dim("target point", 1, z.len())?;
        Ok(standard_normal_log_density(z) + standard_normal_log_density(&[self.x - z[0]]))
    }

    fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("target point", 1, z.len())?;
        Ok(vec![-z[0] + (self.x - z[0])])
    }
}
