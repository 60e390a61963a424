//! The three synthetic 2-D densities: banana, two-mode mixture, and x-shape.

use super::TargetModel;
use crate::error::{check_dim, Error, Result};
use crate::stats::logsumexp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const BANANA_RHO: f64 = 0.9;

/// Zero-mean-or-shifted bivariate Gaussian with a fixed covariance.
#[derive(Debug, Clone, Copy)]
struct Gauss2 {
    mean: [f64; 2],
    prec: [[f64; 2]; 2],
    log_norm: f64,
}

impl Gauss2 {
    const fn from_parts(mean: [f64; 2], prec: [[f64; 2]; 2], log_norm: f64) -> Self {
        Self {
            mean,
            prec,
            log_norm,
        }
    }

    fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let prec = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        Self::from_parts(mean, prec, -LN_2PI - 0.5 * det.ln())
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let d = [z[0] - self.mean[0], z[1] - self.mean[1]];
        let quad = d[0] * (self.prec[0][0] * d[0] + self.prec[0][1] * d[1])
            + d[1] * (self.prec[1][0] * d[0] + self.prec[1][1] * d[1]);
        self.log_norm - 0.5 * quad
    }

    fn grad(&self, z: &[f64]) -> [f64; 2] {
        let d = [z[0] - self.mean[0], z[1] - self.mean[1]];
        [
            -(self.prec[0][0] * d[0] + self.prec[0][1] * d[1]),
            -(self.prec[1][0] * d[0] + self.prec[1][1] * d[1]),
        ]
    }
}

fn banana_base() -> Gauss2 {
    Gauss2::new([0.0, 0.0], [[1.0, BANANA_RHO], [BANANA_RHO, 1.0]])
}

fn check2(z: &[f64]) -> Result<()> {
    check_dim("2-d target point", 2, z.len())
}

/// `log N((z1, z2 + z1^2 + 1) | 0, [[1, 0.9], [0.9, 1]])`; the map has unit Jacobian.
pub fn banana_log_density(z: &[f64]) -> Result<f64> {
    check2(z)?;
    let y = [z[0], z[1] + z[0] * z[0] + 1.0];
    Ok(banana_base().log_density(&y))
}

pub fn banana_grad(z: &[f64]) -> Result<Vec<f64>> {
    check2(z)?;
    let y = [z[0], z[1] + z[0] * z[0] + 1.0];
    let g = banana_base().grad(&y);
    Ok(vec![g[0] + 2.0 * z[0] * g[1], g[1]])
}

fn mixture(components: &[Gauss2], z: &[f64]) -> (f64, Vec<f64>) {
    let logs: Vec<f64> = components
        .iter()
        .map(|c| c.log_density(z) - (components.len() as f64).ln())
        .collect();
    let total = logsumexp(&logs);
    let mut grad = vec![0.0; 2];
    for (c, l) in components.iter().zip(&logs) {
        let w = (l - total).exp();
        let g = c.grad(z);
        grad[0] += w * g[0];
        grad[1] += w * g[1];
    }
    (total, grad)
}

fn multimodal_components() -> [Gauss2; 2] {
    let eye = [[1.0, 0.0], [0.0, 1.0]];
    [Gauss2::new([-2.0, 0.0], eye), Gauss2::new([2.0, 0.0], eye)]
}

fn xshaped_components() -> [Gauss2; 2] {
    [
        Gauss2::new([0.0, 0.0], [[2.0, 1.8], [1.8, 2.0]]),
        Gauss2::new([0.0, 0.0], [[2.0, -1.8], [-1.8, 2.0]]),
    ]
}

/// Equal mixture of `N((-2, 0), I)` and `N((2, 0), I)`.
pub fn multimodal_log_density(z: &[f64]) -> Result<f64> {
    check2(z)?;
    Ok(mixture(&multimodal_components(), z).0)
}

pub fn multimodal_grad(z: &[f64]) -> Result<Vec<f64>> {
    check2(z)?;
    Ok(mixture(&multimodal_components(), z).1)
}

/// Equal mixture of two zero-mean Gaussians with correlation ±0.9 and variance 2.
pub fn xshaped_log_density(z: &[f64]) -> Result<f64> {
    check2(z)?;
    Ok(mixture(&xshaped_components(), z).0)
}

pub fn xshaped_grad(z: &[f64]) -> Result<Vec<f64>> {
    check2(z)?;
    Ok(mixture(&xshaped_components(), z).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToyTarget {
    Banana,
    Multimodal,
    XShaped,
}

impl ToyTarget {
    pub const ALL: [ToyTarget; 3] = [ToyTarget::Banana, ToyTarget::Multimodal, ToyTarget::XShaped];

    pub fn name(self) -> &'static str {
        match self {
            ToyTarget::Banana => "banana",
            ToyTarget::Multimodal => "multimodal",
            ToyTarget::XShaped => "x-shaped",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "banana" => Ok(ToyTarget::Banana),
            "multimodal" => Ok(ToyTarget::Multimodal),
            "x-shaped" | "xshaped" => Ok(ToyTarget::XShaped),
            other => Err(Error::Config(format!("unknown toy target `{other}`"))),
        }
    }

    /// A box holding all but a negligible amount of the mass, for quadrature.
    pub fn support_box(self) -> [(f64, f64); 2] {
        match self {
            ToyTarget::Banana => [(-9.0, 9.0), (-90.0, 10.0)],
            ToyTarget::Multimodal => [(-12.0, 12.0), (-10.0, 10.0)],
            ToyTarget::XShaped => [(-14.0, 14.0), (-14.0, 14.0)],
        }
    }
}

impl TargetModel for ToyTarget {
    fn dim(&self) -> usize {
        2
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        match self {
            ToyTarget::Banana => banana_log_density(z),
            ToyTarget::Multimodal => multimodal_log_density(z),
            ToyTarget::XShaped => xshaped_log_density(z),
        }
    }

    fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            ToyTarget::Banana => banana_grad(z),
            ToyTarget::Multimodal => multimodal_grad(z),
            ToyTarget::XShaped => xshaped_grad(z),
        }
    }
}
