//! The semi-implicit family `q(z) = ∫ q(z | eps) q(eps) d eps`.
//!
//! `eps ~ N(0, I_eps_dim)` is pushed through a network giving the mean of a
//! diagonal Gaussian conditional; the conditional standard deviation is a
//! free global vector `softplus(scale_raw)`. With `eps_dim == 0` the family
//! degenerates to an explicit mean-field Gaussian whose mean is the final bias.

use rand::Rng;

use crate::conditional::{diag_gaussian_log_density, sample_noise, GaussianCondParams};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::stats::log_mean_exp;
use crate::tensor::{sigmoid, softplus, softplus_inv, Activation, Layer, MlpParams, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SemiImplicitQ {
    eps_dim: usize,
    z_dim: usize,
    cond_net: MlpParams,
    scale_raw: Vec<f64>,
}

/// One joint draw `(eps, u, z)` with `z = mean(eps) + scale * u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    pub eps: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
}

impl SemiImplicitQ {
    pub fn new(cond_net: MlpParams, scale_raw: Vec<f64>) -> Result<Self> {
        let z_dim = cond_net.output_dim();
        check_dim("conditional scale parameters", z_dim, scale_raw.len())?;
        check_finite("conditional scale parameters", &scale_raw)?;
        if z_dim == 0 {
            return Err(Error::InvalidArgument("latent dimension must be positive".into()));
        }
        Ok(Self {
            eps_dim: cond_net.input_dim(),
            z_dim,
            cond_net,
            scale_raw,
        })
    }

    /// ReLU network `eps_dim -> hidden... -> z_dim` with Xavier weights and
    /// every conditional standard deviation set to `init_scale`.
    pub fn with_mlp<R: Rng + ?Sized>(
        eps_dim: usize,
        z_dim: usize,
        hidden: &[usize],
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(eps_dim);
        dims.extend_from_slice(hidden);
        dims.push(z_dim);
        let net = MlpParams::xavier(&dims, Activation::Relu, Activation::Identity, rng)?;
        Self::new(net, vec![softplus_inv(init_scale)?; z_dim])
    }

    /// A network whose output ignores `eps`: zero weights, bias `mean`.
    pub fn constant(eps_dim: usize, mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let z = mean.len();
        let layer = Layer::new(
            Tensor::zeros(vec![z, eps_dim]),
            Tensor::vector(mean)?,
            Activation::Identity,
        )?;
        let raw = scale.into_iter().map(softplus_inv).collect::<Result<_>>()?;
        Self::new(MlpParams::new(vec![layer])?, raw)
    }

    /// Explicit diagonal Gaussian: no mixing noise at all.
    pub fn explicit(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        Self::constant(0, mean, scale)
    }

    /// The conjugate test family `q(eps) = N(0,1)`, `q(z|eps) = N(a eps, sigma^2)`.
    pub fn linear_gaussian(a: f64, sigma: f64) -> Result<Self> {
        let layer = Layer::new(
            Tensor::matrix(1, 1, vec![a])?,
            Tensor::vector(vec![0.0])?,
            Activation::Identity,
        )?;
        Self::new(MlpParams::new(vec![layer])?, vec![softplus_inv(sigma)?])
    }

    pub fn eps_dim(&self) -> usize {
        self.eps_dim
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn cond_net(&self) -> &MlpParams {
        &self.cond_net
    }

    pub fn scale_raw(&self) -> &[f64] {
        &self.scale_raw
    }

    pub fn scale(&self) -> Vec<f64> {
        self.scale_raw.iter().map(|&r| softplus(r)).collect()
    }

    /// Conditional parameters for a given mixing draw.
    pub fn cond_params(&self, eps: &[f64]) -> Result<GaussianCondParams> {
        check_dim("mixing noise", self.eps_dim, eps.len())?;
        GaussianCondParams::new(self.cond_net.forward(eps)?, self.scale())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DrawRecord> {
        let eps = sample_noise(self.eps_dim, rng);
        let u = sample_noise(self.z_dim, rng);
        let z = self.cond_params(&eps)?.reparameterize(&u)?;
        Ok(DrawRecord { eps, u, z })
    }

    /// `log (1/M) Σ_m q(z | eps_m)` with fresh `eps_m ~ q(eps)`.
    pub fn marginal_logdensity_estimate<R: Rng + ?Sized>(
        &self,
        z: &[f64],
        m: usize,
        rng: &mut R,
    ) -> Result<f64> {
        CondMeanBank::draw(self, m, rng)?.log_marginal(z)
    }

    pub fn num_params(&self) -> usize {
        self.cond_net.num_params() + self.z_dim
    }

    /// Network parameters followed by `scale_raw`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.cond_net.flatten_into(&mut v);
        v.extend_from_slice(&self.scale_raw);
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat variational parameters", self.num_params(), flat.len())?;
        check_finite("flat variational parameters", flat)?;
        let used = self.cond_net.assign_flat(flat)?;
        self.scale_raw.copy_from_slice(&flat[used..]);
        Ok(())
    }

    /// `true` for entries of [`params_flat`](Self::params_flat) that are scale parameters.
    pub fn scale_param_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.cond_net.num_params()];
        mask.resize(self.num_params(), true);
        mask
    }

    /// Pushes `upstream = d objective / dz` through `z = h(u; eps)`:
    /// network VJP at `rec.eps`, and `upstream * u * softplus'(scale_raw)` for the scale.
    pub fn backprop_through_h(&self, rec: &DrawRecord, upstream: &[f64]) -> Result<QGrad> {
        check_dim("upstream gradient", self.z_dim, upstream.len())?;
        let (net, _) = self.cond_net.vjp(&rec.eps, upstream)?;
        let scale_raw = upstream
            .iter()
            .zip(&rec.u)
            .zip(&self.scale_raw)
            .map(|((g, u), r)| g * u * sigmoid(*r))
            .collect();
        Ok(QGrad { net, scale_raw })
    }

    /// Recomputes `z` from the record's `(eps, u)`.
    pub fn regenerate(&self, rec: &DrawRecord) -> Result<Vec<f64>> {
        self.cond_params(&rec.eps)?.reparameterize(&rec.u)
    }
}

/// Gradient with the same layout as the variational parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrad {
    pub net: MlpParams,
    pub scale_raw: Vec<f64>,
}

impl QGrad {
    pub fn zeros(q: &SemiImplicitQ) -> Self {
        Self {
            net: q.cond_net.zeros_like(),
            scale_raw: vec![0.0; q.z_dim],
        }
    }

    pub fn add_scaled(&mut self, other: &QGrad, alpha: f64) {
        self.net.add_scaled(&other.net, alpha);
        for (a, b) in self.scale_raw.iter_mut().zip(&other.scale_raw) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.net.scale(alpha);
        self.scale_raw.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.net.num_params() + self.scale_raw.len());
        self.net.flatten_into(&mut v);
        v.extend_from_slice(&self.scale_raw);
        v
    }

    pub fn norm(&self) -> f64 {
        (self.net.squared_norm() + self.scale_raw.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.scale_raw.iter().all(|x| x.is_finite())
    }
}

/// Conditional means `mean(eps_m)` for a fixed set of mixing draws, so the
/// finite mixture `(1/M) Σ_m q(z | eps_m)` can be evaluated at many `z`.
#[derive(Debug, Clone)]
pub struct CondMeanBank {
    z_dim: usize,
    means: Vec<f64>,
    scale: Vec<f64>,
}

impl CondMeanBank {
    pub fn draw<R: Rng + ?Sized>(q: &SemiImplicitQ, m: usize, rng: &mut R) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidArgument(
                "need at least one mixing sample".into(),
            ));
        }
        let mut means = Vec::with_capacity(m * q.z_dim);
        for _ in 0..m {
            let eps = sample_noise(q.eps_dim, rng);
            means.extend(q.cond_net.forward(&eps)?);
        }
        Ok(Self {
            z_dim: q.z_dim,
            means,
            scale: q.scale(),
        })
    }

    pub fn len(&self) -> usize {
        self.means.len() / self.z_dim
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn log_conditionals(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("mixture evaluation point", self.z_dim, z.len())?;
        Ok(self
            .means
            .chunks_exact(self.z_dim)
            .map(|mu| diag_gaussian_log_density(z, mu, &self.scale))
            .collect())
    }

    /// `log (1/M) Σ_m q(z | eps_m)`.
    pub fn log_marginal(&self, z: &[f64]) -> Result<f64> {
        let v = log_mean_exp(&self.log_conditionals(z)?);
        if v.is_nan() {
            return Err(Error::NonFinite("mixture log-density"));
        }
        Ok(v)
    }
}
