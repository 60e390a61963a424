//! RMSProp-style ascent with a step-decayed learning rate:
//! `G <- 0.9 G + 0.1 g^2`, `rho = eta_t / (1 + sqrt(G))`, `theta <- theta + rho g`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::family::{QGrad, SemiImplicitQ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub eta_net: f64,
    pub eta_scale: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta_net: 0.01,
            eta_scale: 0.002,
            decay_every: 3000,
            decay_factor: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_net > 0.0 && self.eta_scale > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.decay_every == 0 || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(
                "decay_every must be >= 1 and decay_factor in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    cfg: OptimizerConfig,
    g: Vec<f64>,
    is_scale: Vec<bool>,
    t: usize,
}

impl RmsProp {
    /// `is_scale[i]` selects the scale learning rate for parameter `i`.
    pub fn new(cfg: OptimizerConfig, is_scale: Vec<bool>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            g: vec![0.0; is_scale.len()],
            is_scale,
            t: 0,
        })
    }

    pub fn for_family(cfg: OptimizerConfig, q: &SemiImplicitQ) -> Result<Self> {
        Self::new(cfg, q.scale_param_mask())
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.g
    }

    /// Learning-rate multiplier at the current iteration.
    pub fn decay(&self) -> f64 {
        self.cfg
            .decay_factor
            .powi((self.t / self.cfg.decay_every) as i32)
    }

    /// One ascent step on a flat parameter vector.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim("optimizer parameters", self.g.len(), params.len())?;
        check_dim("optimizer gradient", self.g.len(), grad.len())?;
        check_finite("optimizer gradient", grad)?;
        let decay = self.decay();
        for i in 0..params.len() {
            self.g[i] = 0.9 * self.g[i] + 0.1 * grad[i] * grad[i];
            let eta = if self.is_scale[i] {
                self.cfg.eta_scale
            } else {
                self.cfg.eta_net
            };
            params[i] += eta * decay / (1.0 + self.g[i].sqrt()) * grad[i];
        }
        self.t += 1;
        Ok(())
    }

    pub fn step_family(&mut self, q: &mut SemiImplicitQ, grad: &QGrad) -> Result<()> {
        let mut theta = q.params_flat();
        self.step(&mut theta, &grad.flatten())?;
        q.set_params_flat(&theta)
    }
}
