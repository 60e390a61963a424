//! The SIVI surrogate bound, used as a baseline.
//!
//! `log q(z)` is replaced by `log (1/(L+1)) Σ_{l=0..L} q(z | eps_l)` where
//! `eps_0` generated `z` and the other `L` draws are fresh. The result is a
//! lower bound on the ELBO that tightens as `L` grows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::{diag_gaussian_log_density, sample_noise};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::family::{DrawRecord, QGrad, SemiImplicitQ};
use crate::stats::logsumexp;
use crate::targets::TargetModel;
use crate::tensor::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LSchedule {
    /// `L_final` from the first iteration.
    Constant,
    /// Floor-interpolated ramp from 1 to `L_final`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiviConfig {
    pub l_final: usize,
    pub schedule: LSchedule,
}

impl Default for SiviConfig {
    fn default() -> Self {
        Self {
            l_final: 200,
            schedule: LSchedule::Linear,
        }
    }
}

impl SiviConfig {
    pub fn l_at(&self, t: usize, t_max: usize) -> usize {
        match self.schedule {
            LSchedule::Constant => self.l_final,
            LSchedule::Linear => l_schedule_linear(t.min(t_max), t_max, self.l_final),
        }
    }
}

/// `1 + floor((L_final - 1) t / t_max)`; `L_final` when `t_max == 0`.
pub fn l_schedule_linear(t: usize, t_max: usize, l_final: usize) -> usize {
    if l_final <= 1 {
        return l_final;
    }
    if t_max == 0 {
        return l_final;
    }
    let t = t.min(t_max) as u128;
    1 + ((l_final as u128 - 1) * t / t_max as u128) as usize
}

/// Surrogate value and gradient for a given draw and given extra mixing draws.
pub fn sivi_surrogate_with_draws<T: TargetModel + ?Sized>(
    target: &T,
    q: &SemiImplicitQ,
    rec: &DrawRecord,
    extra_eps: &[Vec<f64>],
) -> Result<(f64, QGrad)> {
    check_dim("target dimension", q.z_dim(), target.dim())?;
    let net = q.cond_net();
    let scale = q.scale();
    let z = &rec.z;
    let mut traces = Vec::with_capacity(extra_eps.len() + 1);
    traces.push(net.trace(&rec.eps)?);
    for e in extra_eps {
        check_dim("mixing draw", q.eps_dim(), e.len())?;
        traces.push(net.trace(e)?);
    }
    let logs: Vec<f64> = traces
        .iter()
        .map(|t| diag_gaussian_log_density(z, t.output(), &scale))
        .collect();
    let lse = logsumexp(&logs);
    let (lp, grad_p) = target.log_joint_and_grad(z)?;
    check_finite("target gradient", &grad_p)?;
    let value = lp - (lse - ((traces.len()) as f64).ln());

    let d = q.z_dim();
    let mut g_z = grad_p;
    let mut scale_direct = vec![0.0; d];
    let mut mean_upstreams = Vec::with_capacity(traces.len());
    for (t, l) in traces.iter().zip(&logs) {
        let r = (l - lse).exp();
        let mut up = vec![0.0; d];
        for j in 0..d {
            let s = scale[j];
            let diff = z[j] - t.output()[j];
            g_z[j] += r * diff / (s * s);
            up[j] = -r * diff / (s * s);
            scale_direct[j] -= r * (diff * diff / (s * s * s) - 1.0 / s);
        }
        mean_upstreams.push(up);
    }

    let mut grad = q.backprop_through_h(rec, &g_z)?;
    for (t, up) in traces.iter().zip(&mean_upstreams) {
        t.backprop(net, up, Some((&mut grad.net, 1.0)))?;
    }
    for ((g, s), raw) in grad.scale_raw.iter_mut().zip(&scale_direct).zip(q.scale_raw()) {
        *g += s * sigmoid(*raw);
    }
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("SIVI surrogate"));
    }
    Ok((value, grad))
}

/// Single-draw estimate of the surrogate bound and its reparameterization gradient.
pub fn sivi_surrogate_gradient<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    target: &T,
    q: &SemiImplicitQ,
    l: usize,
    rng: &mut R,
) -> Result<(f64, QGrad)> {
    let rec = q.sample(rng)?;
    let extra: Vec<Vec<f64>> = (0..l).map(|_| sample_noise(q.eps_dim(), rng)).collect();
    sivi_surrogate_with_draws(target, q, &rec, &extra)
}
