//! Unbiased reparameterization gradient of the ELBO for a semi-implicit family.
//!
//! The gradient splits into a model term, `grad_z log p` pushed through
//! `z = h(u; eps)`, and an entropy term that needs `grad_z log q(z)`. The
//! latter is replaced by an average of `grad_z log q(z | eps')` over draws
//! `eps'` from the reverse conditional `q(eps | z)`, obtained by HMC started
//! at the `eps` that generated `z`.

use rand::Rng;
use serde::Serialize;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::family::{DrawRecord, QGrad, SemiImplicitQ};
use crate::hmc::{hmc_sample, HmcConfig};
use crate::targets::TargetModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GradDiagnostics {
    /// Norm of the model-term parameter gradient (averaged over draws).
    pub model_norm: f64,
    /// Norm of the entropy-term parameter gradient (averaged over draws).
    pub entropy_norm: f64,
    pub acceptance: f64,
    /// Step size the chains suggest for the next iteration.
    pub step_size: f64,
    pub mean_abs_delta_h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    /// Ascent direction for the ELBO.
    pub grad: QGrad,
    pub diagnostics: GradDiagnostics,
}

/// `grad_z log p(x, z)` at `rec.z`, checked for finiteness.
pub fn model_direction<T: TargetModel + ?Sized>(target: &T, rec: &DrawRecord) -> Result<Vec<f64>> {
    let v = target.grad_log_joint(&rec.z)?;
    check_dim("target gradient", rec.z.len(), v.len())?;
    check_finite("target gradient", &v)?;
    Ok(v)
}

/// `-(1/n) Σ grad_z log q(z | eps')` at `z`, i.e. `(1/n) Σ (z - mean(eps')) / scale^2`.
pub fn entropy_direction(q: &SemiImplicitQ, z: &[f64], eps_primes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if eps_primes.is_empty() {
        return Err(Error::InvalidArgument("entropy term needs at least one reverse draw".into()));
    }
    check_dim("entropy evaluation point", q.z_dim(), z.len())?;
    let scale = q.scale();
    let n = eps_primes.len() as f64;
    let mut w = vec![0.0; q.z_dim()];
    for e in eps_primes {
        let mean = q.cond_params(e)?;
        for (((w, z), m), s) in w.iter_mut().zip(z).zip(mean.mean()).zip(&scale) {
            *w += (z - m) / (s * s) / n;
        }
    }
    check_finite("entropy direction", &w)?;
    Ok(w)
}

pub fn model_term<T: TargetModel + ?Sized>(
    target: &T,
    q: &SemiImplicitQ,
    rec: &DrawRecord,
) -> Result<QGrad> {
    let v = model_direction(target, rec)?;
    q.backprop_through_h(rec, &v)
}

/// The reverse draws enter only through the constant direction `w`; no
/// gradient flows through them.
pub fn entropy_term(q: &SemiImplicitQ, rec: &DrawRecord, eps_primes: &[Vec<f64>]) -> Result<QGrad> {
    let w = entropy_direction(q, &rec.z, eps_primes)?;
    q.backprop_through_h(rec, &w)
}

/// Average of `model_term + entropy_term` over `s` fresh draws.
pub fn elbo_gradient<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    target: &T,
    q: &SemiImplicitQ,
    s: usize,
    hmc_cfg: &HmcConfig,
    rng: &mut R,
) -> Result<GradEstimate> {
    if s == 0 {
        return Err(Error::InvalidArgument("need at least one draw per gradient".into()));
    }
    check_dim("target dimension", q.z_dim(), target.dim())?;
    let mut grad = QGrad::zeros(q);
    let mut diag = GradDiagnostics::default();
    let mut log_step = 0.0;
    let inv = 1.0 / s as f64;
    for _ in 0..s {
        let rec = q.sample(rng)?;
        let chain = hmc_sample(q, &rec.z, &rec.eps, hmc_cfg, rng)?;
        let model = model_term(target, q, &rec)?;
        let entropy = entropy_term(q, &rec, &chain.samples)?;
        diag.model_norm += inv * model.norm();
        diag.entropy_norm += inv * entropy.norm();
        diag.acceptance += inv * chain.acceptance_rate;
        diag.mean_abs_delta_h += inv * chain.mean_abs_delta_h;
        log_step += inv * chain.step_size.ln();
        grad.add_scaled(&model, inv);
        grad.add_scaled(&entropy, inv);
    }
    diag.step_size = log_step.exp();
    if !grad.is_finite() {
        return Err(Error::NonFinite("ELBO gradient"));
    }
    Ok(GradEstimate {
        grad,
        diagnostics: diag,
    })
}
