//! HMC on the reverse conditional `q(eps | z) ∝ q(z | eps) q(eps)`.
//!
//! Each chain starts at the `eps` that generated `z`, which is already an
//! exact draw from the reverse conditional, so every subsequent state is
//! marginally stationary. To keep that property the step size is held fixed
//! within a call; acceptance statistics from the burn-in iterations only
//! steer the step size suggested for the *next* call.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::{diag_gaussian_log_density, sample_noise, standard_normal_log_density};
use crate::error::{check_dim, Error, Result};
use crate::family::SemiImplicitQ;

/// Log step-size change per unit of (acceptance − target) during burn-in.
/// At target 0.9 an accepted move grows the step by ≈2%.
const ADAPT_RATE: f64 = 0.2;
const MIN_STEP: f64 = 1e-4;
const MAX_STEP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub n_burn: usize,
    pub n_keep: usize,
    pub leapfrog_steps: usize,
    pub step_size: f64,
    pub adapt_during_burn: bool,
    pub target_accept: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self::for_eps_dim(1)
    }
}

impl HmcConfig {
    /// 5 burn-in + 5 kept iterations of 5 leapfrog steps, initial step `0.1 / sqrt(eps_dim)`.
    pub fn for_eps_dim(eps_dim: usize) -> Self {
        Self {
            n_burn: 5,
            n_keep: 5,
            leapfrog_steps: 5,
            step_size: 0.1 / (eps_dim.max(1) as f64).sqrt(),
            adapt_during_burn: true,
            target_accept: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_keep < 1 {
            return Err(Error::InvalidArgument("n_keep must be at least 1".into()));
        }
        if self.leapfrog_steps < 1 {
            return Err(Error::InvalidArgument("leapfrog_steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

/// Position with the log-target and its gradient cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub log_target: f64,
    pub grad: Vec<f64>,
}

impl ChainState {
    pub fn at<F>(position: Vec<f64>, target: &mut F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let (log_target, grad) = target(&position)?;
        if !log_target.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("log-target at chain position"));
        }
        Ok(Self {
            position,
            log_target,
            grad,
        })
    }

    fn hamiltonian(&self, momentum: &[f64]) -> f64 {
        -self.log_target + 0.5 * momentum.iter().map(|p| p * p).sum::<f64>()
    }
}

/// Reverse-conditional log-density for one fixed `z`, with the conditional
/// scale precomputed.
#[derive(Debug, Clone)]
pub struct ReverseTarget<'a> {
    q: &'a SemiImplicitQ,
    z: &'a [f64],
    scale: Vec<f64>,
}

impl<'a> ReverseTarget<'a> {
    pub fn new(q: &'a SemiImplicitQ, z: &'a [f64]) -> Result<Self> {
        check_dim("reverse-conditional z", q.z_dim(), z.len())?;
        Ok(Self {
            q,
            z,
            scale: q.scale(),
        })
    }

    /// `log q(z | eps) + log q(eps)` and its gradient in `eps`.
    pub fn value_and_grad(&self, eps: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim("reverse-conditional eps", self.q.eps_dim(), eps.len())?;
        let net = self.q.cond_net();
        let trace = net.trace(eps)?;
        let mean = trace.output();
        let value = diag_gaussian_log_density(self.z, mean, &self.scale)
            + standard_normal_log_density(eps);
        let upstream: Vec<f64> = self
            .z
            .iter()
            .zip(mean)
            .zip(&self.scale)
            .map(|((z, m), s)| (z - m) / (s * s))
            .collect();
        let mut grad = trace.backprop(net, &upstream, None)?;
        for (g, e) in grad.iter_mut().zip(eps) {
            *g -= e;
        }
        Ok((value, grad))
    }
}

/// `log q(z | eps) + log q(eps)` (normalized) and its gradient in `eps`.
pub fn reverse_log_target(q: &SemiImplicitQ, z: &[f64], eps: &[f64]) -> Result<(f64, Vec<f64>)> {
    ReverseTarget::new(q, z)?.value_and_grad(eps)
}

/// Leapfrog integration with identity mass. `grad_fn` returns the gradient
/// of the log-target (the negative potential gradient).
pub fn leapfrog<F>(
    position: &[f64],
    momentum: &[f64],
    mut grad_fn: F,
    steps: usize,
    step_size: f64,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    check_dim("leapfrog momentum", position.len(), momentum.len())?;
    if steps < 1 {
        return Err(Error::InvalidArgument("leapfrog needs at least one step".into()));
    }
    let mut x = position.to_vec();
    let mut p = momentum.to_vec();
    let mut g = finite_grad(grad_fn(&x)?)?;
    for _ in 0..steps {
        kick(&mut p, &g, 0.5 * step_size);
        drift(&mut x, &p, step_size);
        g = finite_grad(grad_fn(&x)?)?;
        kick(&mut p, &g, 0.5 * step_size);
    }
    Ok((x, p))
}

fn finite_grad(g: Vec<f64>) -> Result<Vec<f64>> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::NonFinite("leapfrog gradient"))
    }
}

#[inline]
fn kick(p: &mut [f64], g: &[f64], h: f64) {
    p.iter_mut().zip(g).for_each(|(p, g)| *p += h * g);
}

#[inline]
fn drift(x: &mut [f64], p: &[f64], h: f64) {
    x.iter_mut().zip(p).for_each(|(x, p)| *x += h * p);
}

/// Integrates from a cached state; returns the end state, end momentum and
/// the largest `|H(t) - H(0)|` seen along the way.
fn trajectory<F>(
    start: &ChainState,
    momentum: &[f64],
    steps: usize,
    step_size: f64,
    target: &mut F,
) -> Result<(ChainState, Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let h0 = start.hamiltonian(momentum);
    let mut x = start.position.clone();
    let mut p = momentum.to_vec();
    let mut g = start.grad.clone();
    let mut value = start.log_target;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        kick(&mut p, &g, 0.5 * step_size);
        drift(&mut x, &p, step_size);
        let (v, grad) = target(&x)?;
        value = v;
        g = finite_grad(grad)?;
        kick(&mut p, &g, 0.5 * step_size);
        let h = -value + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        if !h.is_finite() {
            return Err(Error::NonFinite("hamiltonian along trajectory"));
        }
        worst = worst.max((h - h0).abs());
    }
    Ok((
        ChainState {
            position: x,
            log_target: value,
            grad: g,
        },
        p,
        worst,
    ))
}

/// Largest total-energy error along one leapfrog trajectory.
pub fn max_energy_error<F>(
    position: &[f64],
    momentum: &[f64],
    mut target: F,
    steps: usize,
    step_size: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    check_dim("trajectory momentum", position.len(), momentum.len())?;
    let start = ChainState::at(position.to_vec(), &mut target)?;
    Ok(trajectory(&start, momentum, steps, step_size, &mut target)?.2)
}

/// Kept draws and diagnostics from one reverse-conditional chain.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcOutcome {
    pub samples: Vec<Vec<f64>>,
    /// Mean Metropolis acceptance probability over all iterations.
    pub acceptance_rate: f64,
    /// Step size suggested for the next call (equal to the input step when
    /// adaptation is off or there is no burn-in).
    pub step_size: f64,
    /// Mean `|ΔH|` between proposal and current state, over non-divergent proposals.
    pub mean_abs_delta_h: f64,
}

/// Runs `n_burn + n_keep` Metropolis-corrected HMC iterations from `eps_init`
/// and returns the last `n_keep` positions.
pub fn hmc_sample<R: Rng + ?Sized>(
    q: &SemiImplicitQ,
    z: &[f64],
    eps_init: &[f64],
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<HmcOutcome> {
    cfg.validate()?;
    check_dim("chain initializer", q.eps_dim(), eps_init.len())?;
    if q.eps_dim() == 0 {
        return Ok(HmcOutcome {
            samples: vec![Vec::new(); cfg.n_keep],
            acceptance_rate: 1.0,
            step_size: cfg.step_size,
            mean_abs_delta_h: 0.0,
        });
    }
    let target = ReverseTarget::new(q, z)?;
    let mut eval = |e: &[f64]| target.value_and_grad(e);
    let mut state = ChainState::at(eps_init.to_vec(), &mut eval)?;
    let h = cfg.step_size;
    let total = cfg.n_burn + cfg.n_keep;
    let mut samples = Vec::with_capacity(cfg.n_keep);
    let mut accept_sum = 0.0;
    let mut log_adapt = 0.0;
    let mut dh_sum = 0.0;
    let mut dh_count = 0usize;
    for it in 0..total {
        let p0 = sample_noise(q.eps_dim(), rng);
        let proposal = match trajectory(&state, &p0, cfg.leapfrog_steps, h, &mut eval) {
            Ok((next, p_end, _)) => {
                let dh = next.hamiltonian(&p_end) - state.hamiltonian(&p0);
                if dh.is_finite() {
                    dh_sum += dh.abs();
                    dh_count += 1;
                    Some((next, (-dh).exp().min(1.0)))
                } else {
                    None
                }
            }
            Err(Error::NonFinite(_)) => None,
            Err(e) => return Err(e),
        };
        let alpha = proposal.as_ref().map_or(0.0, |p| p.1);
        let u: f64 = rng.random();
        if u < alpha {
            state = proposal.expect("alpha > 0 implies a proposal").0;
        }
        accept_sum += alpha;
        if it < cfg.n_burn {
            if cfg.adapt_during_burn {
                log_adapt += ADAPT_RATE * (alpha - cfg.target_accept);
            }
        } else {
            samples.push(state.position.clone());
        }
    }
    Ok(HmcOutcome {
        samples,
        acceptance_rate: accept_sum / total as f64,
        step_size: (h * log_adapt.exp()).clamp(MIN_STEP.min(h), MAX_STEP.max(h)),
        mean_abs_delta_h: if dh_count > 0 { dh_sum / dh_count as f64 } else { 0.0 },
    })
}
