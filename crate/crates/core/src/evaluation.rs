//! ELBO and evidence estimates, plus an exact-ELBO quadrature oracle.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::family::{CondMeanBank, SemiImplicitQ};
use crate::oracle::log_marginal_quadrature;
use crate::quadrature::{integrate_box, QuadOptions};
use crate::stats::{logsumexp, Estimate, MeanAccumulator};
use crate::targets::TargetModel;

fn check_counts(outer: usize, m: usize) -> Result<()> {
    if outer == 0 || m == 0 {
        return Err(Error::InvalidArgument("sample counts must be at least 1".into()));
    }
    Ok(())
}

/// `(1/n_outer) Σ_s [log p(x, z_s) - log (1/M) Σ_m q(z_s | eps_m)]`, `z_s ~ q`.
///
/// One bank of `M` mixing draws is shared by all outer samples. The inner
/// log-mean underestimates `log q`, so the estimate is biased upward for
/// finite `M`; the reported standard error covers the outer average only.
pub fn elbo_estimate<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    target: &T,
    q: &SemiImplicitQ,
    n_outer: usize,
    m: usize,
    rng: &mut R,
) -> Result<Estimate> {
    check_counts(n_outer, m)?;
    check_dim("target dimension", q.z_dim(), target.dim())?;
    let bank = CondMeanBank::draw(q, m, rng)?;
    let mut acc = MeanAccumulator::default();
    for _ in 0..n_outer {
        let z = q.sample(rng)?.z;
        let v = target.log_joint(&z)? - bank.log_marginal(&z)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("ELBO sample"));
        }
        acc.push(v);
    }
    Ok(acc.estimate())
}

/// Importance-sampling estimate of `log p(x)` with `q` as proposal:
/// `log (1/S) Σ_s p(x, z_s) / q_M(z_s)`, in log space throughout.
///
/// The standard error is the delta-method error of the log of the mean weight.
pub fn is_log_marginal<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    target: &T,
    q: &SemiImplicitQ,
    s: usize,
    m: usize,
    rng: &mut R,
) -> Result<Estimate> {
    check_counts(s, m)?;
    check_dim("target dimension", q.z_dim(), target.dim())?;
    let bank = CondMeanBank::draw(q, m, rng)?;
    let mut log_w = Vec::with_capacity(s);
    for _ in 0..s {
        let z = q.sample(rng)?.z;
        log_w.push(target.log_joint(&z)? - bank.log_marginal(&z)?);
    }
    let lse = logsumexp(&log_w);
    if !lse.is_finite() {
        return Err(Error::NonFinite("importance weights"));
    }
    let value = lse - (s as f64).ln();
    let rel: MeanAccumulator = log_w.iter().map(|l| (l - value).exp()).collect();
    Ok(Estimate {
        value,
        std_error: rel.standard_error(),
    })
}

fn default_outer_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_intervals: 4000,
        pieces: 32,
    }
}

/// A box in `z` containing all but a negligible amount of `q`'s mass.
fn z_box(q: &SemiImplicitQ) -> Result<Vec<(f64, f64)>> {
    const N: usize = 65;
    const R: f64 = 8.5;
    let e = q.eps_dim();
    let mut lo = vec![f64::INFINITY; q.z_dim()];
    let mut hi = vec![f64::NEG_INFINITY; q.z_dim()];
    let total = N.pow(e as u32);
    let mut eps = vec![0.0; e];
    for flat in 0..total {
        let mut k = flat;
        for x in eps.iter_mut() {
            *x = -R + 2.0 * R * (k % N) as f64 / (N - 1) as f64;
            k /= N;
        }
        let mean = q.cond_net().forward(&eps)?;
        for ((l, h), m) in lo.iter_mut().zip(hi.iter_mut()).zip(&mean) {
            *l = l.min(*m);
            *h = h.max(*m);
        }
    }
    Ok(lo
        .into_iter()
        .zip(hi)
        .zip(q.scale())
        .map(|((l, h), s)| {
            let pad = 9.0 * s + 0.05 * (h - l);
            (l - pad, h + pad)
        })
        .collect())
}

/// `E_q[log p(x, z) - log q(z)]` with both the outer expectation and
/// `log q(z)` computed by adaptive quadrature. Needs `z_dim <= 2`, `eps_dim <= 2`.
pub fn exact_elbo_quadrature<T: TargetModel + ?Sized>(target: &T, q: &SemiImplicitQ) -> Result<f64> {
    exact_elbo_quadrature_with(target, q, default_outer_opts())
}

pub fn exact_elbo_quadrature_with<T: TargetModel + ?Sized>(
    target: &T,
    q: &SemiImplicitQ,
    opts: QuadOptions,
) -> Result<f64> {
    if q.z_dim() > 2 || q.eps_dim() > 2 {
        return Err(Error::Unsupported(format!(
            "exact ELBO needs z_dim <= 2 and eps_dim <= 2, got {} and {}",
            q.z_dim(),
            q.eps_dim()
        )));
    }
    check_dim("target dimension", q.z_dim(), target.dim())?;
    let bounds = z_box(q)?;
    let mut failure = None;
    let v = integrate_box(
        |z| {
            let r = log_marginal_quadrature(q, z).and_then(|lq| {
                let lp = target.log_joint(z)?;
                let w = lq.exp();
                Ok(if w == 0.0 { 0.0 } else { w * (lp - lq) })
            });
            match r {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        &bounds,
        opts,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{ConjugateNormalModel, GaussianTarget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const MISMATCH_ELBO: f64 = -(std::f64::consts::LN_2 - 0.375);

    #[test]
    fn exact_elbo_closed_forms() {
        let q = SemiImplicitQ::linear_gaussian(2.0, 1.0).unwrap();
        let matched = GaussianTarget::new(vec![0.0], vec![5f64.sqrt()]).unwrap();
        assert!(exact_elbo_quadrature(&matched, &q).unwrap().abs() < 1e-6);
        let q = SemiImplicitQ::explicit(vec![0.0], vec![1.0]).unwrap();
        let wide = GaussianTarget::new(vec![0.0], vec![2.0]).unwrap();
        let v = exact_elbo_quadrature(&wide, &q).unwrap();
        assert!((v - MISMATCH_ELBO).abs() < 1e-6, "{v}");
        // Same mismatch, but with the variance split between mixing and conditional.
        let q = SemiImplicitQ::linear_gaussian(0.6, 0.8).unwrap();
        let v = exact_elbo_quadrature(&wide, &q).unwrap();
        assert!((v - MISMATCH_ELBO).abs() < 1e-6, "{v}");
    }

    #[test]
    fn matched_estimate_is_near_zero() {
        let q = SemiImplicitQ::explicit(vec![0.3, -0.4], vec![0.5, 2.0]).unwrap();
        let t = GaussianTarget::new(vec![0.3, -0.4], vec![0.5, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let e = elbo_estimate(&t, &q, 1000, 1, &mut rng).unwrap();
        assert!(e.value.abs() < 1e-12 && e.std_error < 1e-12);
    }

    #[test]
    fn mismatched_estimate_matches_closed_form() {
        let q = SemiImplicitQ::explicit(vec![0.0], vec![1.0]).unwrap();
        let t = GaussianTarget::new(vec![0.0], vec![2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let e = elbo_estimate(&t, &q, 20_000, 1, &mut rng).unwrap();
        assert!((e.value - MISMATCH_ELBO).abs() < 4.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn jensen_ordering_in_m() {
        let q = SemiImplicitQ::linear_gaussian(2.0, 1.0).unwrap();
        let t = GaussianTarget::new(vec![0.0], vec![5f64.sqrt()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mean_at = |m: usize, rng: &mut ChaCha8Rng| {
            let acc: MeanAccumulator = (0..200)
                .map(|_| elbo_estimate(&t, &q, 20, m, rng).unwrap().value)
                .collect();
            acc.mean()
        };
        let e1 = mean_at(1, &mut rng);
        let e100 = mean_at(100, &mut rng);
        let e10k = mean_at(10_000, &mut rng);
        assert!(e1 > e100 && e100 > e10k && e10k > -0.01, "{e1} {e100} {e10k}");
    }

    #[test]
    fn evidence_of_conjugate_model() {
        let model = ConjugateNormalModel { x: 0.0 };
        // Exact posterior N(x/2, 1/2).
        let q = SemiImplicitQ::explicit(vec![0.0], vec![0.5f64.sqrt()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let e = is_log_marginal(&model, &q, 50, 1, &mut rng).unwrap();
        assert!((e.value - model.log_evidence()).abs() < 1e-12);
        assert!((model.log_evidence() + 1.265_512).abs() < 1e-6);
        let wrong = SemiImplicitQ::explicit(vec![0.5], vec![1.0]).unwrap();
        let e = is_log_marginal(&model, &wrong, 100_000, 1, &mut rng).unwrap();
        assert!(e.value <= model.log_evidence() + 4.0 * e.std_error, "{e:?}");
        assert!((e.value - model.log_evidence()).abs() < 0.01);
    }

    struct Scaled<T>(T, f64);

    impl<T: TargetModel> TargetModel for Scaled<T> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn log_joint(&self, z: &[f64]) -> Result<f64> {
            Ok(self.0.log_joint(z)? + self.1.ln())
        }
        fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
            self.0.grad_log_joint(z)
        }
    }

    #[test]
    fn evidence_shifts_by_log_constant() {
        let model = ConjugateNormalModel { x: 1.3 };
        let q = SemiImplicitQ::linear_gaussian(0.5, 0.6).unwrap();
        let a = is_log_marginal(&model, &q, 500, 200, &mut ChaCha8Rng::seed_from_u64(34)).unwrap();
        let b = is_log_marginal(&Scaled(model, 7.0), &q, 500, 200, &mut ChaCha8Rng::seed_from_u64(34))
            .unwrap();
        assert!((b.value - a.value - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn explicit_family_with_one_inner_draw_is_plain_importance_sampling() {
        let model = ConjugateNormalModel { x: -0.7 };
        let q = SemiImplicitQ::explicit(vec![0.1], vec![0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let e = is_log_marginal(&model, &q, 64, 1, &mut rng).unwrap();
        // Replay the same stream: one bank draw (no mixing noise), then 64 samples.
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let _ = CondMeanBank::draw(&q, 1, &mut rng).unwrap();
        let mut lw = Vec::new();
        for _ in 0..64 {
            let z = q.sample(&mut rng).unwrap().z;
            let lq = q.cond_params(&[]).unwrap().log_density(&z).unwrap();
            lw.push(model.log_joint(&z).unwrap() - lq);
        }
        let expect = logsumexp(&lw) - 64f64.ln();
        assert!((e.value - expect).abs() < 1e-12);
    }

    #[test]
    fn argument_errors() {
        let q = SemiImplicitQ::linear_gaussian(1.0, 1.0).unwrap();
        let t = GaussianTarget::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        assert!(elbo_estimate(&t, &q, 0, 1, &mut rng).is_err());
        assert!(is_log_marginal(&t, &q, 1, 0, &mut rng).is_err());
        let big = SemiImplicitQ::explicit(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(exact_elbo_quadrature(&GaussianTarget::standard(3), &big).is_err());
    }
}
