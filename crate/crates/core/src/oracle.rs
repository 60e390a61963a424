//! Exact reference values for low-dimensional families: closed forms for
//! linear-Gaussian families and adaptive quadrature over `eps` otherwise.
//! These are test oracles and are far too slow for training.

use crate::conditional::{diag_gaussian_log_density, standard_normal_log_density};
use crate::error::{check_dim, Error, Result};
use crate::family::SemiImplicitQ;
use crate::quadrature::{integrate_box, QuadOptions};
use crate::tensor::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Closed form; needs a single identity layer `mean(eps) = W eps + b`.
    Conjugate,
    /// Adaptive quadrature over `eps`; needs `eps_dim <= 2`.
    Quadrature,
}

/// Half-width of the `eps` box; the standard normal mass outside is ~1e-19 per axis.
const EPS_RANGE: f64 = 9.0;

fn eps_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-11,
        max_intervals: 4000,
        pieces: 24,
    }
}

/// `(W, b)` of a family whose conditional mean is affine in `eps`.
pub fn affine_parts(q: &SemiImplicitQ) -> Result<(Vec<f64>, Vec<f64>)> {
    match q.cond_net().layers() {
        [l] if l.activation == Activation::Identity => {
            Ok((l.weight.data().to_vec(), l.bias.data().to_vec()))
        }
        _ => Err(Error::Unsupported(
            "closed-form oracle needs a single identity layer".into(),
        )),
    }
}

/// Lower Cholesky factor of a small symmetric positive-definite matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::InvalidArgument("matrix is not positive definite".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Marginal `N(b, W W^T + diag(scale^2))` of an affine family as (mean, covariance).
pub fn affine_marginal(q: &SemiImplicitQ) -> Result<(Vec<f64>, Vec<f64>)> {
    let (w, b) = affine_parts(q)?;
    let (d, e) = (q.z_dim(), q.eps_dim());
    let s = q.scale();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = (0..e).map(|k| w[i * e + k] * w[j * e + k]).sum();
        }
        cov[i * d + i] += s[i] * s[i];
    }
    Ok((b, cov))
}

/// Exact reverse conditional `q(eps | z) = N(m, S)` of an affine family,
/// `S = (I + W^T D^-1 W)^-1`, `m = S W^T D^-1 (z - b)`. Returns `(m, S)`.
pub fn affine_reverse_conditional(q: &SemiImplicitQ, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (w, b) = affine_parts(q)?;
    check_dim("oracle point", q.z_dim(), z.len())?;
    let (d, e) = (q.z_dim(), q.eps_dim());
    let inv_var: Vec<f64> = q.scale().iter().map(|s| 1.0 / (s * s)).collect();
    let mut prec = vec![0.0; e * e];
    for i in 0..e {
        for j in 0..e {
            prec[i * e + j] = (0..d).map(|k| w[k * e + i] * inv_var[k] * w[k * e + j]).sum();
        }
        prec[i * e + i] += 1.0;
    }
    let rhs: Vec<f64> = (0..e)
        .map(|i| (0..d).map(|k| w[k * e + i] * inv_var[k] * (z[k] - b[k])).sum())
        .collect();
    let l = cholesky(&prec, e)?;
    let mean = cholesky_solve(&l, e, &rhs);
    let mut cov = vec![0.0; e * e];
    for j in 0..e {
        let mut unit = vec![0.0; e];
        unit[j] = 1.0;
        let col = cholesky_solve(&l, e, &unit);
        for i in 0..e {
            cov[i * e + j] = col[i];
        }
    }
    Ok((mean, cov))
}

/// Exact `log q(z)` for an affine family.
pub fn affine_log_marginal(q: &SemiImplicitQ, z: &[f64]) -> Result<f64> {
    check_dim("oracle point", q.z_dim(), z.len())?;
    let (mean, cov) = affine_marginal(q)?;
    let d = q.z_dim();
    let l = cholesky(&cov, d)?;
    let diff: Vec<f64> = z.iter().zip(&mean).map(|(z, m)| z - m).collect();
    let sol = cholesky_solve(&l, d, &diff);
    let quad: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();
    let log_det: f64 = (0..d).map(|i| 2.0 * l[i * d + i].ln()).sum();
    Ok(-0.5 * (quad + log_det + d as f64 * (2.0 * std::f64::consts::PI).ln()))
}

fn check_quadrature_dims(q: &SemiImplicitQ) -> Result<()> {
    if q.eps_dim() > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature oracle needs eps_dim <= 2, got {}",
            q.eps_dim()
        )));
    }
    Ok(())
}

/// Log of the joint `q(eps) q(z | eps)` and the conditional mean at `eps`.
fn log_integrand(q: &SemiImplicitQ, scale: &[f64], z: &[f64], eps: &[f64]) -> (f64, Vec<f64>) {
    let mean = q.cond_net().forward(eps).expect("eps has the network's input width");
    let v = standard_normal_log_density(eps) + diag_gaussian_log_density(z, &mean, scale);
    (v, mean)
}

/// Largest log-integrand on a coarse grid; used to scale the integrand into range.
fn grid_max(q: &SemiImplicitQ, scale: &[f64], z: &[f64]) -> f64 {
    const N: usize = 97;
    let e = q.eps_dim();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; e];
    let mut eps = vec![0.0; e];
    loop {
        for (x, i) in eps.iter_mut().zip(&idx) {
            *x = -EPS_RANGE + 2.0 * EPS_RANGE * (*i as f64) / (N - 1) as f64;
        }
        best = best.max(log_integrand(q, scale, z, &eps).0);
        let mut k = 0;
        loop {
            if k == e {
                return best;
            }
            idx[k] += 1;
            if idx[k] < N {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `(log q(z), grad_z log q(z))` by quadrature over `eps`.
fn quadrature_marginal(q: &SemiImplicitQ, z: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
    check_quadrature_dims(q)?;
    check_dim("oracle point", q.z_dim(), z.len())?;
    let scale = q.scale();
    if q.eps_dim() == 0 {
        let p = q.cond_params(&[])?;
        return Ok((p.log_density(z)?, p.grad_log_density_z(z)?));
    }
    let shift = grid_max(q, &scale, z);
    let bounds = vec![(-EPS_RANGE, EPS_RANGE); q.eps_dim()];
    let mass = integrate_box(
        |eps| (log_integrand(q, &scale, z, eps).0 - shift).exp(),
        &bounds,
        eps_opts(),
    )?;
    if !(mass > 0.0) {
        return Err(Error::Quadrature("marginal density underflowed".into()));
    }
    let mut grad = Vec::new();
    if with_grad {
        for j in 0..q.z_dim() {
            let num = integrate_box(
                |eps| {
                    let (v, mean) = log_integrand(q, &scale, z, eps);
                    (v - shift).exp() * (-(z[j] - mean[j]) / (scale[j] * scale[j]))
                },
                &bounds,
                eps_opts(),
            )?;
            grad.push(num / mass);
        }
    }
    Ok((mass.ln() + shift, grad))
}

/// `log q(z)` by quadrature over `eps` (or exactly when `eps_dim == 0`).
pub fn log_marginal_quadrature(q: &SemiImplicitQ, z: &[f64]) -> Result<f64> {
    Ok(quadrature_marginal(q, z, false)?.0)
}

/// `grad_z log q(z) = E_{q(eps|z)}[grad_z log q(z | eps)]`, computed exactly.
pub fn grad_z_log_marginal_oracle(q: &SemiImplicitQ, z: &[f64], mode: OracleMode) -> Result<Vec<f64>> {
    match mode {
        OracleMode::Conjugate => {
            check_dim("oracle point", q.z_dim(), z.len())?;
            let (mean, cov) = affine_marginal(q)?;
            let d = q.z_dim();
            let l = cholesky(&cov, d)?;
            let diff: Vec<f64> = z.iter().zip(&mean).map(|(z, m)| m - z).collect();
            Ok(cholesky_solve(&l, d, &diff))
        }
        OracleMode::Quadrature => Ok(quadrature_marginal(q, z, true)?.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_check, Layer, MlpParams, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_gaussian_closed_forms() {
        let q = SemiImplicitQ::linear_gaussian(2.0, 1.0).unwrap();
        let g = grad_z_log_marginal_oracle(&q, &[1.0], OracleMode::Conjugate).unwrap();
        assert!((g[0] + 0.2).abs() < 1e-14);
        let (m, s) = affine_reverse_conditional(&q, &[1.0]).unwrap();
        assert!((m[0] - 0.4).abs() < 1e-14 && (s[0] - 0.2).abs() < 1e-14);
        let lq = affine_log_marginal(&q, &[1.0]).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * 5.0).ln() - 0.1;
        assert!((lq - expect).abs() < 1e-14);
        assert!((lq + 1.823_66).abs() < 1e-5);
    }

    #[test]
    fn quadrature_agrees_with_closed_form() {
        let q = SemiImplicitQ::linear_gaussian(2.0, 1.0).unwrap();
        for z in [-3.0, 0.0, 1.0, 4.5] {
            let lq = log_marginal_quadrature(&q, &[z]).unwrap();
            assert!((lq - affine_log_marginal(&q, &[z]).unwrap()).abs() < 1e-9);
            let g = grad_z_log_marginal_oracle(&q, &[z], OracleMode::Quadrature).unwrap();
            assert!((g[0] + z / 5.0).abs() < 1e-9);
        }
        // Two mixing dimensions, two latent dimensions.
        let layer = Layer::new(
            Tensor::matrix(2, 2, vec![1.0, 0.5, -0.3, 0.8]).unwrap(),
            Tensor::vector(vec![0.2, -0.1]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let q = SemiImplicitQ::new(MlpParams::new(vec![layer]).unwrap(), vec![0.0, -0.5]).unwrap();
        let z = [0.7, -0.4];
        let lq = log_marginal_quadrature(&q, &z).unwrap();
        assert!((lq - affine_log_marginal(&q, &z).unwrap()).abs() < 1e-8);
        let a = grad_z_log_marginal_oracle(&q, &z, OracleMode::Quadrature).unwrap();
        let b = grad_z_log_marginal_oracle(&q, &z, OracleMode::Conjugate).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_network_reduces_to_conditional_score() {
        let q = SemiImplicitQ::constant(1, vec![0.5, -1.0], vec![0.7, 1.2]).unwrap();
        let z = [0.1, 0.3];
        let g = grad_z_log_marginal_oracle(&q, &z, OracleMode::Quadrature).unwrap();
        let expect = q.cond_params(&[0.0]).unwrap().grad_log_density_z(&z).unwrap();
        for (a, b) in g.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn nonlinear_quadrature_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = SemiImplicitQ::with_mlp(1, 1, &[8], 0.5, &mut rng).unwrap();
        for z in [-1.0, 0.2, 1.3] {
            let g = grad_z_log_marginal_oracle(&q, &[z], OracleMode::Quadrature).unwrap();
            let err = finite_difference_check(|z| log_marginal_quadrature(&q, z), &[z], &g, 1e-4)
                .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn unsupported_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = SemiImplicitQ::with_mlp(3, 1, &[4], 0.5, &mut rng).unwrap();
        assert!(matches!(log_marginal_quadrature(&q, &[0.0]), Err(Error::Unsupported(_))));
        assert!(matches!(
            grad_z_log_marginal_oracle(&q, &[0.0], OracleMode::Conjugate),
            Err(Error::Unsupported(_))
        ));
    }
}
