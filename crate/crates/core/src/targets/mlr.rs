//! Bayesian multinomial logistic regression with a standard normal prior.
//!
//! `z` packs the `K` weight vectors first (`z[k*D + d]`) and the `K`
//! intercepts after them (`z[K*D + k]`).

use std::sync::Arc;

use rand::Rng;

use super::{LabeledDataset, TargetModel};
use crate::error::{check_dim, Error, Result};
use crate::family::SemiImplicitQ;
use crate::stats::logsumexp;

fn logits(z: &[f64], x: &[f64], k: usize, out: &mut [f64]) {
    let d = x.len();
    for (c, o) in out.iter_mut().enumerate().take(k) {
        let w = &z[c * d..(c + 1) * d];
        *o = z[k * d + c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn validate(z: &[f64], data: &LabeledDataset, rows: &[usize]) -> Result<()> {
    check_dim("mlr parameter vector", data.mlr_dim(), z.len())?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    if let Some(r) = rows.iter().find(|r| **r >= data.len()) {
        return Err(Error::InvalidArgument(format!("batch row {r} out of range")));
    }
    Ok(())
}

fn joint(
    z: &[f64],
    data: &LabeledDataset,
    rows: &[usize],
    n_total: usize,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    validate(z, data, rows)?;
    let (k, d) = (data.num_classes(), data.dim());
    let scale = n_total as f64 / rows.len() as f64;
    let mut lp = -0.5 * z.iter().map(|v| v * v).sum::<f64>()
        - 0.5 * z.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    if let Some(g) = grad.as_deref_mut() {
        for (g, v) in g.iter_mut().zip(z) {
            *g = -v;
        }
    }
    let mut eta = vec![0.0; k];
    let mut ll = 0.0;
    for &r in rows {
        let x = data.row(r);
        let y = data.label(r);
        logits(z, x, k, &mut eta);
        let lse = logsumexp(&eta);
        ll += eta[y] - lse;
        if let Some(g) = grad.as_deref_mut() {
            for c in 0..k {
                let resid = scale * (f64::from(u8::from(c == y)) - (eta[c] - lse).exp());
                for (gw, xv) in g[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *gw += resid * xv;
                }
                g[k * d + c] += resid;
            }
        }
    }
    lp += scale * ll;
    Ok(lp)
}

/// `log N(z | 0, I) + (n_total / |rows|) Σ_rows log softmax_y(x^T z_k + z_0k)`.
pub fn mlr_log_joint(z: &[f64], data: &LabeledDataset, rows: &[usize], n_total: usize) -> Result<f64> {
    joint(z, data, rows, n_total, None)
}

pub fn mlr_grad_log_joint(
    z: &[f64],
    data: &LabeledDataset,
    rows: &[usize],
    n_total: usize,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; z.len()];
    joint(z, data, rows, n_total, Some(&mut g))?;
    Ok(g)
}

/// Per test point, `log (1/S) Σ_s p(y_n | x_n, z_s)` for fixed samples.
pub fn mlr_predictive_loglik_points(samples: &[Vec<f64>], test: &LabeledDataset) -> Result<Vec<f64>> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("need at least one posterior sample".into()));
    }
    for z in samples {
        check_dim("mlr parameter vector", test.mlr_dim(), z.len())?;
    }
    let k = test.num_classes();
    let mut eta = vec![0.0; k];
    let mut per_sample = vec![0.0; samples.len()];
    let log_s = (samples.len() as f64).ln();
    Ok((0..test.len())
        .map(|n| {
            let (x, y) = (test.row(n), test.label(n));
            for (s, z) in samples.iter().enumerate() {
                logits(z, x, k, &mut eta);
                per_sample[s] = eta[y] - logsumexp(&eta);
            }
            logsumexp(&per_sample) - log_s
        })
        .collect())
}

/// Mean of [`mlr_predictive_loglik_points`] over the test set.
pub fn mlr_predictive_loglik_from_samples(samples: &[Vec<f64>], test: &LabeledDataset) -> Result<f64> {
    let points = mlr_predictive_loglik_points(samples, test)?;
    Ok(points.iter().sum::<f64>() / points.len() as f64)
}

pub fn mlr_predictive_loglik<R: Rng + ?Sized>(
    q: &SemiImplicitQ,
    test: &LabeledDataset,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let samples = (0..n_samples)
        .map(|_| q.sample(rng).map(|r| r.z))
        .collect::<Result<Vec<_>>>()?;
    mlr_predictive_loglik_from_samples(&samples, test)
}

/// Logistic-regression target over a shared dataset, optionally restricted
/// to a minibatch whose likelihood is rescaled to the full dataset size.
#[derive(Debug, Clone)]
pub struct MlrTarget {
    data: Arc<LabeledDataset>,
    rows: Vec<usize>,
}

impl MlrTarget {
    pub fn full(data: Arc<LabeledDataset>) -> Self {
        let rows = (0..data.len()).collect();
        Self { data, rows }
    }

    pub fn with_batch(data: Arc<LabeledDataset>, rows: Vec<usize>) -> Result<Self> {
        if rows.is_empty() || rows.iter().any(|r| *r >= data.len()) {
            return Err(Error::InvalidArgument("minibatch rows must be non-empty and in range".into()));
        }
        Ok(Self { data, rows })
    }

    pub fn set_batch(&mut self, rows: Vec<usize>) -> Result<()> {
        *self = Self::with_batch(self.data.clone(), rows)?;
        Ok(())
    }

    pub fn data(&self) -> &LabeledDataset {
        &self.data
    }

    pub fn batch(&self) -> &[usize] {
        &self.rows
    }
}

impl TargetModel for MlrTarget {
    fn dim(&self) -> usize {
        self.data.mlr_dim()
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        mlr_log_joint(z, &self.data, &self.rows, self.data.len())
    }

    fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        mlr_grad_log_joint(z, &self.data, &self.rows, self.data.len())
    }

    fn log_joint_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; z.len()];
        let v = joint(z, &self.data, &self.rows, self.data.len(), Some(&mut g))?;
        Ok((v, g))
    }

    fn n_total(&self) -> usize {
        self.data.len()
    }
}
