//! Labelled classification data: CSV ingestion and a synthetic Gaussian-blobs generator.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature preprocessing applied at load time; recorded in run metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    /// Divide every feature by 255 (pixel data).
    pub scale_255: bool,
    /// Standardize columns with training-set statistics (see [`Standardizer`]).
    pub standardize: bool,
    /// Fix the number of classes instead of inferring `max(label) + 1`.
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::InvalidArgument("features must be an N x D matrix".into()));
        }
        crate::error::check_dim("dataset labels", features.rows(), labels.len())?;
        if num_classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, y)| **y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} at row {i} is outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Number of parameters of a multinomial logistic regression on this data.
    pub fn mlr_dim(&self) -> usize {
        self.num_classes * (self.dim() + 1)
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::InvalidArgument(format!("row {r} out of range")));
            }
            data.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Self::new(Tensor::matrix(rows.len(), d, data)?, labels, self.num_classes)
    }
}

/// Column means and standard deviations fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get unit scale so they map to zero.
    pub fn fit(data: &LabeledDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("cannot standardize an empty dataset".into()));
        }
        let (n, d) = (data.len() as f64, data.dim());
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for (m, x) in mean.iter_mut().zip(data.row(i)) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..data.len() {
            for ((v, x), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &mut LabeledDataset) -> Result<()> {
        crate::error::check_dim("standardizer width", self.mean.len(), data.dim())?;
        let d = data.dim();
        for row in data.features.data_mut().chunks_mut(d.max(1)) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }
}

/// Reads `label,feature_1,...,feature_D` rows with a header line.
///
/// Applies `scale_255` here; standardization needs training statistics and is
/// left to the caller.
pub fn load_dataset(path: &Path, pre: &Preprocess) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, pre)
}

fn read_csv<R: std::io::Read>(reader: R, pre: &Preprocess) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "need a label column and at least one feature column".into(),
        });
    }
    let mut seen = HashSet::new();
    for name in header.iter() {
        if !seen.insert(name) {
            return Err(Error::Parse {
                line: 1,
                message: format!("duplicate column `{name}`"),
            });
        }
    }
    let d = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse { line, message };
        if rec.len() != d + 1 {
            return Err(err(format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let label: usize = rec[0]
            .parse()
            .map_err(|_| err(format!("label `{}` is not a non-negative integer", &rec[0])))?;
        if let Some(k) = pre.num_classes {
            if label >= k {
                return Err(err(format!("label {label} is outside [0, {k})")));
            }
        }
        labels.push(label);
        for (j, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(format!("column `{}`: bad value `{field}`", &header[j])))?;
            features.push(if pre.scale_255 { v / 255.0 } else { v });
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "dataset has no rows".into(),
        });
    }
    let k = pre
        .num_classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    LabeledDataset::new(Tensor::matrix(labels.len(), d, features)?, labels, k)
}

/// `k` isotropic unit-variance clusters in `d` dimensions with centres drawn
/// from `N(0, center_scale^2 I)`; returns a train and a test split sharing centres.
pub fn gaussian_blobs<R: Rng + ?Sized>(
    n_train: usize,
    n_test: usize,
    d: usize,
    k: usize,
    center_scale: f64,
    rng: &mut R,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if d == 0 || k < 2 || n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument(
            "blobs need d >= 1, k >= 2 and non-empty splits".into(),
        ));
    }
    let centres: Vec<f64> = (0..k * d)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            center_scale * e
        })
        .collect();
    let mut split = |n: usize| -> Result<LabeledDataset> {
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..k);
            y.push(c);
            for j in 0..d {
                let e: f64 = StandardNormal.sample(rng);
                x.push(centres[c * d + j] + e);
            }
        }
        LabeledDataset::new(Tensor::matrix(n, d, x)?, y, k)
    };
    let train = split(n_train)?;
    let test = split(n_test)?;
    Ok((train, test))
}
