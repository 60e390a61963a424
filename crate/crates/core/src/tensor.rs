//! Dense tensors, small multilayer perceptrons and their vector-Jacobian products.
//!
//! There is no general computation graph here. The estimators only ever need
//! to push a vector back through the conditional-mean network (with respect
//! to its parameters, its input, or both), so [`ForwardTrace`] records the
//! activations of one forward pass and replays them backwards on demand.

use rand::Rng;

use crate::error::{check_dim, check_finite, Error, Result};

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        check_dim("tensor data length", expected, data.len())?;
        check_finite("tensor data", &data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a rank-2 tensor (1 for a vector).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns of a rank-2 tensor (the length for a vector).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => self.data.len(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

/// Elementwise nonlinearity applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative at the pre-activation `x`. The ReLU subgradient at exactly 0 is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "softplus" => Some(Activation::Softplus),
            _ => None,
        }
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "softplus inverse needs a positive finite value, got {y}"
        )));
    }
    // log(e^y - 1) = y + log(1 - e^-y)
    Ok(y + (-(-y).exp()).ln_1p())
}

/// One dense layer: `activation(W x + b)` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::InvalidArgument(
                "layer weight must be a rank-2 tensor".into(),
            ));
        }
        check_dim("layer bias", weight.shape()[0], bias.len())?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
            activation: self.activation,
        }
    }
}

/// Weights of a feed-forward network. Gradients with respect to the
/// weights reuse this type, so "MlpParams-shaped" values are just `MlpParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            check_dim("consecutive layer dims", pair[0].out_dim(), pair[1].in_dim())?;
        }
        Ok(Self { layers })
    }

    /// Xavier-uniform weights and zero biases. `dims` lists every width,
    /// input first; hidden layers use `hidden`, the last layer `output`.
    pub fn xavier<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "network needs an input and an output width".into(),
            ));
        }
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (k, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let activation = if k + 1 == n_layers { output } else { hidden };
            layers.push(Layer::new(
                Tensor::matrix(fan_out, fan_in, w)?,
                Tensor::zeros(vec![fan_out]),
                activation,
            )?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in layer order, each layer as weights (row-major) then bias.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
    }

    /// Inverse of [`flatten_into`](Self::flatten_into); returns the number of values consumed.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<usize> {
        if flat.len() < self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "flat network parameters",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for part in [&mut l.weight, &mut l.bias] {
                let n = part.len();
                part.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(offset)
    }

    /// `self += alpha * other`, shapes assumed equal.
    pub fn add_scaled(&mut self, other: &MlpParams, alpha: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += alpha * y;
            }
            for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|x| *x *= alpha);
            l.bias.data_mut().iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()))
            .map(|x| x * x)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.data().iter().all(|x| x.is_finite())
                && l.bias.data().iter().all(|x| x.is_finite())
        })
    }

    /// Output of the final layer for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut x = input.to_vec();
        for l in &self.layers {
            x = dense(l, &x);
        }
        check_finite("network output", &x)?;
        Ok(x)
    }

    /// Row-wise forward pass over a `[batch, in]` tensor.
    pub fn forward_batch(&self, inputs: &Tensor) -> Result<Tensor> {
        check_dim("batched network input", self.input_dim(), inputs.cols())?;
        let rows = inputs.rows();
        let mut out = Vec::with_capacity(rows * self.output_dim());
        for r in 0..rows {
            let mut x = inputs.row(r).to_vec();
            for l in &self.layers {
                x = dense(l, &x);
            }
            out.extend_from_slice(&x);
        }
        check_finite("network output", &out)?;
        Tensor::matrix(rows, self.output_dim(), out)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for l in &self.layers {
            let a = affine(l, &x);
            let next: Vec<f64> = a.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(a);
        }
        check_finite("network output", &x)?;
        Ok(ForwardTrace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Vector-Jacobian products of the output with respect to all
    /// parameters and the input.
    pub fn vjp(&self, input: &[f64], upstream: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
        let trace = self.trace(input)?;
        let mut grads = self.zeros_like();
        let input_grad = trace.backprop(self, upstream, Some((&mut grads, 1.0)))?;
        check_finite("parameter gradient", &flatten(&grads))?;
        Ok((grads, input_grad))
    }
}

fn flatten(p: &MlpParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.num_params());
    p.flatten_into(&mut v);
    v
}

#[inline]
fn affine(l: &Layer, x: &[f64]) -> Vec<f64> {
    let cols = l.in_dim();
    let w = l.weight.data();
    l.bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, b)| {
            let row = &w[o * cols..(o + 1) * cols];
            b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

#[inline]
fn dense(l: &Layer, x: &[f64]) -> Vec<f64> {
    let mut a = affine(l, x);
    if l.activation != Activation::Identity {
        a.iter_mut().for_each(|v| *v = l.activation.apply(*v));
    }
    a
}

/// Recorded activations of a single forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pushes `upstream` (d/d output) back through the network. When
    /// `param_grads` is given, `weight * d/dparams` is added into it.
    /// Returns d/d input.
    pub fn backprop(
        &self,
        params: &MlpParams,
        upstream: &[f64],
        mut param_grads: Option<(&mut MlpParams, f64)>,
    ) -> Result<Vec<f64>> {
        check_dim("vjp upstream", params.output_dim(), upstream.len())?;
        let mut delta = upstream.to_vec();
        for (k, layer) in params.layers.iter().enumerate().rev() {
            for (d, &a) in delta.iter_mut().zip(&self.pre[k]) {
                *d *= layer.activation.derivative(a);
            }
            let x = &self.inputs[k];
            let cols = layer.in_dim();
            if let Some((grads, weight)) = param_grads.as_mut() {
                let g = &mut grads.layers[k];
                let gw = g.weight.data_mut();
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let s = *weight * d;
                    for (gwi, xi) in gw[o * cols..(o + 1) * cols].iter_mut().zip(x) {
                        *gwi += s * xi;
                    }
                }
                for (gb, &d) in g.bias.data_mut().iter_mut().zip(&delta) {
                    *gb += *weight * d;
                }
            }
            let w = layer.weight.data();
            let mut next = vec![0.0; cols];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (n, wi) in next.iter_mut().zip(&w[o * cols..(o + 1) * cols]) {
                    *n += d * wi;
                }
            }
            delta = next;
        }
        check_finite("input gradient", &delta)?;
        Ok(delta)
    }
}

/// Max over coordinates of `|analytic - central difference| / max(1, |central difference|)`.
pub fn finite_difference_check<F>(mut f: F, x: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_dim("analytic gradient", x.len(), analytic.len())?;
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
