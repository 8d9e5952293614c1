//! Multilayer perceptrons over `f64` slices. Weights are row-major
//! `(out_dim, in_dim)`; hidden layers are rectified-linear, the output layer
//! is linear or tanh.

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the post-activation output, which is all
    /// the backward pass stores.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major (out_dim, in_dim).
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    #[inline]
    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.b[o];
            for (wi, xi) in row.iter().zip(input) {
                z = wi.mul_add(*xi, z);
            }
            *slot = self.activation.forward(z);
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Builds a network with the given dimension chain. All layers before the
    /// last are rectified-linear; the last uses `output_activation`. Weights
    /// and biases start uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[k], dims[k + 1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
            let activation = if k + 2 == dims.len() {
                output_activation
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                in_dim,
                out_dim,
                w,
                b,
                activation,
            });
        }
        MlpParams { layers }
    }

    /// Shrinks the last layer; actors and prediction heads start near zero so
    /// early TD targets stay small.
    pub fn scale_final_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            for w in &mut last.w {
                *w *= factor;
            }
            for b in &mut last.b {
                *b *= factor;
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters in a fixed order (per layer: weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten); the layer structure is kept.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                what: "flat parameter vector",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            l.w.copy_from_slice(&flat[at..at + l.w.len()]);
            at += l.w.len();
            l.b.copy_from_slice(&flat[at..at + l.b.len()]);
            at += l.b.len();
        }
        Ok(())
    }

    /// Forward pass keeping every layer's post-activation output, for reuse
    /// by the backward pass.
    pub(crate) fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape {
                what: "mlp input",
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for l in &self.layers {
            let mut y = vec![0.0; l.out_dim];
            l.forward_into(cur, &mut y);
            outs.push(y);
            cur = outs.last().unwrap();
        }
        Ok(outs)
    }

    /// Backprop from a trace produced by [`forward_trace`](Self::forward_trace)
    /// on the same input. `upstream` is dL/d(output); parameter gradients are
    /// accumulated into `grads` (callers zero or reuse across a batch), and
    /// the gradient with respect to the input is returned.
    pub(crate) fn backward_from_trace(
        &self,
        input: &[f64],
        trace: &[Vec<f64>],
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape {
                what: "mlp upstream gradient",
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        let mut d_out = upstream.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let layer_in: &[f64] = if k == 0 { input } else { &trace[k - 1] };
            let layer_out = &trace[k];
            let g = &mut grads.layers[k];
            let mut d_in = vec![0.0; l.in_dim];
            for o in 0..l.out_dim {
                let dz = d_out[o] * l.activation.grad_from_output(layer_out[o]);
                g.db[o] += dz;
                let row = o * l.in_dim;
                for i in 0..l.in_dim {
                    g.dw[row + i] = dz.mul_add(layer_in[i], g.dw[row + i]);
                    d_in[i] = l.w[row + i].mul_add(dz, d_in[i]);
                }
            }
            d_out = d_in;
        }
        Ok(d_out)
    }
}

/// Gradient buffers shaped exactly like an [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    dw: vec![0.0; l.w.len()],
                    db: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.dw.fill(0.0);
            l.db.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for v in &mut l.dw {
                *v *= factor;
            }
            for v in &mut l.db {
                *v *= factor;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.dw);
            out.extend_from_slice(&l.db);
        }
        out
    }

    pub fn matches_shape(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.dw.len() == l.w.len() && g.db.len() == l.b.len())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.dw.iter().all(|v| v.is_finite()) && l.db.iter().all(|v| v.is_finite())
        })
    }
}

/// Evaluates the network on one input vector.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    let trace = params.forward_trace(input)?;
    Ok(trace.into_iter().next_back().unwrap_or_default())
}

/// Exact gradients of `<upstream, output>` with respect to every parameter
/// and to the input. Intermediates are recomputed from the input.
pub fn mlp_backward(
    params: &MlpParams,
    input: &[f64],
    upstream: &[f64],
) -> Result<(MlpGrads, Vec<f64>)> {
    let trace = params.forward_trace(input)?;
    let mut grads = MlpGrads::zeros_like(params);
    let input_grad = params.backward_from_trace(input, &trace, upstream, &mut grads)?;
    Ok((grads, input_grad))
}
