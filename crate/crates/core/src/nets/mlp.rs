use serde::{Deserialize, Serialize};

use super::{Parameters, TensorRef};
use crate::error::{invalid, shape_err, Result};
use crate::numerics::{gemm, truncated_normal, Matrix, Op, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Weight initialisation for dense layers. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Truncated normal with fixed σ (two-sigma bound).
    TruncatedNormal { sigma: f64 },
    /// Truncated normal with σ = 1/√fan_in.
    FanIn,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    names: Vec<(String, String)>,
}

impl MlpParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("an MLP needs at least one layer");
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.rows() {
                return shape_err(format!("layer {l}: bias length vs weight rows"));
            }
            if l > 0 && layers[l - 1].weights.rows() != layer.weights.cols() {
                return shape_err(format!("layer {l} does not chain onto layer {}", l - 1));
            }
        }
        if layers.last().unwrap().activation != Activation::Linear {
            return invalid("final MLP layer must be linear");
        }
        let names = (0..layers.len())
            .map(|l| (format!("layer{l}.weights"), format!("layer{l}.bias")))
            .collect();
        Ok(Self { layers, names })
    }

    /// Layers mapping `sizes[0] → sizes[1] → … → sizes[n]`; every layer but
    /// the last uses `hidden`.
    pub fn init(sizes: &[usize], hidden: Activation, init: Init, rng: &mut RngStream) -> Result<Self> {
        if sizes.len() < 2 {
            return invalid("need at least input and output sizes");
        }
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let sigma = match init {
                Init::TruncatedNormal { sigma } => Some(sigma),
                Init::FanIn => Some(1.0 / (fan_in as f64).sqrt()),
                Init::Zeros => None,
            };
            let mut weights = Matrix::zeros(fan_out, fan_in);
            if let Some(sigma) = sigma {
                for w in weights.as_mut_slice() {
                    *w = truncated_normal(sigma, rng)?;
                }
            }
            layers.push(Dense {
                weights,
                bias: vec![0.0; fan_out],
                activation: if l + 1 == n { Activation::Linear } else { hidden },
            });
        }
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    /// `Π_l W_l` when every layer is linear.
    pub fn effective_matrix(&self) -> Option<Matrix> {
        if self.layers.iter().any(|l| l.activation != Activation::Linear) {
            return None;
        }
        let mut acc = self.layers[0].weights.clone();
        for layer in &self.layers[1..] {
            acc = layer.weights.matmul(&acc).expect("chained layers");
        }
        Some(acc)
    }
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.layers
            .iter()
            .zip(&self.names)
            .flat_map(|(layer, (wn, bn))| {
                [
                    TensorRef {
                        name: wn,
                        shape: vec![layer.weights.rows(), layer.weights.cols()],
                        data: layer.weights.as_slice(),
                    },
                    TensorRef {
                        name: bn,
                        shape: vec![layer.bias.len()],
                        data: &layer.bias,
                    },
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|layer| [layer.weights.as_mut_slice(), layer.bias.as_mut_slice()])
            .collect()
    }
}

/// Per-layer inputs and pre-activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `inputs[l]` is the B×in_l input to layer l.
    pub inputs: Vec<Matrix>,
    /// `preacts[l]` is the B×out_l pre-activation of layer l.
    pub preacts: Vec<Matrix>,
}

pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    let xb = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let (y, cache) = mlp_forward_batch(params, &xb)?;
    Ok((y.into_vec(), cache))
}

/// Rows of `x` are samples.
pub fn mlp_forward_batch(params: &MlpParams, x: &Matrix) -> Result<(Matrix, MlpCache)> {
    if x.cols() != params.input_dim() {
        return shape_err(format!(
            "input width {} but network expects {}",
            x.cols(),
            params.input_dim()
        ));
    }
    let b = x.rows();
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut preacts = Vec::with_capacity(params.layers.len());
    let mut h = x.clone();
    for layer in &params.layers {
        let mut z = Matrix::zeros(b, layer.weights.rows());
        for i in 0..b {
            z.row_mut(i).copy_from_slice(&layer.bias);
        }
        gemm(Op::N, Op::T, 1.0, h.view(), layer.weights.view(), 1.0, &mut z);
        let mut a = z.clone();
        if layer.activation != Activation::Linear {
            for v in a.as_mut_slice() {
                *v = layer.activation.apply(*v);
            }
        }
        inputs.push(h);
        preacts.push(z);
        h = a;
    }
    Ok((h, MlpCache { inputs, preacts }))
}

/// Loss `mean_b ‖ŷ_b − y_b‖²` and its exact gradient.
pub fn mlp_l2_grad(params: &MlpParams, x: &Matrix, y: &Matrix) -> Result<(f64, MlpParams)> {
    if x.rows() == 0 {
        return invalid("empty batch");
    }
    if y.rows() != x.rows() || y.cols() != params.output_dim() {
        return shape_err(format!(
            "targets {:?} for batch of {} and output width {}",
            y.shape(),
            x.rows(),
            params.output_dim()
        ));
    }
    let (out, cache) = mlp_forward_batch(params, x)?;
    let b = x.rows() as f64;
    let mut delta = out.sub(y)?;
    let loss = delta.as_slice().iter().map(|d| d * d).sum::<f64>() / b;
    for d in delta.as_mut_slice() {
        *d *= 2.0 / b;
    }

    let mut grads = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        if layer.activation != Activation::Linear {
            for (d, z) in delta.as_mut_slice().iter_mut().zip(cache.preacts[l].as_slice()) {
                *d *= layer.activation.derivative(*z);
            }
        }
        let g = &mut grads.layers[l];
        gemm(Op::T, Op::N, 1.0, delta.view(), cache.inputs[l].view(), 0.0, &mut g.weights);
        for i in 0..delta.rows() {
            for (gb, d) in g.bias.iter_mut().zip(delta.row(i)) {
                *gb += d;
            }
        }
        if l > 0 {
            let mut prev = Matrix::zeros(delta.rows(), layer.weights.cols());
            gemm(Op::N, Op::N, 1.0, delta.view(), layer.weights.view(), 0.0, &mut prev);
            delta = prev;
        }
    }
    Ok((loss, grads))
}
