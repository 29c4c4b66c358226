//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Weight matrices are stored `fan_in × fan_out` so a batch `X` (rows are
//! samples) maps to `X·W + b`. Flat parameter order is, per layer, the
//! column-major weights followed by the bias.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn affine(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weights;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }
}

/// Gradient of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// How dropout masks are produced in a forward pass.
pub enum Dropout<'a> {
    Off,
    Sample(&'a mut RngStream),
    Fixed(&'a [DMatrix<f64>]),
}

pub struct ForwardCache {
    /// inputs to each layer (post-activation, post-dropout of the previous)
    inputs: Vec<DMatrix<f64>>,
    /// pre-activations of each layer
    pre: Vec<DMatrix<f64>>,
    /// dropout mask applied to each layer's output, if any
    masks: Vec<Option<DMatrix<f64>>>,
    pub output: DMatrix<f64>,
}

impl ForwardCache {
    /// Masks that were applied, in layer order (for replay via `Dropout::Fixed`).
    pub fn masks(&self) -> Vec<DMatrix<f64>> {
        self.masks.iter().flatten().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub dropout_rate: f64,
}

impl Network {
    /// He-style init: zero-mean uniform weights with standard deviation
    /// √(2 / fan_in); zero biases. ReLU on every layer but the last, unless
    /// `activations` is given explicitly.
    pub fn new(
        sizes: &[usize],
        activations: Option<&[Activation]>,
        dropout_rate: f64,
        rng: &mut RngStream,
    ) -> Result<Network> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "invalid layer sizes {sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {dropout_rate} outside [0,1)"
            )));
        }
        let n_layers = sizes.len() - 1;
        if let Some(a) = activations {
            if a.len() != n_layers {
                return Err(Error::InvalidConfig(
                    "one activation per layer required".into(),
                ));
            }
        }
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights =
                    DMatrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_range(-bound, bound));
                let activation = match activations {
                    Some(a) => a[l],
                    None if l + 1 == n_layers => Activation::Identity,
                    None => Activation::Relu,
                };
                Dense {
                    weights,
                    bias: DVector::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Network {
            layers,
            dropout_rate,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::fan_out));
        s
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Dropout follows every hidden ReLU layer.
    fn has_dropout(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() && self.layers[layer].activation == Activation::Relu
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    /// (offset, len, fan_in) of each parameter group in flat order.
    pub fn param_groups(&self) -> Vec<(usize, usize, usize)> {
        let mut at = 0;
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push((at, l.weights.len(), l.fan_in()));
            at += l.weights.len();
            out.push((at, l.bias.len(), l.fan_in()));
            at += l.bias.len();
        }
        out
    }

    pub fn forward(&self, x: &DMatrix<f64>, mut dropout: Dropout<'_>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::new();
        let mut current = x.clone();
        let mut fixed_at = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current);
            let mut a = match layer.activation {
                Activation::Relu => z.map(|v| v.max(0.0)),
                Activation::Identity => z.clone(),
            };
            if self.has_dropout(l) {
                let mask = match &mut dropout {
                    Dropout::Off => None,
                    Dropout::Sample(rng) if self.dropout_rate > 0.0 => {
                        let keep = 1.0 - self.dropout_rate;
                        Some(DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                            if rng.uniform() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        }))
                    }
                    Dropout::Sample(_) => None,
                    Dropout::Fixed(given) => {
                        let m = given.get(fixed_at).cloned();
                        fixed_at += 1;
                        m
                    }
                };
                if let Some(mask) = &mask {
                    a.component_mul_assign(mask);
                }
                masks.push(mask);
            } else {
                masks.push(None);
            }
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            masks,
            output: current,
        })
    }

    pub fn output(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(x, Dropout::Off)?.output)
    }

    /// Backpropagates `d_output` (dL/d output) through a cached pass.
    pub fn backward(&self, cache: &ForwardCache, d_output: DMatrix<f64>) -> Vec<DenseGrad> {
        let mut grads: Vec<Option<DenseGrad>> = vec![None; self.layers.len()];
        let mut delta = d_output;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if let Some(mask) = &cache.masks[l] {
                delta.component_mul_assign(mask);
            }
            if layer.activation == Activation::Relu {
                delta.zip_apply(&cache.pre[l], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let gw = cache.inputs[l].tr_mul(&delta);
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if l > 0 {
                delta = &delta * layer.weights.transpose();
            }
            grads[l] = Some(DenseGrad {
                weights: gw,
                bias: gb,
            });
        }
        grads
            .into_iter()
            .map(|g| g.expect("every layer visited"))
            .collect()
    }
}

pub fn flatten_grads(grads: &[DenseGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.weights.as_slice());
        out.extend_from_slice(g.bias.as_slice());
    }
    out
}
