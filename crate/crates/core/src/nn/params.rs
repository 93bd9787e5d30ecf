use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batch-norm epsilon added to the running variance.
pub const BN_EPS: f64 = 1e-5;

/// Trainable state of one layer.
///
/// Conv weights are `[kernel, kernel, in_channels, out_channels]`; fc weights
/// are `[inputs, outputs]`. Batch norm computes `gamma * (x - mean) / std + beta`
/// per channel.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Empty,
    Linear {
        weight: Tensor,
        bias: Tensor,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        mean: Tensor,
        std: Tensor,
    },
}

impl LayerParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::Empty => vec![],
            LayerParams::Linear { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm {
                gamma,
                beta,
                mean,
                std,
            } => vec![gamma, beta, mean, std],
        }
    }

    /// Tensors updated by gradient descent (batch-norm statistics excluded).
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerParams::Empty => vec![],
            LayerParams::Linear { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::Empty => vec![],
            LayerParams::Linear { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

/// Expected tensor shapes for every layer of `net`.
pub fn expected_shapes(net: &NetworkSpec) -> Vec<Vec<Vec<usize>>> {
    net.layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let input = net.activation_shape(i);
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    ..
                } => vec![
                    vec![kernel, kernel, input[2], out_channels],
                    vec![out_channels],
                ],
                LayerSpec::Fc { outputs } => {
                    vec![vec![input.iter().product(), outputs], vec![outputs]]
                }
                LayerSpec::BatchNorm => vec![vec![input[2]]; 4],
                _ => vec![],
            }
        })
        .collect()
}

impl Parameters {
    /// He-normal weights, zero biases, identity batch norms.
    pub fn init<R: Rng + ?Sized>(net: &NetworkSpec, rng: &mut R) -> Self {
        let layers = net
            .layers()
            .iter()
            .zip(expected_shapes(net))
            .map(|(layer, shapes)| match layer {
                LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
                    let wshape = &shapes[0];
                    let fan_in: usize = wshape[..wshape.len() - 1].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive standard deviation");
                    let data = (0..wshape.iter().product::<usize>())
                        .map(|_| normal.sample(rng))
                        .collect();
                    LayerParams::Linear {
                        weight: Tensor::from_vec(wshape, data).expect("shape from the network"),
                        bias: Tensor::zeros(&shapes[1]),
                    }
                }
                LayerSpec::BatchNorm => LayerParams::BatchNorm {
                    gamma: Tensor::filled(&shapes[0], 1.0),
                    beta: Tensor::zeros(&shapes[0]),
                    mean: Tensor::zeros(&shapes[0]),
                    std: Tensor::filled(&shapes[0], 1.0),
                },
                _ => LayerParams::Empty,
            })
            .collect();
        Parameters { layers }
    }

    /// All-zero parameters with the shapes of `net` (used for gradients).
    pub fn zeros_like(net: &NetworkSpec) -> Self {
        let layers = net
            .layers()
            .iter()
            .zip(expected_shapes(net))
            .map(|(layer, shapes)| match layer {
                LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => LayerParams::Linear {
                    weight: Tensor::zeros(&shapes[0]),
                    bias: Tensor::zeros(&shapes[1]),
                },
                LayerSpec::BatchNorm => LayerParams::BatchNorm {
                    gamma: Tensor::zeros(&shapes[0]),
                    beta: Tensor::zeros(&shapes[0]),
                    mean: Tensor::zeros(&shapes[0]),
                    std: Tensor::zeros(&shapes[0]),
                },
                _ => LayerParams::Empty,
            })
            .collect();
        Parameters { layers }
    }

    /// Checks every tensor shape against `net` and that batch-norm `std > 0`.
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        if self.layers.len() != net.depth() {
            return Err(Error::shape(format!(
                "parameters for {} layers, network has {}",
                self.layers.len(),
                net.depth()
            )));
        }
        for (i, (lp, shapes)) in self.layers.iter().zip(expected_shapes(net)).enumerate() {
            let tensors = lp.tensors();
            let ok = tensors.len() == shapes.len()
                && tensors.iter().zip(&shapes).all(|(t, s)| t.shape() == &s[..]);
            if !ok {
                return Err(Error::shape(format!(
                    "layer {} ({}) expects tensors {:?}, found {:?}",
                    i + 1,
                    net.layers()[i].name(),
                    shapes,
                    tensors.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()
                )));
            }
            if let LayerParams::BatchNorm { std, .. } = lp {
                if std.data().iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "layer {}: batch-norm std must be positive",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.tensors().iter().all(|t| t.is_finite()))
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.trainable()).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.trainable_mut()).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }
}
