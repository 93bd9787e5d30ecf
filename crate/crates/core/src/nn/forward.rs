use super::ops::{self, ConvGeom, PoolGeom};
use super::params::{LayerParams, Parameters};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every activation of one forward pass.
///
/// `activations[0]` is the input and `activations[k]` the output of layer `k`
/// (1-based), so the pre-activation of a ReLU at layer `k` is
/// `activations[k - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub activations: Vec<Tensor>,
    /// Source index of each max-pool output, for max-pool layers only.
    pub argmax: Vec<Option<Vec<usize>>>,
    /// Pre-sigmoid scalar for scalar-output networks.
    pub score: Option<f64>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds the input")
    }

    pub fn activation(&self, k: usize) -> &Tensor {
        &self.activations[k]
    }
}

pub(crate) fn conv_geom(net: &NetworkSpec, layer: usize) -> ConvGeom {
    let (inp, out) = (net.activation_shape(layer - 1), net.activation_shape(layer));
    match net.layers()[layer - 1] {
        LayerSpec::Conv {
            kernel,
            stride,
            padding,
            ..
        } => ConvGeom {
            h: inp[0],
            w: inp[1],
            cin: inp[2],
            oh: out[0],
            ow: out[1],
            cout: out[2],
            kernel,
            stride,
            padding,
        },
        _ => unreachable!("conv_geom on a non-conv layer"),
    }
}

pub(crate) fn pool_geom(net: &NetworkSpec, layer: usize) -> PoolGeom {
    let (inp, out) = (net.activation_shape(layer - 1), net.activation_shape(layer));
    match net.layers()[layer - 1] {
        LayerSpec::MaxPool { size, stride } | LayerSpec::AvgPool { size, stride } => PoolGeom {
            w: inp[1],
            c: inp[2],
            oh: out[0],
            ow: out[1],
            size,
            stride,
        },
        _ => unreachable!("pool_geom on a non-pool layer"),
    }
}

pub(crate) fn linear_params(params: &Parameters, layer: usize) -> (&Tensor, &Tensor) {
    match &params.layers[layer - 1] {
        LayerParams::Linear { weight, bias } => (weight, bias),
        _ => unreachable!("layer {} has no linear parameters", layer),
    }
}

/// Runs `net` on `input`, recording every activation.
pub fn forward(net: &NetworkSpec, params: &Parameters, input: &Tensor) -> Result<ForwardTrace> {
    if input.shape() != net.input_shape() {
        return Err(Error::config(format!(
            "input shape {:?} does not match network input {:?}",
            input.shape(),
            net.input_shape()
        )));
    }
    if params.layers.len() != net.depth() {
        return Err(Error::shape(format!(
            "parameters for {} layers, network has {}",
            params.layers.len(),
            net.depth()
        )));
    }
    let mut activations = Vec::with_capacity(net.depth() + 1);
    let mut argmax = Vec::with_capacity(net.depth());
    activations.push(input.clone());
    for (i, layer) in net.layers().iter().enumerate() {
        let k = i + 1;
        let x = activations[i].data();
        let mut pool_index = None;
        let data = match layer {
            LayerSpec::Conv { .. } => {
                let (w, b) = linear_params(params, k);
                ops::conv_forward(&conv_geom(net, k), x, w.data(), b.data())
            }
            LayerSpec::Fc { .. } => {
                let (w, b) = linear_params(params, k);
                ops::fc_forward(x, w.data(), b.data())
            }
            LayerSpec::BatchNorm => {
                let LayerParams::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    std,
                } = &params.layers[i]
                else {
                    unreachable!()
                };
                let c = gamma.len();
                let mut out = x.to_vec();
                for px in out.chunks_exact_mut(c) {
                    for ch in 0..c {
                        px[ch] = gamma.data()[ch] * (px[ch] - mean.data()[ch]) / std.data()[ch]
                            + beta.data()[ch];
                    }
                }
                out
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::MaxPool { .. } => {
                let (out, idx) = ops::maxpool_forward(&pool_geom(net, k), x);
                pool_index = Some(idx);
                out
            }
            LayerSpec::AvgPool { .. } => ops::avgpool_forward(&pool_geom(net, k), x),
            LayerSpec::ResidualAdd { source } => x
                .iter()
                .zip(activations[*source].data())
                .map(|(a, b)| a + b)
                .collect(),
            LayerSpec::Sigmoid => x.iter().map(|&v| ops::sigmoid(v)).collect(),
        };
        activations.push(Tensor::from_vec(net.activation_shape(k), data)?);
        argmax.push(pool_index);
    }
    let score = net
        .scalar_output()
        .then(|| activations[net.score_activation()].data()[0]);
    Ok(ForwardTrace {
        activations,
        argmax,
        score,
    })
}

/// Pre-sigmoid score of a scalar-output network.
pub fn score(net: &NetworkSpec, params: &Parameters, input: &Tensor) -> Result<f64> {
    forward(net, params, input)?
        .score
        .ok_or_else(|| Error::config("network is not scalar-output"))
}
