use super::params::{LayerParams, Parameters};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch-norm constants `gamma * (x - mean) / std + beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnChannel {
    pub gamma: f64,
    pub std: f64,
    pub mean: f64,
    pub beta: f64,
}

/// Folds a batch norm into the preceding linear layer:
/// `w <- gamma * w / std`, `b <- gamma * (b - mean) / std + beta`.
///
/// The batch norm acts on the last weight axis (output channels).
pub fn absorb_batchnorm(weight: &Tensor, bias: &Tensor, bn: &[BnChannel]) -> Result<(Tensor, Tensor)> {
    let outputs = *weight
        .shape()
        .last()
        .ok_or_else(|| Error::shape("weight tensor has no axes"))?;
    if bias.len() != outputs || bn.len() != outputs {
        return Err(Error::shape(format!(
            "{} output channels, {} biases, {} batch-norm channels",
            outputs,
            bias.len(),
            bn.len()
        )));
    }
    if let Some(i) = bn.iter().position(|c| !(c.std > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "batch-norm channel {} has std {} (must be > 0)",
            i, bn[i].std
        )));
    }
    let mut w = weight.clone();
    for row in w.data_mut().chunks_exact_mut(outputs) {
        for (v, c) in row.iter_mut().zip(bn) {
            *v = c.gamma * *v / c.std;
        }
    }
    let b = bias
        .data()
        .iter()
        .zip(bn)
        .map(|(&b, c)| c.gamma * (b - c.mean) / c.std + c.beta)
        .collect();
    Ok((w, Tensor::vector(b)))
}

/// A batch-norm-free network equivalent to the original one.
#[derive(Debug, Clone)]
pub struct FoldedNetwork {
    pub net: NetworkSpec,
    pub params: Parameters,
    /// Original activation index -> folded activation index. Outputs of a
    /// linear layer whose batch norm was absorbed have no counterpart.
    pub activation_map: Vec<Option<usize>>,
}

impl FoldedNetwork {
    pub fn map_activation(&self, original: usize) -> Result<usize> {
        self.activation_map
            .get(original)
            .copied()
            .flatten()
            .ok_or_else(|| {
                Error::config(format!(
                    "activation {} disappears when batch norms are folded",
                    original
                ))
            })
    }
}

/// Absorbs every batch norm into the conv/fc layer in front of it.
pub fn fold_network(net: &NetworkSpec, params: &Parameters) -> Result<FoldedNetwork> {
    params.validate(net)?;
    let layers = net.layers();
    let mut map: Vec<Option<usize>> = vec![Some(0)];
    let mut new_layers = Vec::with_capacity(layers.len());
    let mut new_params = Vec::with_capacity(layers.len());
    let mut i = 0;
    while i < layers.len() {
        let layer = &layers[i];
        let followed_by_bn = matches!(layers.get(i + 1), Some(LayerSpec::BatchNorm));
        match layer {
            LayerSpec::BatchNorm => {
                return Err(Error::config(format!(
                    "batch norm at layer {} does not follow a conv or fc layer",
                    i + 1
                )))
            }
            LayerSpec::Conv { .. } | LayerSpec::Fc { .. } if followed_by_bn => {
                let LayerParams::Linear { weight, bias } = &params.layers[i] else {
                    unreachable!()
                };
                let LayerParams::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    std,
                } = &params.layers[i + 1]
                else {
                    unreachable!()
                };
                let channels: Vec<BnChannel> = (0..gamma.len())
                    .map(|c| BnChannel {
                        gamma: gamma.data()[c],
                        std: std.data()[c],
                        mean: mean.data()[c],
                        beta: beta.data()[c],
                    })
                    .collect();
                let (w, b) = absorb_batchnorm(weight, bias, &channels)?;
                new_layers.push(layer.clone());
                new_params.push(LayerParams::Linear { weight: w, bias: b });
                map.push(None);
                map.push(Some(new_layers.len()));
                i += 2;
            }
            LayerSpec::ResidualAdd { source } => {
                let folded = map[*source].ok_or_else(|| {
                    Error::config(format!(
                        "residual source {} is a pre-batch-norm activation",
                        source
                    ))
                })?;
                new_layers.push(LayerSpec::ResidualAdd { source: folded });
                new_params.push(LayerParams::Empty);
                map.push(Some(new_layers.len()));
                i += 1;
            }
            _ => {
                new_layers.push(layer.clone());
                new_params.push(params.layers[i].clone());
                map.push(Some(new_layers.len()));
                i += 1;
            }
        }
    }
    let folded = NetworkSpec::new(net.input_shape().to_vec(), new_layers, net.scalar_output())?;
    Ok(FoldedNetwork {
        net: folded,
        params: Parameters { layers: new_params },
        activation_map: map,
    })
}
