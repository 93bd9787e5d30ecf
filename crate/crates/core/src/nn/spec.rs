use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
///
/// `ResidualAdd::source` is an activation index: 0 is the network input and
/// `k` is the output of the `k`-th layer (1-based). The layer adds that
/// activation to its own input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Fc {
        outputs: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    ResidualAdd {
        source: usize,
    },
    Sigmoid,
}

impl LayerSpec {
    /// "Same" 3x3 convolution with stride 1.
    pub fn conv3(out_channels: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::ResidualAdd { .. } => "residual_add",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }
}

/// Validated layer topology with precomputed activation shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkSpec", into = "RawNetworkSpec")]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    scalar_output: bool,
    shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawNetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    scalar_output: bool,
}

impl TryFrom<RawNetworkSpec> for NetworkSpec {
    type Error = Error;

    fn try_from(raw: RawNetworkSpec) -> Result<Self> {
        NetworkSpec::new(raw.input_shape, raw.layers, raw.scalar_output)
    }
}

impl From<NetworkSpec> for RawNetworkSpec {
    fn from(net: NetworkSpec) -> Self {
        RawNetworkSpec {
            input_shape: net.input_shape,
            layers: net.layers,
            scalar_output: net.scalar_output,
        }
    }
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, scalar_output: bool) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("invalid input shape {:?}", input_shape)));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let k = i + 1;
            let prev = &shapes[i];
            let next = layer_output_shape(layer, prev, &shapes, k)?;
            if matches!(layer, LayerSpec::Sigmoid) && k != layers.len() {
                return Err(Error::config(format!(
                    "sigmoid at layer {} is only allowed as the final layer",
                    k
                )));
            }
            shapes.push(next);
        }
        let net = NetworkSpec {
            input_shape,
            layers,
            scalar_output,
            shapes,
        };
        if scalar_output {
            let ends_in_fc = match net.layers.last() {
                Some(LayerSpec::Sigmoid) => {
                    net.layers.len() >= 2
                        && matches!(net.layers[net.layers.len() - 2], LayerSpec::Fc { outputs: 1 })
                }
                Some(LayerSpec::Fc { outputs: 1 }) => true,
                _ => false,
            };
            if !ends_in_fc {
                return Err(Error::config(
                    "scalar-output networks must end in fc(1), optionally followed by sigmoid",
                ));
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn scalar_output(&self) -> bool {
        self.scalar_output
    }

    /// Shape of activation `k` (0 = input).
    pub fn activation_shape(&self, k: usize) -> &[usize] {
        &self.shapes[k]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("shapes always include the input")
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Activation index carrying the explained score: the input of a final
    /// sigmoid, otherwise the network output.
    pub fn score_activation(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Sigmoid) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm))
    }

    /// 1-based layer indices of every conv layer, in order.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| i + 1)
            .collect()
    }
}

fn layer_output_shape(
    layer: &LayerSpec,
    prev: &[usize],
    shapes: &[Vec<usize>],
    k: usize,
) -> Result<Vec<usize>> {
    let need_map = || -> Result<(usize, usize, usize)> {
        match prev {
            [h, w, c] => Ok((*h, *w, *c)),
            _ => Err(Error::config(format!(
                "layer {} ({}) needs a rank-3 input, got {:?}",
                k,
                layer.name(),
                prev
            ))),
        }
    };
    let window = |size: usize, stride: usize, pad: usize, extent: usize| -> Result<usize> {
        if size == 0 || stride == 0 || extent + 2 * pad < size {
            return Err(Error::config(format!(
                "layer {} ({}): window {} stride {} does not fit extent {}",
                k,
                layer.name(),
                size,
                stride,
                extent
            )));
        }
        Ok((extent + 2 * pad - size) / stride + 1)
    };
    Ok(match *layer {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let (h, w, _) = need_map()?;
            if out_channels == 0 {
                return Err(Error::config(format!("layer {}: conv with zero channels", k)));
            }
            vec![
                window(kernel, stride, padding, h)?,
                window(kernel, stride, padding, w)?,
                out_channels,
            ]
        }
        LayerSpec::Fc { outputs } => {
            if outputs == 0 {
                return Err(Error::config(format!("layer {}: fc with zero outputs", k)));
            }
            vec![outputs]
        }
        LayerSpec::BatchNorm => {
            need_map()?;
            prev.to_vec()
        }
        LayerSpec::Relu | LayerSpec::Sigmoid => prev.to_vec(),
        LayerSpec::MaxPool { size, stride } | LayerSpec::AvgPool { size, stride } => {
            let (h, w, c) = need_map()?;
            vec![window(size, stride, 0, h)?, window(size, stride, 0, w)?, c]
        }
        LayerSpec::ResidualAdd { source } => {
            if source + 1 >= k {
                return Err(Error::config(format!(
                    "layer {}: residual source {} must be an earlier activation",
                    k, source
                )));
            }
            if shapes[source] != prev {
                return Err(Error::config(format!(
                    "layer {}: residual source shape {:?} differs from input {:?}",
                    k, shapes[source], prev
                )));
            }
            prev.to_vec()
        }
    })
}

/// Residual tower used for the value net, the students and the gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub blocks: usize,
    pub channels: usize,
    pub outputs: usize,
    pub sigmoid: bool,
}

/// conv-bn-relu stem, `blocks` residual blocks of two conv-bn layers, then
/// global average pooling and a fully connected head.
pub fn residual_tower(cfg: &TowerConfig) -> Result<NetworkSpec> {
    if cfg.height != cfg.width {
        return Err(Error::config("residual towers need a square input"));
    }
    let c = cfg.channels;
    let mut layers = vec![LayerSpec::conv3(c), LayerSpec::BatchNorm, LayerSpec::Relu];
    for _ in 0..cfg.blocks {
        let block_input = layers.len();
        layers.extend([
            LayerSpec::conv3(c),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::conv3(c),
            LayerSpec::BatchNorm,
            LayerSpec::ResidualAdd {
                source: block_input,
            },
            LayerSpec::Relu,
        ]);
    }
    layers.push(LayerSpec::AvgPool {
        size: cfg.height,
        stride: cfg.height,
    });
    layers.push(LayerSpec::Fc {
        outputs: cfg.outputs,
    });
    if cfg.sigmoid {
        layers.push(LayerSpec::Sigmoid);
    }
    NetworkSpec::new(
        vec![cfg.height, cfg.width, cfg.in_channels],
        layers,
        cfg.outputs == 1,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tower_has_expected_conv_count() {
        let net = residual_tower(&TowerConfig {
            height: 9,
            width: 9,
            in_channels: 2,
            blocks: 4,
            channels: 8,
            outputs: 1,
            sigmoid: true,
        })
        .unwrap();
        assert_eq!(net.conv_layers().len(), 9);
        assert_eq!(net.output_shape(), &[1]);
        assert_eq!(net.score_activation(), net.depth() - 1);
    }

    #[test]
    fn sigmoid_must_be_last() {
        let err = NetworkSpec::new(
            vec![2],
            vec![LayerSpec::Sigmoid, LayerSpec::Fc { outputs: 1 }],
            true,
        );
        assert!(err.is_err());
    }

    #[test]
    fn residual_source_shape_checked() {
        let err = NetworkSpec::new(
            vec![3, 3, 1],
            vec![
                LayerSpec::conv3(2),
                LayerSpec::Relu,
                LayerSpec::ResidualAdd { source: 0 },
            ],
            false,
        );
        assert!(err.is_err());
    }

    #[test]
    fn scalar_flag_requires_fc_head() {
        assert!(NetworkSpec::new(vec![2], vec![LayerSpec::Fc { outputs: 2 }], true).is_err());
        assert!(NetworkSpec::new(vec![2], vec![LayerSpec::Fc { outputs: 1 }], true).is_ok());
    }

    #[test]
    fn spec_serde_revalidates() {
        let json = r#"{"input_shape":[2],"layers":[{"kind":"relu"},{"kind":"sigmoid"},{"kind":"relu"}],"scalar_output":false}"#;
        assert!(serde_json::from_str::<NetworkSpec>(json).is_err());
    }
}
