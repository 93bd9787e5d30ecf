//! Backward propagation of output contributions.
//!
//! A scalar score starts with contribution 1. A linear unit
//! `o_i = sum_j x_j w_j + b` with contribution `C_i` hands
//! `C_i * x_j w_j / (o_i + max(-b, 0))` to each input `x_j`; a positive bias
//! keeps the share `C_i * b / o_i` for itself. ReLU and pooling layers route
//! contributions the way gradients flow through them, and an activation read
//! by several layers sums what it receives. Batch norms are folded into the
//! preceding linear layer before propagating.

use crate::error::{Error, Result};
use crate::nn::{
    self, conv_geom, fold_network, linear_params, FoldedNetwork, ForwardTrace, LayerSpec,
    NetworkSpec, Parameters,
};
use crate::tensor::Tensor;

/// Contribution of every unit of activation `layer` to the explained score.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMap {
    pub layer: usize,
    pub values: Tensor,
}

/// Which sign of `o_i` a linear unit passes on.
///
/// Units feeding a ReLU only pass information when `o_i > 0`. Units whose
/// output is used directly (the final score, the branch entering a residual
/// sum) also split negative outputs, mirroring the bias rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gating {
    Rectified,
    Signed,
}

/// Denominator of the split for one unit, or `None` if it distributes nothing.
pub fn split_denominator(o: f64, bias: f64, gating: Gating) -> Option<f64> {
    if o > 0.0 {
        Some(o + (-bias).max(0.0))
    } else if o < 0.0 && gating == Gating::Signed {
        Some(o - bias.max(0.0))
    } else {
        None
    }
}

/// `C_{o -> x_j}` for a single unit with inputs `x`, weights `w` and bias `b`.
pub fn decompose_unit(c_o: f64, x: &[f64], w: &[f64], bias: f64) -> Vec<f64> {
    let o: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + bias;
    match split_denominator(o, bias, Gating::Rectified) {
        Some(d) => x.iter().zip(w).map(|(a, b)| c_o * a * b / d).collect(),
        None => vec![0.0; x.len()],
    }
}

/// Result of splitting a linear layer's contributions over its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSplit {
    pub c_x: Vec<f64>,
    /// Contribution kept by positive biases.
    pub bias_absorbed: f64,
}

/// Dense linear layer `o = x W + b` with `W` shaped `[inputs, outputs]`.
///
/// Only units with `o_i > 0` distribute contribution.
pub fn propagate_linear(c_o: &[f64], weight: &Tensor, bias: &[f64], x: &[f64]) -> Result<LinearSplit> {
    let (inputs, outputs) = match weight.shape() {
        [i, o] => (*i, *o),
        s => return Err(Error::shape(format!("dense weight must be rank 2, got {:?}", s))),
    };
    if x.len() != inputs || bias.len() != outputs || c_o.len() != outputs {
        return Err(Error::shape(format!(
            "weight [{}, {}] with {} inputs, {} biases, {} contributions",
            inputs,
            outputs,
            x.len(),
            bias.len(),
            c_o.len()
        )));
    }
    let o = nn::ops::fc_forward(x, weight.data(), bias);
    let (scale, bias_absorbed) = unit_scales(c_o, &o, bias, |_| Gating::Rectified);
    let adj = nn::ops::fc_input_adjoint(inputs, weight.data(), &scale);
    Ok(LinearSplit {
        c_x: x.iter().zip(adj).map(|(a, b)| a * b).collect(),
        bias_absorbed,
    })
}

/// Per-unit multipliers `C_i / denominator_i` and the total kept by biases.
fn unit_scales(
    c_o: &[f64],
    o: &[f64],
    bias: &[f64],
    gating: impl Fn(usize) -> Gating,
) -> (Vec<f64>, f64) {
    let per_unit = bias.len();
    let mut absorbed = 0.0;
    let scale = c_o
        .iter()
        .zip(o)
        .enumerate()
        .map(|(i, (&c, &oi))| {
            let b = bias[i % per_unit];
            if c == 0.0 {
                return 0.0;
            }
            match split_denominator(oi, b, gating(i)) {
                Some(d) => {
                    absorbed += c * (1.0 - (oi - b) / d);
                    c / d
                }
                None => 0.0,
            }
        })
        .collect();
    (scale, absorbed)
}

/// Passes contributions where the ReLU's input was positive.
pub fn propagate_relu(c_o: &Tensor, pre_activation: &Tensor) -> Result<Tensor> {
    c_o.check_same_shape(pre_activation)?;
    let data = c_o
        .data()
        .iter()
        .zip(pre_activation.data())
        .map(|(&c, &p)| if p > 0.0 { c } else { 0.0 })
        .collect();
    Tensor::from_vec(c_o.shape(), data)
}

/// Max pooling routes to the recorded argmax; average pooling splits each
/// contribution equally over its window.
pub fn propagate_pool(
    c_o: &Tensor,
    net: &NetworkSpec,
    trace: &ForwardTrace,
    layer: usize,
) -> Result<Tensor> {
    let input_shape = net.activation_shape(layer - 1);
    let mut c_x = vec![0.0; input_shape.iter().product()];
    match net.layers().get(layer - 1) {
        Some(LayerSpec::MaxPool { .. }) => {
            let argmax = trace
                .argmax
                .get(layer - 1)
                .and_then(|a| a.as_ref())
                .ok_or_else(|| Error::shape("trace lacks max-pool argmax"))?;
            for (&src, &c) in argmax.iter().zip(c_o.data()) {
                c_x[src] += c;
            }
        }
        Some(LayerSpec::AvgPool { .. }) => {
            let g = nn::pool_geom(net, layer);
            nn::ops::avgpool_spread(&g, c_o.data(), &mut c_x);
        }
        _ => return Err(Error::config(format!("layer {} is not a pooling layer", layer))),
    }
    Tensor::from_vec(input_shape, c_x)
}

/// Sum of contributions reaching one activation from two consumers.
pub fn propagate_skip(from_above: &Tensor, from_skip: &Tensor) -> Result<Tensor> {
    let mut out = from_above.clone();
    out.add_assign(from_skip)?;
    Ok(out)
}

/// Unit contribution on the (pre-sigmoid) scalar score.
pub fn init_output_contribution(net: &NetworkSpec, trace: &ForwardTrace) -> Result<ContributionMap> {
    let layer = net.score_activation();
    if !net.scalar_output() || net.activation_shape(layer) != [1] {
        return Err(Error::config("contributions start from a scalar output"));
    }
    if trace.activations.len() != net.depth() + 1 {
        return Err(Error::shape("trace does not belong to this network"));
    }
    Ok(ContributionMap {
        layer,
        values: Tensor::scalar(1.0),
    })
}

/// Per-activation bookkeeping of one propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiagnostic {
    pub layer: usize,
    /// Total contribution held by the activation.
    pub sum: f64,
    /// Contribution kept by the biases of the layer producing it.
    pub bias_absorbed: f64,
}

pub fn diagnostics_csv(rows: &[LayerDiagnostic]) -> String {
    let mut out = String::from("layer,sum,bias_absorbed\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.layer, r.sum, r.bias_absorbed));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub map: ContributionMap,
    /// One entry per activation from the start down to the target.
    pub diagnostics: Vec<LayerDiagnostic>,
}

fn gating_after(net: &NetworkSpec, layer: usize) -> Gating {
    match net.layers().get(layer) {
        Some(LayerSpec::Relu) => Gating::Rectified,
        _ => Gating::Signed,
    }
}

/// Chains the per-layer rules from `start` down to activation `target` of a
/// batch-norm-free network.
pub fn propagate_from(
    net: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    start: ContributionMap,
    target: usize,
) -> Result<Propagation> {
    if net.has_batchnorm() {
        return Err(Error::config("fold batch norms before propagating contributions"));
    }
    if target > start.layer || start.layer > net.depth() {
        return Err(Error::config(format!(
            "cannot propagate from activation {} to {}",
            start.layer, target
        )));
    }
    if start.values.shape() != net.activation_shape(start.layer) {
        return Err(Error::shape(format!(
            "start map {:?} vs activation {:?}",
            start.values.shape(),
            net.activation_shape(start.layer)
        )));
    }
    let mut acc: Vec<Option<Vec<f64>>> = vec![None; start.layer + 1];
    acc[start.layer] = Some(start.values.into_data());
    let mut diagnostics = Vec::new();
    let mut absorbed_by_layer = vec![0.0; start.layer + 1];

    for k in (target + 1..=start.layer).rev() {
        let c = acc[k]
            .take()
            .unwrap_or_else(|| vec![0.0; net.activation_shape(k).iter().product()]);
        diagnostics.push(LayerDiagnostic {
            layer: k,
            sum: c.iter().sum(),
            bias_absorbed: 0.0,
        });
        let x = trace.activations[k - 1].data();
        let o = trace.activations[k].data();
        let mut add_to = |idx: usize, vals: Vec<f64>| match &mut acc[idx] {
            Some(existing) => nn::ops::axpy(1.0, &vals, existing),
            slot => *slot = Some(vals),
        };
        match &net.layers()[k - 1] {
            LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
                let (w, b) = linear_params(params, k);
                let gating = gating_after(net, k);
                let (scale, absorbed) = unit_scales(&c, o, b.data(), |_| gating);
                absorbed_by_layer[k] = absorbed;
                let adj = if matches!(net.layers()[k - 1], LayerSpec::Conv { .. }) {
                    nn::ops::conv_input_adjoint(&conv_geom(net, k), w.data(), &scale)
                } else {
                    nn::ops::fc_input_adjoint(x.len(), w.data(), &scale)
                };
                add_to(k - 1, x.iter().zip(adj).map(|(a, b)| a * b).collect());
            }
            LayerSpec::Relu => {
                add_to(
                    k - 1,
                    c.iter()
                        .zip(x)
                        .map(|(&c, &p)| if p > 0.0 { c } else { 0.0 })
                        .collect(),
                );
            }
            LayerSpec::MaxPool { .. } | LayerSpec::AvgPool { .. } => {
                let c_o = Tensor::from_vec(net.activation_shape(k), c)?;
                add_to(k - 1, propagate_pool(&c_o, net, trace, k)?.into_data());
            }
            LayerSpec::ResidualAdd { source } => {
                let gating = gating_after(net, k);
                let skip = trace.activations[*source].data();
                let mut main = vec![0.0; c.len()];
                let mut side = vec![0.0; c.len()];
                for i in 0..c.len() {
                    if c[i] == 0.0 {
                        continue;
                    }
                    if let Some(d) = split_denominator(o[i], 0.0, gating) {
                        main[i] = c[i] * x[i] / d;
                        side[i] = c[i] * skip[i] / d;
                    }
                }
                add_to(k - 1, main);
                if *source >= target {
                    add_to(*source, side);
                }
            }
            LayerSpec::Sigmoid => {
                return Err(Error::config("contributions are never propagated through a sigmoid"))
            }
            LayerSpec::BatchNorm => unreachable!("checked above"),
        }
    }
    for d in &mut diagnostics {
        d.bias_absorbed = absorbed_by_layer[d.layer];
    }
    let values = acc[target]
        .take()
        .unwrap_or_else(|| vec![0.0; net.activation_shape(target).iter().product()]);
    let values = Tensor::from_vec(net.activation_shape(target), values)?;
    diagnostics.push(LayerDiagnostic {
        layer: target,
        sum: values.sum(),
        bias_absorbed: 0.0,
    });
    Ok(Propagation {
        map: ContributionMap {
            layer: target,
            values,
        },
        diagnostics,
    })
}

/// A network with batch norms folded, ready for contribution passes.
#[derive(Debug, Clone)]
pub struct PreparedNetwork {
    pub folded: FoldedNetwork,
}

impl PreparedNetwork {
    pub fn new(net: &NetworkSpec, params: &Parameters) -> Result<Self> {
        Ok(PreparedNetwork {
            folded: fold_network(net, params)?,
        })
    }

    pub fn net(&self) -> &NetworkSpec {
        &self.folded.net
    }

    pub fn params(&self) -> &Parameters {
        &self.folded.params
    }

    pub fn trace(&self, input: &Tensor) -> Result<ForwardTrace> {
        nn::forward(&self.folded.net, &self.folded.params, input)
    }

    /// Contributions at folded activation `target`, starting from the score.
    pub fn propagate_to(&self, trace: &ForwardTrace, target: usize) -> Result<Propagation> {
        let start = init_output_contribution(self.net(), trace)?;
        propagate_from(self.net(), self.params(), trace, start, target)
    }
}

/// Contribution map at original activation `target` (0 = input).
///
/// Batch norms are folded first; the trace is recomputed on the folded
/// network from `trace`'s input.
pub fn propagate_to_layer(
    net: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    target: usize,
) -> Result<ContributionMap> {
    if target >= net.depth() {
        return Err(Error::config(format!(
            "target activation {} out of range 0..{}",
            target,
            net.depth()
        )));
    }
    let prepared = PreparedNetwork::new(net, params)?;
    let folded_target = prepared.folded.map_activation(target)?;
    let folded_trace = if net.has_batchnorm() {
        prepared.trace(trace.input())?
    } else {
        trace.clone()
    };
    let mut prop = prepared.propagate_to(&folded_trace, folded_target)?;
    prop.map.layer = target;
    Ok(prop.map)
}
