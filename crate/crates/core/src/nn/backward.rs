use super::forward::{conv_geom, linear_params, pool_geom, ForwardTrace};
use super::ops;
use super::params::{LayerParams, Parameters};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adds `d loss / d params` for one sample into `grads` and returns the
/// gradient with respect to the network input.
///
/// `d_output` is the loss gradient at the final activation (after a sigmoid,
/// if the network has one).
pub fn accumulate_gradients(
    net: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    d_output: &Tensor,
    grads: &mut Parameters,
) -> Result<Tensor> {
    let n = net.depth();
    if trace.activations.len() != n + 1 {
        return Err(Error::shape("trace does not belong to this network"));
    }
    if d_output.shape() != net.output_shape() {
        return Err(Error::shape(format!(
            "output gradient {:?} vs network output {:?}",
            d_output.shape(),
            net.output_shape()
        )));
    }
    let mut deltas: Vec<Option<Vec<f64>>> = vec![None; n + 1];
    deltas[n] = Some(d_output.data().to_vec());

    for k in (1..=n).rev() {
        let Some(dy) = deltas[k].take() else {
            continue;
        };
        let x = trace.activations[k - 1].data();
        let y = trace.activations[k].data();
        let mut dx = deltas[k - 1].take().unwrap_or_else(|| vec![0.0; x.len()]);
        match &net.layers()[k - 1] {
            LayerSpec::Conv { .. } => {
                let (w, _) = linear_params(params, k);
                let LayerParams::Linear { weight, bias } = &mut grads.layers[k - 1] else {
                    unreachable!()
                };
                let want_input = k > 1;
                ops::conv_backward(
                    &conv_geom(net, k),
                    x,
                    w.data(),
                    &dy,
                    weight.data_mut(),
                    bias.data_mut(),
                    want_input.then_some(&mut dx[..]),
                );
            }
            LayerSpec::Fc { .. } => {
                let (w, _) = linear_params(params, k);
                let LayerParams::Linear { weight, bias } = &mut grads.layers[k - 1] else {
                    unreachable!()
                };
                ops::fc_backward(
                    x,
                    w.data(),
                    &dy,
                    weight.data_mut(),
                    bias.data_mut(),
                    Some(&mut dx[..]),
                );
            }
            LayerSpec::BatchNorm => {
                let LayerParams::BatchNorm {
                    gamma, mean, std, ..
                } = &params.layers[k - 1]
                else {
                    unreachable!()
                };
                let LayerParams::BatchNorm {
                    gamma: d_gamma,
                    beta: d_beta,
                    ..
                } = &mut grads.layers[k - 1]
                else {
                    unreachable!()
                };
                let c = gamma.len();
                for (p, (xs, ds)) in x.chunks_exact(c).zip(dy.chunks_exact(c)).enumerate() {
                    for ch in 0..c {
                        let inv = 1.0 / std.data()[ch];
                        d_gamma.data_mut()[ch] += ds[ch] * (xs[ch] - mean.data()[ch]) * inv;
                        d_beta.data_mut()[ch] += ds[ch];
                        dx[p * c + ch] += ds[ch] * gamma.data()[ch] * inv;
                    }
                }
            }
            LayerSpec::Relu => {
                for ((d, &g), &pre) in dx.iter_mut().zip(&dy).zip(x) {
                    if pre > 0.0 {
                        *d += g;
                    }
                }
            }
            LayerSpec::MaxPool { .. } => {
                let argmax = trace.argmax[k - 1]
                    .as_ref()
                    .ok_or_else(|| Error::shape("max-pool trace lacks argmax"))?;
                for (&src, &g) in argmax.iter().zip(&dy) {
                    dx[src] += g;
                }
            }
            LayerSpec::AvgPool { .. } => {
                ops::avgpool_spread(&pool_geom(net, k), &dy, &mut dx);
            }
            LayerSpec::ResidualAdd { source } => {
                ops::axpy(1.0, &dy, &mut dx);
                let skip = deltas[*source].get_or_insert_with(|| vec![0.0; dy.len()]);
                ops::axpy(1.0, &dy, skip);
            }
            LayerSpec::Sigmoid => {
                for ((d, &g), &s) in dx.iter_mut().zip(&dy).zip(y) {
                    *d += g * s * (1.0 - s);
                }
            }
        }
        deltas[k - 1] = Some(dx);
    }
    let d_input = deltas[0]
        .take()
        .unwrap_or_else(|| vec![0.0; trace.input().len()]);
    Tensor::from_vec(net.input_shape(), d_input)
}

/// Parameter gradients for a scalar loss gradient `d_output` at the single
/// network output.
pub fn backward_gradients(
    net: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    d_output: f64,
) -> Result<Parameters> {
    if net.output_shape() != [1] {
        return Err(Error::shape("scalar backward needs a single-output network"));
    }
    let mut grads = Parameters::zeros_like(net);
    accumulate_gradients(net, params, trace, &Tensor::scalar(d_output), &mut grads)?;
    Ok(grads)
}
