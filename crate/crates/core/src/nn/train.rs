use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::accumulate_gradients;
use super::forward::{forward, ForwardTrace};
use super::params::{LayerParams, Parameters, BN_EPS};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mini-batch SGD with momentum and step decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplier applied to the learning rate every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Weight of the current batch in the batch-norm running statistics.
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.5,
            decay_every: 8,
            grad_clip: 5.0,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = if self.decay_every == 0 {
            0
        } else {
            epoch / self.decay_every
        };
        self.learning_rate * self.lr_decay.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("learning_rate must be > 0 and momentum in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-epoch mean sample loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Running minimum of the epoch losses.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.losses
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }

    /// `epoch,loss` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }
}

struct BnStats {
    layer: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: usize,
}

/// Generic training loop.
///
/// `objective` maps a sample and the network's final activation to the
/// sample loss and its gradient with respect to that activation.
pub fn fit<S>(
    net: &NetworkSpec,
    params: &mut Parameters,
    samples: &[S],
    cfg: &TrainConfig,
    input: impl Fn(&S) -> &Tensor,
    objective: impl Fn(&S, &Tensor) -> (f64, Tensor),
) -> Result<TrainReport> {
    cfg.validate()?;
    params.validate(net)?;
    if samples.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut velocity = Parameters::zeros_like(net);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Parameters::zeros_like(net);
            let mut bn = bn_accumulators(net);
            for &idx in batch {
                let sample = &samples[idx];
                let trace = forward(net, params, input(sample))?;
                let (loss, d_out) = objective(sample, trace.output());
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        detail: format!("non-finite loss {} at sample {}", loss, idx),
                    });
                }
                epoch_loss += loss;
                accumulate_gradients(net, params, &trace, &d_out, &mut grads)?;
                record_bn_inputs(&mut bn, &trace);
            }
            let scale = 1.0 / batch.len() as f64;
            let mut norm_sq = 0.0;
            for g in grads.trainable_mut() {
                g.scale(scale);
                norm_sq += g.data().iter().map(|v| v * v).sum::<f64>();
            }
            let clip = if cfg.grad_clip > 0.0 && norm_sq.sqrt() > cfg.grad_clip {
                cfg.grad_clip / norm_sq.sqrt()
            } else {
                1.0
            };
            for ((p, g), v) in params
                .trainable_mut()
                .into_iter()
                .zip(grads.trainable())
                .zip(velocity.trainable_mut())
            {
                for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *vv = cfg.momentum * *vv + clip * gv;
                    *pv -= lr * *vv;
                }
            }
            update_bn_statistics(params, &bn, cfg.bn_momentum);
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                detail: format!("mean loss {}", mean),
            });
        }
        losses.push(mean);
    }
    Ok(TrainReport { losses })
}

fn bn_accumulators(net: &NetworkSpec) -> Vec<BnStats> {
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::BatchNorm))
        .map(|(i, _)| {
            let c = net.activation_shape(i)[2];
            BnStats {
                layer: i + 1,
                sum: vec![0.0; c],
                sumsq: vec![0.0; c],
                count: 0,
            }
        })
        .collect()
}

fn record_bn_inputs(stats: &mut [BnStats], trace: &ForwardTrace) {
    for s in stats {
        let x = trace.activations[s.layer - 1].data();
        let c = s.sum.len();
        for px in x.chunks_exact(c) {
            for ch in 0..c {
                s.sum[ch] += px[ch];
                s.sumsq[ch] += px[ch] * px[ch];
            }
            s.count += 1;
        }
    }
}

fn update_bn_statistics(params: &mut Parameters, stats: &[BnStats], momentum: f64) {
    if momentum == 0.0 {
        return;
    }
    for s in stats {
        let LayerParams::BatchNorm { mean, std, .. } = &mut params.layers[s.layer - 1] else {
            unreachable!("batch-norm statistics on a non-bn layer")
        };
        let n = s.count as f64;
        for ch in 0..s.sum.len() {
            let batch_mean = s.sum[ch] / n;
            let batch_var = (s.sumsq[ch] / n - batch_mean * batch_mean).max(0.0);
            let old_var = (std.data()[ch] * std.data()[ch] - BN_EPS).max(0.0);
            let m = &mut mean.data_mut()[ch];
            *m = (1.0 - momentum) * *m + momentum * batch_mean;
            let var = (1.0 - momentum) * old_var + momentum * batch_var;
            std.data_mut()[ch] = (var + BN_EPS).sqrt();
        }
    }
}

/// Squared-error regression of the final output onto scalar targets.
pub fn train(
    net: &NetworkSpec,
    params: &mut Parameters,
    dataset: &[(Tensor, f64)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if net.output_shape() != [1] {
        return Err(Error::config("train needs a single-output network"));
    }
    fit(net, params, dataset, cfg, |s| &s.0, |s, out| {
        let err = out.data()[0] - s.1;
        (err * err, Tensor::scalar(2.0 * err))
    })
}

/// Mean squared error of the final output over `dataset`.
pub fn mean_squared_error(
    net: &NetworkSpec,
    params: &Parameters,
    dataset: &[(Tensor, f64)],
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::config("empty evaluation set"));
    }
    let mut total = 0.0;
    for (x, y) in dataset {
        let out = forward(net, params, x)?;
        let err = out.output().data()[0] - y;
        total += err * err;
    }
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn one_layer() -> (NetworkSpec, Parameters) {
        let net = NetworkSpec::new(vec![3], vec![LayerSpec::Fc { outputs: 1 }], true).unwrap();
        let params = Parameters::init(&net, &mut ChaCha8Rng::seed_from_u64(5));
        (net, params)
    }

    fn random_inputs(n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Tensor::vector((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_params() {
        let (net, mut params) = one_layer();
        let before = params.clone();
        let data: Vec<_> = random_inputs(4, 1).into_iter().map(|x| (x, 1.0)).collect();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = train(&net, &mut params, &data, &cfg).unwrap();
        assert!(report.losses.is_empty());
        assert_eq!(params, before);
    }

    #[test]
    fn constant_target_is_learned() {
        let (net, mut params) = one_layer();
        let data: Vec<_> = random_inputs(32, 2).into_iter().map(|x| (x, 0.7)).collect();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 0.05,
            decay_every: 50,
            ..TrainConfig::default()
        };
        let report = train(&net, &mut params, &data, &cfg).unwrap();
        assert!(report.losses.len() <= 200);
        assert!(mean_squared_error(&net, &params, &data).unwrap() < 1e-3);
        let best = report.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic_given_seed() {
        let (net, p0) = one_layer();
        let data: Vec<_> = random_inputs(20, 3)
            .into_iter()
            .map(|x| {
                let y = x.data()[0] - 2.0 * x.data()[2];
                (x, y)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let (mut a, mut b) = (p0.clone(), p0);
        let ra = train(&net, &mut a, &data, &cfg).unwrap();
        let rb = train(&net, &mut b, &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn nan_loss_aborts() {
        let (net, mut params) = one_layer();
        let data = vec![(Tensor::vector(vec![1.0, 0.0, 0.0]), f64::NAN)];
        let err = train(&net, &mut params, &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn empty_dataset_rejected() {
        let (net, mut params) = one_layer();
        assert!(train(&net, &mut params, &[], &TrainConfig::default()).is_err());
    }
}
