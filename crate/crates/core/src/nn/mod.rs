//! Minimal CNN runtime: topology, forward/backward passes, SGD training,
//! batch-norm folding and parameter files.

mod backward;
mod fold;
mod forward;
mod io;
pub(crate) mod ops;
mod params;
mod spec;
mod train;

pub use backward::{accumulate_gradients, backward_gradients};
pub use fold::{absorb_batchnorm, fold_network, BnChannel, FoldedNetwork};
pub use forward::{forward, score, ForwardTrace};
pub(crate) use forward::{conv_geom, linear_params, pool_geom};
pub use io::{decode_params, encode_params, load_params, save_params, FORMAT_VERSION, MAGIC};
pub use params::{expected_shapes, LayerParams, Parameters, BN_EPS};
pub use spec::{residual_tower, LayerSpec, NetworkSpec, TowerConfig};
pub use train::{fit, mean_squared_error, train, TrainConfig, TrainReport};
