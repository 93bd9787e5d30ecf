//! Binary parameter files.
//!
//! Layout (little-endian): magic `CCNN`, format version `u32`, then one chunk
//! per layer: layer index `u32` (0-based), tensor count `u32`, and for each
//! tensor its rank `u32`, dims `u32[rank]` and `f64[product(dims)]` payload.

use std::fs;
use std::path::Path;

use super::params::{LayerParams, Parameters};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CCNN";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_params(params: &Parameters) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (i, layer) in params.layers.iter().enumerate() {
        let tensors = layer.tensors();
        buf.extend_from_slice(&(i as u32).to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated at byte {} (needed {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Parses a parameter file and checks it against `net`.
pub fn decode_params(bytes: &[u8], net: &NetworkSpec) -> Result<Parameters> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Corrupt("missing magic".into()))? != MAGIC {
        return Err(Error::Corrupt("bad magic (expected CCNN)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut layers = Vec::with_capacity(net.depth());
    while !r.done() {
        let index = r.u32()? as usize;
        if index != layers.len() {
            return Err(Error::Corrupt(format!(
                "expected chunk for layer {}, found {}",
                layers.len(),
                index
            )));
        }
        if index >= net.depth() {
            return Err(Error::shape(format!(
                "file has more layers than the network ({})",
                net.depth()
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4));
        for _ in 0..count {
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Corrupt(format!("implausible tensor rank {}", rank)));
            }
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Corrupt("tensor size overflow".into()))?;
            let payload = r.take(len.checked_mul(8).ok_or_else(|| Error::Corrupt("tensor size overflow".into()))?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::from_vec(&dims, data)?);
        }
        layers.push(layer_from_tensors(&net.layers()[index], tensors, index)?);
    }
    if layers.len() != net.depth() {
        return Err(Error::Corrupt(format!(
            "file holds {} layers, network has {}",
            layers.len(),
            net.depth()
        )));
    }
    let params = Parameters { layers };
    params.validate(net)?;
    Ok(params)
}

fn layer_from_tensors(spec: &LayerSpec, tensors: Vec<Tensor>, index: usize) -> Result<LayerParams> {
    let mismatch = |n: usize| {
        Error::shape(format!(
            "layer {} ({}) stored with {} tensors",
            index,
            spec.name(),
            n
        ))
    };
    let n = tensors.len();
    let mut it = tensors.into_iter();
    Ok(match spec {
        LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
            if n != 2 {
                return Err(mismatch(n));
            }
            LayerParams::Linear {
                weight: it.next().unwrap(),
                bias: it.next().unwrap(),
            }
        }
        LayerSpec::BatchNorm => {
            if n != 4 {
                return Err(mismatch(n));
            }
            LayerParams::BatchNorm {
                gamma: it.next().unwrap(),
                beta: it.next().unwrap(),
                mean: it.next().unwrap(),
                std: it.next().unwrap(),
            }
        }
        _ => {
            if n != 0 {
                return Err(mismatch(n));
            }
            LayerParams::Empty
        }
    })
}

pub fn save_params(path: &Path, params: &Parameters) -> Result<()> {
    fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn load_params(path: &Path, net: &NetworkSpec) -> Result<Parameters> {
    decode_params(&fs::read(path)?, net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{residual_tower, TowerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tower() -> (NetworkSpec, Parameters) {
        let net = residual_tower(&TowerConfig {
            height: 5,
            width: 5,
            in_channels: 2,
            blocks: 1,
            channels: 3,
            outputs: 1,
            sigmoid: true,
        })
        .unwrap();
        let params = Parameters::init(&net, &mut ChaCha8Rng::seed_from_u64(9));
        (net, params)
    }

    #[test]
    fn round_trip_is_exact() {
        let (net, params) = tower();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ccnn");
        save_params(&path, &params).unwrap();
        assert_eq!(load_params(&path, &net).unwrap(), params);
    }

    #[test]
    fn truncated_file_rejected() {
        let (net, params) = tower();
        let bytes = encode_params(&params);
        for cut in [0, 3, 8, 13, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_params(&bytes[..cut], &net).is_err(), "cut at {}", cut);
        }
    }

    #[test]
    fn version_mismatch_reported() {
        let (net, params) = tower();
        let mut bytes = encode_params(&params);
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        match decode_params(&bytes, &net) {
            Err(Error::Version { found: 7, expected }) => assert_eq!(expected, FORMAT_VERSION),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn wrong_network_rejected() {
        let (_, params) = tower();
        let other = residual_tower(&TowerConfig {
            height: 5,
            width: 5,
            in_channels: 2,
            blocks: 1,
            channels: 4,
            outputs: 1,
            sigmoid: true,
        })
        .unwrap();
        assert!(decode_params(&encode_params(&params), &other).is_err());
    }
}
