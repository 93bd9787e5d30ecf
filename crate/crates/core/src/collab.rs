//! Fine-grained contextual collaborations of a target move.
//!
//! Contributions at a mid-level conv layer are rescaled by how much the move
//! changed each activation, `C_i * |o_i - o_bfr_i| / o_i` for `o_i > eps`, and
//! the result is propagated down to the board.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::contribution::{propagate_from, ContributionMap, PreparedNetwork};
use crate::distill::Lattice;
use crate::error::{Error, Result};
use crate::goenv::{GameState, Move};
use crate::nn::{LayerSpec, NetworkSpec, Parameters};
use crate::tensor::Tensor;

/// Activations at or below this value count as inactive in the mask.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Conv layers (1-based ordinals) whose maps are summed per network.
pub const DEFAULT_LAYERS: [usize; 4] = [1, 3, 5, 7];

/// Board before and after the explained move.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveCase {
    pub pre: Tensor,
    pub post: Tensor,
    /// The new stone, when it lies on this (possibly cropped) board.
    pub target: Option<(usize, usize)>,
}

impl MoveCase {
    pub fn new(pre: Tensor, post: Tensor, target: Option<(usize, usize)>) -> Result<Self> {
        pre.check_same_shape(&post)?;
        let (h, w, c) = pre.hwc()?;
        if let Some((r, col)) = target {
            if r >= h || col >= w {
                return Err(Error::config(format!("target ({}, {}) is off the board", r, col)));
            }
            if (0..c).all(|ch| pre.at3(r, col, ch) == post.at3(r, col, ch)) {
                return Err(Error::config(format!(
                    "boards do not differ at the target ({}, {})",
                    r, col
                )));
            }
        }
        Ok(MoveCase { pre, post, target })
    }

    /// Plays `mv` on `state` (captures included).
    pub fn from_move(state: &GameState, mv: Move) -> Result<Self> {
        let Move::Play(r, c) = mv else {
            return Err(Error::IllegalMove("a pass has no target stone to explain".into()));
        };
        let next = state.apply_move(mv)?;
        MoveCase::new(state.encode(), next.encode(), Some((r, c)))
    }

    /// The same move seen through a lattice.
    pub fn crop(&self, lattice: &Lattice) -> Result<MoveCase> {
        let target = self.target.and_then(|(r, c)| lattice.to_crop(r, c));
        Ok(MoveCase {
            pre: lattice.crop_rotate(&self.pre)?,
            post: lattice.crop_rotate(&self.post)?,
            target,
        })
    }
}

/// Signed per-position collaboration scores over a board.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabMap {
    /// `[h, w, 1]`.
    pub values: Tensor,
    /// `(network id, conv layers)` that were summed into this map.
    pub provenance: Vec<(String, Vec<usize>)>,
}

impl CollabMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        CollabMap {
            values: Tensor::zeros(&[height, width, 1]),
            provenance: Vec::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values.at3(r, c, 0)
    }

    pub fn is_zero(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0)
    }

    /// `row,col,score` with a header and one line per board point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,score\n");
        for r in 0..self.height() {
            for c in 0..self.width() {
                writeln!(out, "{},{},{}", r, c, self.get(r, c)).expect("string write");
            }
        }
        out
    }

    pub fn from_csv(text: &str, height: usize, width: usize) -> Result<Self> {
        let mut values = Tensor::zeros(&[height, width, 1]);
        let mut seen = vec![false; height * width];
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("row")) {
                continue;
            }
            let bad = |m: &str| Error::config(format!("map line {}: {}", n + 1, m));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [r, c, v] = fields[..] else {
                return Err(bad("expected row,col,score"));
            };
            let r: usize = r.parse().map_err(|_| bad("bad row"))?;
            let c: usize = c.parse().map_err(|_| bad("bad col"))?;
            let v: f64 = v.parse().map_err(|_| bad("bad score"))?;
            if r >= height || c >= width {
                return Err(bad("point off the board"));
            }
            values.set3(r, c, 0, v);
            seen[r * width + c] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::config("map does not cover every board point"));
        }
        Ok(CollabMap {
            values,
            provenance: Vec::new(),
        })
    }

    pub fn read_csv(path: &Path, height: usize, width: usize) -> Result<Self> {
        CollabMap::from_csv(&fs::read_to_string(path)?, height, width)
    }
}

/// Rescales contributions by the move's effect on each activation.
pub fn collab_mask(c: &Tensor, o: &Tensor, o_bfr: &Tensor, epsilon: f64) -> Result<Tensor> {
    c.check_same_shape(o)?;
    o.check_same_shape(o_bfr)?;
    let data = c
        .data()
        .iter()
        .zip(o.data())
        .zip(o_bfr.data())
        .map(|((&ci, &oi), &bi)| {
            if oi > epsilon {
                ci * (oi - bi).abs() / oi
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(c.shape(), data)
}

/// Folded activation index carrying conv layer `ordinal` (1-based), after
/// its batch norm if it has one.
fn conv_activation(prepared: &PreparedNetwork, net: &NetworkSpec, ordinal: usize) -> Result<usize> {
    let convs = net.conv_layers();
    let layer = *ordinal
        .checked_sub(1)
        .and_then(|i| convs.get(i))
        .ok_or_else(|| {
            Error::config(format!(
                "conv layer {} out of range 1..={}",
                ordinal,
                convs.len()
            ))
        })?;
    let act = match net.layers().get(layer) {
        Some(LayerSpec::BatchNorm) => layer + 1,
        _ => layer,
    };
    prepared.folded.map_activation(act)
}

/// A network prepared once for explaining many moves.
pub struct Explainer<'a> {
    net: &'a NetworkSpec,
    prepared: PreparedNetwork,
    pub epsilon: f64,
}

impl<'a> Explainer<'a> {
    pub fn new(net: &'a NetworkSpec, params: &Parameters) -> Result<Self> {
        Ok(Explainer {
            net,
            prepared: PreparedNetwork::new(net, params)?,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.net.conv_layers().len()
    }

    /// Collaboration map from one conv layer (1-based ordinal).
    pub fn layer_map(&self, case: &MoveCase, layer: usize) -> Result<CollabMap> {
        let post = self.prepared.trace(&case.post)?;
        let pre = self.prepared.trace(&case.pre)?;
        self.layer_map_traced(&pre, &post, layer)
    }

    fn layer_map_traced(
        &self,
        pre: &crate::nn::ForwardTrace,
        post: &crate::nn::ForwardTrace,
        layer: usize,
    ) -> Result<CollabMap> {
        let act = conv_activation(&self.prepared, self.net, layer)?;
        let c = self.prepared.propagate_to(post, act)?.map;
        let masked = collab_mask(
            &c.values,
            post.activation(act),
            pre.activation(act),
            self.epsilon,
        )?;
        let start = ContributionMap {
            layer: act,
            values: masked,
        };
        let input = propagate_from(self.prepared.net(), self.prepared.params(), post, start, 0)?;
        Ok(CollabMap {
            values: input.map.values.sum_channels()?,
            provenance: vec![(String::new(), vec![layer])],
        })
    }

    /// Sum of the per-layer maps.
    pub fn network_map(&self, case: &MoveCase, layers: &[usize]) -> Result<CollabMap> {
        if layers.is_empty() {
            return Err(Error::config("no layers to fuse"));
        }
        let post = self.prepared.trace(&case.post)?;
        let pre = self.prepared.trace(&case.pre)?;
        let mut total: Option<Tensor> = None;
        for &l in layers {
            let m = self.layer_map_traced(&pre, &post, l)?;
            match &mut total {
                Some(t) => t.add_assign(&m.values)?,
                None => total = Some(m.values),
            }
        }
        Ok(CollabMap {
            values: total.expect("layers is non-empty"),
            provenance: vec![(String::new(), layers.to_vec())],
        })
    }
}

pub fn collab_map_for_layer(
    net: &NetworkSpec,
    params: &Parameters,
    case: &MoveCase,
    layer: usize,
) -> Result<CollabMap> {
    Explainer::new(net, params)?.layer_map(case, layer)
}

pub fn network_collab_map(
    net: &NetworkSpec,
    params: &Parameters,
    case: &MoveCase,
    layers: &[usize],
) -> Result<CollabMap> {
    Explainer::new(net, params)?.network_map(case, layers)
}

/// The default fusion layers clipped to the conv layers `net` has.
pub fn default_layers_for(net: &NetworkSpec, wanted: &[usize]) -> Vec<usize> {
    let n = net.conv_layers().len();
    wanted.iter().copied().filter(|&l| l >= 1 && l <= n).collect()
}

/// L1 normalization. Returns the map unchanged and `false` if it is all zero.
pub fn normalize_map(m: &CollabMap) -> (CollabMap, bool) {
    let total = m.values.abs_sum();
    if total == 0.0 {
        return (m.clone(), false);
    }
    let mut out = m.clone();
    out.values.scale(1.0 / total);
    (out, true)
}

/// A student's map together with the lattice it was computed on.
pub struct PlacedMap<'a> {
    pub map: &'a CollabMap,
    pub lattice: &'a Lattice,
}

/// Normalizes the value-net map and each student map, places the students
/// back on the board and sums everything.
pub fn fuse_maps(value_map: &CollabMap, students: &[PlacedMap<'_>]) -> Result<CollabMap> {
    let (h, w) = (value_map.height(), value_map.width());
    let (mut fused, _) = normalize_map(value_map);
    for s in students {
        let (norm, _) = normalize_map(s.map);
        let placed = s.lattice.uncrop_unrotate(&norm.values, h, w)?;
        fused.values.add_assign(&placed)?;
        fused.provenance.extend(s.map.provenance.iter().cloned());
    }
    Ok(fused)
}

/// Diverging red (positive) / blue (negative) heatmap as binary PPM (P6).
pub fn render_ppm(map: &CollabMap, cell_px: usize, grid: bool) -> Vec<u8> {
    let (h, w) = (map.height(), map.width());
    let cell = cell_px.max(1);
    let (ph, pw) = (h * cell, w * cell);
    let peak = map.values.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = format!("P6\n{} {}\n255\n", pw, ph).into_bytes();
    for y in 0..ph {
        for x in 0..pw {
            let (r, c) = (y / cell, x / cell);
            let on_grid = grid && cell > 2 && (y % cell == cell / 2 || x % cell == cell / 2);
            let rgb = if on_grid {
                [40, 40, 40]
            } else {
                let t = if peak > 0.0 { map.get(r, c) / peak } else { 0.0 };
                let fade = (255.0 * (1.0 - t.abs())).round() as u8;
                if t >= 0.0 {
                    [255, fade, fade]
                } else {
                    [fade, fade, 255]
                }
            };
            out.extend_from_slice(&rgb);
        }
    }
    out
}
