//! Lattice students distilled from a teacher, a gating network that mixes
//! them, and per-lattice significance of a move.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collab::MoveCase;
use crate::error::{Error, Result};
use crate::goenv::{synthetic_teacher_eval, Pattern, Region};
use crate::nn::{self, fit, LayerParams, NetworkSpec, Parameters, TowerConfig, TrainConfig, TrainReport};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Coarse,
    Fine,
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scale::Coarse => "coarse",
            Scale::Fine => "fine",
        })
    }
}

/// How lattices cover the board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeLayout {
    /// One lattice flush with each board corner.
    Corners,
    /// `n x n` evenly spaced lattices.
    Grid(usize),
}

/// Rectangular crop of the board, rotated so its nearest board corner sits
/// at the crop's top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Counter-clockwise quarter turns applied after cropping.
    pub quarter_turns: u8,
}

impl Lattice {
    pub fn orientation_degrees(&self) -> u16 {
        self.quarter_turns as u16 * 90
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    /// Shape of the rotated crop.
    pub fn crop_dims(&self) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (self.width, self.height)
        } else {
            (self.height, self.width)
        }
    }

    /// Board cell shown at crop cell `(i, j)`.
    pub fn source(&self, i: usize, j: usize) -> (usize, usize) {
        let (h, w) = (self.height, self.width);
        let (a, b) = match self.quarter_turns % 4 {
            0 => (i, j),
            1 => (j, w - 1 - i),
            2 => (h - 1 - i, w - 1 - j),
            _ => (h - 1 - j, i),
        };
        (self.row + a, self.col + b)
    }

    /// Crop cell showing board cell `(r, c)`, if it is inside the lattice.
    pub fn to_crop(&self, r: usize, c: usize) -> Option<(usize, usize)> {
        if !self.contains(r, c) {
            return None;
        }
        let (h, w) = (self.height, self.width);
        let (a, b) = (r - self.row, c - self.col);
        Some(match self.quarter_turns % 4 {
            0 => (a, b),
            1 => (w - 1 - b, a),
            2 => (h - 1 - a, w - 1 - b),
            _ => (b, h - 1 - a),
        })
    }

    fn check_fits(&self, h: usize, w: usize) -> Result<()> {
        if self.row + self.height > h || self.col + self.width > w {
            return Err(Error::config(format!(
                "lattice {}x{} at ({}, {}) exceeds the {}x{} board",
                self.height, self.width, self.row, self.col, h, w
            )));
        }
        Ok(())
    }

    pub fn crop_rotate(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w, ch) = input.hwc()?;
        self.check_fits(h, w)?;
        let (oh, ow) = self.crop_dims();
        let mut out = Tensor::zeros(&[oh, ow, ch]);
        for i in 0..oh {
            for j in 0..ow {
                let (r, c) = self.source(i, j);
                for k in 0..ch {
                    out.set3(i, j, k, input.at3(r, c, k));
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Lattice::crop_rotate`] onto an `h x w` board, zero elsewhere.
    pub fn uncrop_unrotate(&self, crop: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (ch_h, ch_w, ch) = crop.hwc()?;
        self.check_fits(h, w)?;
        if (ch_h, ch_w) != self.crop_dims() {
            return Err(Error::shape(format!(
                "crop is {}x{}, lattice expects {:?}",
                ch_h,
                ch_w,
                self.crop_dims()
            )));
        }
        let mut out = Tensor::zeros(&[h, w, ch]);
        for i in 0..ch_h {
            for j in 0..ch_w {
                let (r, c) = self.source(i, j);
                for k in 0..ch {
                    out.set3(r, c, k, crop.at3(i, j, k));
                }
            }
        }
        Ok(out)
    }
}

/// `k * span / (n - 1)` rounded to nearest, ties down.
fn grid_offset(k: usize, span: usize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let den = n - 1;
    let num = k * span;
    let (q, rem) = (num / den, num % den);
    if 2 * rem > den {
        q + 1
    } else {
        q
    }
}

/// Quarter turns that bring the nearest board corner to the top-left.
fn orientation(row: usize, col: usize, h: usize, w: usize, board_h: usize, board_w: usize) -> u8 {
    use std::cmp::Ordering::*;
    let vertical = (2 * row + h).cmp(&board_h);
    let horizontal = (2 * col + w).cmp(&board_w);
    match (vertical, horizontal) {
        (Less, Greater) => 1,
        (Greater, Greater) => 2,
        (Greater, Less) => 3,
        _ => 0,
    }
}

pub fn make_lattices(
    board: (usize, usize),
    size: (usize, usize),
    layout: LatticeLayout,
) -> Result<Vec<Lattice>> {
    let ((bh, bw), (h, w)) = (board, size);
    if h == 0 || w == 0 || h > bh || w > bw {
        return Err(Error::config(format!(
            "{}x{} lattices do not fit a {}x{} board",
            h, w, bh, bw
        )));
    }
    let axis = |span: usize| -> Result<Vec<usize>> {
        let mut offs: Vec<usize> = match layout {
            LatticeLayout::Corners => vec![0, span],
            LatticeLayout::Grid(0) => return Err(Error::config("grid layout needs n >= 1")),
            LatticeLayout::Grid(n) => (0..n).map(|k| grid_offset(k, span, n)).collect(),
        };
        offs.dedup();
        Ok(offs)
    };
    let (rows, cols) = (axis(bh - h)?, axis(bw - w)?);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        for &col in &cols {
            let quarter_turns = orientation(row, col, h, w, bh, bw);
            if quarter_turns % 2 == 1 && h != w {
                return Err(Error::config(
                    "non-square lattices cannot be turned toward a side corner",
                ));
            }
            out.push(Lattice {
                row,
                col,
                height: h,
                width: w,
                quarter_turns,
            });
        }
    }
    Ok(out)
}

/// Anything that scores a full board; students regress onto it.
pub trait Teacher {
    fn evaluate(&self, board: &Tensor) -> Result<f64>;
}

impl<F: Fn(&Tensor) -> Result<f64>> Teacher for F {
    fn evaluate(&self, board: &Tensor) -> Result<f64> {
        self(board)
    }
}

/// A trained value network, read before its sigmoid.
pub struct ValueTeacher<'a> {
    pub net: &'a NetworkSpec,
    pub params: &'a Parameters,
}

impl Teacher for ValueTeacher<'_> {
    fn evaluate(&self, board: &Tensor) -> Result<f64> {
        nn::score(self.net, self.params, board)
    }
}

/// Pattern counter that only looks inside one region.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTeacher {
    pub region: Region,
    pub patterns: Vec<Pattern>,
}

impl Teacher for SyntheticTeacher {
    fn evaluate(&self, board: &Tensor) -> Result<f64> {
        synthetic_teacher_eval(board, self.region, &self.patterns)
    }
}

/// Size of a residual tower, shared by students and gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerSize {
    pub blocks: usize,
    pub channels: usize,
}

/// Students of one scale; every lattice runs the same parameters.
#[derive(Debug, Clone)]
pub struct StudentEnsemble {
    pub scale: Scale,
    pub net: NetworkSpec,
    pub params: Parameters,
    pub lattices: Vec<Lattice>,
}

fn common_crop_dims(lattices: &[Lattice]) -> Result<(usize, usize)> {
    let first = lattices
        .first()
        .ok_or_else(|| Error::config("an ensemble needs at least one lattice"))?;
    let dims = first.crop_dims();
    if lattices.iter().any(|l| l.crop_dims() != dims) {
        return Err(Error::config("all lattices of a scale must share a crop shape"));
    }
    Ok(dims)
}

impl StudentEnsemble {
    pub fn new<R: Rng + ?Sized>(
        scale: Scale,
        lattices: Vec<Lattice>,
        in_channels: usize,
        size: TowerSize,
        rng: &mut R,
    ) -> Result<Self> {
        let net = StudentEnsemble::network(&lattices, in_channels, size)?;
        let params = Parameters::init(&net, rng);
        Ok(StudentEnsemble {
            scale,
            net,
            params,
            lattices,
        })
    }

    /// Shared student architecture for these lattices.
    pub fn network(lattices: &[Lattice], in_channels: usize, size: TowerSize) -> Result<NetworkSpec> {
        let (h, w) = common_crop_dims(lattices)?;
        nn::residual_tower(&TowerConfig {
            height: h,
            width: w,
            in_channels,
            blocks: size.blocks,
            channels: size.channels,
            outputs: 1,
            sigmoid: false,
        })
    }

    pub fn len(&self) -> usize {
        self.lattices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattices.is_empty()
    }

    pub fn crops(&self, board: &Tensor) -> Result<Vec<Tensor>> {
        self.lattices.iter().map(|l| l.crop_rotate(board)).collect()
    }

    pub fn student_output(&self, crop: &Tensor) -> Result<f64> {
        nn::score(&self.net, &self.params, crop)
    }

    /// `y_i` for every lattice.
    pub fn outputs(&self, board: &Tensor) -> Result<Vec<f64>> {
        self.crops(board)?
            .iter()
            .map(|c| self.student_output(c))
            .collect()
    }

    /// `y_i(after) - y_i(before)` for every lattice.
    pub fn deltas(&self, case: &MoveCase) -> Result<Vec<f64>> {
        let after = self.outputs(&case.post)?;
        let before = self.outputs(&case.pre)?;
        Ok(after.iter().zip(&before).map(|(a, b)| a - b).collect())
    }

    /// Mean squared error of each lattice's student against `targets`.
    pub fn lattice_losses(&self, boards: &[Tensor], targets: &[f64]) -> Result<Vec<f64>> {
        if boards.is_empty() || boards.len() != targets.len() {
            return Err(Error::config("need one target per board and at least one board"));
        }
        let mut sums = vec![0.0; self.len()];
        for (board, &t) in boards.iter().zip(targets) {
            for (s, y) in sums.iter_mut().zip(self.outputs(board)?) {
                *s += (y - t) * (y - t);
            }
        }
        let n = boards.len() as f64;
        Ok(sums.into_iter().map(|s| s / n).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub training: TrainReport,
    pub lattice_losses: Vec<f64>,
}

/// Fits the shared student on every `(crop, teacher score)` pair.
pub fn train_students(
    teacher: &dyn Teacher,
    ensemble: &mut StudentEnsemble,
    boards: &[Tensor],
    cfg: &TrainConfig,
) -> Result<StudentReport> {
    let targets = boards
        .iter()
        .map(|b| teacher.evaluate(b))
        .collect::<Result<Vec<f64>>>()?;
    let mut samples = Vec::with_capacity(boards.len() * ensemble.len());
    for (board, &t) in boards.iter().zip(&targets) {
        for crop in ensemble.crops(board)? {
            samples.push((crop, t));
        }
    }
    let training = if cfg.epochs == 0 {
        TrainReport { losses: Vec::new() }
    } else {
        nn::train(&ensemble.net, &mut ensemble.params, &samples, cfg)?
    };
    let lattice_losses = ensemble.lattice_losses(boards, &targets)?;
    Ok(StudentReport {
        training,
        lattice_losses,
    })
}

/// Predicts one mixture weight per lattice from the stacked crops.
#[derive(Debug, Clone)]
pub struct GatingNet {
    pub net: NetworkSpec,
    pub params: Parameters,
}

impl GatingNet {
    /// Starts at the uniform mixture: zero head weights, head bias `1/n`.
    pub fn new<R: Rng + ?Sized>(ensemble: &StudentEnsemble, size: TowerSize, rng: &mut R) -> Result<Self> {
        let net = GatingNet::network(ensemble, size)?;
        let mut params = Parameters::init(&net, rng);
        let n = ensemble.len();
        let head = params.layers.len() - 1;
        let LayerParams::Linear { weight, bias } = &mut params.layers[head] else {
            unreachable!("towers end in a fully connected layer")
        };
        weight.data_mut().fill(0.0);
        bias.data_mut().fill(1.0 / n as f64);
        Ok(GatingNet { net, params })
    }

    pub fn network(ensemble: &StudentEnsemble, size: TowerSize) -> Result<NetworkSpec> {
        let (h, w) = common_crop_dims(&ensemble.lattices)?;
        let c = ensemble.net.input_shape()[2];
        nn::residual_tower(&TowerConfig {
            height: h,
            width: w,
            in_channels: c * ensemble.len(),
            blocks: size.blocks,
            channels: size.channels,
            outputs: ensemble.len(),
            sigmoid: false,
        })
    }

    pub fn alpha(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(nn::forward(&self.net, &self.params, input)?.output().data().to_vec())
    }
}

/// Crops stacked along the channel axis, lattice by lattice.
pub fn gate_input(crops: &[Tensor]) -> Result<Tensor> {
    let first = crops.first().ok_or_else(|| Error::config("no crops to stack"))?;
    let (h, w, c) = first.hwc()?;
    for t in crops {
        first.check_same_shape(t)?;
    }
    let n = crops.len();
    let mut data = Vec::with_capacity(h * w * c * n);
    for px in 0..h * w {
        for t in crops {
            data.extend_from_slice(&t.data()[px * c..(px + 1) * c]);
        }
    }
    Tensor::from_vec(&[h, w, c * n], data)
}

/// `sum_i alpha_i y_i` with its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub value: f64,
    pub alpha: Vec<f64>,
    pub outputs: Vec<f64>,
}

pub fn mix(alpha: &[f64], outputs: &[f64]) -> f64 {
    alpha.iter().zip(outputs).map(|(a, y)| a * y).sum()
}

pub fn mixture_predict(ensemble: &StudentEnsemble, gate: &GatingNet, board: &Tensor) -> Result<Mixture> {
    let crops = ensemble.crops(board)?;
    let alpha = gate.alpha(&gate_input(&crops)?)?;
    let outputs = crops
        .iter()
        .map(|c| ensemble.student_output(c))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Mixture {
        value: mix(&alpha, &outputs),
        alpha,
        outputs,
    })
}

/// One move, precomputed for gate training.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    /// Stacked crops of the post-move board.
    pub input: Tensor,
    pub teacher_delta: f64,
    pub student_deltas: Vec<f64>,
}

impl GateSample {
    pub fn residual(&self, alpha: &[f64]) -> f64 {
        self.teacher_delta - mix(alpha, &self.student_deltas)
    }
}

pub fn gate_samples(
    teacher: &dyn Teacher,
    ensemble: &StudentEnsemble,
    cases: &[MoveCase],
) -> Result<Vec<GateSample>> {
    cases
        .iter()
        .map(|case| {
            Ok(GateSample {
                input: gate_input(&ensemble.crops(&case.post)?)?,
                teacher_delta: teacher.evaluate(&case.post)? - teacher.evaluate(&case.pre)?,
                student_deltas: ensemble.deltas(case)?,
            })
        })
        .collect()
}

/// Mean squared mixture residual of the gate over `samples`.
pub fn gate_loss(gate: &GatingNet, samples: &[GateSample]) -> Result<f64> {
    mean_loss(samples, |s| gate.alpha(&s.input))
}

/// The same loss with every weight fixed at `1/n`.
pub fn uniform_gate_loss(samples: &[GateSample]) -> Result<f64> {
    mean_loss(samples, |s| {
        let n = s.student_deltas.len();
        Ok(vec![1.0 / n as f64; n])
    })
}

fn mean_loss(samples: &[GateSample], alpha: impl Fn(&GateSample) -> Result<Vec<f64>>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("no gate samples"));
    }
    let mut total = 0.0;
    for s in samples {
        let r = s.residual(&alpha(s)?);
        total += r * r;
    }
    Ok(total / samples.len() as f64)
}

pub fn fit_gate(gate: &mut GatingNet, samples: &[GateSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.epochs == 0 {
        return Ok(TrainReport { losses: Vec::new() });
    }
    fit(&gate.net, &mut gate.params, samples, cfg, |s| &s.input, |s, out| {
        let r = s.residual(out.data());
        let grad = s.student_deltas.iter().map(|d| -2.0 * r * d).collect();
        (r * r, Tensor::vector(grad))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub training: TrainReport,
    pub train_samples: usize,
    pub heldout_samples: usize,
    /// Mixture loss of the trained gate on the held-out moves.
    pub heldout_loss: Option<f64>,
    /// The same with uniform weights.
    pub uniform_loss: Option<f64>,
}

/// Trains the gate on the first moves and scores it on the last
/// `heldout_fraction` of them.
pub fn train_gate(
    teacher: &dyn Teacher,
    ensemble: &StudentEnsemble,
    gate: &mut GatingNet,
    cases: &[MoveCase],
    cfg: &TrainConfig,
    heldout_fraction: f64,
) -> Result<GateReport> {
    if !(0.0..1.0).contains(&heldout_fraction) {
        return Err(Error::config("heldout_fraction must be in [0, 1)"));
    }
    let samples = gate_samples(teacher, ensemble, cases)?;
    let heldout = (samples.len() as f64 * heldout_fraction).round() as usize;
    if heldout >= samples.len() {
        return Err(Error::config("no moves left to train the gate on"));
    }
    let (train_set, test_set) = samples.split_at(samples.len() - heldout);
    let training = fit_gate(gate, train_set, cfg)?;
    let (heldout_loss, uniform_loss) = if test_set.is_empty() {
        (None, None)
    } else {
        (Some(gate_loss(gate, test_set)?), Some(uniform_gate_loss(test_set)?))
    };
    Ok(GateReport {
        training,
        train_samples: train_set.len(),
        heldout_samples: test_set.len(),
        heldout_loss,
        uniform_loss,
    })
}

/// Share of a move's effect carried by each lattice of one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub scale: Scale,
    pub scores: Vec<f64>,
    /// `None` when every score is zero.
    pub normalized: Option<Vec<f64>>,
    pub selected: usize,
}

impl SignificanceReport {
    pub fn is_degenerate(&self) -> bool {
        self.normalized.is_none()
    }
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &x)| match best {
            Some((_, b)) if b >= x => best,
            _ => Some((i, x)),
        })
        .map_or(0, |(i, _)| i)
}

/// `s_i = |alpha_i * dy_i|`.
pub fn significance_from(scale: Scale, alpha: &[f64], deltas: &[f64]) -> Result<SignificanceReport> {
    if alpha.len() != deltas.len() || alpha.is_empty() {
        return Err(Error::shape(format!(
            "{} weights for {} lattices",
            alpha.len(),
            deltas.len()
        )));
    }
    let scores: Vec<f64> = alpha.iter().zip(deltas).map(|(a, d)| (a * d).abs()).collect();
    let total: f64 = scores.iter().sum();
    let normalized = (total > 0.0).then(|| scores.iter().map(|s| s / total).collect());
    Ok(SignificanceReport {
        scale,
        selected: argmax(&scores),
        scores,
        normalized,
    })
}

pub fn significance_scores(
    ensemble: &StudentEnsemble,
    gate: &GatingNet,
    case: &MoveCase,
) -> Result<SignificanceReport> {
    let alpha = gate.alpha(&gate_input(&ensemble.crops(&case.post)?)?)?;
    significance_from(ensemble.scale, &alpha, &ensemble.deltas(case)?)
}

pub fn select_lattices(coarse: &SignificanceReport, fine: &SignificanceReport) -> (usize, usize) {
    (coarse.selected, fine.selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn offsets(ls: &[Lattice]) -> Vec<(usize, usize)> {
        ls.iter().map(|l| (l.row, l.col)).collect()
    }

    #[test]
    fn corner_lattices() {
        let ls = make_lattices((19, 19), (13, 13), LatticeLayout::Corners).unwrap();
        assert_eq!(offsets(&ls), vec![(0, 0), (0, 6), (6, 0), (6, 6)]);
        let turns: Vec<u8> = ls.iter().map(|l| l.quarter_turns).collect();
        assert_eq!(turns, vec![0, 1, 3, 2]);
    }

    #[test]
    fn grid_offsets_round_ties_down() {
        let ls = make_lattices((19, 19), (10, 10), LatticeLayout::Grid(3)).unwrap();
        let rows: Vec<usize> = ls.iter().step_by(3).map(|l| l.row).collect();
        assert_eq!(rows, vec![0, 4, 9]);
        assert_eq!(ls[4].quarter_turns, 0);
        assert_eq!(ls.len(), 9);
    }

    #[test]
    fn full_size_lattice_is_single() {
        let ls = make_lattices((9, 9), (9, 9), LatticeLayout::Corners).unwrap();
        assert_eq!(ls.len(), 1);
        assert_eq!(ls[0].quarter_turns, 0);
        assert!(make_lattices((9, 9), (10, 9), LatticeLayout::Corners).is_err());
        assert!(make_lattices((9, 9), (5, 5), LatticeLayout::Grid(0)).is_err());
    }

    #[test]
    fn corners_land_top_left() {
        let ls = make_lattices((9, 9), (6, 6), LatticeLayout::Corners).unwrap();
        let corners = [(0, 0), (0, 8), (8, 0), (8, 8)];
        for (l, &(r, c)) in ls.iter().zip(&corners) {
            let mut board = Tensor::zeros(&[9, 9, 2]);
            board.set3(r, c, 0, 1.0);
            let crop = l.crop_rotate(&board).unwrap();
            assert_eq!(crop.at3(0, 0, 0), 1.0, "lattice {:?}", l);
            assert_eq!(crop.sum(), 1.0);
            assert_eq!(l.to_crop(r, c), Some((0, 0)));
            assert_eq!(l.source(0, 0), (r, c));
        }
    }

    #[test]
    fn round_trip_restores_lattice_cells() {
        let ls = make_lattices((7, 7), (4, 4), LatticeLayout::Grid(3)).unwrap();
        let board = Tensor::from_vec(&[7, 7, 2], (0..98).map(|v| v as f64).collect()).unwrap();
        for l in &ls {
            let back = l.uncrop_unrotate(&l.crop_rotate(&board).unwrap(), 7, 7).unwrap();
            for r in 0..7 {
                for c in 0..7 {
                    for k in 0..2 {
                        let want = if l.contains(r, c) { board.at3(r, c, k) } else { 0.0 };
                        assert_eq!(back.at3(r, c, k), want);
                    }
                }
            }
        }
    }

    #[test]
    fn stacking_interleaves_by_pixel() {
        let a = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let s = gate_input(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[1, 2, 4]);
        assert_eq!(s.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn mixture_examples() {
        assert_eq!(mix(&[0.5, 0.5], &[1.0, 3.0]), 2.0);
        assert_eq!(mix(&[1.0], &[-0.7]), -0.7);
        assert_eq!(mix(&[0.0, 0.0], &[1.0, 3.0]), 0.0);
    }

    #[test]
    fn significance_examples() {
        let r = significance_from(Scale::Coarse, &[1.0, 0.0, 0.0, 0.0], &[0.3, 0.2, -0.1, 0.5]).unwrap();
        assert_eq!(r.scores, vec![0.3, 0.0, 0.0, 0.0]);
        assert_eq!(r.normalized, Some(vec![1.0, 0.0, 0.0, 0.0]));
        assert_eq!(r.selected, 0);
        let r = significance_from(Scale::Fine, &[-0.5], &[0.2]).unwrap();
        assert_eq!(r.scores, vec![0.1]);
        let r = significance_from(Scale::Fine, &[0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(r.is_degenerate());
        assert_eq!(r.selected, 0);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let a = significance_from(Scale::Coarse, &[1.0, 1.0, 1.0], &[0.1, 0.3, 0.3]).unwrap();
        let b = significance_from(Scale::Fine, &[2.0], &[1.0]).unwrap();
        assert_eq!(select_lattices(&a, &b), (1, 0));
    }

    #[test]
    fn json_shape() {
        let r = significance_from(Scale::Fine, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(v["scale"], "fine");
        assert!(v["normalized"].is_null());
        assert_eq!(v["selected"], 0);
    }

    #[test]
    fn fresh_gate_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ls = make_lattices((5, 5), (3, 3), LatticeLayout::Corners).unwrap();
        let size = TowerSize { blocks: 1, channels: 4 };
        let ens = StudentEnsemble::new(Scale::Coarse, ls, 2, size, &mut rng).unwrap();
        let gate = GatingNet::new(&ens, size, &mut rng).unwrap();
        assert_eq!(gate.net.input_shape(), &[3, 3, 8]);
        let board = Tensor::filled(&[5, 5, 2], 0.5);
        let m = mixture_predict(&ens, &gate, &board).unwrap();
        assert_eq!(m.alpha, vec![0.25; 4]);
        assert!((m.value - m.outputs.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_leave_students_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ls = make_lattices((5, 5), (3, 3), LatticeLayout::Corners).unwrap();
        let size = TowerSize { blocks: 1, channels: 3 };
        let mut ens = StudentEnsemble::new(Scale::Coarse, ls, 2, size, &mut rng).unwrap();
        let before = ens.params.clone();
        let boards = vec![Tensor::filled(&[5, 5, 2], 0.0), Tensor::filled(&[5, 5, 2], 1.0)];
        let teacher = |_: &Tensor| Ok(0.5);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let rep = train_students(&teacher, &mut ens, &boards, &cfg).unwrap();
        assert_eq!(ens.params, before);
        assert_eq!(rep.lattice_losses, ens.lattice_losses(&boards, &[0.5, 0.5]).unwrap());
    }

    #[test]
    fn null_deltas_give_zero_gate_loss() {
        let s = GateSample {
            input: Tensor::zeros(&[1, 1, 2]),
            teacher_delta: 0.0,
            student_deltas: vec![0.0, 0.0],
        };
        assert_eq!(uniform_gate_loss(&[s.clone()]).unwrap(), 0.0);
        assert_eq!(s.residual(&[3.0, -7.0]), 0.0);
    }
}
