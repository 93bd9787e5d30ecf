//! Pipeline stages shared by the command line and the end-to-end tests.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collab::{default_layers_for, fuse_maps, CollabMap, Explainer, MoveCase, PlacedMap};
use crate::config::RunConfig;
use crate::distill::{
    make_lattices, select_lattices, significance_scores, train_gate, train_students, GateReport,
    GatingNet, Lattice, Scale, SignificanceReport, StudentEnsemble, StudentReport, Teacher,
    ValueTeacher,
};
use crate::error::Result;
use crate::goenv::{selfplay_generate, GameRecord, Move};
use crate::nn::{self, NetworkSpec, Parameters, TowerConfig, TrainReport};
use crate::tensor::Tensor;

pub const SCALES: [Scale; 2] = [Scale::Coarse, Scale::Fine];

const STAGE_SELFPLAY: u64 = 1;
const STAGE_TEACHER: u64 = 2;
const STAGE_STUDENTS: u64 = 3;
const STAGE_GATE: u64 = 4;

/// File names inside an output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.file("config.toml")
    }

    pub fn games(&self) -> PathBuf {
        self.file("games.jsonl")
    }

    pub fn teacher(&self) -> PathBuf {
        self.file("teacher.bin")
    }

    pub fn teacher_log(&self) -> PathBuf {
        self.file("teacher_loss.csv")
    }

    pub fn students(&self, scale: Scale) -> PathBuf {
        self.file(&format!("students_{}.bin", scale))
    }

    pub fn students_log(&self, scale: Scale) -> PathBuf {
        self.file(&format!("students_{}_loss.csv", scale))
    }

    pub fn students_report(&self, scale: Scale) -> PathBuf {
        self.file(&format!("students_{}.json", scale))
    }

    pub fn gate(&self, scale: Scale) -> PathBuf {
        self.file(&format!("gate_{}.bin", scale))
    }

    pub fn gate_log(&self, scale: Scale) -> PathBuf {
        self.file(&format!("gate_{}_loss.csv", scale))
    }

    pub fn gate_report(&self, scale: Scale) -> PathBuf {
        self.file(&format!("gate_{}.json", scale))
    }

    pub fn explanation_dir(&self, id: &str) -> PathBuf {
        self.dir.join("explanations").join(id)
    }
}

pub fn selfplay(cfg: &RunConfig) -> Vec<GameRecord> {
    selfplay_generate(
        cfg.selfplay.games,
        &cfg.selfplay_config(),
        cfg.stage_seed(STAGE_SELFPLAY),
    )
}

/// `(training games, held-out games)`.
pub fn split_games<'a>(cfg: &RunConfig, games: &'a [GameRecord]) -> (&'a [GameRecord], &'a [GameRecord]) {
    let held = (games.len() as f64 * cfg.selfplay.heldout_fraction).round() as usize;
    games.split_at(games.len() - held.min(games.len()))
}

/// `k` evenly spaced indices of `0..len`, or all of them for `k == 0`.
pub fn spread_indices(len: usize, k: usize) -> Vec<usize> {
    if k == 0 || k >= len {
        return (0..len).collect();
    }
    (0..k).map(|i| (2 * i + 1) * len / (2 * k)).collect()
}

/// Positions labeled with black's win probability `(outcome + 1) / 2`.
pub fn training_positions(cfg: &RunConfig, games: &[GameRecord]) -> Vec<(Tensor, f64)> {
    games
        .iter()
        .flat_map(|g| {
            let target = (g.outcome as f64 + 1.0) / 2.0;
            spread_indices(g.states.len(), cfg.selfplay.positions_per_game)
                .into_iter()
                .map(move |i| (g.states[i].encode(), target))
        })
        .collect()
}

/// Played stones only; passes have nothing to explain.
pub fn move_cases(games: &[GameRecord], per_game: usize) -> Result<Vec<MoveCase>> {
    let mut out = Vec::new();
    for g in games {
        let plays: Vec<usize> = (0..g.moves.len())
            .filter(|&i| matches!(g.moves[i], Move::Play(..)))
            .collect();
        for k in spread_indices(plays.len(), per_game) {
            let i = plays[k];
            out.push(MoveCase::from_move(&g.states[i], g.moves[i])?);
        }
    }
    Ok(out)
}

pub fn teacher_network(cfg: &RunConfig) -> Result<NetworkSpec> {
    nn::residual_tower(&TowerConfig {
        height: cfg.board.height,
        width: cfg.board.width,
        in_channels: 2,
        blocks: cfg.teacher.blocks,
        channels: cfg.teacher.channels,
        outputs: 1,
        sigmoid: true,
    })
}

pub fn train_teacher(cfg: &RunConfig, games: &[GameRecord]) -> Result<(Parameters, TrainReport)> {
    let net = teacher_network(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(STAGE_TEACHER));
    let mut params = Parameters::init(&net, &mut rng);
    let data = training_positions(cfg, games);
    let mut train_cfg = cfg.teacher.train.clone();
    train_cfg.seed = cfg.stage_seed(STAGE_TEACHER);
    let report = nn::train(&net, &mut params, &data, &train_cfg)?;
    Ok((params, report))
}

pub fn lattices(cfg: &RunConfig, scale: Scale) -> Result<Vec<Lattice>> {
    let s = cfg.student(scale);
    make_lattices(
        (cfg.board.height, cfg.board.width),
        (s.lattice, s.lattice),
        s.layout,
    )
}

fn scale_stream(scale: Scale) -> u64 {
    match scale {
        Scale::Coarse => 0,
        Scale::Fine => 1,
    }
}

fn stage_rng(cfg: &RunConfig, stage: u64, scale: Scale) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(stage));
    rng.set_stream(scale_stream(scale));
    rng
}

/// Untrained students of one scale.
pub fn new_ensemble(cfg: &RunConfig, scale: Scale) -> Result<StudentEnsemble> {
    let mut rng = stage_rng(cfg, STAGE_STUDENTS, scale);
    StudentEnsemble::new(scale, lattices(cfg, scale)?, 2, cfg.student(scale).net, &mut rng)
}

/// Students of one scale with stored parameters.
pub fn ensemble_with(cfg: &RunConfig, scale: Scale, params: Parameters) -> Result<StudentEnsemble> {
    let lattices = lattices(cfg, scale)?;
    let net = StudentEnsemble::network(&lattices, 2, cfg.student(scale).net)?;
    params.validate(&net)?;
    Ok(StudentEnsemble {
        scale,
        net,
        params,
        lattices,
    })
}

pub fn load_ensemble(cfg: &RunConfig, scale: Scale, path: &Path) -> Result<StudentEnsemble> {
    let lattices = lattices(cfg, scale)?;
    let net = StudentEnsemble::network(&lattices, 2, cfg.student(scale).net)?;
    let params = nn::load_params(path, &net)?;
    ensemble_with(cfg, scale, params)
}

pub fn fit_students(
    cfg: &RunConfig,
    scale: Scale,
    teacher: &dyn Teacher,
    boards: &[Tensor],
) -> Result<(StudentEnsemble, StudentReport)> {
    let mut ensemble = new_ensemble(cfg, scale)?;
    let mut train_cfg = cfg.student(scale).train.clone();
    train_cfg.seed = cfg.stage_seed(STAGE_STUDENTS) ^ scale_stream(scale);
    let report = train_students(teacher, &mut ensemble, boards, &train_cfg)?;
    Ok((ensemble, report))
}

pub fn new_gate(cfg: &RunConfig, ensemble: &StudentEnsemble) -> Result<GatingNet> {
    let mut rng = stage_rng(cfg, STAGE_GATE, ensemble.scale);
    GatingNet::new(ensemble, cfg.gate.net, &mut rng)
}

pub fn load_gate(cfg: &RunConfig, ensemble: &StudentEnsemble, path: &Path) -> Result<GatingNet> {
    let net = GatingNet::network(ensemble, cfg.gate.net)?;
    let params = nn::load_params(path, &net)?;
    Ok(GatingNet { net, params })
}

pub fn fit_gate(
    cfg: &RunConfig,
    teacher: &dyn Teacher,
    ensemble: &StudentEnsemble,
    cases: &[MoveCase],
) -> Result<(GatingNet, GateReport)> {
    let mut gate = new_gate(cfg, ensemble)?;
    let mut train_cfg = cfg.gate.train.clone();
    train_cfg.seed = cfg.stage_seed(STAGE_GATE) ^ scale_stream(ensemble.scale);
    let report = train_gate(
        teacher,
        ensemble,
        &mut gate,
        cases,
        &train_cfg,
        cfg.gate.heldout_fraction,
    )?;
    Ok((gate, report))
}

/// Every trained network needed to explain a move.
pub struct Models {
    pub teacher_net: NetworkSpec,
    pub teacher: Parameters,
    pub coarse: StudentEnsemble,
    pub fine: StudentEnsemble,
    pub coarse_gate: GatingNet,
    pub fine_gate: GatingNet,
}

impl Models {
    pub fn teacher(&self) -> ValueTeacher<'_> {
        ValueTeacher {
            net: &self.teacher_net,
            params: &self.teacher,
        }
    }

    pub fn load(cfg: &RunConfig, art: &Artifacts) -> Result<Self> {
        let teacher_net = teacher_network(cfg)?;
        let teacher = nn::load_params(&art.teacher(), &teacher_net)?;
        let coarse = load_ensemble(cfg, Scale::Coarse, &art.students(Scale::Coarse))?;
        let fine = load_ensemble(cfg, Scale::Fine, &art.students(Scale::Fine))?;
        let coarse_gate = load_gate(cfg, &coarse, &art.gate(Scale::Coarse))?;
        let fine_gate = load_gate(cfg, &fine, &art.gate(Scale::Fine))?;
        Ok(Models {
            teacher_net,
            teacher,
            coarse,
            fine,
            coarse_gate,
            fine_gate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Significance {
    pub target: Option<[usize; 2]>,
    /// Change of the teacher's pre-sigmoid score caused by the move.
    pub teacher_delta: f64,
    pub reports: Vec<SignificanceReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub significance: Significance,
    pub map: CollabMap,
}

fn student_map(
    cfg: &RunConfig,
    ensemble: &StudentEnsemble,
    lattice: usize,
    case: &MoveCase,
) -> Result<CollabMap> {
    let mut explainer = Explainer::new(&ensemble.net, &ensemble.params)?;
    explainer.epsilon = cfg.collab.epsilon;
    let layers = default_layers_for(&ensemble.net, &cfg.collab.layers);
    let crop = case.crop(&ensemble.lattices[lattice])?;
    let mut map = explainer.network_map(&crop, &layers)?;
    map.provenance = vec![(format!("{}[{}]", ensemble.scale, lattice), layers)];
    Ok(map)
}

/// Significance at both scales and the fused collaboration map.
pub fn explain(cfg: &RunConfig, models: &Models, case: &MoveCase) -> Result<Explanation> {
    let coarse = significance_scores(&models.coarse, &models.coarse_gate, case)?;
    let fine = significance_scores(&models.fine, &models.fine_gate, case)?;
    let (ci, fi) = select_lattices(&coarse, &fine);

    let teacher = models.teacher();
    let teacher_delta = teacher.evaluate(&case.post)? - teacher.evaluate(&case.pre)?;
    let mut explainer = Explainer::new(&models.teacher_net, &models.teacher)?;
    explainer.epsilon = cfg.collab.epsilon;
    let layers = default_layers_for(&models.teacher_net, &cfg.collab.layers);
    let mut value_map = explainer.network_map(case, &layers)?;
    value_map.provenance = vec![("teacher".into(), layers)];

    let coarse_map = student_map(cfg, &models.coarse, ci, case)?;
    let fine_map = student_map(cfg, &models.fine, fi, case)?;
    let map = fuse_maps(
        &value_map,
        &[
            PlacedMap {
                map: &coarse_map,
                lattice: &models.coarse.lattices[ci],
            },
            PlacedMap {
                map: &fine_map,
                lattice: &models.fine.lattices[fi],
            },
        ],
    )?;
    Ok(Explanation {
        significance: Significance {
            target: case.target.map(|(r, c)| [r, c]),
            teacher_delta,
            reports: vec![coarse, fine],
        },
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_is_even_and_bounded() {
        assert_eq!(spread_indices(10, 2), vec![2, 7]);
        assert_eq!(spread_indices(3, 5), vec![0, 1, 2]);
        assert_eq!(spread_indices(4, 0), vec![0, 1, 2, 3]);
        assert!(spread_indices(0, 3).is_empty());
    }

    #[test]
    fn heldout_games_come_last() {
        let mut cfg = RunConfig::default();
        cfg.selfplay.games = 10;
        cfg.selfplay.max_moves = 5;
        let games = selfplay(&cfg);
        let (train, held) = split_games(&cfg, &games);
        assert_eq!((train.len(), held.len()), (9, 1));
        assert_eq!(held[0], games[9]);
    }
}
