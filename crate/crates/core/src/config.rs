//! Run configuration, stored as TOML next to every output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collab::{DEFAULT_EPSILON, DEFAULT_LAYERS};
use crate::distill::{LatticeLayout, Scale, TowerSize};
use crate::error::{Error, Result};
use crate::goenv::{Policy, SelfPlayConfig};
use crate::nn::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardConfig {
    pub height: usize,
    pub width: usize,
    pub komi: f64,
}

impl Default for BoardConfig {
    fn default() -> Self {
        BoardConfig {
            height: 9,
            width: 9,
            komi: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfPlaySection {
    pub games: usize,
    pub policy: Policy,
    pub max_moves: usize,
    /// Evenly spaced positions kept per game for training (0 keeps all).
    pub positions_per_game: usize,
    /// Trailing share of games kept out of every training stage.
    pub heldout_fraction: f64,
}

impl Default for SelfPlaySection {
    fn default() -> Self {
        SelfPlaySection {
            games: 500,
            policy: Policy::UniformRandomLegal,
            max_moves: 120,
            positions_per_game: 8,
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub blocks: usize,
    pub channels: usize,
    pub train: TrainConfig,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            blocks: 3,
            channels: 16,
            train: TrainConfig {
                epochs: 12,
                learning_rate: 0.02,
                decay_every: 5,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    /// Square lattice side.
    pub lattice: usize,
    pub layout: LatticeLayout,
    pub net: TowerSize,
    pub train: TrainConfig,
}

impl StudentSection {
    fn coarse() -> Self {
        StudentSection {
            lattice: 7,
            layout: LatticeLayout::Corners,
            net: TowerSize {
                blocks: 2,
                channels: 12,
            },
            train: TrainConfig {
                epochs: 8,
                decay_every: 4,
                ..TrainConfig::default()
            },
        }
    }

    fn fine() -> Self {
        StudentSection {
            lattice: 5,
            layout: LatticeLayout::Grid(3),
            ..StudentSection::coarse()
        }
    }
}

impl Default for StudentSection {
    fn default() -> Self {
        StudentSection::coarse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub net: TowerSize,
    pub train: TrainConfig,
    /// Moves sampled per game for gate training (0 keeps all).
    pub moves_per_game: usize,
    /// Trailing share of gate moves used only for the held-out loss.
    pub heldout_fraction: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        GateSection {
            net: TowerSize {
                blocks: 1,
                channels: 12,
            },
            train: TrainConfig {
                epochs: 10,
                learning_rate: 0.005,
                decay_every: 4,
                ..TrainConfig::default()
            },
            moves_per_game: 4,
            heldout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollabSection {
    /// Conv layers (1-based) summed per network; clipped to each network.
    pub layers: Vec<usize>,
    pub epsilon: f64,
    /// Heatmap pixels per board point.
    pub cell_px: usize,
    pub grid: bool,
}

impl Default for CollabSection {
    fn default() -> Self {
        CollabSection {
            layers: DEFAULT_LAYERS.to_vec(),
            epsilon: DEFAULT_EPSILON,
            cell_px: 24,
            grid: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub board: BoardConfig,
    pub selfplay: SelfPlaySection,
    pub teacher: TeacherSection,
    pub coarse: StudentSection,
    pub fine: StudentSection,
    pub gate: GateSection,
    pub collab: CollabSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            board: BoardConfig::default(),
            selfplay: SelfPlaySection::default(),
            teacher: TeacherSection::default(),
            coarse: StudentSection::coarse(),
            fine: StudentSection::fine(),
            gate: GateSection::default(),
            collab: CollabSection::default(),
        }
    }
}

fn fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(format!("{} must be in [0, 1), got {}", name, v)))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_toml(&fs::read_to_string(path)?)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn student(&self, scale: Scale) -> &StudentSection {
        match scale {
            Scale::Coarse => &self.coarse,
            Scale::Fine => &self.fine,
        }
    }

    pub fn selfplay_config(&self) -> SelfPlayConfig {
        SelfPlayConfig {
            height: self.board.height,
            width: self.board.width,
            policy: self.selfplay.policy,
            max_moves: self.selfplay.max_moves,
            komi: self.board.komi,
        }
    }

    /// Seed for one pipeline stage, derived from the run seed.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stage.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.board;
        if b.height < 3 || b.width < 3 || b.height != b.width {
            return Err(Error::config("the board must be square and at least 3x3"));
        }
        if self.selfplay.games == 0 || self.selfplay.max_moves == 0 {
            return Err(Error::config("selfplay needs games > 0 and max_moves > 0"));
        }
        fraction("selfplay.heldout_fraction", self.selfplay.heldout_fraction)?;
        fraction("gate.heldout_fraction", self.gate.heldout_fraction)?;
        for (name, s) in [("coarse", &self.coarse), ("fine", &self.fine)] {
            if s.lattice == 0 || s.lattice > b.height {
                return Err(Error::config(format!(
                    "{}.lattice {} must be in 1..={}",
                    name, s.lattice, b.height
                )));
            }
            if s.layout == LatticeLayout::Grid(0) {
                return Err(Error::config(format!("{}.layout grid needs n >= 1", name)));
            }
            s.train.validate()?;
        }
        for (name, ch) in [
            ("teacher", self.teacher.channels),
            ("coarse", self.coarse.net.channels),
            ("fine", self.fine.net.channels),
            ("gate", self.gate.net.channels),
        ] {
            if ch == 0 {
                return Err(Error::config(format!("{} needs at least one channel", name)));
            }
        }
        self.teacher.train.validate()?;
        self.gate.train.validate()?;
        let c = &self.collab;
        if c.layers.is_empty() || c.layers.contains(&0) {
            return Err(Error::config("collab.layers must be non-empty 1-based conv indices"));
        }
        if !(c.epsilon >= 0.0) || c.cell_px == 0 {
            return Err(Error::config("collab.epsilon must be >= 0 and cell_px > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[fine]\nlattice = 4\nlayout = { grid = 2 }\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.fine.layout, LatticeLayout::Grid(2));
        assert_eq!(cfg.coarse, StudentSection::coarse());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[coarse]\nlattice = 12\n").is_err());
        assert!(RunConfig::from_toml("[collab]\nlayers = []\n").is_err());
        assert!(RunConfig::from_toml("[board]\nsize = 9\n").is_err());
        assert!(RunConfig::from_toml("[gate]\nheldout_fraction = 1.0\n").is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.stage_seed(1), cfg.stage_seed(2));
    }
}
