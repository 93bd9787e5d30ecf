//! Mini-Go rules, self-play data and a region-local synthetic teacher.
//!
//! Rules: simple ko only (no superko), suicide forbidden, area scoring, the
//! game ends after two consecutive passes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Black,
    White,
}

impl Color {
    pub fn opponent(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }

    /// Cell code used in board files: 1 = black, 2 = white.
    pub fn code(self) -> u8 {
        match self {
            Color::Black => 1,
            Color::White => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Play(usize, usize),
    Pass,
}

impl std::fmt::Display for Move {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Move::Play(r, c) => write!(f, "({}, {})", r, c),
            Move::Pass => write!(f, "pass"),
        }
    }
}

/// Board cells: 0 empty, 1 black, 2 white, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Board {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<u8>,
}

impl Board {
    pub fn empty(height: usize, width: usize) -> Self {
        Board {
            height,
            width,
            cells: vec![0; height * width],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if height == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::config("board rows must be non-empty and equally long"));
        }
        if rows.iter().flatten().any(|&c| c > 2) {
            return Err(Error::config("board cells must be 0, 1 or 2"));
        }
        Ok(Board {
            height,
            width,
            cells: rows.concat(),
        })
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.width).map(|r| r.to_vec()).collect()
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.cells[r * self.width + c] = v;
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r < self.height && c < self.width
    }

    fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = (idx / self.width, idx % self.width);
        let mut out = [usize::MAX; 4];
        if r > 0 {
            out[0] = idx - self.width;
        }
        if r + 1 < self.height {
            out[1] = idx + self.width;
        }
        if c > 0 {
            out[2] = idx - 1;
        }
        if c + 1 < self.width {
            out[3] = idx + 1;
        }
        out.into_iter().filter(|&i| i != usize::MAX)
    }

    /// Stones of the group at `idx` and its liberty count.
    fn group(&self, idx: usize) -> (Vec<usize>, usize) {
        let color = self.cells[idx];
        let mut seen = vec![false; self.cells.len()];
        let mut libs = vec![false; self.cells.len()];
        let mut stack = vec![idx];
        let mut stones = Vec::new();
        seen[idx] = true;
        while let Some(i) = stack.pop() {
            stones.push(i);
            for n in self.neighbors(i) {
                match self.cells[n] {
                    0 => libs[n] = true,
                    v if v == color && !seen[n] => {
                        seen[n] = true;
                        stack.push(n);
                    }
                    _ => {}
                }
            }
        }
        (stones, libs.iter().filter(|&&l| l).count())
    }

    /// Stone coordinates (row-major order).
    pub fn stones(&self) -> Vec<(usize, usize)> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] != 0)
            .map(|i| (i / self.width, i % self.width))
            .collect()
    }

    /// `[h, w, 2]` tensor: channel 0 black stones, channel 1 white stones.
    pub fn encode(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.height, self.width, 2]);
        for (i, &v) in self.cells.iter().enumerate() {
            if v != 0 {
                t.data_mut()[i * 2 + (v as usize - 1)] = 1.0;
            }
        }
        t
    }

    /// Inverse of [`Board::encode`] for binary stone tensors.
    pub fn decode(t: &Tensor) -> Result<Self> {
        let (h, w, c) = t.hwc()?;
        if c != 2 {
            return Err(Error::shape(format!("board tensors have 2 channels, got {}", c)));
        }
        let mut b = Board::empty(h, w);
        for i in 0..h * w {
            let (black, white) = (t.data()[2 * i], t.data()[2 * i + 1]);
            b.cells[i] = match (black > 0.5, white > 0.5) {
                (false, false) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (true, true) => {
                    return Err(Error::config(format!("cell {} holds both colors", i)))
                }
            };
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GameState {
    pub board: Board,
    pub to_move: Color,
    /// Point the side to move may not play (simple ko).
    pub ko: Option<(usize, usize)>,
    pub moves_played: usize,
    pub consecutive_passes: u8,
}

impl GameState {
    pub fn new(height: usize, width: usize) -> Self {
        GameState {
            board: Board::empty(height, width),
            to_move: Color::Black,
            ko: None,
            moves_played: 0,
            consecutive_passes: 0,
        }
    }

    /// Position from a board alone; the side to move is inferred from stone
    /// counts (black moves when the counts are equal).
    pub fn from_board(board: Board) -> Self {
        let black = board.cells.iter().filter(|&&c| c == 1).count();
        let white = board.cells.iter().filter(|&&c| c == 2).count();
        GameState {
            board,
            to_move: if black > white { Color::White } else { Color::Black },
            ko: None,
            moves_played: 0,
            consecutive_passes: 0,
        }
    }

    pub fn is_over(&self) -> bool {
        self.consecutive_passes >= 2
    }

    pub fn encode(&self) -> Tensor {
        self.board.encode()
    }

    fn check_play(&self, r: usize, c: usize) -> std::result::Result<(Board, Vec<usize>), String> {
        let b = &self.board;
        if !b.contains(r, c) {
            return Err(format!("({}, {}) is off the board", r, c));
        }
        if b.get(r, c) != 0 {
            return Err(format!("({}, {}) is occupied", r, c));
        }
        if self.ko == Some((r, c)) {
            return Err(format!("({}, {}) retakes a ko", r, c));
        }
        let me = self.to_move.code();
        let them = self.to_move.opponent().code();
        let mut next = b.clone();
        let idx = r * b.width + c;
        next.cells[idx] = me;
        let mut captured = Vec::new();
        for n in b.neighbors(idx) {
            if next.cells[n] == them {
                let (stones, libs) = next.group(n);
                if libs == 0 {
                    for s in stones {
                        next.cells[s] = 0;
                        captured.push(s);
                    }
                }
            }
        }
        if next.group(idx).1 == 0 {
            return Err(format!("({}, {}) is suicide", r, c));
        }
        Ok((next, captured))
    }

    pub fn is_legal(&self, mv: Move) -> bool {
        match mv {
            Move::Pass => !self.is_over(),
            Move::Play(r, c) => !self.is_over() && self.check_play(r, c).is_ok(),
        }
    }

    /// Every legal point in row-major order, followed by pass.
    pub fn legal_moves(&self) -> Vec<Move> {
        if self.is_over() {
            return Vec::new();
        }
        let mut moves: Vec<Move> = (0..self.board.height)
            .flat_map(|r| (0..self.board.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.check_play(r, c).is_ok())
            .map(|(r, c)| Move::Play(r, c))
            .collect();
        moves.push(Move::Pass);
        moves
    }

    pub fn apply_move(&self, mv: Move) -> Result<GameState> {
        if self.is_over() {
            return Err(Error::IllegalMove("the game is over".into()));
        }
        match mv {
            Move::Pass => Ok(GameState {
                board: self.board.clone(),
                to_move: self.to_move.opponent(),
                ko: None,
                moves_played: self.moves_played + 1,
                consecutive_passes: self.consecutive_passes + 1,
            }),
            Move::Play(r, c) => {
                let (board, captured) = self.check_play(r, c).map_err(Error::IllegalMove)?;
                let idx = r * board.width + c;
                // Single-stone capture by a lone stone left in atari is a ko.
                let ko = match captured[..] {
                    [k] => {
                        let (stones, libs) = board.group(idx);
                        (stones.len() == 1 && libs == 1).then_some((k / board.width, k % board.width))
                    }
                    _ => None,
                };
                Ok(GameState {
                    board,
                    to_move: self.to_move.opponent(),
                    ko,
                    moves_played: self.moves_played + 1,
                    consecutive_passes: 0,
                })
            }
        }
    }

    /// Area score (black minus white, minus komi): stones plus empty regions
    /// bordered by one color only.
    pub fn area_score(&self, komi: f64) -> f64 {
        let b = &self.board;
        let mut black = b.cells.iter().filter(|&&c| c == 1).count() as f64;
        let mut white = b.cells.iter().filter(|&&c| c == 2).count() as f64;
        let mut seen = vec![false; b.cells.len()];
        for start in 0..b.cells.len() {
            if b.cells[start] != 0 || seen[start] {
                continue;
            }
            let (mut size, mut borders) = (0usize, 0u8);
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                size += 1;
                for n in b.neighbors(i) {
                    match b.cells[n] {
                        0 if !seen[n] => {
                            seen[n] = true;
                            stack.push(n);
                        }
                        0 => {}
                        v => borders |= v,
                    }
                }
            }
            match borders {
                1 => black += size as f64,
                2 => white += size as f64,
                _ => {}
            }
        }
        black - white - komi
    }

    /// `+1` if black wins under area scoring, else `-1`.
    pub fn outcome(&self, komi: f64) -> i8 {
        if self.area_score(komi) > 0.0 {
            1
        } else {
            -1
        }
    }

    /// True if `(r, c)` is empty and every neighbor is a stone of `color`.
    fn is_own_eye(&self, r: usize, c: usize, color: Color) -> bool {
        let b = &self.board;
        let idx = r * b.width + c;
        b.cells[idx] == 0 && b.neighbors(idx).all(|n| b.cells[n] == color.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Uniform over legal points that do not fill one's own single-point
    /// eye; passes when none remain.
    UniformRandomLegal,
    /// Picks a move capturing the most stones, uniformly among ties.
    GreedyCaptures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayConfig {
    pub height: usize,
    pub width: usize,
    pub policy: Policy,
    /// Games reaching this many moves end and are scored as they stand.
    pub max_moves: usize,
    pub komi: f64,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        SelfPlayConfig {
            height: 9,
            width: 9,
            policy: Policy::UniformRandomLegal,
            max_moves: 200,
            komi: 0.5,
        }
    }
}

/// One finished game: the moves, every position along the way and the
/// final outcome (+1 black win, -1 white win).
#[derive(Debug, Clone, PartialEq)]
pub struct GameRecord {
    pub height: usize,
    pub width: usize,
    pub moves: Vec<Move>,
    pub states: Vec<GameState>,
    pub outcome: i8,
}

#[derive(Serialize, Deserialize)]
struct GameRecordLine {
    board_size: [usize; 2],
    moves: Vec<Option<[usize; 2]>>,
    outcome: i8,
}

impl GameRecord {
    /// Rebuilds the states by replaying `moves` from the empty board.
    pub fn replay(height: usize, width: usize, moves: &[Move], outcome: i8) -> Result<Self> {
        let mut states = vec![GameState::new(height, width)];
        for (i, &mv) in moves.iter().enumerate() {
            let next = states[i]
                .apply_move(mv)
                .map_err(|e| Error::IllegalMove(format!("move {}: {}", i + 1, e)))?;
            states.push(next);
        }
        Ok(GameRecord {
            height,
            width,
            moves: moves.to_vec(),
            states,
            outcome,
        })
    }

    /// `(position, value)` pairs with values from black's perspective.
    pub fn labeled_positions(&self) -> impl Iterator<Item = (&GameState, f64)> {
        self.states.iter().map(move |s| (s, self.outcome as f64))
    }

    pub fn to_json_line(&self) -> String {
        let line = GameRecordLine {
            board_size: [self.height, self.width],
            moves: self
                .moves
                .iter()
                .map(|m| match *m {
                    Move::Play(r, c) => Some([r, c]),
                    Move::Pass => None,
                })
                .collect(),
            outcome: self.outcome,
        };
        serde_json::to_string(&line).expect("game records serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: GameRecordLine =
            serde_json::from_str(line).map_err(|e| Error::config(format!("bad game record: {}", e)))?;
        if rec.outcome != 1 && rec.outcome != -1 {
            return Err(Error::config(format!("outcome must be +1 or -1, got {}", rec.outcome)));
        }
        let moves: Vec<Move> = rec
            .moves
            .iter()
            .map(|m| m.map_or(Move::Pass, |[r, c]| Move::Play(r, c)))
            .collect();
        GameRecord::replay(rec.board_size[0], rec.board_size[1], &moves, rec.outcome)
    }
}

fn choose_move(state: &GameState, policy: Policy, rng: &mut ChaCha8Rng) -> Move {
    let me = state.to_move;
    let candidates: Vec<Move> = state
        .legal_moves()
        .into_iter()
        .filter(|m| match *m {
            Move::Play(r, c) => !state.is_own_eye(r, c, me),
            Move::Pass => false,
        })
        .collect();
    if candidates.is_empty() {
        return Move::Pass;
    }
    match policy {
        Policy::UniformRandomLegal => *candidates.choose(rng).expect("non-empty"),
        Policy::GreedyCaptures => {
            let captures = |m: &Move| -> usize {
                let Move::Play(r, c) = *m else { return 0 };
                state.check_play(r, c).map(|(_, cap)| cap.len()).unwrap_or(0)
            };
            let best = candidates.iter().map(captures).max().unwrap_or(0);
            let top: Vec<Move> = candidates.into_iter().filter(|m| captures(m) == best).collect();
            *top.choose(rng).expect("non-empty")
        }
    }
}

/// Plays `n_games` games; game `g` uses a generator seeded from `(seed, g)`,
/// so the result depends only on the seed.
pub fn selfplay_generate(n_games: usize, cfg: &SelfPlayConfig, seed: u64) -> Vec<GameRecord> {
    (0..n_games)
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64);
            let mut state = GameState::new(cfg.height, cfg.width);
            let mut states = vec![state.clone()];
            let mut moves = Vec::new();
            while !state.is_over() && moves.len() < cfg.max_moves {
                let mv = choose_move(&state, cfg.policy, &mut rng);
                state = state.apply_move(mv).expect("policy picks legal moves");
                moves.push(mv);
                states.push(state.clone());
            }
            GameRecord {
                height: cfg.height,
                width: cfg.width,
                moves,
                outcome: state.outcome(cfg.komi),
                states,
            }
        })
        .collect()
}

pub fn write_games(path: &Path, games: &[GameRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for g in games {
        writeln!(out, "{}", g.to_json_line())?;
    }
    Ok(())
}

pub fn read_games(path: &Path) -> Result<Vec<GameRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            GameRecord::from_json_line(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n,
                message: e.to_string(),
            })
        })
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// One line of a dataset or board file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardRecord {
    pub board: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl BoardRecord {
    pub fn new(board: &Board, value: Option<f64>) -> Self {
        BoardRecord {
            board: board.rows(),
            value,
        }
    }
}

pub fn write_board_records(path: &Path, records: &[BoardRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("records serialize"))?;
    }
    Ok(())
}

pub fn read_board_records(path: &Path) -> Result<Vec<(Board, Option<f64>)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n,
                message,
            };
            let rec: BoardRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let board = Board::from_rows(&rec.board).map_err(|e| parse_err(e.to_string()))?;
            Ok((board, rec.value))
        })
        .collect()
}

/// Reads a `(board, value)` dataset; every record must carry a value.
pub fn read_dataset(path: &Path) -> Result<Vec<(Board, f64)>> {
    read_board_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, (b, v))| {
            v.map(|v| (b, v)).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "dataset record without value".into(),
            })
        })
        .collect()
}

/// Rectangular board region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }
}

/// Requirement on one cell of a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellReq {
    Empty,
    Black,
    White,
}

impl CellReq {
    fn matches(self, code: u8) -> bool {
        matches!((self, code), (CellReq::Empty, 0) | (CellReq::Black, 1) | (CellReq::White, 2))
    }
}

/// Cells relative to an anchor, all of which must match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub cells: Vec<(usize, usize, CellReq)>,
    pub weight: f64,
}

/// Default pattern set: single stones, connected pairs and a hane shape.
pub fn default_patterns() -> Vec<Pattern> {
    use CellReq::*;
    vec![
        Pattern {
            cells: vec![(0, 0, Black)],
            weight: 0.7,
        },
        Pattern {
            cells: vec![(0, 0, White)],
            weight: -0.7,
        },
        Pattern {
            cells: vec![(0, 0, Black), (0, 1, Black)],
            weight: 0.4,
        },
        Pattern {
            cells: vec![(0, 0, White), (1, 0, White)],
            weight: -0.4,
        },
        Pattern {
            cells: vec![(0, 0, Black), (0, 1, White), (1, 1, Black)],
            weight: 1.0,
        },
    ]
}

/// Weighted count of pattern matches lying entirely inside `region`.
///
/// Cells outside the region are never read.
pub fn synthetic_teacher_eval(input: &Tensor, region: Region, patterns: &[Pattern]) -> Result<f64> {
    let (h, w, ch) = input.hwc()?;
    if ch != 2 {
        return Err(Error::shape("synthetic teacher expects 2-channel boards"));
    }
    if region.row + region.height > h || region.col + region.width > w {
        return Err(Error::config("region exceeds the board"));
    }
    let code = |r: usize, c: usize| -> u8 {
        if input.at3(r, c, 0) > 0.5 {
            1
        } else if input.at3(r, c, 1) > 0.5 {
            2
        } else {
            0
        }
    };
    let mut total = 0.0;
    for p in patterns {
        for r in region.row..region.row + region.height {
            for c in region.col..region.col + region.width {
                let hit = p.cells.iter().all(|&(dr, dc, req)| {
                    region.contains(r + dr, c + dc) && req.matches(code(r + dr, c + dc))
                });
                if hit {
                    total += p.weight;
                }
            }
        }
    }
    Ok(total)
}

/// Random stone placement, ignoring liberties (for synthetic experiments).
pub fn random_board<R: Rng + ?Sized>(height: usize, width: usize, density: f64, rng: &mut R) -> Board {
    let mut b = Board::empty(height, width);
    for cell in &mut b.cells {
        if rng.random_bool(density) {
            *cell = if rng.random_bool(0.5) { 1 } else { 2 };
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(rows: &[&str]) -> Board {
        let rows: Vec<Vec<u8>> = rows
            .iter()
            .map(|r| {
                r.chars()
                    .map(|ch| match ch {
                        'X' => 1,
                        'O' => 2,
                        _ => 0,
                    })
                    .collect()
            })
            .collect();
        Board::from_rows(&rows).unwrap()
    }

    fn state(rows: &[&str], to_move: Color) -> GameState {
        GameState {
            board: board(rows),
            to_move,
            ko: None,
            moves_played: 0,
            consecutive_passes: 0,
        }
    }

    #[test]
    fn empty_board_moves() {
        let s = GameState::new(9, 9);
        let moves = s.legal_moves();
        assert_eq!(moves.len(), 82);
        assert_eq!(moves.last(), Some(&Move::Pass));
    }

    #[test]
    fn suicide_excluded() {
        // Black at (0,0) would have no liberties and captures nothing.
        let s = state(&[".O...", "O....", ".....", ".....", "....."], Color::Black);
        assert!(!s.legal_moves().contains(&Move::Play(0, 0)));
        assert!(matches!(s.apply_move(Move::Play(0, 0)), Err(Error::IllegalMove(_))));
        // Filling the last liberty of one's own group is suicide too.
        let s = state(&["XO...", ".O...", "O....", ".....", "....."], Color::Black);
        assert!(!s.legal_moves().contains(&Move::Play(1, 0)));
    }

    #[test]
    fn capture_removes_stone() {
        let s = state(&[".X...", "XO...", ".X...", ".....", "....."], Color::Black);
        let next = s.apply_move(Move::Play(1, 2)).unwrap();
        assert_eq!(next.board.get(1, 1), 0);
        assert_eq!(next.to_move, Color::White);
    }

    #[test]
    fn ko_retake_excluded() {
        let s = state(&[".XO..", "XO.O.", ".XO..", ".....", "....."], Color::Black);
        let after = s.apply_move(Move::Play(1, 2)).unwrap();
        assert_eq!(after.board.get(1, 1), 0);
        assert_eq!(after.ko, Some((1, 1)));
        assert!(!after.legal_moves().contains(&Move::Play(1, 1)));
        // After an intervening move pair the retake is legal again.
        let later = after
            .apply_move(Move::Play(4, 4))
            .unwrap()
            .apply_move(Move::Play(4, 0))
            .unwrap();
        assert!(later.legal_moves().contains(&Move::Play(1, 1)));
    }

    #[test]
    fn pass_and_termination() {
        let s = GameState::new(5, 5).apply_move(Move::Play(2, 2)).unwrap();
        let p1 = s.apply_move(Move::Pass).unwrap();
        assert_eq!(p1.board, s.board);
        assert_eq!(p1.to_move, Color::Black);
        let p2 = p1.apply_move(Move::Pass).unwrap();
        assert!(p2.is_over());
        assert!(p2.legal_moves().is_empty());
        // A lone black stone owns the whole board.
        assert_eq!(p2.area_score(0.5), 24.5);
        assert_eq!(p2.outcome(0.5), 1);
    }

    #[test]
    fn selfplay_empty_and_deterministic() {
        let cfg = SelfPlayConfig {
            height: 5,
            width: 5,
            ..SelfPlayConfig::default()
        };
        assert!(selfplay_generate(0, &cfg, 1).is_empty());
        let a = selfplay_generate(3, &cfg, 7);
        let b = selfplay_generate(3, &cfg, 7);
        assert_eq!(a, b);
        for g in &a {
            let last = g.states.last().unwrap();
            assert_eq!(g.outcome, last.outcome(cfg.komi));
            let replayed = GameRecord::from_json_line(&g.to_json_line()).unwrap();
            assert_eq!(&replayed, g);
        }
    }

    #[test]
    fn greedy_policy_takes_captures() {
        let s = state(&[".X...", "XO...", ".X...", ".....", "....."], Color::Black);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(choose_move(&s, Policy::GreedyCaptures, &mut rng), Move::Play(1, 2));
    }

    #[test]
    fn encode_indicators() {
        assert_eq!(Board::empty(9, 9).encode().abs_sum(), 0.0);
        let mut b = Board::empty(9, 9);
        b.set(2, 3, 1);
        let t = b.encode();
        assert_eq!(t.abs_sum(), 1.0);
        assert_eq!(t.at3(2, 3, 0), 1.0);
        b.set(4, 4, 2);
        assert_eq!(Board::decode(&b.encode()).unwrap(), b);
    }

    #[test]
    fn synthetic_teacher_cases() {
        let region = Region {
            row: 0,
            col: 0,
            height: 3,
            width: 3,
        };
        let empty = Board::empty(9, 9).encode();
        assert_eq!(synthetic_teacher_eval(&empty, region, &default_patterns()).unwrap(), 0.0);
        let mut b = Board::empty(9, 9);
        b.set(1, 1, 1);
        let single = vec![Pattern {
            cells: vec![(0, 0, CellReq::Black)],
            weight: 0.7,
        }];
        assert_eq!(synthetic_teacher_eval(&b.encode(), region, &single).unwrap(), 0.7);
        b.set(5, 5, 1);
        assert_eq!(synthetic_teacher_eval(&b.encode(), region, &single).unwrap(), 0.7);
    }

    #[test]
    fn dataset_line_format() {
        let mut b = Board::empty(2, 2);
        b.set(0, 1, 2);
        let line = serde_json::to_string(&BoardRecord::new(&b, Some(-1.0))).unwrap();
        assert_eq!(line, r#"{"board":[[0,2],[0,0]],"value":-1.0}"#);
    }
}
