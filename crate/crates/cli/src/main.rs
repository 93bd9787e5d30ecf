use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gocollab_core::collab::{render_ppm, CollabMap, MoveCase};
use gocollab_core::config::RunConfig;
use gocollab_core::distill::{Scale, ValueTeacher};
use gocollab_core::eval::{board_metric, load_annotations, MetricReport};
use gocollab_core::goenv::{read_board_records, read_games, write_games, Color, GameState, Move};
use gocollab_core::nn;
use gocollab_core::pipeline::{self, Artifacts, Models, SCALES};
use gocollab_core::Tensor;

#[derive(Parser)]
#[command(name = "gocollab", version, about = "Explain moves of a mini-Go value network")]
struct Cli {
    /// TOML run configuration. Defaults to the snapshot in the output
    /// directory, then to built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Coarse,
    Fine,
    Both,
}

impl ScaleArg {
    fn scales(self) -> Vec<Scale> {
        match self {
            ScaleArg::Coarse => vec![Scale::Coarse],
            ScaleArg::Fine => vec![Scale::Fine],
            ScaleArg::Both => SCALES.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorArg {
    Black,
    White,
}

#[derive(Subcommand)]
enum Command {
    /// Generate self-play games.
    Selfplay {
        #[arg(long)]
        games: Option<usize>,
    },
    /// Train the value network on the self-play games.
    TrainTeacher,
    /// Distill the teacher into lattice students.
    TrainStudents {
        #[arg(long, value_enum, default_value = "both")]
        scale: ScaleArg,
    },
    /// Train the gating networks on the students' move deltas.
    TrainGate {
        #[arg(long, value_enum, default_value = "both")]
        scale: ScaleArg,
    },
    /// Explain one move: lattice significance and a collaboration heatmap.
    Explain {
        /// JSON-lines board file.
        #[arg(long)]
        board: PathBuf,
        /// 1-based record in the board file.
        #[arg(long, default_value_t = 1)]
        line: usize,
        /// Target move as `row,col`, or `pass`.
        #[arg(long = "move", value_parser = parse_move)]
        mv: Move,
        /// Side playing the move; inferred from stone counts if omitted.
        #[arg(long, value_enum)]
        color: Option<ColorArg>,
        /// Output name under `<out-dir>/explanations/`.
        #[arg(long)]
        id: Option<String>,
    },
    /// Compare explanations with annotated strengths.
    Evaluate {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        explanations: PathBuf,
        /// Report path; defaults to `<out-dir>/metrics.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a map CSV as a PPM heatmap.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cell_px: Option<usize>,
        #[arg(long)]
        no_grid: bool,
    },
}

fn parse_move(s: &str) -> Result<Move, String> {
    if s.eq_ignore_ascii_case("pass") {
        return Ok(Move::Pass);
    }
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    let r = r.trim().parse().map_err(|_| format!("bad row {:?}", r))?;
    let c = c.trim().parse().map_err(|_| format!("bad col {:?}", c))?;
    Ok(Move::Play(r, c))
}

/// A stage input that has not been produced yet.
#[derive(Debug)]
struct MissingPrerequisite(PathBuf);

impl std::fmt::Display for MissingPrerequisite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing prerequisite {}", self.0.display())
    }
}

impl std::error::Error for MissingPrerequisite {}

fn require(paths: &[PathBuf]) -> Result<()> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(MissingPrerequisite(p.clone()).into()),
        None => Ok(()),
    }
}

struct Ctx {
    cfg: RunConfig,
    art: Artifacts,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let art = Artifacts::new(&cli.out_dir);
        let snapshot = art.config();
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None if snapshot.exists() => RunConfig::load(&snapshot)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(Ctx { cfg, art })
    }

    /// Creates the output directory and records the configuration in it.
    fn snapshot(&self) -> Result<()> {
        fs::create_dir_all(&self.art.dir)
            .with_context(|| format!("creating {}", self.art.dir.display()))?;
        write(&self.art.config(), self.cfg.to_toml())
    }

    fn training_games(&self) -> Result<Vec<gocollab_core::goenv::GameRecord>> {
        require(&[self.art.games()])?;
        let games = read_games(&self.art.games())?;
        let (train, _) = pipeline::split_games(&self.cfg, &games);
        Ok(train.to_vec())
    }

    fn teacher(&self) -> Result<(nn::NetworkSpec, nn::Parameters)> {
        require(&[self.art.teacher()])?;
        let net = pipeline::teacher_network(&self.cfg)?;
        let params = nn::load_params(&self.art.teacher(), &net)?;
        Ok((net, params))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn cmd_selfplay(ctx: &mut Ctx, games: Option<usize>) -> Result<()> {
    if let Some(n) = games {
        ctx.cfg.selfplay.games = n;
        ctx.cfg.validate()?;
    }
    ctx.snapshot()?;
    let records = pipeline::selfplay(&ctx.cfg);
    write_games(&ctx.art.games(), &records)?;
    let moves: usize = records.iter().map(|g| g.moves.len()).sum();
    eprintln!(
        "wrote {} games ({} moves) to {}",
        records.len(),
        moves,
        ctx.art.games().display()
    );
    Ok(())
}

fn cmd_train_teacher(ctx: &Ctx) -> Result<()> {
    let games = ctx.training_games()?;
    ctx.snapshot()?;
    let (params, report) = pipeline::train_teacher(&ctx.cfg, &games)?;
    nn::save_params(&ctx.art.teacher(), &params)?;
    write(&ctx.art.teacher_log(), report.to_csv())?;
    eprintln!(
        "teacher: final loss {:.5}, saved {}",
        report.losses.last().copied().unwrap_or(f64::NAN),
        ctx.art.teacher().display()
    );
    Ok(())
}

fn cmd_train_students(ctx: &Ctx, scales: &[Scale]) -> Result<()> {
    let (net, params) = ctx.teacher()?;
    let games = ctx.training_games()?;
    ctx.snapshot()?;
    let teacher = ValueTeacher {
        net: &net,
        params: &params,
    };
    let boards: Vec<Tensor> = pipeline::training_positions(&ctx.cfg, &games)
        .into_iter()
        .map(|(b, _)| b)
        .collect();
    for &scale in scales {
        let (ensemble, report) = pipeline::fit_students(&ctx.cfg, scale, &teacher, &boards)?;
        nn::save_params(&ctx.art.students(scale), &ensemble.params)?;
        write(&ctx.art.students_log(scale), report.training.to_csv())?;
        write(&ctx.art.students_report(scale), to_json(&report)?)?;
        eprintln!("{} students: per-lattice loss {:?}", scale, report.lattice_losses);
    }
    Ok(())
}

fn cmd_train_gate(ctx: &Ctx, scales: &[Scale]) -> Result<()> {
    let (net, params) = ctx.teacher()?;
    let student_files: Vec<PathBuf> = scales.iter().map(|&s| ctx.art.students(s)).collect();
    require(&student_files)?;
    let games = ctx.training_games()?;
    ctx.snapshot()?;
    let teacher = ValueTeacher {
        net: &net,
        params: &params,
    };
    let cases = pipeline::move_cases(&games, ctx.cfg.gate.moves_per_game)?;
    for &scale in scales {
        let ensemble = pipeline::load_ensemble(&ctx.cfg, scale, &ctx.art.students(scale))?;
        let (gate, report) = pipeline::fit_gate(&ctx.cfg, &teacher, &ensemble, &cases)?;
        nn::save_params(&ctx.art.gate(scale), &gate.params)?;
        write(&ctx.art.gate_log(scale), report.training.to_csv())?;
        write(&ctx.art.gate_report(scale), to_json(&report)?)?;
        eprintln!(
            "{} gate: held-out loss {:?} vs uniform {:?}",
            scale, report.heldout_loss, report.uniform_loss
        );
    }
    Ok(())
}

struct ExplainArgs {
    board: PathBuf,
    line: usize,
    mv: Move,
    color: Option<ColorArg>,
    id: Option<String>,
}

fn cmd_explain(ctx: &Ctx, args: ExplainArgs) -> Result<()> {
    let ExplainArgs {
        board,
        line,
        mv,
        color,
        id,
    } = args;
    let board = board.as_path();
    let Move::Play(r, c) = mv else {
        bail!("a pass places no stone and cannot be explained");
    };
    let mut needed = vec![ctx.art.teacher()];
    for s in SCALES {
        needed.push(ctx.art.students(s));
        needed.push(ctx.art.gate(s));
    }
    require(&needed)?;
    let records = read_board_records(board)?;
    let (b, _) = line
        .checked_sub(1)
        .and_then(|i| records.get(i))
        .with_context(|| format!("{} has no record {}", board.display(), line))?;
    if (b.height, b.width) != (ctx.cfg.board.height, ctx.cfg.board.width) {
        bail!(
            "board is {}x{}, models expect {}x{}",
            b.height,
            b.width,
            ctx.cfg.board.height,
            ctx.cfg.board.width
        );
    }
    let mut state = GameState::from_board(b.clone());
    match color {
        Some(ColorArg::Black) => state.to_move = Color::Black,
        Some(ColorArg::White) => state.to_move = Color::White,
        None => {}
    }
    let case = MoveCase::from_move(&state, mv)
        .with_context(|| format!("move ({}, {}) on {} record {}", r, c, board.display(), line))?;
    let models = Models::load(&ctx.cfg, &ctx.art)?;
    let explanation = pipeline::explain(&ctx.cfg, &models, &case)?;

    let stem = board.file_stem().and_then(|s| s.to_str()).unwrap_or("board");
    let id = id.unwrap_or_else(|| format!("{}-{}-{}_{}", stem, line, r, c));
    let dir = ctx.art.explanation_dir(&id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("significance.json"), to_json(&explanation.significance)?)?;
    write(&dir.join("collab.csv"), explanation.map.to_csv())?;
    write(
        &dir.join("heatmap.ppm"),
        render_ppm(&explanation.map, ctx.cfg.collab.cell_px, ctx.cfg.collab.grid),
    )?;
    let sel: Vec<String> = explanation
        .significance
        .reports
        .iter()
        .map(|rep| format!("{} lattice {}", rep.scale, rep.selected))
        .collect();
    eprintln!("{}: {}, wrote {}", id, sel.join(", "), dir.display());
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, annotations: &Path, explanations: &Path, report: Option<PathBuf>) -> Result<()> {
    let (h, w) = (ctx.cfg.board.height, ctx.cfg.board.width);
    let mut labeled = BTreeMap::new();
    let mut files: Vec<PathBuf> = fs::read_dir(annotations)
        .with_context(|| format!("reading {}", annotations.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    for f in files {
        let set = load_annotations(&f, (h, w))?;
        labeled.insert(set.board_id.clone(), set);
    }
    let mut boards = Vec::new();
    let mut unmatched = Vec::new();
    for (id, set) in &labeled {
        let map_file = explanations.join(id).join("collab.csv");
        if !map_file.exists() {
            unmatched.push(id.clone());
            continue;
        }
        let map = CollabMap::read_csv(&map_file, h, w)?;
        boards.push(board_metric(set, &map)?);
    }
    if explanations.is_dir() {
        let mut extra: Vec<String> = fs::read_dir(explanations)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| !labeled.contains_key(id))
            .collect();
        extra.sort();
        unmatched.extend(extra);
    }
    for id in &unmatched {
        eprintln!("warning: {} has no counterpart, skipped", id);
    }
    if boards.is_empty() {
        bail!("no board id appears in both {} and {}", annotations.display(), explanations.display());
    }
    let metrics = MetricReport::new(boards, unmatched)?;
    fs::create_dir_all(&ctx.art.dir)?;
    let path = report.unwrap_or_else(|| ctx.art.dir.join("metrics.json"));
    write(&path, to_json(&metrics)?)?;
    println!("mean jaccard {:.4} over {} boards", metrics.mean_jaccard, metrics.boards.len());
    if let Some(r) = metrics.mean_rating {
        println!("mean rating {:.2}", r);
    }
    Ok(())
}

fn cmd_render(ctx: &Ctx, map: &Path, out: &Path, cell_px: Option<usize>, no_grid: bool) -> Result<()> {
    let m = CollabMap::read_csv(map, ctx.cfg.board.height, ctx.cfg.board.width)?;
    let px = cell_px.unwrap_or(ctx.cfg.collab.cell_px);
    write(out, render_ppm(&m, px, ctx.cfg.collab.grid && !no_grid))
}

fn run(cli: Cli) -> Result<()> {
    let mut ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Selfplay { games } => cmd_selfplay(&mut ctx, games),
        Command::TrainTeacher => cmd_train_teacher(&ctx),
        Command::TrainStudents { scale } => cmd_train_students(&ctx, &scale.scales()),
        Command::TrainGate { scale } => cmd_train_gate(&ctx, &scale.scales()),
        Command::Explain {
            board,
            line,
            mv,
            color,
            id,
        } => cmd_explain(
            &ctx,
            ExplainArgs {
                board,
                line,
                mv,
                color,
                id,
            },
        ),
        Command::Evaluate {
            annotations,
            explanations,
            report,
        } => cmd_evaluate(&ctx, &annotations, &explanations, report),
        Command::Render {
            map,
            out,
            cell_px,
            no_grid,
        } => cmd_render(&ctx, &map, &out, cell_px, no_grid),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            if e.downcast_ref::<MissingPrerequisite>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
