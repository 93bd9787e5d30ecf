use gocollab_core::collab::MoveCase;
use gocollab_core::distill::{
    gate_samples, make_lattices, significance_from, train_gate, train_students, GatingNet,
    LatticeLayout, Scale, StudentEnsemble, TowerSize,
};
use gocollab_core::goenv::{random_board, Board, GameState, Move};
use gocollab_core::nn::{LayerParams, TrainConfig};
use gocollab_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn coarse_ensemble(seed: u64, size: TowerSize) -> StudentEnsemble {
    let lattices = make_lattices((9, 9), (7, 7), LatticeLayout::Corners).unwrap();
    StudentEnsemble::new(Scale::Coarse, lattices, 2, size, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn quick(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: lr,
        decay_every: epochs.max(1),
        ..TrainConfig::default()
    }
}

#[test]
fn constant_teacher_is_learned_exactly() {
    let mut ens = coarse_ensemble(1, TowerSize { blocks: 1, channels: 4 });
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let boards: Vec<Tensor> = (0..60).map(|_| random_board(9, 9, 0.4, &mut rng).encode()).collect();
    let teacher = |_: &Tensor| -> Result<f64> { Ok(0.7) };
    // Frozen running statistics: their batch-to-batch jitter sets a floor near 2e-3.
    let report = train_students(&teacher, &mut ens, &boards, &TrainConfig { bn_momentum: 0.0, ..quick(40, 0.02) }).unwrap();
    for loss in &report.lattice_losses {
        assert!(*loss < 1e-3, "{:?}", report.lattice_losses);
    }
}

#[test]
fn only_the_lattice_seeing_the_signal_fits_it() {
    // Stones only in the 2x2 corner, which only the top-left 7x7 lattice covers.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let boards: Vec<Tensor> = (0..240)
        .map(|_| {
            let mut b = Board::empty(9, 9);
            for r in 0..2 {
                for c in 0..2 {
                    b.set(r, c, rng.random_range(0..3));
                }
            }
            b.encode()
        })
        .collect();
    let weights = [1.0, -0.5, 0.75, 0.25];
    let teacher = move |x: &Tensor| -> Result<f64> {
        let mut v = 0.0;
        for (k, w) in weights.iter().enumerate() {
            let (r, c) = (k / 2, k % 2);
            v += w * (x.at3(r, c, 0) - x.at3(r, c, 1));
        }
        Ok(v)
    };
    let mut ens = coarse_ensemble(4, TowerSize { blocks: 1, channels: 8 });
    let report = train_students(&teacher, &mut ens, &boards, &quick(20, 0.01)).unwrap();
    let losses = &report.lattice_losses;
    let others = (losses[1] + losses[2] + losses[3]) / 3.0;
    assert!(losses[0] / others < 0.2, "{:?}", losses);
}

#[test]
fn students_share_one_parameter_set() {
    let ens = coarse_ensemble(5, TowerSize { blocks: 1, channels: 4 });
    let mut b = Board::empty(9, 9);
    b.set(4, 4, 1);
    b.set(0, 0, 2);
    b.set(0, 8, 2);
    b.set(8, 0, 2);
    b.set(8, 8, 2);
    let out = ens.outputs(&b.encode()).unwrap();
    assert!(out.iter().all(|&y| y == out[0]), "{:?}", out);

    // Moving the only stone into another corner moves the output with it.
    let mut tl = Board::empty(9, 9);
    tl.set(1, 2, 1);
    let mut br = Board::empty(9, 9);
    br.set(7, 6, 1);
    let a = ens.outputs(&tl.encode()).unwrap();
    let z = ens.outputs(&br.encode()).unwrap();
    assert_eq!(a[0], z[3]);
}

#[test]
fn gate_recovers_a_fixed_mixture() {
    let mut ens = coarse_ensemble(6, TowerSize { blocks: 1, channels: 4 });
    // Stretch the untrained students so move deltas are not vanishingly small.
    let head = ens.params.layers.len() - 1;
    if let LayerParams::Linear { weight, .. } = &mut ens.params.layers[head] {
        weight.scale(100.0);
    }
    let ens = ens;
    let target = [0.6, 0.1, 0.1, 0.2];
    let teacher = |x: &Tensor| -> Result<f64> {
        let y = ens.outputs(x)?;
        Ok(y.iter().zip(target).map(|(a, b)| a * b).sum())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = Vec::new();
    while cases.len() < 160 {
        let state = GameState::from_board(random_board(9, 9, 0.3, &mut rng));
        let moves: Vec<Move> = state
            .legal_moves()
            .into_iter()
            .filter(|m| matches!(m, Move::Play(..)))
            .collect();
        let mv = moves[rng.random_range(0..moves.len())];
        cases.push(MoveCase::from_move(&state, mv).unwrap());
    }
    let mut gate = GatingNet::new(&ens, TowerSize { blocks: 1, channels: 4 }, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let report = train_gate(&teacher, &ens, &mut gate, &cases, &quick(30, 0.01), 0.25).unwrap();
    let held = report.heldout_loss.unwrap();
    let uniform = report.uniform_loss.unwrap();
    assert!(held < 0.25 * uniform, "{} vs {}", held, uniform);
    assert_eq!(report.train_samples + report.heldout_samples, cases.len());
    assert_eq!(gate_samples(&teacher, &ens, &cases[..3]).unwrap().len(), 3);
}

#[test]
fn significance_ignores_a_common_scale() {
    let alpha = [0.4, -0.2, 0.5, 0.3];
    let deltas = [0.1, 0.3, -0.05, 0.0];
    let base = significance_from(Scale::Fine, &alpha, &deltas).unwrap();
    let scaled: Vec<f64> = deltas.iter().map(|d| -7.5 * d).collect();
    let other = significance_from(Scale::Fine, &alpha, &scaled).unwrap();
    assert_eq!(base.selected, other.selected);
    for (a, b) in base.normalized.unwrap().iter().zip(other.normalized.unwrap()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(base.selected, 1);

    let flat = significance_from(Scale::Fine, &alpha, &[0.0; 4]).unwrap();
    assert!(flat.normalized.is_none());
    assert_eq!(flat.selected, 0);
    assert!(significance_from(Scale::Fine, &alpha, &[0.0; 3]).is_err());
}
