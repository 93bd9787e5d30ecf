use gocollab_core::collab::{
    collab_map_for_layer, fuse_maps, network_collab_map, normalize_map, CollabMap, MoveCase,
    PlacedMap,
};
use gocollab_core::distill::{make_lattices, Lattice, LatticeLayout};
use gocollab_core::goenv::{random_board, Board, Color, GameState, Move};
use gocollab_core::nn::{
    residual_tower, LayerParams, LayerSpec, NetworkSpec, Parameters, TowerConfig,
};
use gocollab_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv(out: usize, kernel: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels: out,
        kernel,
        stride: 1,
        padding: kernel / 2,
    }
}

#[test]
fn single_filter_matches_hand_computation() {
    let net = NetworkSpec::new(
        vec![3, 3, 1],
        vec![
            LayerSpec::Conv {
                out_channels: 1,
                kernel: 3,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::Fc { outputs: 1 },
        ],
        true,
    )
    .unwrap();
    let w = vec![1.0, 0.5, 2.0, 0.5, 1.0, 0.5, 0.5, 0.5, 2.0];
    let params = Parameters {
        layers: vec![
            LayerParams::Linear {
                weight: Tensor::from_vec(&[3, 3, 1, 1], w).unwrap(),
                bias: Tensor::vector(vec![-0.5]),
            },
            LayerParams::Empty,
            LayerParams::Linear {
                weight: Tensor::from_vec(&[1, 1], vec![1.0]).unwrap(),
                bias: Tensor::vector(vec![0.0]),
            },
        ],
    };
    let pre = Tensor::from_vec(&[3, 3, 1], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let mut post = pre.clone();
    post.set3(2, 2, 0, 1.0);
    let case = MoveCase::new(pre, post, Some((2, 2))).unwrap();
    let map = collab_map_for_layer(&net, &params, &case, 1).unwrap();

    // o = 5.5 after, 3.5 before: mask 2/5.5 = 4/11, then each stone gets
    // x*w / (o + 0.5) of it.
    let want = [
        [2.0 / 33.0, 0.0, 4.0 / 33.0],
        [0.0, 2.0 / 33.0, 0.0],
        [0.0, 0.0, 4.0 / 33.0],
    ];
    for r in 0..3 {
        for c in 0..3 {
            assert!((map.get(r, c) - want[r][c]).abs() < 1e-14, "({}, {}) = {}", r, c, map.get(r, c));
        }
    }
}

#[test]
fn unchanged_layer_gives_zero_map() {
    // A stone outside every receptive field of a 1x1 conv changes nothing
    // at the other positions; zero channel 1 makes white stones invisible.
    let net = NetworkSpec::new(vec![3, 3, 2], vec![conv(1, 1), LayerSpec::Relu, LayerSpec::Fc { outputs: 1 }], true).unwrap();
    let mut params = Parameters::init(&net, &mut ChaCha8Rng::seed_from_u64(1));
    if let LayerParams::Linear { weight, .. } = &mut params.layers[0] {
        weight.data_mut().copy_from_slice(&[1.0, 0.0]);
    }
    let state = GameState::from_board(Board::from_rows(&[vec![1, 0, 0], vec![0, 0, 0], vec![0, 0, 0]]).unwrap());
    let mut state = state;
    state.to_move = Color::White;
    let case = MoveCase::from_move(&state, Move::Play(2, 2)).unwrap();
    assert!(collab_map_for_layer(&net, &params, &case, 1).unwrap().is_zero());
}

fn first_play(state: &GameState) -> Move {
    state.legal_moves().into_iter().find(|m| matches!(m, Move::Play(..))).unwrap()
}

fn tower(size: usize, blocks: usize, channels: usize, seed: u64) -> (NetworkSpec, Parameters) {
    let net = residual_tower(&TowerConfig {
        height: size,
        width: size,
        in_channels: 2,
        blocks,
        channels,
        outputs: 1,
        sigmoid: true,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::init(&net, &mut rng);
    for l in &mut params.layers {
        match l {
            LayerParams::Linear { bias, .. } => {
                for b in bias.data_mut() {
                    *b = rng.random_range(-0.1..0.1);
                }
            }
            LayerParams::BatchNorm { mean, std, .. } => {
                for m in mean.data_mut() {
                    *m = rng.random_range(-0.2..0.2);
                }
                for s in std.data_mut() {
                    *s = rng.random_range(0.5..1.5);
                }
            }
            LayerParams::Empty => {}
        }
    }
    (net, params)
}

#[test]
fn mirror_symmetric_net_and_board_give_symmetric_map() {
    let (net, mut params) = tower(5, 1, 4, 2);
    for l in &mut params.layers {
        let LayerParams::Linear { weight, .. } = l else { continue };
        if weight.rank() != 4 {
            continue;
        }
        let s = weight.shape().to_vec();
        let (k, cin, cout) = (s[0], s[2], s[3]);
        let at = |ky: usize, kx: usize, i: usize, o: usize| ((ky * k + kx) * cin + i) * cout + o;
        let data = weight.data_mut();
        for ky in 0..k {
            for kx in 0..k / 2 {
                for i in 0..cin {
                    for o in 0..cout {
                        data[at(ky, k - 1 - kx, i, o)] = data[at(ky, kx, i, o)];
                    }
                }
            }
        }
    }
    let board = Board::from_rows(&[
        vec![1, 0, 0, 0, 1],
        vec![0, 2, 0, 2, 0],
        vec![0, 0, 0, 0, 0],
        vec![2, 1, 0, 1, 2],
        vec![0, 0, 1, 0, 0],
    ])
    .unwrap();
    let case = MoveCase::from_move(&GameState::from_board(board), Move::Play(2, 2)).unwrap();
    let map = network_collab_map(&net, &params, &case, &[1, 2, 3]).unwrap();
    assert!(!map.is_zero());
    for r in 0..5 {
        for c in 0..5 {
            assert!((map.get(r, c) - map.get(r, 4 - c)).abs() < 1e-12, "({}, {})", r, c);
        }
    }
}

#[test]
fn pointwise_net_commutes_with_rotation() {
    let net = NetworkSpec::new(
        vec![5, 5, 2],
        vec![
            conv(4, 1),
            LayerSpec::Relu,
            conv(3, 1),
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 5, stride: 5 },
            LayerSpec::Fc { outputs: 1 },
        ],
        true,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = Parameters::init(&net, &mut rng);
    let board = random_board(5, 5, 0.5, &mut rng);
    let mut state = GameState::from_board(board);
    let mv = first_play(&state);
    state.to_move = Color::Black;
    let case = MoveCase::from_move(&state, mv).unwrap();
    let turn = Lattice {
        row: 0,
        col: 0,
        height: 5,
        width: 5,
        quarter_turns: 1,
    };
    let rotated = case.crop(&turn).unwrap();
    let a = collab_map_for_layer(&net, &params, &case, 2).unwrap();
    let b = collab_map_for_layer(&net, &params, &rotated, 2).unwrap();
    let a_rot = turn.crop_rotate(&a.values).unwrap();
    assert!(a_rot.max_abs_diff(&b.values) < 1e-12);
    assert!(!a.is_zero());
}

#[test]
fn influence_stays_within_receptive_field() {
    let net = NetworkSpec::new(
        vec![9, 9, 2],
        vec![
            conv(3, 3),
            LayerSpec::Relu,
            conv(3, 3),
            LayerSpec::Relu,
            conv(3, 3),
            LayerSpec::Relu,
            LayerSpec::AvgPool { size: 9, stride: 9 },
            LayerSpec::Fc { outputs: 1 },
        ],
        true,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut nonzero = 0;
    for trial in 0..10 {
        let params = Parameters::init(&net, &mut rng);
        let mut board = random_board(9, 9, 0.45, &mut rng);
        board.set(0, 0, 0);
        board.set(0, 1, 0);
        let mut state = GameState::from_board(board);
        state.to_move = if trial % 2 == 0 { Color::Black } else { Color::White };
        let Ok(case) = MoveCase::from_move(&state, Move::Play(0, 0)) else {
            continue;
        };
        let changed = (0..9)
            .flat_map(|r| (0..9).map(move |c| (r, c)))
            .filter(|&(r, c)| (0..2).any(|k| case.pre.at3(r, c, k) != case.post.at3(r, c, k)))
            .count();
        if changed != 1 {
            continue; // a capture widens the changed set
        }
        // Layer-2 activations change within distance 2 of the move; each
        // sees inputs within distance 2 of itself.
        let map = collab_map_for_layer(&net, &params, &case, 2).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                if r.max(c) > 4 {
                    assert_eq!(map.get(r, c), 0.0, "({}, {})", r, c);
                }
            }
        }
        nonzero += !map.is_zero() as usize;
    }
    assert!(nonzero > 0);
}

#[test]
fn layer_lists_sum_linearly() {
    let (net, params) = tower(5, 2, 3, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let state = GameState::from_board(random_board(5, 5, 0.4, &mut rng));
    let mv = first_play(&state);
    let case = MoveCase::from_move(&state, mv).unwrap();
    let single = collab_map_for_layer(&net, &params, &case, 3).unwrap();
    let listed = network_collab_map(&net, &params, &case, &[3]).unwrap();
    assert_eq!(single.values, listed.values);
    let twice = network_collab_map(&net, &params, &case, &[3, 3]).unwrap();
    let mut doubled = single.values.clone();
    doubled.scale(2.0);
    assert!(twice.values.max_abs_diff(&doubled) < 1e-15);
    let pair = network_collab_map(&net, &params, &case, &[1, 3]).unwrap();
    let mut sum = collab_map_for_layer(&net, &params, &case, 1).unwrap().values;
    sum.add_assign(&single.values).unwrap();
    assert!(pair.values.max_abs_diff(&sum) < 1e-15);
    assert!(collab_map_for_layer(&net, &params, &case, 6).is_err());
    assert!(collab_map_for_layer(&net, &params, &case, 0).is_err());
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> CollabMap {
    let mut m = CollabMap::zeros(h, w);
    for v in m.values.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    m
}

#[test]
fn fusion_places_students_inside_their_lattices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let value = random_map(&mut rng, 9, 9);
    let (value_norm, _) = normalize_map(&value);
    let zero = CollabMap::zeros(7, 7);
    let coarse = make_lattices((9, 9), (7, 7), LatticeLayout::Corners).unwrap();
    let fine = make_lattices((9, 9), (5, 5), LatticeLayout::Grid(3)).unwrap();
    let fused = fuse_maps(
        &value,
        &[
            PlacedMap { map: &zero, lattice: &coarse[3] },
            PlacedMap { map: &CollabMap::zeros(5, 5), lattice: &fine[4] },
        ],
    )
    .unwrap();
    assert_eq!(fused.values, value_norm.values);

    let student = random_map(&mut rng, 5, 5);
    let fused = fuse_maps(&value, &[PlacedMap { map: &student, lattice: &fine[2] }]).unwrap();
    let (student_norm, _) = normalize_map(&student);
    for r in 0..9 {
        for c in 0..9 {
            let extra = fused.get(r, c) - value_norm.get(r, c);
            match fine[2].to_crop(r, c) {
                None => assert_eq!(extra, 0.0),
                Some((i, j)) => assert!((extra - student_norm.get(i, j)).abs() < 1e-15),
            }
        }
    }
    assert!(fuse_maps(&value, &[PlacedMap { map: &zero, lattice: &fine[0] }]).is_err());
}

#[test]
fn identical_maps_triple() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = random_map(&mut rng, 4, 4);
    let whole = Lattice {
        row: 0,
        col: 0,
        height: 4,
        width: 4,
        quarter_turns: 0,
    };
    let fused = fuse_maps(&m, &[PlacedMap { map: &m, lattice: &whole }, PlacedMap { map: &m, lattice: &whole }]).unwrap();
    let mut want = normalize_map(&m).0.values;
    want.scale(3.0);
    assert!(fused.values.max_abs_diff(&want) < 1e-15);
}
