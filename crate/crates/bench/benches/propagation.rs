use criterion::{criterion_group, criterion_main, Criterion};
use gocollab_core::collab::{Explainer, MoveCase, DEFAULT_LAYERS};
use gocollab_core::contribution::PreparedNetwork;
use gocollab_core::goenv::{GameState, Move};
use gocollab_core::nn::{self, residual_tower, Parameters, TowerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn tower() -> TowerConfig {
    TowerConfig {
        height: 9,
        width: 9,
        in_channels: 2,
        blocks: 3,
        channels: 16,
        outputs: 1,
        sigmoid: true,
    }
}

fn bench(c: &mut Criterion) {
    let net = residual_tower(&tower()).unwrap();
    let params = Parameters::init(&net, &mut ChaCha8Rng::seed_from_u64(1));
    let mut state = GameState::new(9, 9);
    for mv in [(2, 2), (6, 6), (2, 6), (6, 2), (4, 4)] {
        state = state.apply_move(Move::Play(mv.0, mv.1)).unwrap();
    }
    let board = state.encode();
    let case = MoveCase::from_move(&state, Move::Play(3, 4)).unwrap();

    c.bench_function("forward_9x9", |b| {
        b.iter(|| nn::forward(&net, &params, black_box(&board)).unwrap())
    });
    c.bench_function("backward_9x9", |b| {
        let trace = nn::forward(&net, &params, &board).unwrap();
        b.iter(|| nn::backward_gradients(&net, &params, black_box(&trace), 1.0).unwrap())
    });
    let prepared = PreparedNetwork::new(&net, &params).unwrap();
    let trace = prepared.trace(&board).unwrap();
    c.bench_function("contribution_to_input", |b| {
        b.iter(|| prepared.propagate_to(black_box(&trace), 0).unwrap())
    });
    let explainer = Explainer::new(&net, &params).unwrap();
    c.bench_function("collab_map_layers_1357", |b| {
        b.iter(|| explainer.network_map(black_box(&case), &DEFAULT_LAYERS).unwrap())
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
