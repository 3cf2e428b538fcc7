//! Hot-path throughput: judging one command, computing an acceptable set,
//! sweeping a whole space, the artifact codecs, and signature checks. The
//! judging path sits between a planner and its actuators, so its latency is
//! the one that matters most.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use remgate_core::bundle::RuleBundle;
use remgate_core::crypto::Keystore;
use remgate_core::dsl;
use remgate_core::engine::{Engine, VerifyOptions};
use remgate_core::gateway::wire;
use remgate_core::sim::{
    grid_schema, grid_schema_text, grid_state, move_command, Direction, GridMap, GRID_RULES,
};

fn grid_engine(size: i64) -> Engine {
    let schema = grid_schema(size, size);
    let rules = dsl::parse(GRID_RULES, &schema).expect("rules parse");
    Engine::new(schema, rules).expect("rules validate")
}

fn bench_rectify(c: &mut Criterion) {
    let size = 7;
    let engine = grid_engine(size);
    let schema = grid_schema(size, size);
    let map = GridMap::open(size, size);
    let mid = grid_state(&schema, &map, (3, 3));
    let corner = grid_state(&schema, &map, (0, 0));
    let up = move_command(&schema, Direction::Up);

    // Open cell: the move passes through all four rules untouched.
    c.bench_function("rectify_pass", |b| {
        b.iter(|| engine.rectify(black_box(&up), black_box(&mid)).unwrap())
    });
    // Border cell: the first matching rule denies and short-circuits.
    c.bench_function("rectify_deny", |b| {
        b.iter(|| engine.rectify(black_box(&up), black_box(&corner)).unwrap())
    });
    c.bench_function("acceptable_set", |b| {
        b.iter(|| engine.acceptable(black_box(&mid)).unwrap())
    });
}

fn bench_exhaustive_sweep(c: &mut Criterion) {
    let engine = grid_engine(5);
    let mut group = c.benchmark_group("sweep");
    group.sample_size(20);
    // 400 states x 5 commands, totality + closure + idempotence per pair.
    group.bench_function("verify_5x5_2000_pairs", |b| {
        b.iter(|| {
            let report = engine.verify(black_box(&VerifyOptions::default())).unwrap();
            assert!(report.certified());
            report
        })
    });
    group.finish();
}

fn bench_artifacts(c: &mut Criterion) {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = Keystore::open(dir.path().join("keys")).expect("keystore");
    let handles: Vec<_> = (0..3u8)
        .map(|i| {
            let mut seed = [0u8; 32];
            seed[0] = 0xb0 + i;
            store.keygen_with_seed(seed).expect("keygen")
        })
        .collect();
    let authorized: Vec<_> = handles
        .iter()
        .map(|h| store.public_key(h).expect("public key"))
        .collect();
    let mut bundle = RuleBundle::build(&grid_schema_text(7, 7), GRID_RULES, 1).expect("builds");
    bundle.sign_with(&store, &handles[0]).expect("sign");
    bundle.sign_with(&store, &handles[1]).expect("sign");
    let bytes = bundle.encode();

    c.bench_function("bundle_encode", |b| b.iter(|| black_box(&bundle).encode()));
    c.bench_function("bundle_decode", |b| {
        b.iter(|| RuleBundle::decode(black_box(&bytes)).unwrap())
    });
    c.bench_function("bundle_signed_digest", |b| {
        b.iter(|| black_box(&bundle).signed_digest())
    });
    // Two ed25519 verifications plus the digest recomputation.
    c.bench_function("bundle_verify_2of3", |b| {
        b.iter(|| {
            assert!(black_box(&bundle).verify_threshold(2, black_box(&authorized)));
        })
    });
}

fn bench_wire(c: &mut Criterion) {
    let schema = grid_schema(7, 7);
    let command = move_command(&schema, Direction::Left);
    let state = grid_state(&schema, &GridMap::open(7, 7), (3, 3));
    let command_bytes = wire::encode_command(&command);
    let state_bytes = wire::encode_state(&state);

    c.bench_function("wire_command_encode", |b| {
        b.iter(|| wire::encode_command(black_box(&command)))
    });
    c.bench_function("wire_command_decode", |b| {
        b.iter(|| wire::decode_command(black_box(&command_bytes), black_box(&schema)).unwrap())
    });
    c.bench_function("wire_state_encode", |b| {
        b.iter(|| wire::encode_state(black_box(&state)))
    });
    c.bench_function("wire_state_decode", |b| {
        b.iter(|| wire::decode_state(black_box(&state_bytes), black_box(&schema)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_rectify,
    bench_exhaustive_sweep,
    bench_artifacts,
    bench_wire
);
criterion_main!(benches);
