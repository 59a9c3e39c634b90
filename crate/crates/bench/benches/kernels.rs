use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fedface_bench::{attack_fixture, round_of_updates, score_sets, training_fixture};
use fedface_core::attack::{dlg_attack, AttackConfig, AttackMode, ShareScope, Victim};
use fedface_core::eval::tar_at_far;
use fedface_core::federation::{aggregate, deserialize_update, serialize_update};
use fedface_core::model::model_backward;
use std::hint::black_box;

fn training(c: &mut Criterion) {
    let f = training_fixture(32, 25);
    c.bench_function("embed_batch_32", |b| b.iter(|| f.backbone.embed(black_box(&f.images)).unwrap()));
    c.bench_function("model_backward_batch_32", |b| {
        b.iter_batched(
            || (f.backbone.clone(), f.projector.clone()),
            |(mut bb, mut p)| model_backward(&mut bb, &mut p, &f.images, &f.labels).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn federation(c: &mut Criterion) {
    let updates = round_of_updates(4);
    c.bench_function("aggregate_4_clients", |b| b.iter(|| aggregate(black_box(&updates), true).unwrap()));
    let schema = updates[0].params.0.schema();
    let frame = serialize_update(&updates[0]);
    c.bench_function("update_encode", |b| b.iter(|| serialize_update(black_box(&updates[0]))));
    c.bench_function("update_decode", |b| b.iter(|| deserialize_update(black_box(&frame), &schema).unwrap()));
}

fn attack(c: &mut Criterion) {
    let mut g = c.benchmark_group("attack_5_iterations");
    g.sample_size(10);
    for mode in [AttackMode::BaselineFullModel, AttackMode::ProtectedRandomProjector] {
        let scope = if mode == AttackMode::BaselineFullModel { ShareScope::Full } else { ShareScope::PublicOnly };
        let f = attack_fixture(scope);
        let victim = Victim { projector: &f.projector, label: f.label, image: &f.image };
        let cfg = AttackConfig { mode, iterations: 5, ..AttackConfig::default() };
        g.bench_function(mode.name(), |b| b.iter(|| dlg_attack(&f.backbone, &f.target, &victim, &cfg).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let (genuine, impostor) = score_sets(2_000, 20_000);
    c.bench_function("tar_at_far_22k_scores", |b| b.iter(|| tar_at_far(black_box(&genuine), &impostor, 1e-3).unwrap()));
}

criterion_group!(benches, training, federation, attack, metrics);
criterion_main!(benches);
