use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use snn_actor::actor::{ActorConfig, ActorParams, EnvSpec};
use snn_actor::grad::backward;
use snn_actor::math::{RngStream, StreamId};

fn actor(n: usize, m: usize) -> ActorParams {
    let mut rng = RngStream::new(0, StreamId::Init);
    ActorParams::new(EnvSpec::symmetric(n, m, 1.0), ActorConfig::default(), &mut rng).unwrap()
}

fn states(n: usize, batch: usize) -> Vec<f64> {
    (0..n * batch).map(|k| ((k as f64) * 0.37).sin()).collect()
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("actor_forward");
    for batch in [1usize, 100] {
        let p = actor(17, 6);
        let s = states(17, batch);
        g.bench_with_input(BenchmarkId::from_parameter(batch), &batch, |b, &batch| {
            b.iter(|| p.forward_batch(&s, batch).unwrap())
        });
    }
    g.finish();
}

fn backward_pass(c: &mut Criterion) {
    let p = actor(17, 6);
    let batch = 100;
    let s = states(17, batch);
    let trace = p.forward_batch(&s, batch).unwrap();
    let dl_da = vec![0.01; batch * 6];
    c.bench_function("actor_backward/100", |b| b.iter(|| backward(&p, &trace, &dl_da).unwrap()));
}

criterion_group!(benches, forward, backward_pass);
criterion_main!(benches);
