use bloom_core::protocol::build_plan;
use bloom_core::{Condition, SubjectParams};
use bloom_gateway::{run_headless, EngineConfig, SessionEngine};
use criterion::{criterion_group, criterion_main, Criterion};

fn engine(c: &mut Criterion) {
    c.bench_function("engine_one_minute_ambient_dynamic", |b| {
        b.iter(|| {
            let plan = build_plan("B1", "ambient-dynamic".parse::<Condition>().unwrap());
            let mut e = SessionEngine::new(plan, EngineConfig::default()).unwrap();
            e.advance_stage(0).unwrap();
            let mut t = 0;
            while t < 60_000 {
                t += 800;
                e.ingest_ibi(t, 800.0).unwrap();
                e.drain();
            }
            e.into_log()
        })
    });
    let mut g = c.benchmark_group("headless");
    g.sample_size(10);
    g.bench_function("full_session_focus_dynamic", |b| {
        b.iter(|| run_headless("focus-dynamic".parse().unwrap(), &SubjectParams::default(), 7))
    });
    g.finish();
}

criterion_group!(benches, engine);
criterion_main!(benches);
