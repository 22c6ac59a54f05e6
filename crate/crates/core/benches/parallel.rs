use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use djc::exec::Exec;
use djc::explore::{explore, ExploreOpts, Limits};
use djc::gen::{generate, GenConfig};
use djc::policy::{compare, Policy};
use djc::run::RunConfig;
use djc::syntax::{load, Program};

fn program(name: &str) -> Program {
    let path = format!("{}/programs/{name}", env!("CARGO_MANIFEST_DIR"));
    load(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn exploration(c: &mut Criterion) {
    let mut g = c.benchmark_group("explore");
    g.sample_size(10);
    let opts = ExploreOpts { implicit: true, migrate: false };
    for name in ["drf/guarded2.djc", "store_buffer.djc"] {
        let p = program(name);
        for (mode, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(mode, name), &p, |b, p| {
                b.iter(|| black_box(explore(p, 2, 16, opts, Limits::default(), exec).unwrap().search.states))
            });
        }
    }
    g.finish();
}

fn policy_comparison(c: &mut Criterion) {
    let mut g = c.benchmark_group("compare");
    g.sample_size(10);
    let corpus: Vec<Program> = (0..20).map(|s| generate(s, &GenConfig::default())).collect();
    let seeds: Vec<u64> = (0..10).collect();
    let policies = [Policy::Eager, Policy::Buffered(16)];
    for (mode, exec) in MODES {
        g.bench_function(BenchmarkId::new(mode, "generated x20"), |b| {
            b.iter(|| {
                for p in &corpus {
                    black_box(compare(p, &RunConfig::default(), &policies, &seeds, exec).unwrap().rows.len());
                }
            })
        });
    }
    g.finish();
}

criterion_group!(benches, exploration, policy_comparison);
criterion_main!(benches);
