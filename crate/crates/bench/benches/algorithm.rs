use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use stackelberg_core::consensus::{run_consensus, EstimatorBank};
use stackelberg_core::follower::{sumt, BarrierParams};
use stackelberg_core::harness::{Engine, Prepared, RunConfig};
use stackelberg_core::sensitivity::{
    assemble_cluster_blocks, exact_cluster_jhi, jhi_descent, reference_responses,
};

fn prepared(name: &str) -> Prepared {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.budgets.t = 50;
    cfg.budgets.d = 50;
    cfg.budgets.b = 50;
    Prepared::new(&cfg).unwrap()
}

fn estimate(c: &mut Criterion) {
    let p = prepared("case1.json");
    c.bench_function("estimate/microgrid", |b| {
        b.iter(|| {
            let mut e = Engine::from_prepared(&p);
            black_box(e.estimate(&p.x0).unwrap())
        })
    });
}

fn jhi_and_consensus(c: &mut Criterion) {
    let p = prepared("case1.json");
    let spec = p.spec();
    let barrier = BarrierParams::default();
    let (ys, thetas) = reference_responses(spec, &p.x0, &barrier).unwrap();
    let y = spec.stack_y(&ys);
    let sens: Vec<_> = (0..spec.num_leaders())
        .map(|h| assemble_cluster_blocks(spec, h, &y, &p.x0, &thetas, None).unwrap())
        .collect();
    let truth: Vec<_> = sens.iter().map(|s| exact_cluster_jhi(s).unwrap()).collect();

    c.bench_function("jhi_descent/microgrid/d=50", |b| {
        b.iter(|| {
            let mut z = truth[0].zeros_like();
            let gamma = 1.0 / sens[0].max_curvature();
            jhi_descent(&sens[0], &mut z, gamma, 50).unwrap();
            black_box(z)
        })
    });

    let bank = EstimatorBank::zeros(spec);
    c.bench_function("consensus/microgrid/b=50", |b| {
        b.iter(|| black_box(run_consensus(&bank, &p.graph, &truth, 50, None, false).unwrap()))
    });
}

fn barrier(c: &mut Criterion) {
    let p = prepared("case2.json");
    let spec = p.spec();
    let f = spec.follower(0);
    let start = f.constraints.initial_point(f.dim);
    let x = DVector::from_element(spec.q(), 1.0);
    c.bench_function("sumt/cellular", |b| {
        b.iter(|| {
            black_box(
                sumt(f.cost.as_ref(), &f.constraints, &x, &p.config.barrier, &start, 1e-10).unwrap(),
            )
        })
    });
}

criterion_group!(benches, estimate, jhi_and_consensus, barrier);
criterion_main!(benches);
