use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use temporl::diffmath::{Axis, Graph};
use temporl_bench::{agent, batch, prior, random_matrix, rng};

fn matmul(c: &mut Criterion) {
    for n in [64, 256] {
        let a = random_matrix(n, n, 1);
        let b = random_matrix(n, n, 2);
        c.bench_function(&format!("matmul_{n}"), |bench| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
}

fn backward(c: &mut Criterion) {
    let a = random_matrix(100, 66, 3);
    let w1 = random_matrix(66, 64, 4);
    let w2 = random_matrix(64, 1, 5);
    c.bench_function("mlp_forward_backward_100x66x64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.constant_ref(&a);
            let p1 = g.param(&w1);
            let p2 = g.param(&w2);
            let h = g.matmul(x, p1).unwrap();
            let h = g.tanh(h);
            let y = g.matmul(h, p2).unwrap();
            let s = g.square(y);
            let loss = g.mean(s, Axis::All);
            g.backward(loss).unwrap();
            black_box(g.grad_or_zeros(p1));
        })
    });
}

fn flow(c: &mut Criterion) {
    let p = prior();
    let cond = random_matrix(400, p.cond_spec().cond_dim(), 6);
    let acts = random_matrix(400, 2, 7).map(|x| 0.9 * x);
    c.bench_function("flow_sample_400", |bench| {
        let mut r = rng(8);
        bench.iter(|| black_box(p.sample(&cond, &mut r).unwrap()))
    });
    c.bench_function("flow_log_density_400", |bench| {
        bench.iter(|| black_box(p.log_density(&acts, &cond).unwrap()))
    });
    c.bench_function("flow_batch_nll_grad_400", |bench| {
        bench.iter(|| black_box(p.batch_nll(&acts, &cond).unwrap()))
    });
}

fn agent_update(c: &mut Criterion) {
    let (b, noise) = batch(100, 9);
    for (name, mixing) in [("sac_update_100", false), ("temporl_update_100", true)] {
        c.bench_function(name, |bench| {
            bench.iter_batched_ref(
                || agent(mixing),
                |a| black_box(a.update(&b, &noise).unwrap()),
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, matmul, backward, flow, agent_update);
criterion_main!(benches);
