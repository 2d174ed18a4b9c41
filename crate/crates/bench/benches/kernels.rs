use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sgs_core::data::generate_toy;
use sgs_core::distill::{continue_distillation, initialize};
use sgs_core::numerics::{fft2, RealGrid, SeededRng, Shape};
use sgs_core::surgery::{consensus, decompose, DomainGradientStack};
use sgs_core::{DistillConfig, ToySpec};

fn random_grid(shape: Shape, rng: &mut SeededRng) -> RealGrid {
    RealGrid::from_vec(shape, (0..shape.len()).map(|_| rng.normal()).collect()).unwrap()
}

fn transforms(c: &mut Criterion) {
    let mut rng = SeededRng::new(0, 0);
    let g = random_grid(Shape::new(16, 16, 3), &mut rng);
    c.bench_function("fft2 16x16x3", |b| b.iter(|| fft2(black_box(&g))));
}

fn surgery(c: &mut Criterion) {
    let mut rng = SeededRng::new(1, 0);
    let shape = Shape::new(16, 16, 3);
    let stack = DomainGradientStack::new(0, (0..4).map(|_| random_grid(shape, &mut rng)).collect())
        .unwrap();
    c.bench_function("consensus+decompose S=4", |b| {
        b.iter(|| {
            let cons = consensus(black_box(&stack), 1e-8).unwrap();
            decompose(&stack, &cons).unwrap()
        })
    });
}

fn iteration(c: &mut Criterion) {
    let ds = generate_toy(&ToySpec::default(), 0).unwrap();
    let cfg = DistillConfig::default();
    let set = initialize(&ds, &cfg).unwrap();
    c.bench_function("distillation iteration, linear", |b| {
        b.iter(|| continue_distillation(&ds, set.clone(), &cfg, 1, &mut |_, _| Ok(())).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = transforms, surgery, iteration
}
criterion_main!(benches);
