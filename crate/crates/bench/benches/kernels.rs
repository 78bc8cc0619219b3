use criterion::{criterion_group, criterion_main, Criterion};

use lod_core::coefficients::gen_a1;
use lod_core::fem::{FineCoefficient, FineField, FineProblem};
use lod_core::method::{build_basis, coarse_solve, LodContext};
use lod_core::operators::BubbleSet;
use lod_core::poly::CoarseSpace;
use lod_core::{CellRect, ElementId, MethodKind, PatchSolver};

fn bubbles(c: &mut Criterion) {
    let space = CoarseSpace::from_levels(3, 7, 2).unwrap();
    c.bench_function("bubble set p=2 (3,7)", |b| b.iter(|| BubbleSet::new(&space).unwrap()));
}

fn patch_factorization(c: &mut Criterion) {
    let a = gen_a1(1, 5).unwrap();
    let space = CoarseSpace::from_levels(3, 7, 1).unwrap();
    let coeff = FineCoefficient::new(&a, space.fine).unwrap();
    let rect = CellRect::of_element(ElementId::new(3, 3)).grow(2, &space.coarse);
    c.bench_function("patch solver ell=2 p=1 (3,7)", |b| {
        b.iter(|| PatchSolver::new(&space, &coeff, rect).unwrap())
    });
}

fn reference_solve(c: &mut Criterion) {
    let a = gen_a1(1, 5).unwrap();
    let mesh = lod_core::CartesianMesh::new(7).unwrap();
    let problem = FineProblem::new(&a, mesh).unwrap();
    let f = FineField::from_fn(mesh, |x, y| x + y);
    c.bench_function("fine reference solve level 7", |b| b.iter(|| problem.solve(&f).unwrap()));
}

fn splod_pipeline(c: &mut Criterion) {
    let a = gen_a1(1, 5).unwrap();
    let ctx = LodContext::new(&a, 2, 6, 1).unwrap();
    let f = FineField::from_fn(ctx.space.fine, |_, _| 1.0);
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("sp-LOD basis and solve ell=2 p=1 (2,6)", |b| {
        b.iter(|| {
            let basis = build_basis(&ctx, MethodKind::Splod, 2).unwrap();
            coarse_solve(&ctx, &basis, &f).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, bubbles, patch_factorization, reference_solve, splod_pipeline);
criterion_main!(benches);
