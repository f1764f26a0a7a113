use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use deltarig_core::mesh::{to_weighted_differential, symmetric_laplacian};
use deltarig_core::nn::{pca_fit, Mlp};
use deltarig_core::reconstruction::augment;
use deltarig_core::rig::{sample_pose, SyntheticConfig};
use deltarig_core::{shapes, AnchorSet, FactorizedSystem, Rig, SyntheticRig};
use nalgebra::DMatrix;

fn spread_anchors(n: usize, count: usize) -> AnchorSet {
    AnchorSet::uniform((0..count).map(|i| i * n / count).collect())
}

fn reconstruction(c: &mut Criterion) {
    let mut group = c.benchmark_group("reconstruction");
    for n in [1000, 4000] {
        let mesh = shapes::sphere_with_vertices(n, 10.0);
        let n = mesh.vertex_count();
        let anchors = spread_anchors(n, n / 50);
        group.bench_with_input(BenchmarkId::new("factorize", n), &mesh, |b, mesh| {
            let augmented = augment(&symmetric_laplacian(mesh), &anchors).unwrap();
            b.iter(|| deltarig_core::reconstruction::factorize(black_box(&augmented)).unwrap())
        });
        let sys = FactorizedSystem::for_mesh(&mesh, &anchors).unwrap();
        let positions = mesh.positions();
        let delta = to_weighted_differential(&mesh, &positions).unwrap();
        let targets = anchors.gather(&positions);
        group.bench_with_input(BenchmarkId::new("solve", n), &sys, |b, sys| {
            b.iter(|| sys.reconstruct_weighted(black_box(&delta), &targets).unwrap())
        });
    }
    group.finish();
}

fn networks(c: &mut Criterion) {
    let mut group = c.benchmark_group("networks");
    let features = 12 * 8 + 24;
    for width in [256, 2048] {
        let mlp = Mlp::new(&[features, width, width, width, 200], 0).unwrap();
        let x = DMatrix::from_fn(features, 1, |i, _| (i as f64 * 0.37).sin());
        group.bench_with_input(BenchmarkId::new("differential_forward", width), &mlp, |b, mlp| {
            b.iter(|| mlp.forward(black_box(&x)).unwrap())
        });
    }
    let data = DMatrix::from_fn(3000, 400, |i, j| ((i * 7 + j * 13) as f64 * 0.01).sin());
    group.sample_size(10);
    group.bench_function("pca_fit_3000x400_k50", |b| b.iter(|| pca_fit(black_box(&data), 50).unwrap()));
    group.finish();
}

fn rig(c: &mut Criterion) {
    let rig = SyntheticRig::build(&SyntheticConfig {
        vertices: 2000,
        ..SyntheticConfig::face()
    })
    .unwrap();
    let pose = sample_pose(rig.spec(), 1);
    c.bench_function("rig/evaluate_2000", |b| {
        b.iter(|| rig.evaluate(black_box(&pose), &deltarig_core::rig::Injection::None).unwrap())
    });
}

criterion_group!(benches, reconstruction, networks, rig);
criterion_main!(benches);
