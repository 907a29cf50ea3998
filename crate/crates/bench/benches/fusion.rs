use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semscene::fusion::{overlap, FusionParams, SceneModel};
use semscene::geometry::{voxel_downsample, Pose};
use semscene::tracker::assign_hungarian;
use semscene_bench::{labelled_blocks, random_cloud};

fn merge(c: &mut Criterion) {
    let segs = labelled_blocks(6, 3000);
    let mut g = c.benchmark_group("merge_frame");
    g.sample_size(10);
    for use_labels in [false, true] {
        let params = FusionParams {
            use_labels,
            ..FusionParams::default()
        };
        let mut seeded = SceneModel::new(params).unwrap();
        seeded.merge_frame(&segs, &Pose::identity()).unwrap();
        let name = if use_labels { "labels" } else { "no_labels" };
        g.bench_function(name, |b| {
            b.iter_batched(
                || seeded.clone(),
                |mut scene| scene.merge_frame(&segs, &Pose::identity()).unwrap().merges,
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn overlap_score(c: &mut Criterion) {
    let mut g = c.benchmark_group("overlap");
    for n in [500, 2000, 8000] {
        let a = random_cloud(n, [0.0; 3], 2000.0, 1);
        let b = random_cloud(n, [300.0, 0.0, 0.0], 2000.0, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| overlap(&a, &b, 200.0).unwrap())
        });
    }
    g.finish();
}

fn downsample(c: &mut Criterion) {
    let cloud = random_cloud(100_000, [0.0; 3], 4000.0, 3);
    let mut g = c.benchmark_group("voxel_downsample");
    for voxel in [50.0, 100.0] {
        g.bench_with_input(BenchmarkId::from_parameter(voxel), &voxel, |b, &v| {
            b.iter(|| voxel_downsample(&cloud, v).unwrap().len())
        });
    }
    g.finish();
}

fn hungarian(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = c.benchmark_group("assign_hungarian");
    for n in [8, 32, 128] {
        let cost = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1000.0));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| assign_hungarian(&cost).unwrap().pairs.len())
        });
    }
    g.finish();
}

criterion_group!(benches, merge, overlap_score, downsample, hungarian);
criterion_main!(benches);
