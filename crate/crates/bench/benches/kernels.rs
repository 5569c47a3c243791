use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvkit::attention::{point_voxel_attention, Neighborhood};
use pvkit::geometry::{iou_3d, nms_bev, Box3D};
use pvkit::pipeline::{synthetic_scene, Detector, DetectorConfig};
use pvkit::pooling::dbscan;
use pvkit::scene::fps_sample;
use pvkit::tensor::{Graph, Tensor};

fn random_boxes(n: usize, rng: &mut ChaCha8Rng) -> Vec<Box3D> {
    (0..n)
        .map(|_| {
            Box3D::new(
                rng.random_range(0.0..20.0),
                rng.random_range(-10.0..10.0),
                -1.0,
                1.5,
                1.6,
                3.9,
                rng.random_range(-3.1..3.1),
            )
            .unwrap()
        })
        .collect()
}

fn random_points(n: usize, extent: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..extent)))
        .collect()
}

fn geometry(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let boxes = random_boxes(512, &mut rng);
    let scores: Vec<f64> = (0..boxes.len()).map(|_| rng.random()).collect();
    c.bench_function("iou_3d", |b| {
        b.iter(|| iou_3d(black_box(&boxes[0]), black_box(&boxes[1])))
    });
    c.bench_function("nms_bev/512", |b| {
        b.iter(|| nms_bev(black_box(&boxes), black_box(&scores), 0.7))
    });
}

fn clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = random_points(2048, 10.0, &mut rng);
    c.bench_function("dbscan/2048", |b| {
        b.iter(|| dbscan(black_box(&pts), 0.5, 4))
    });
    c.bench_function("fps/2048->256", |b| {
        b.iter(|| fps_sample(black_box(&pts), 256))
    });
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, d) = (256, 32);
    let mut t = |r: usize, c: usize| {
        Tensor::matrix(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    };
    let (q, k, v, gq, gv) = (t(m, d), t(m, d), t(m, d), t(m, 1), t(m, 1));
    c.bench_function("point_voxel_attention/256x32 fwd+bwd", |b| {
        b.iter(|| {
            let g = Graph::new();
            let vars = [&q, &k, &v, &gq, &gv].map(|x| g.input(x.clone()));
            let out = point_voxel_attention(
                &vars[0],
                &vars[1],
                &vars[2],
                &vars[3],
                &vars[4],
                &Neighborhood::Full,
                true,
            )
            .unwrap();
            g.backward(out.sum()).unwrap()
        })
    });
}

fn detector(c: &mut Criterion) {
    let cfg = DetectorConfig::toy();
    let det = Detector::new(cfg.clone()).unwrap();
    let scene = synthetic_scene(5, &cfg);
    let layout = det.layout(&scene.cloud);
    let sample = det.sample(&scene.cloud, &scene.objects);
    let mut group = c.benchmark_group("toy detector");
    group.sample_size(10);
    group.bench_function("scene layout", |b| {
        b.iter(|| det.layout(black_box(&scene.cloud)))
    });
    group.bench_function("detect", |b| {
        b.iter(|| det.detect_layout(black_box(&layout)).unwrap())
    });
    group.bench_function("training step fwd+bwd", |b| {
        b.iter_batched(
            Graph::new,
            |g| {
                let (loss, _) = det.loss(&g, &sample, 0).unwrap();
                g.backward(loss).unwrap().param_grads().count()
            },
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, geometry, clustering, attention, detector);
criterion_main!(benches);
