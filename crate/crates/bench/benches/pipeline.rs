use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mvc_bench::{first_frame, scene};
use mvc_core::bbox::{composite, crop};
use mvc_core::model::detect;
use mvc_core::{
    build_grid, nearest_point_to_lines, rig_focus_point, sample_voxel, ConsensusGrid, Image, Line3,
    PixelBBox, TrainConfig, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn triangulation(c: &mut Criterion) {
    let s = scene(1);
    let f = first_frame(&s);
    let lines: Vec<Line3> = s
        .rig
        .cameras()
        .iter()
        .zip(&f.subject_px)
        .map(|(cam, &[u, v])| cam.ray_through_pixel(u, v))
        .collect();
    c.bench_function("nearest_point_to_lines/3", |b| {
        b.iter(|| nearest_point_to_lines(black_box(&lines)).unwrap())
    });
}

fn fusion(c: &mut Criterion) {
    let s = scene(1);
    let f = first_frame(&s);
    let grid = build_grid(rig_focus_point(&s.rig).unwrap(), 4.0, [10; 3]).unwrap();
    let cg = ConsensusGrid::new(&s.rig, grid, 8, 8).unwrap();
    let model = mvc_core::Model::initial(128, 128, (8, 8), 1);
    let maps: Vec<_> = f
        .images
        .iter()
        .zip(cg.specs())
        .map(|(img, spec)| detect(&model.detector, img, spec).unwrap().0)
        .collect();
    c.bench_function("fuse/10^3", |b| {
        b.iter(|| cg.fuse(black_box(&maps)).unwrap())
    });
    let q = cg.fuse(&maps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("sample_voxel/10^3", |b| {
        b.iter(|| sample_voxel(black_box(&q), &mut rng))
    });
}

fn image_ops(c: &mut Criterion) {
    let s = scene(1);
    let f = first_frame(&s);
    let img = &f.images[0];
    let b0 = PixelBBox::new(63.4, 60.2, 27.3, 51.8);
    c.bench_function("crop/128", |b| {
        b.iter(|| crop(black_box(img), &b0).unwrap())
    });
    let patch = crop(img, &b0).unwrap();
    let mask = Image::filled(patch.width(), patch.height(), 1, 0.5);
    c.bench_function("composite/128", |b| {
        b.iter(|| composite(black_box(&patch), &mask, img, &b0).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let s = scene(1);
    let f = first_frame(&s);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, fd) in [
        ("finite-difference inpaint", true),
        ("detached inpaint", false),
    ] {
        let config = TrainConfig {
            inpaint_box_gradient: fd,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, s.rig.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        group.bench_function(name, |b| {
            b.iter(|| {
                let _ = trainer.train_step(black_box(&f.images), &mut rng);
            })
        });
    }
    group.finish();
}

criterion_group!(benches, triangulation, fusion, image_ops, train_step);
criterion_main!(benches);
