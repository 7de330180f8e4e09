use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use medrobust_core::calibrate::{calibrate, SeverityLevel};
use medrobust_core::{apply_by_id, probes, ssim, Intensity};

fn bench_ssim(c: &mut Criterion) {
    let mut group = c.benchmark_group("ssim");
    for size in [64usize, 256, 512] {
        let a = probes::textured_probe(size);
        let b = apply_by_id("gaussian_noise", &a, Intensity::new(0.3).unwrap(), 1).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |bench, _| {
            bench.iter(|| ssim(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn bench_perturbations(c: &mut Criterion) {
    let gray = probes::textured_probe(256);
    let color = probes::color_probe(256);
    let t = Intensity::new(0.5).unwrap();
    let mut group = c.benchmark_group("perturb_256");
    for id in ["gaussian_noise", "gaussian_blur", "jpeg_compression", "motion_blur", "rotation", "ct_metal_streak", "mri_ghosting", "us_acoustic_shadow"] {
        group.bench_function(id, |bench| bench.iter(|| apply_by_id(id, black_box(&gray), t, 7).unwrap()));
    }
    group.bench_function("path_stain_shift", |bench| {
        bench.iter(|| apply_by_id("path_stain_shift", black_box(&color), t, 7).unwrap())
    });
    group.finish();
}

fn bench_calibrate(c: &mut Criterion) {
    let img = probes::textured_probe(128);
    let mut group = c.benchmark_group("calibrate_128");
    group.sample_size(20);
    for id in ["gaussian_noise", "contrast", "gaussian_blur"] {
        let level = SeverityLevel::new(3).unwrap();
        group.bench_function(id, |bench| bench.iter(|| calibrate(black_box(&img), id, level, 11, 30).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_ssim, bench_perturbations, bench_calibrate);
criterion_main!(benches);
