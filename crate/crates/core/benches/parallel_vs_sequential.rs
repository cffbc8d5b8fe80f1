//! Compares the rayon-backed data-parallel paths against sequential
//! baselines built from the same public operations.
//!
//! With default features the main benchmarks run on the rayon pool and the
//! `*-seq-baseline` entries are hand-rolled sequential loops; built with
//! `--no-default-features` both sides are sequential, which is the fallback
//! the `parallel` feature guards.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use tomofuse_core::features::{extract_stack, pool_depth, FeatureExtractor, PoolMethod, ToyExtractor};
use tomofuse_core::fusion::{dynamic_image_raw, rank_pool_coefficients, RankVariant};
use tomofuse_core::head::{ClassifierHead, HeadConfig};
use tomofuse_core::synth::{generate_volume, generate_volumes, LesionSpec, SynthSpec};
use tomofuse_core::tensor::Tensor;
use tomofuse_core::train::batch_gradients;

const MODE: &str = if cfg!(feature = "parallel") {
    "rayon"
} else {
    "sequential"
};

fn bench_spec() -> SynthSpec {
    SynthSpec {
        n_negative: 8,
        n_positive: 8,
        depth_range: (12, 12),
        slice_size: (128, 128),
        lesion: LesionSpec {
            radius_range: (4.0, 10.0),
            contrast: 0.5,
            span: 3,
        },
        noise_sigma: 0.05,
        seed: 1,
    }
}

fn bench_synth(c: &mut Criterion) {
    let spec = bench_spec();
    c.bench_function(&format!("synth_batch/{MODE}"), |b| {
        b.iter(|| black_box(generate_volumes(black_box(&spec)).unwrap()))
    });
    c.bench_function("synth_batch/seq-baseline", |b| {
        b.iter(|| {
            let vols: Vec<_> = (0..spec.n_total())
                .map(|i| generate_volume(black_box(&spec), i))
                .collect();
            black_box(vols)
        })
    });
}

fn bench_extract_stack(c: &mut Criterion) {
    let spec = bench_spec();
    let volume = generate_volume(&spec, 0);
    let slices: Vec<Tensor> = (0..volume.depth()).map(|t| volume.slice_image(t)).collect();
    let extractor = ToyExtractor::preset("small", 3).unwrap();
    c.bench_function(&format!("extract_stack/{MODE}"), |b| {
        b.iter(|| black_box(extract_stack(&extractor, black_box(&slices), "bench").unwrap()))
    });
    c.bench_function("extract_stack/seq-baseline", |b| {
        b.iter(|| {
            let maps: Vec<Tensor> = slices
                .iter()
                .map(|s| extractor.extract(black_box(s)).unwrap())
                .collect();
            black_box(maps)
        })
    });
}

fn bench_pool_depth(c: &mut Criterion) {
    let spec = bench_spec();
    let volume = generate_volume(&spec, 8);
    let slices: Vec<Tensor> = (0..volume.depth()).map(|t| volume.slice_image(t)).collect();
    let extractor = ToyExtractor::preset("small", 3).unwrap();
    let stack = extract_stack(&extractor, &slices, "bench").unwrap();
    c.bench_function(&format!("pool_depth/{MODE}"), |b| {
        b.iter(|| black_box(pool_depth(black_box(&stack), PoolMethod::Max)))
    });
    c.bench_function("pool_depth/seq-baseline", |b| {
        b.iter(|| {
            let (ch, h, w) = stack.map_shape();
            let plane = h * w;
            let mut out = stack.map(0).to_vec();
            for t in 1..stack.depth() {
                for (o, &v) in out.iter_mut().zip(stack.map(t)) {
                    *o = o.max(v);
                }
            }
            black_box(Tensor::new(vec![ch, h, w], out).unwrap())
        })
    });
}

fn bench_dynamic_image(c: &mut Criterion) {
    let spec = SynthSpec {
        depth_range: (16, 16),
        ..bench_spec()
    };
    let volume = generate_volume(&spec, 2);
    c.bench_function(&format!("dynamic_image_raw/{MODE}"), |b| {
        b.iter(|| black_box(dynamic_image_raw(black_box(&volume), RankVariant::Harmonic)))
    });
    c.bench_function("dynamic_image_raw/seq-baseline", |b| {
        b.iter(|| {
            let coeffs = rank_pool_coefficients(volume.depth(), RankVariant::Harmonic).unwrap();
            let n = volume.height() * volume.width();
            let mut acc = vec![0.0f64; n];
            for (t, &alpha) in coeffs.iter().enumerate() {
                for (a, &v) in acc.iter_mut().zip(volume.slice(t)) {
                    *a += alpha * f64::from(v);
                }
            }
            black_box(acc)
        })
    });
}

fn bench_batch_gradients(c: &mut Criterion) {
    let spec = bench_spec();
    let extractor = ToyExtractor::preset("small", 3).unwrap();
    let volumes = generate_volumes(&spec).unwrap();
    let maps: Vec<Tensor> = volumes
        .iter()
        .map(|v| {
            let slices: Vec<Tensor> = (0..v.depth()).map(|t| v.slice_image(t)).collect();
            let stack = extract_stack(&extractor, &slices, v.id()).unwrap();
            pool_depth(&stack, PoolMethod::Max)
        })
        .collect();
    let shape = maps[0].shape().to_vec();
    let head = ClassifierHead::init(
        HeadConfig::default(),
        (shape[0], shape[1], shape[2]),
        7,
    )
    .unwrap();
    let targets: Vec<f64> = volumes.iter().map(|v| f64::from(v.label().is_positive())).collect();
    let seeds: Vec<u64> = (0..maps.len() as u64).collect();

    c.bench_function(&format!("batch_gradients/{MODE}"), |b| {
        b.iter(|| {
            black_box(
                batch_gradients(&head, maps.len(), |k| Ok(maps[k].clone()), &targets, &seeds, true)
                    .unwrap(),
            )
        })
    });
    c.bench_function("batch_gradients/seq-baseline", |b| {
        b.iter(|| {
            use rand::SeedableRng;
            let mut total: Option<tomofuse_core::head::HeadGradients> = None;
            let mut loss = 0.0;
            for k in 0..maps.len() {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seeds[k]);
                let (l, g) = head.backward(&maps[k], targets[k], true, &mut rng).unwrap();
                loss += l;
                match &mut total {
                    Some(t) => t.add(&g),
                    None => total = Some(g),
                }
            }
            black_box((loss / maps.len() as f64, total))
        })
    });
}

criterion_group!(
    benches,
    bench_synth,
    bench_extract_stack,
    bench_pool_depth,
    bench_dynamic_image,
    bench_batch_gradients
);
criterion_main!(benches);
