//! Hot paths, roughly in pipeline order: mask codecs, region scoring,
//! multi-scale aggregation, whole-image fusion, and metric accumulation.

use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};
use taxfuse_core::encoder::EmbeddingVector;
use taxfuse_core::fusion::{fuse_image, score_candidates, FusionConfig};
use taxfuse_core::label_map::{decode_label_map_png, encode_label_map_png};
use taxfuse_core::metrics::ConfusionMatrix;
use taxfuse_core::proposals::{decode_rle, encode_rle, SegmentationMap};
use taxfuse_core::rng::SplitMix64;
use taxfuse_core::synthetic::{generate, standard_scene_spec, NoiseParams, SceneWorld};
use taxfuse_core::text_bank::build_text_feature_bank;
use taxfuse_core::visual::{aggregate_multiscale, similarity_weights};
use taxfuse_core::{ClassId, IGNORE_ID};

fn random_vector(rng: &mut SplitMix64, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect()).unwrap()
}

/// A blobby mask with runs of realistic length, not uniform noise.
fn structured_mask(side: u32) -> Vec<u8> {
    let mut rng = SplitMix64::new(7);
    let mut mask = Vec::with_capacity((side * side) as usize);
    let mut value = 0u8;
    while mask.len() < (side * side) as usize {
        let run = rng.range_u32(3, 64) as usize;
        let take = run.min((side * side) as usize - mask.len());
        mask.extend(std::iter::repeat_n(value, take));
        value ^= 1;
    }
    mask
}

fn bench_rle(c: &mut Criterion) {
    let side = 512u32;
    let mask = structured_mask(side);
    let runs = encode_rle(&mask);
    let mut g = c.benchmark_group("rle");
    g.throughput(Throughput::Elements(u64::from(side) * u64::from(side)));
    g.bench_function("encode_512sq", |b| b.iter(|| encode_rle(black_box(&mask))));
    g.bench_function("decode_512sq", |b| {
        b.iter(|| decode_rle(black_box(&runs), side, side).unwrap())
    });
    g.finish();
}

fn bench_label_map_png(c: &mut Criterion) {
    let side = 256u32;
    let mut rng = SplitMix64::new(11);
    let labels: Vec<ClassId> = (0..(side * side) as usize)
        .map(|_| rng.range_u32(0, 20) as ClassId)
        .collect();
    let map = SegmentationMap::from_labels(side, side, labels).unwrap();
    let bytes = encode_label_map_png(&map, None, Some(IGNORE_ID)).unwrap();
    let mut g = c.benchmark_group("label_map_png");
    g.bench_function("encode_256sq", |b| {
        b.iter(|| encode_label_map_png(black_box(&map), None, Some(IGNORE_ID)).unwrap())
    });
    g.bench_function("decode_256sq", |b| {
        b.iter(|| decode_label_map_png(black_box(&bytes)).unwrap())
    });
    g.finish();
}

fn bench_region_scoring(c: &mut Criterion) {
    let mut rng = SplitMix64::new(13);
    let dim = 768;
    let feature = random_vector(&mut rng, dim);
    let vectors: Vec<EmbeddingVector> = (0..10).map(|_| random_vector(&mut rng, dim)).collect();
    let candidates: Vec<(ClassId, &EmbeddingVector)> =
        (0..10).map(|i| (i as ClassId, &vectors[i])).collect();
    c.bench_function("score_candidates_10x768", |b| {
        b.iter(|| score_candidates(black_box(&feature), black_box(&candidates), 100.0).unwrap())
    });
}

fn bench_multiscale(c: &mut Criterion) {
    let mut rng = SplitMix64::new(17);
    let dim = 768;
    let local = random_vector(&mut rng, dim);
    let globals: Vec<EmbeddingVector> = (0..3).map(|_| random_vector(&mut rng, dim)).collect();
    let weights = similarity_weights(&local, &globals, 1e-8).unwrap();
    let mut g = c.benchmark_group("multiscale");
    g.bench_function("weights_3x768", |b| {
        b.iter(|| similarity_weights(black_box(&local), black_box(&globals), 1e-8).unwrap())
    });
    g.bench_function("aggregate_3x768", |b| {
        b.iter(|| {
            aggregate_multiscale(black_box(&local), black_box(&globals), black_box(&weights))
                .unwrap()
        })
    });
    g.finish();
}

fn bench_fuse_image(c: &mut Criterion) {
    let world = SceneWorld::standard(0.0, 42).unwrap();
    let bank =
        build_text_feature_bank(&world.encoder().unwrap(), world.mapping.target(), &world.contexts)
            .unwrap();
    let spec = standard_scene_spec(&world, 1, 256, 256, NoiseParams::NONE).unwrap();
    let (scene, encoder) = generate(&spec).unwrap();
    let config = FusionConfig::default();
    c.bench_function("fuse_image_256sq", |b| {
        b.iter(|| {
            fuse_image(
                black_box(&scene.image),
                &scene.coarse_pred,
                scene.proposals.clone(),
                &world.mapping,
                &bank,
                &encoder,
                &config,
            )
            .unwrap()
        })
    });
}

fn bench_confusion(c: &mut Criterion) {
    let world = SceneWorld::standard(0.0, 42).unwrap();
    let spec = standard_scene_spec(&world, 2, 256, 256, NoiseParams::NONE).unwrap();
    let (scene, _) = generate(&spec).unwrap();
    let target = world.mapping.target().clone();
    c.bench_function("confusion_accumulate_256sq", |b| {
        b.iter(|| {
            let mut cm = ConfusionMatrix::new(&target);
            cm.accumulate(black_box(&scene.fine_gt), black_box(&scene.fine_gt))
                .unwrap();
            cm
        })
    });
}

criterion_group!(
    benches,
    bench_rle,
    bench_label_map_png,
    bench_region_scoring,
    bench_multiscale,
    bench_fuse_image,
    bench_confusion
);
criterion_main!(benches);
