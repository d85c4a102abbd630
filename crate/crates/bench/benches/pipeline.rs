use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use isac_core::channel::{synthesize_frame, PathEnsemble, SynthesisMode};
use isac_core::pipeline::{trace_scene, RunConfig};
use isac_core::raytracer::trace_paths;
use isac_core::scene::parse_scene;
use isac_core::sensing::{antenna_periodogram, music_image, UlaDescriptor};

fn fixture(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name);
    RunConfig::load(path).expect("fixture config")
}

fn benches(c: &mut Criterion) {
    let config = fixture("two_path.toml");
    let scene = parse_scene(config.scene_file()).expect("fixture scene");
    let radio = &config.radio;
    let wavelength = radio.wavelength();
    let tracer = config.tracer.to_config(wavelength);

    c.bench_function("trace two_path frame", |b| {
        b.iter(|| trace_paths(black_box(&scene), &tracer, 0).unwrap())
    });

    let traces = trace_scene(&scene, radio, &tracer).unwrap();
    let ensemble = PathEnsemble::new(traces[0].gains.clone(), &scene.rx, wavelength);
    let mut noisy = radio.clone();
    noisy.noise_stddev = 1e-6;
    c.bench_function("synthesize band-limited frame", |b| {
        b.iter(|| {
            synthesize_frame(
                black_box(&ensemble),
                &noisy,
                0,
                7,
                SynthesisMode::BandLimited,
            )
            .unwrap()
        })
    });

    let frame = synthesize_frame(&ensemble, &noisy, 0, 7, SynthesisMode::BandLimited).unwrap();
    c.bench_function("periodogram", |b| {
        b.iter(|| {
            antenna_periodogram(
                black_box(frame.data.view()),
                0,
                radio,
                config.sensing.range_mapping,
            )
            .unwrap()
        })
    });

    let music = config.sensing.music_config();
    let ula = UlaDescriptor {
        count: scene.rx.array.count,
        spacing_wavelengths: scene.rx.array.spacing_for(wavelength) / wavelength,
    };
    let mut group = c.benchmark_group("music");
    group.sample_size(10);
    group.bench_function("music image", |b| {
        b.iter(|| music_image(black_box(frame.data.view()), &music, radio, &ula).unwrap())
    });
    group.finish();
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
