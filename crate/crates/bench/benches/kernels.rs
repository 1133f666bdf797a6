use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use std::hint::black_box;
use ucbgrasp::agent::Ensemble;
use ucbgrasp::critic::CriticKind;
use ucbgrasp::explore::{select_pixel, ucb_map, UcbConfig};
use ucbgrasp::net::{init_params, Architecture, ObsFeatures};
use ucbgrasp::sim::{BinSim, Difficulty};

fn forward(c: &mut Criterion) {
    let arch = Architecture::standard(127, 20);
    let net = init_params(1, &arch);
    let x = Array2::from_shape_fn((4096, 127), |(i, j)| ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.5);
    c.bench_function("forward_batch_4096x127", |b| b.iter(|| net.forward_batch(black_box(x.view())).unwrap()));
}

fn sim(c: &mut Criterion) {
    let sim = BinSim::default();
    let scene = sim.generate_scene(3, 17, Difficulty::Mixed).unwrap();
    c.bench_function("generate_scene_17", |b| {
        b.iter(|| sim.generate_scene(black_box(3), 17, Difficulty::Mixed).unwrap())
    });
    c.bench_function("render_64x64", |b| b.iter(|| sim.render(black_box(&scene))));
    let obs = sim.render(&scene);
    c.bench_function("patch_features_64x64", |b| b.iter(|| ObsFeatures::new(black_box(&obs), 5).unwrap()));
}

fn inference(c: &mut Criterion) {
    let sim = BinSim::default();
    let scene = sim.generate_scene(3, 17, Difficulty::Mixed).unwrap();
    let obs = sim.render(&scene);
    let mut g = c.benchmark_group("full_map");
    g.sample_size(10);
    for kind in [CriticKind::Mv, CriticKind::Qr { heads: 20 }] {
        let ens = Ensemble::standard(1, kind).unwrap();
        g.bench_function(format!("predict_{kind}"), |b| b.iter(|| ens.predict(black_box(&obs)).unwrap()));
        let pred = ens.predict(&obs).unwrap();
        g.bench_function(format!("ucb_select_{kind}"), |b| {
            b.iter(|| {
                let u = ucb_map(&pred.stats.q_mean, &pred.stats, &UcbConfig::default(), 0).unwrap();
                select_pixel(&u, &scene.bin_mask, &pred.action_mean, &obs).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, sim, inference);
criterion_main!(benches);
