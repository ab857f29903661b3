use criterion::{black_box, criterion_group, criterion_main, Criterion};

use bat_core::adapter::{adapter_forward, init_adapter_params, AdapterConfig, AdapterPlan, Variant};
use bat_core::backbone::BackboneConfig;
use bat_core::eval::MetricReport;
use bat_core::rng::Rng;
use bat_core::synthdata::{generate_benchmark, BenchmarkSpec};
use bat_core::tracker::{
    draw_sample, predict_maps, sample_gradients, track_sequence, HeadConfig, Model, ModelConfig, TrainConfig,
};
use bat_core::{BBox, Graph, Tensor};

fn toy_model(variant: Variant) -> Model {
    let backbone = BackboneConfig::toy();
    let cfg = ModelConfig {
        adapter: AdapterConfig {
            d_t: backbone.d_t,
            d_e: 4,
            include_bias: true,
        },
        plan: AdapterPlan::all_layers(variant, backbone.num_layers).unwrap(),
        head: HeadConfig::default(),
        template_factor: 2.0,
        search_factor: 4.0,
        backbone,
    };
    Model::init(cfg, 0).unwrap()
}

fn data() -> Vec<bat_core::synthdata::SequenceRecord> {
    generate_benchmark(&BenchmarkSpec {
        sequences: 4,
        frames: 60,
        seed: 1,
        switch_period: 10,
        noise: 0.3,
    })
    .unwrap()
}

fn model_passes(c: &mut Criterion) {
    let data = data();
    let tcfg = TrainConfig::default();
    for variant in [Variant::Bat, Variant::BaselineDual] {
        let model = toy_model(variant);
        let sample = draw_sample(&model, &data, &tcfg, &mut Rng::new(0)).unwrap();
        c.bench_function(&format!("forward/{variant}"), |b| {
            b.iter(|| predict_maps(&model, black_box(&sample.inputs)).unwrap())
        });
        c.bench_function(&format!("forward_backward/{variant}"), |b| {
            b.iter(|| sample_gradients(&model, black_box(&sample), &tcfg.loss).unwrap())
        });
    }
    let model = toy_model(Variant::Bat);
    c.bench_function("draw_sample", |b| {
        let mut rng = Rng::new(0);
        b.iter(|| draw_sample(&model, &data, &tcfg, &mut rng).unwrap())
    });
    c.bench_function("track_sequence/60", |b| {
        b.iter(|| track_sequence(&model, &data[0]).unwrap())
    });
}

fn adapter(c: &mut Criterion) {
    let cfg = AdapterConfig {
        d_t: 64,
        d_e: 4,
        include_bias: true,
    };
    let plan = AdapterPlan::all_layers(Variant::Bat, 2).unwrap();
    let params = init_adapter_params(&plan, &cfg, &mut Rng::new(0)).unwrap();
    let prefix = plan.slots()[0].prefix();
    let x = Tensor::new([20, 64], (0..20 * 64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    c.bench_function("adapter_forward/20x64", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xi = g.constant(x.clone());
            adapter_forward(&mut g, &params, &prefix, xi).unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = Rng::new(3);
    let mut boxes = || {
        (0..1000)
            .map(|_| {
                BBox::new(
                    rng.uniform(0.0, 50.0),
                    rng.uniform(0.0, 50.0),
                    rng.uniform(1.0, 20.0),
                    rng.uniform(1.0, 20.0),
                )
            })
            .collect::<Vec<_>>()
    };
    let (pred, gt_rgb, gt_tir) = (boxes(), boxes(), boxes());
    c.bench_function("metric_report/1000", |b| {
        b.iter(|| MetricReport::compute(black_box(&pred), &gt_rgb, &gt_tir).unwrap())
    });
}

criterion_group!(benches, model_passes, adapter, metrics);
criterion_main!(benches);
