use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use px2graph::diffcore::{Tape, Tensor};
use px2graph::graphmodel::{GraphModel, ModelConfig};
use px2graph::scenegen::{generate_scene, WorldConfig};
use px2graph::supervision::{hungarian, image_loss, LossConfig};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::randn(&[64, 32, 32], 1.0, &mut rng);
    let w = Tensor::<f32>::randn(&[64, 64, 3, 3], 0.05, &mut rng);
    c.bench_function("conv3x3_64x32x32_forward_backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let xv = tape.variable(x.clone());
            let wv = tape.variable(w.clone());
            let y = tape.conv2d(xv, wv, None, 1).unwrap();
            let loss = tape.sum(y);
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn model(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let model = GraphModel::<f32>::build(&cfg, 0).unwrap();
    let (image, graph) = generate_scene(5, &WorldConfig::default()).unwrap();
    let x = image.to_tensor();
    c.bench_function("forward_inference", |b| b.iter(|| black_box(model.forward(&x, None).unwrap())));
    c.bench_function("training_step_loss_and_backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let loss = image_loss(&tape, &model, xv, None, &graph, &LossConfig::default(), 1).unwrap();
            black_box(tape.backward(loss.total).unwrap());
        })
    });
}

fn matching(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let costs: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    c.bench_function("hungarian_6x6", |b| b.iter(|| black_box(hungarian(black_box(&costs)).unwrap())));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = conv, model, matching
}
criterion_main!(benches);
