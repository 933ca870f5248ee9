use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_gradients;
use super::*;
use crate::error::Result;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 100;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs a gradient check of `f` on `TRIALS` random instances produced by
/// `make`.
fn sweep<M, F>(name: &str, make: M, f: F)
where
    M: Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var> + Copy,
{
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut r = rng(trial * 7919 + name.len() as u64);
        let inputs = make(&mut r);
        let report = check_gradients(&inputs, STEP, f).unwrap();
        worst = worst.max(report.max_relative_error);
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

/// Weighted sum so that every output element gets a distinct upstream
/// gradient.
fn probe(tape: &Tape<f64>, x: Var) -> Result<Var> {
    let shape = tape.shape(x);
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i as f64) * 0.731).sin() + 0.3).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(prod))
}

fn randn(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, r)
}

#[test]
fn identity_matmul_returns_input() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(randn(&mut rng(1), &[3, 4]));
    let i = tape.constant(Tensor::eye(4));
    let out = tape.matmul(a, i).unwrap();
    assert_eq!(*tape.value(out), *tape.value(a));
}

#[test]
fn sigmoid_of_zero_is_half() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::scalar(0.0));
    assert_eq!(tape.value(tape.sigmoid(x)).item(), 0.5);
}

#[test]
fn unit_pointwise_kernel_is_identity() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(randn(&mut rng(2), &[1, 5, 6]));
    let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = tape.conv2d(x, w, None, 1).unwrap();
    assert_eq!(*tape.value(y), *tape.value(x));
}

#[test]
fn square_gradient_at_three_is_six() {
    let tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::scalar(3.0));
    let loss = tape.mul(x, x).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn sum_of_sigmoid_at_zero_has_quarter_gradients() {
    let mut store = ParamStore::<f64>::new();
    let id = store.insert("w", Tensor::zeros(&[2, 3])).unwrap();
    let tape = Tape::new();
    let w = tape.param(&store, id);
    let loss = tape.sum(tape.sigmoid(w));
    tape.backward_into(loss, &mut store).unwrap();
    assert!(store.get(id).gradient.data().iter().all(|&g| g == 0.25));
    // a second backward accumulates
    tape.backward_into(loss, &mut store).unwrap();
    assert!(store.get(id).gradient.data().iter().all(|&g| g == 0.5));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn shape_mismatches_are_rejected() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(tape.add(a, b).is_err());
    assert!(tape.matmul(a, a).is_err());
    let s = tape.constant(Tensor::scalar(2.0));
    assert!(tape.mul(a, s).is_ok());
    let img = tape.constant(Tensor::zeros(&[2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[3, 3, 3, 3]));
    assert!(tape.conv2d(img, w, None, 1).is_err());
    assert!(tape.gather_pixels(img, &[(4, 0)]).is_err());
    assert!(tape.select(a, &[6], &[1]).is_err());
}

#[test]
fn softmax_rows_are_distributions() {
    let mut r = rng(3);
    for _ in 0..100 {
        let cols = r.gen_range(1..9);
        let rows = r.gen_range(1..5);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::randn(&[rows, cols], 10.0, &mut r));
        let y = tape.value(tape.softmax(x));
        for row in y.data().chunks(cols) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn gradcheck_elementwise_binary() {
    let make = |r: &mut ChaCha8Rng| vec![randn(r, &[2, 3]), randn(r, &[2, 3]), randn(r, &[1])];
    sweep("add", make, |t, v| {
        let s = t.add(v[0], v[1])?;
        let s = t.add(s, v[2])?;
        probe(t, s)
    });
    sweep("sub", make, |t, v| {
        let s = t.sub(v[0], v[1])?;
        let s = t.sub(v[2], s)?;
        probe(t, s)
    });
    sweep("mul", make, |t, v| {
        let s = t.mul(v[0], v[1])?;
        let s = t.mul(s, v[2])?;
        probe(t, s)
    });
    sweep("scale_shift", make, |t, v| {
        let s = t.shift(t.scale(v[0], -1.7), 0.4);
        probe(t, s)
    });
}

#[test]
fn gradcheck_matmul() {
    sweep(
        "matmul",
        |r| vec![randn(r, &[3, 4]), randn(r, &[4, 2])],
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y)
        },
    );
}

#[test]
fn gradcheck_conv() {
    for stride in [1, 2] {
        for k in [1, 3] {
            sweep(
                &format!("conv{k}s{stride}"),
                |r| vec![randn(r, &[2, 5, 4]), randn(r, &[3, 2, k, k]), randn(r, &[3])],
                |t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), stride)?;
                    probe(t, y)
                },
            );
        }
    }
}

#[test]
fn gradcheck_pool_upsample() {
    sweep(
        "maxpool",
        |r| vec![randn(r, &[2, 4, 6])],
        |t, v| {
            let y = t.maxpool2(v[0])?;
            probe(t, y)
        },
    );
    sweep(
        "upsample",
        |r| vec![randn(r, &[2, 3, 2])],
        |t, v| {
            let y = t.upsample2(v[0])?;
            probe(t, y)
        },
    );
}

#[test]
fn gradcheck_unary() {
    let make = |r: &mut ChaCha8Rng| vec![randn(r, &[3, 4])];
    sweep("relu", make, |t, v| probe(t, t.relu(v[0])));
    sweep("sigmoid", make, |t, v| probe(t, t.sigmoid(v[0])));
    sweep("square", make, |t, v| probe(t, t.square(v[0])));
    sweep("smooth_l1", |r| vec![Tensor::randn(&[3, 4], 2.0, r)], |t, v| {
        probe(t, t.smooth_l1(v[0]))
    });
    sweep(
        "log",
        |r| vec![Tensor::rand_uniform(&[3, 4], 0.2, 3.0, r)],
        |t, v| probe(t, t.log(v[0])),
    );
    sweep(
        "bce",
        |r| vec![Tensor::rand_uniform(&[6], 0.05, 0.95, r)],
        |t, v| {
            let y = t.bce(v[0], &[1.0, 0.0, 1.0, 0.0, 0.3, 1.0])?;
            probe(t, y)
        },
    );
    sweep("norm", |r| vec![randn(r, &[5])], |t, v| Ok(t.norm(v[0])));
}

#[test]
fn gradcheck_softmax_family() {
    let make = |r: &mut ChaCha8Rng| vec![Tensor::randn(&[3, 5], 2.0, r)];
    sweep("softmax", make, |t, v| probe(t, t.softmax(v[0])));
    sweep("log_softmax", make, |t, v| probe(t, t.log_softmax(v[0])));
}

#[test]
fn gradcheck_structural() {
    sweep(
        "concat_transpose_reshape",
        |r| vec![randn(r, &[2, 3]), randn(r, &[1, 3])],
        |t, v| {
            let c = t.concat(&[v[0], v[1]])?;
            let tr = t.transpose(c)?;
            let flat = t.reshape(tr, &[9])?;
            probe(t, flat)
        },
    );
    sweep(
        "gather_select",
        |r| vec![randn(r, &[3, 4, 5])],
        |t, v| {
            let g = t.gather_pixels(v[0], &[(0, 0), (4, 3), (2, 1), (4, 3)])?;
            let s = t.select(v[0], &[5, 5, 59], &[3])?;
            let a = probe(t, g)?;
            let b = probe(t, s)?;
            t.add(a, b)
        },
    );
    sweep(
        "sum_mean",
        |r| vec![randn(r, &[4, 2])],
        |t, v| {
            let a = t.sum(t.square(v[0]));
            let b = t.mean(v[0]);
            t.mul(a, b)
        },
    );
}

/// Conv/pool/upsample/activation stack of the shape the model uses.
fn three_layer(t: &Tape<f64>, v: &[Var]) -> Result<Var> {
    let h = t.relu(t.conv2d(v[0], v[1], Some(v[2]), 2)?);
    let p = t.maxpool2(h)?;
    let u = t.upsample2(p)?;
    let h2 = t.add(u, h)?;
    let h2 = t.sigmoid(t.conv2d(h2, v[3], None, 1)?);
    let g = t.gather_pixels(h2, &[(1, 2), (3, 0)])?;
    let g = t.reshape(g, &[3, 2])?;
    let g = t.transpose(g)?;
    let logits = t.matmul(g, v[4])?;
    let ls = t.log_softmax(logits);
    let picked = t.select(ls, &[1, 6], &[2])?;
    Ok(t.scale(t.sum(picked), -0.5))
}

#[test]
fn gradcheck_random_three_layer_model() {
    sweep(
        "three_layer",
        |r| {
            vec![
                randn(r, &[2, 8, 8]),
                Tensor::randn(&[3, 2, 3, 3], 0.5, r),
                Tensor::randn(&[3], 0.1, r),
                Tensor::randn(&[3, 3, 1, 1], 0.5, r),
                randn(r, &[3, 4]),
            ]
        },
        three_layer,
    );
}

#[test]
fn forward_and_gradients_are_bitwise_deterministic() {
    let run = || {
        let mut r = rng(42);
        let inputs = [
            randn(&mut r, &[2, 8, 8]),
            Tensor::randn(&[3, 2, 3, 3], 0.5, &mut r),
            Tensor::randn(&[3], 0.1, &mut r),
            Tensor::randn(&[3, 3, 1, 1], 0.5, &mut r),
            randn(&mut r, &[3, 4]),
        ];
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
        let loss = three_layer(&tape, &vars).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut bits: Vec<u64> = vec![tape.value(loss).item().to_bits()];
        for v in &vars {
            bits.extend(grads.wrt(*v).unwrap().data().iter().map(|x| x.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn constant_only_tape_records_no_gradient() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[2], 1.0));
    let y = tape.sum(tape.square(x));
    assert!(!tape.requires_grad(y));
    let g = tape.backward(y).unwrap();
    assert!(g.wrt(x).is_none());
}
