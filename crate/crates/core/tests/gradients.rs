//! Central finite differences against every differentiable op and a tiny
//! end-to-end model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tspm_core::nn::scaled_dot_product_attention;
use tspm_core::tasks::task_loss;
use tspm_core::tensor::gradcheck::{check, relative_error, Input};
use tspm_core::tensor::{
    bmm, concat, conv1d, conv2d, conv_transpose2d, gelu, layer_norm, log_softmax, matmul, softmax,
    Result,
};
use tspm_core::{ModelConfig, MultiScaleMixer, TaskKind, Tensor, TensorError};

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Input {
    let n = shape.iter().product();
    Input::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Input {
    let n = shape.iter().product();
    Input::new(shape, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect())
}

/// Contracts the op output with fixed random weights so every output
/// element contributes a distinct coefficient to the scalar.
fn weighted(out: Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::constant(
        out.shape(),
        (0..out.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    Ok(out.mul(&w)?.sum())
}

fn assert_grad(name: &str, f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Input]) {
    let report = check(&|t| weighted(f(t)?, 99), inputs, H, FLOOR).unwrap();
    assert!(
        report.max_rel_error < TOL,
        "{name}: max relative error {:.3e}",
        report.max_rel_error
    );
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(&[3, 4], &mut rng), random(&[3, 4], &mut rng));
    let row = random(&[4], &mut rng);
    assert_grad("add", &|t| t[0].add(&t[1]), &[a.clone(), b.clone()]);
    assert_grad(
        "add broadcast",
        &|t| t[0].add(&t[1]),
        &[a.clone(), row.clone()],
    );
    assert_grad("sub", &|t| t[0].sub(&t[1]), &[a.clone(), b.clone()]);
    assert_grad("mul broadcast", &|t| t[0].mul(&t[1]), &[a.clone(), row]);
    assert_grad(
        "div",
        &|t| t[0].div(&t[1]),
        &[a.clone(), positive(&[3, 4], &mut rng)],
    );
    assert_grad("scale", &|t| Ok(t[0].scale(-2.5)), std::slice::from_ref(&a));
    assert_grad(
        "add_scalar",
        &|t| Ok(t[0].add_scalar(0.7).square()),
        std::slice::from_ref(&a),
    );
    assert_grad("neg", &|t| Ok(t[0].neg()), std::slice::from_ref(&a));
    assert_grad("square", &|t| Ok(t[0].square()), std::slice::from_ref(&a));
    assert_grad("exp", &|t| Ok(t[0].exp()), std::slice::from_ref(&a));
    assert_grad("gelu", &|t| Ok(gelu(&t[0])), &[a]);
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 3, 4], &mut rng);
    assert_grad(
        "reshape",
        &|t| t[0].reshape(&[6, 4]),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "permute",
        &|t| t[0].permute(&[2, 0, 1]),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "transpose",
        &|t| t[0].transpose(0, 2),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "pad_axis",
        &|t| t[0].pad_axis(1, 2, 1),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "slice_axis",
        &|t| t[0].slice_axis(2, 1, 3),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "fit_axis crop",
        &|t| t[0].fit_axis(1, 2),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "fit_axis pad",
        &|t| t[0].fit_axis(1, 5),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "concat",
        &|t| concat(&[t[0].clone(), t[1].clone()], 1),
        &[x.clone(), random(&[2, 2, 4], &mut rng)],
    );
    assert_grad(
        "sum",
        &|t| Ok(t[0].square().sum()),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "mean",
        &|t| Ok(t[0].square().mean()),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "sum_axis",
        &|t| t[0].sum_axis(1, false),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "sum_axis keepdim",
        &|t| t[0].sum_axis(2, true)?.mul(&t[0]),
        std::slice::from_ref(&x),
    );
    assert_grad("mean_axis", &|t| t[0].mean_axis(0, true), &[x]);
}

#[test]
fn linear_algebra_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_grad(
        "matmul",
        &|t| matmul(&t[0], &t[1]),
        &[random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)],
    );
    assert_grad(
        "bmm",
        &|t| bmm(&t[0], &t[1]),
        &[random(&[2, 3, 4], &mut rng), random(&[2, 4, 5], &mut rng)],
    );
}

#[test]
fn normalization_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[3, 5], &mut rng);
    assert_grad("softmax", &|t| softmax(&t[0], 1), std::slice::from_ref(&x));
    assert_grad(
        "softmax axis 0",
        &|t| softmax(&t[0], 0),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "log_softmax",
        &|t| log_softmax(&t[0], 1),
        std::slice::from_ref(&x),
    );
    assert_grad(
        "layer_norm",
        &|t| layer_norm(&t[0], &t[1], &t[2], 1e-5),
        &[x, random(&[5], &mut rng), random(&[5], &mut rng)],
    );
}

#[test]
fn convolution_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = random(&[2, 5, 6, 3], &mut rng);
    let w = random(&[3, 3, 3, 2], &mut rng);
    for stride in [(1, 1), (1, 2), (2, 1)] {
        assert_grad(
            "conv2d",
            &|t| conv2d(&t[0], &t[1], stride, (1, 1)),
            &[img.clone(), w.clone()],
        );
    }
    assert_grad(
        "conv2d unpadded",
        &|t| conv2d(&t[0], &t[1], (1, 1), (0, 0)),
        &[img, w.clone()],
    );
    let small = random(&[2, 3, 3, 2], &mut rng);
    for stride in [(1, 1), (1, 2)] {
        assert_grad(
            "conv_transpose2d",
            &|t| conv_transpose2d(&t[0], &t[1], stride, (1, 1)),
            &[small.clone(), w.clone()],
        );
    }
    assert_grad(
        "conv1d",
        &|t| conv1d(&t[0], &t[1], 2, 1),
        &[random(&[2, 9, 3], &mut rng), random(&[3, 3, 2], &mut rng)],
    );
}

#[test]
fn attention_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = [2, 4, 6];
    for heads in [1, 2] {
        assert_grad(
            "attention",
            &|t| {
                scaled_dot_product_attention(&t[0], &t[1], &t[2], heads)
                    .map(|a| a.output)
                    .map_err(|e| TensorError::Invalid(e.to_string()))
            },
            &[
                random(&shape, &mut rng),
                random(&shape, &mut rng),
                random(&shape, &mut rng),
            ],
        );
    }
}

fn tiny_model() -> (MultiScaleMixer, Tensor, Tensor) {
    let mut cfg = ModelConfig::new(16, 2, TaskKind::Forecast { horizon: 4 });
    cfg.scales = 1;
    cfg.top_k = 1;
    cfg.layers = 1;
    cfg.d_model = 4;
    cfg.heads = 1;
    let model = MultiScaleMixer::new(cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x: Vec<f64> = (0..2 * 16 * 2)
        .map(|i| {
            ((i / 2 % 16) as f64 * std::f64::consts::TAU / 4.0).sin()
                + 0.1 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    let y: Vec<f64> = (0..2 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (
        model,
        Tensor::constant(&[2, 16, 2], x).unwrap(),
        Tensor::constant(&[2, 4, 2], y).unwrap(),
    )
}

#[test]
fn tiny_model_end_to_end() {
    let (model, x, y) = tiny_model();
    let kind = model.config.task;
    let loss = |m: &MultiScaleMixer| {
        task_loss(&kind, &m.forward(&x, None).unwrap().output, &y, None).unwrap()
    };
    model.params().zero_grad();
    loss(&model).backward().unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (name, p) in model.params().iter() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.to_vec();
        for j in 0..base.len() {
            let mut v = base.clone();
            v[j] = base[j] + h;
            p.set_data(&v).unwrap();
            let up = loss(&model).item();
            v[j] = base[j] - h;
            p.set_data(&v).unwrap();
            let down = loss(&model).item();
            p.set_data(&base).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[j], numeric, 1e-5);
            assert!(
                err < 1e-3,
                "{name}[{j}]: analytic {} numeric {numeric}",
                analytic[j]
            );
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-3);
}
