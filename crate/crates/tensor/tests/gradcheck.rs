//! Every differentiable primitive against central finite differences in f64.

use mnet_tensor::gradcheck::{check, GradReport};
use mnet_tensor::{Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn rand_t(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, lo, hi, &mut rng)
}

/// Weighted sum so every output element carries a distinct cotangent.
fn weigh(y: Tensor<f64>) -> Result<Tensor<f64>> {
    let w = Tensor::from_fn(y.shape(), |i| 0.3 + ((i * 7919) % 13) as f64 / 10.0);
    Ok(y.mul(&w)?.sum_all())
}

fn run(name: &str, inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let report: GradReport = check(inputs, |x| weigh(f(x)?), H, None, &mut rng).unwrap();
    assert!(report.passes(TOL), "{name}: {report:?}");
}

#[test]
fn binary_ops() {
    let a = rand_t(&[3, 4], -1.0, 1.0, 1);
    let b = rand_t(&[3, 4], 0.5, 1.5, 2);
    let row = rand_t(&[4], 0.5, 1.5, 3);
    let col = rand_t(&[3, 1], 0.5, 1.5, 4);
    run("add", &[a.clone(), b.clone()], |x| x[0].add(&x[1]));
    run("sub", &[a.clone(), row.clone()], |x| x[0].sub(&x[1]));
    run("mul", &[a.clone(), col.clone()], |x| x[0].mul(&x[1]));
    run("div", &[a.clone(), b.clone()], |x| x[0].div(&x[1]));
    run("div broadcast", &[col.clone(), row.clone()], |x| x[0].div(&x[1]));
    let shifted = a.add_scalar(0.05);
    run("maximum", &[shifted, rand_t(&[3, 4], -1.0, 1.0, 5)], |x| x[0].maximum(&x[1]));
}

#[test]
fn unary_ops() {
    let x = rand_t(&[2, 5], -2.0, 2.0, 6);
    let pos = rand_t(&[2, 5], 0.2, 3.0, 7);
    run("sigmoid", std::slice::from_ref(&x), |x| Ok(x[0].sigmoid()));
    run("tanh", std::slice::from_ref(&x), |x| Ok(x[0].tanh()));
    run("exp", std::slice::from_ref(&x), |x| Ok(x[0].exp()));
    run("softplus", std::slice::from_ref(&x), |x| Ok(x[0].softplus()));
    run("ln", std::slice::from_ref(&pos), |x| Ok(x[0].ln()));
    run("sqrt", std::slice::from_ref(&pos), |x| Ok(x[0].sqrt()));
    run("neg/scale/shift", std::slice::from_ref(&x), |x| Ok(x[0].neg().scale(2.5).add_scalar(1.0)));
    // Keep samples away from the kinks.
    let away = Tensor::from_fn(&[8], |i| if i % 2 == 0 { 0.3 + i as f64 } else { -0.4 - i as f64 });
    run("relu", std::slice::from_ref(&away), |x| Ok(x[0].relu()));
    run("abs", std::slice::from_ref(&away), |x| Ok(x[0].abs()));
    run("clamp", &[away], |x| Ok(x[0].clamp(-2.0, 2.0)));
    run("softmax", &[rand_t(&[3, 4], -2.0, 2.0, 8)], |x| x[0].softmax_last_axis());
}

#[test]
fn reductions_and_shapes() {
    let x = rand_t(&[2, 3, 4], -1.0, 1.0, 9);
    run("sum_all", std::slice::from_ref(&x), |x| Ok(x[0].sum_all()));
    run("mean_all", std::slice::from_ref(&x), |x| Ok(x[0].mean_all()));
    run("sum_axis", std::slice::from_ref(&x), |x| x[0].sum_axis(1));
    run("mean_axis", std::slice::from_ref(&x), |x| x[0].mean_axis(2));
    run("reshape", std::slice::from_ref(&x), |x| x[0].reshape(&[6, 4]));
    run("permute", std::slice::from_ref(&x), |x| x[0].permute(&[2, 0, 1]));
    run("transpose", std::slice::from_ref(&x), |x| x[0].transpose(0, 2));
    run("narrow", std::slice::from_ref(&x), |x| x[0].narrow(1, 1, 2));
    run("index_select", std::slice::from_ref(&x), |x| x[0].index_select(2, &[3, 0, 0, 1]));
    run("flip", std::slice::from_ref(&x), |x| x[0].flip(1));
    let y = rand_t(&[2, 1, 4], -1.0, 1.0, 10);
    run("concat", &[x.clone(), y], |x| Tensor::concat(&[x[0].clone(), x[1].clone()], 1));
    run("stack", &[x.clone(), x.clone()], |x| Tensor::stack(&[x[0].clone(), x[1].clone()], 0));
}

#[test]
fn linear_algebra() {
    run("matmul", &[rand_t(&[3, 4], -1.0, 1.0, 11), rand_t(&[4, 2], -1.0, 1.0, 12)], |x| {
        x[0].matmul(&x[1])
    });
    run("bmm", &[rand_t(&[2, 3, 4], -1.0, 1.0, 13), rand_t(&[2, 4, 2], -1.0, 1.0, 14)], |x| {
        x[0].bmm(&x[1])
    });
    run(
        "linear",
        &[
            rand_t(&[2, 3, 4], -1.0, 1.0, 15),
            rand_t(&[4, 5], -1.0, 1.0, 16),
            rand_t(&[5], -1.0, 1.0, 17),
        ],
        |x| x[0].linear(&x[1], Some(&x[2])),
    );
}

#[test]
fn convolution() {
    for (stride, pad, k) in [(1, 1, 3), (2, 0, 2), (1, 0, 1)] {
        run(
            "conv2d",
            &[
                rand_t(&[2, 2, 5, 5], -1.0, 1.0, 18),
                rand_t(&[3, 2, k, k], -1.0, 1.0, 19),
                rand_t(&[3], -1.0, 1.0, 20),
            ],
            |x| x[0].conv2d(&x[1], Some(&x[2]), stride, pad),
        );
    }
}

#[test]
fn layer_norm() {
    run(
        "layer_norm",
        &[
            rand_t(&[3, 5], -2.0, 2.0, 21),
            rand_t(&[5], 0.5, 1.5, 22),
            rand_t(&[5], -0.5, 0.5, 23),
        ],
        |x| x[0].layer_norm(&x[1], &x[2], 1e-5),
    );
}

#[test]
fn selective_scan() {
    let (l, b, d, n) = (4, 2, 3, 2);
    run(
        "selective_scan",
        &[
            rand_t(&[l, b, d], -1.0, 1.0, 24),
            rand_t(&[l, b, d], 0.1, 1.0, 25),
            rand_t(&[d, n], -2.0, -0.2, 26),
            rand_t(&[l, b, n], -1.0, 1.0, 27),
            rand_t(&[l, b, n], -1.0, 1.0, 28),
        ],
        |x| x[0].selective_scan(&x[1], &x[2], &x[3], &x[4]),
    );
}
