#![allow(dead_code)]

use mnet_core::nn::Params;
use mnet_core::Tensor;
use mnet_tensor::gradcheck::{check, GradReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, &mut rng(seed))
}

pub fn zero_params<M: Params<f64>>(m: &mut M) {
    let mut ps = Vec::new();
    m.params_mut("", &mut ps);
    for (_, p) in ps {
        *p = Tensor::zeros(p.shape());
    }
}

pub fn param_values<M: Params<f64> + Clone>(m: &M) -> Vec<Tensor<f64>> {
    m.named_params().into_iter().map(|(_, t)| t).collect()
}

/// Weighted sum so every output element carries a distinct cotangent.
pub fn weigh(y: &Tensor<f64>) -> mnet_core::Result<Tensor<f64>> {
    let w = Tensor::from_fn(y.shape(), |i| 0.3 + ((i * 7919) % 13) as f64 / 10.0);
    Ok(y.mul(&w)?.sum_all())
}

/// Gradchecks `f(module, x)` with respect to `x` and every parameter.
pub fn gradcheck_module<M, F>(m: &M, x: &Tensor<f64>, f: F, h: f64, samples: Option<usize>) -> GradReport
where
    M: Params<f64> + Clone,
    F: Fn(&M, &Tensor<f64>) -> mnet_core::Result<Tensor<f64>>,
{
    let mut inputs = vec![x.clone()];
    inputs.extend(param_values(m));
    check(
        &inputs,
        |ts| {
            let module = m.with_params(&ts[1..]).expect("same parameter layout");
            let y = f(&module, &ts[0]).map_err(|e| match e {
                mnet_core::Error::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            weigh(&y).map_err(|e| match e {
                mnet_core::Error::Tensor(t) => t,
                other => panic!("{other}"),
            })
        },
        h,
        samples,
        &mut rng(4242),
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
