//! Parameter containers and the small layers everything else is built from.

use std::ops::AddAssign;

use mnet_tensor::{Scalar, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Anything owning trainable tensors. Paths are stable across builds of the
/// same configuration and are the keys used by checkpoints.
pub trait Params<S: Scalar> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>);

    fn named_params(&self) -> Vec<(String, Tensor<S>)>
    where
        Self: Clone,
    {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.params_mut("", &mut out);
        out.into_iter().map(|(k, v)| (k, v.clone())).collect()
    }

    fn param_count(&self) -> usize
    where
        Self: Clone,
    {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// A copy whose parameters are leaves of `tape`.
    fn bind(&self, tape: &Tape<S>) -> Self
    where
        Self: Clone + Sized,
    {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.params_mut("", &mut out);
        for (_, p) in out {
            *p = tape.leaf(p);
        }
        copy
    }

    /// A copy holding `values`, given in `params_mut` order.
    fn with_params(&self, values: &[Tensor<S>]) -> Result<Self>
    where
        Self: Clone + Sized,
    {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.params_mut("", &mut out);
        if out.len() != values.len() {
            return Err(crate::error::data(format!(
                "{} parameter values for {} parameters",
                values.len(),
                out.len()
            )));
        }
        for ((path, p), v) in out.into_iter().zip(values) {
            if p.shape() != v.shape() {
                return Err(crate::error::data(format!(
                    "parameter `{path}`: value {:?}, expected {:?}",
                    v.shape(),
                    p.shape()
                )));
            }
            *p = v.clone();
        }
        Ok(copy)
    }

    /// Same parameters with every tape handle dropped.
    fn detached(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.params_mut("", &mut out);
        for (_, p) in out {
            *p = p.detach();
        }
        copy
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<S: Scalar, P: Params<S>> Params<S> for Vec<P> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.params_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

impl<S: Scalar, P: Params<S>> Params<S> for Option<P> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        if let Some(p) = self {
            p.params_mut(prefix, out);
        }
    }
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_fan_in<S: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Multiply-accumulate counts split by kernel family. Elementwise work is
/// not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flops {
    pub conv: u64,
    pub matmul: u64,
    pub scan: u64,
}

impl Flops {
    pub fn total(&self) -> u64 {
        self.conv + self.matmul + self.scan
    }

    /// `2·M·K·N`.
    pub fn matmul(m: usize, k: usize, n: usize) -> Flops {
        Flops {
            matmul: 2 * (m * k * n) as u64,
            ..Flops::default()
        }
    }

    pub fn times(self, n: usize) -> Flops {
        let n = n as u64;
        Flops {
            conv: self.conv * n,
            matmul: self.matmul * n,
            scan: self.scan * n,
        }
    }
}

impl AddAssign for Flops {
    fn add_assign(&mut self, rhs: Flops) {
        self.conv += rhs.conv;
        self.matmul += rhs.matmul;
        self.scan += rhs.scan;
    }
}

impl std::ops::Add for Flops {
    type Output = Flops;
    fn add(mut self, rhs: Flops) -> Flops {
        self += rhs;
        self
    }
}

/// `y = x·w + b` over the last axis; `w` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    pub w: Tensor<S>,
    pub b: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng + ?Sized>(inp: usize, out: usize, bias: bool, rng: &mut R) -> Self {
        Linear {
            w: init_fan_in(&[inp, out], inp, rng),
            b: bias.then(|| init_fan_in(&[out], inp, rng)),
        }
    }

    pub fn zeros(inp: usize, out: usize, bias: bool) -> Self {
        Linear {
            w: Tensor::zeros(&[inp, out]),
            b: bias.then(|| Tensor::zeros(&[out])),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.linear(&self.w, self.b.as_ref())?)
    }

    pub fn in_features(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn flops(&self, rows: usize) -> Flops {
        Flops::matmul(rows, self.in_features(), self.out_features())
    }
}

impl<S: Scalar> Params<S> for Linear<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((join(prefix, "w"), &mut self.w));
        if let Some(b) = &mut self.b {
            out.push((join(prefix, "b"), b));
        }
    }
}

/// Square-kernel convolution with "same" padding for odd kernels at stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    pub w: Tensor<S>,
    pub b: Option<Tensor<S>>,
    pub stride: usize,
    pub padding: usize,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, bias: bool, rng: &mut R) -> Self {
        let fan_in = cin * k * k;
        Conv2d {
            w: init_fan_in(&[cout, cin, k, k], fan_in, rng),
            b: bias.then(|| init_fan_in(&[cout], fan_in, rng)),
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.conv2d(&self.w, self.b.as_ref(), self.stride, self.padding)?)
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    /// Count for one `[Cin,h,w]` image.
    pub fn flops(&self, h: usize, w: usize) -> Flops {
        let k = self.kernel();
        let ho = (h + 2 * self.padding - k) / self.stride + 1;
        let wo = (w + 2 * self.padding - k) / self.stride + 1;
        let s = self.w.shape();
        Flops {
            conv: 2 * (s[0] * s[1] * k * k * ho * wo) as u64,
            ..Flops::default()
        }
    }
}

impl<S: Scalar> Params<S> for Conv2d<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((join(prefix, "w"), &mut self.w));
        if let Some(b) = &mut self.b {
            out.push((join(prefix, "b"), b));
        }
    }
}

/// Normalization over the last axis with learned affine parameters.
#[derive(Debug, Clone)]
pub struct LayerNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

pub const LN_EPS: f64 = 1e-5;

impl<S: Scalar> LayerNorm<S> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(&[d]),
            beta: Tensor::zeros(&[d]),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.layer_norm(&self.gamma, &self.beta, LN_EPS)?)
    }
}

impl<S: Scalar> Params<S> for LayerNorm<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bind_makes_every_parameter_a_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::<f64>::new(3, 2, true, &mut rng);
        let tape = Tape::new();
        let bound = lin.bind(&tape);
        assert!(bound.w.requires_grad() && bound.b.as_ref().unwrap().requires_grad());
        assert_eq!(tape.len(), 2);
        assert!(!bound.detached().w.requires_grad());
        let names: Vec<String> = lin.named_params().into_iter().map(|(k, _)| k).collect();
        assert_eq!(names, ["w", "b"]);
    }

    #[test]
    fn fan_in_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Tensor<f64> = init_fan_in(&[64, 8], 16, &mut rng);
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
    }
}
