use mnet_tensor::{Scalar, Tensor};
use rand::Rng;

use crate::error::{data, Result};
use crate::nn::{join, Conv2d, Params};

/// `[T,C,H,W] → [T,C·f²,H/f,W/f]`; output channel `c·f² + i·f + j` holds
/// input `(c, y·f + i, x·f + j)`.
pub fn space_to_channel<S: Scalar>(x: &Tensor<S>, f: usize) -> Result<Tensor<S>> {
    let &[t, c, h, w] = x.shape() else {
        return Err(data(format!("expected [T,C,H,W], got {:?}", x.shape())));
    };
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(data(format!("{h}×{w} is not divisible by patch factor {f}")));
    }
    let (ho, wo) = (h / f, w / f);
    Ok(x.reshape(&[t, c, ho, f, wo, f])?
        .permute(&[0, 1, 3, 5, 2, 4])?
        .reshape(&[t, c * f * f, ho, wo])?)
}

/// Inverse of [`space_to_channel`].
pub fn channel_to_space<S: Scalar>(x: &Tensor<S>, f: usize) -> Result<Tensor<S>> {
    let &[t, cf, h, w] = x.shape() else {
        return Err(data(format!("expected [T,C,H,W], got {:?}", x.shape())));
    };
    if f == 0 || cf % (f * f) != 0 {
        return Err(data(format!("{cf} channels are not divisible by {f}²")));
    }
    let c = cf / (f * f);
    Ok(x.reshape(&[t, c, f, f, h, w])?
        .permute(&[0, 1, 4, 2, 5, 3])?
        .reshape(&[t, c, h * f, w * f])?)
}

/// Space-to-channel fold followed by a 1×1 projection.
#[derive(Debug, Clone)]
pub struct PatchDown<S: Scalar> {
    pub factor: usize,
    pub proj: Conv2d<S>,
}

impl<S: Scalar> PatchDown<S> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, factor: usize, rng: &mut R) -> Self {
        PatchDown {
            factor,
            proj: Conv2d::new(cin * factor * factor, cout, 1, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.proj.forward(&space_to_channel(x, self.factor)?)
    }
}

impl<S: Scalar> Params<S> for PatchDown<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.proj.params_mut(&join(prefix, "proj"), out);
    }
}

/// 1×1 projection to `cout·f²` channels followed by channel-to-space.
#[derive(Debug, Clone)]
pub struct PatchUp<S: Scalar> {
    pub factor: usize,
    pub proj: Conv2d<S>,
}

impl<S: Scalar> PatchUp<S> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, factor: usize, rng: &mut R) -> Self {
        PatchUp {
            factor,
            proj: Conv2d::new(cin, cout * factor * factor, 1, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        channel_to_space(&self.proj.forward(x)?, self.factor)
    }
}

impl<S: Scalar> Params<S> for PatchUp<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.proj.params_mut(&join(prefix, "proj"), out);
    }
}
