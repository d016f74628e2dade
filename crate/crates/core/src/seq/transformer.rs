use mnet_tensor::{Scalar, Tensor};
use rand::Rng;

use super::check_batch;
use crate::error::{config, Result};
use crate::nn::{init_fan_in, join, Flops, LayerNorm, Linear, Params};

/// Pre-norm encoder block with bidirectional multi-head self-attention and
/// learned positional embeddings added on entry.
#[derive(Debug, Clone)]
pub struct TransformerBlock<S: Scalar> {
    pub heads: usize,
    /// `[max_len, D]`.
    pub pos: Tensor<S>,
    pub norm1: LayerNorm<S>,
    /// `D → 3D` as `[q | k | v]`.
    pub qkv: Linear<S>,
    pub proj: Linear<S>,
    pub norm2: LayerNorm<S>,
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
}

impl<S: Scalar> TransformerBlock<S> {
    pub fn new<R: Rng + ?Sized>(
        d: usize,
        heads: usize,
        mlp_ratio: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(config(format!("width {d} is not divisible by {heads} heads")));
        }
        if max_len == 0 {
            return Err(config("positional table needs max_len ≥ 1"));
        }
        Ok(TransformerBlock {
            heads,
            pos: init_fan_in(&[max_len, d], d, rng),
            norm1: LayerNorm::new(d),
            qkv: Linear::new(d, 3 * d, true, rng),
            proj: Linear::new(d, d, true, rng),
            norm2: LayerNorm::new(d),
            fc1: Linear::new(d, mlp_ratio * d, true, rng),
            fc2: Linear::new(mlp_ratio * d, d, true, rng),
        })
    }

    pub fn max_len(&self) -> usize {
        self.pos.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.embed(x)?;
        let (att, _) = self.attention(&self.norm1.forward(&x)?)?;
        let x = x.add(&att)?;
        let mlp = self.fc2.forward(&self.fc1.forward(&self.norm2.forward(&x)?)?.relu())?;
        Ok(x.add(&mlp)?)
    }

    /// Adds the positional rows for steps `0..L`.
    pub fn embed(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (l, _, d) = check_batch(x)?;
        if l > self.max_len() {
            return Err(config(format!(
                "sequence length {l} exceeds positional table of {}",
                self.max_len()
            )));
        }
        Ok(x.add(&self.pos.narrow(0, 0, l)?.reshape(&[l, 1, d])?)?)
    }

    /// Self-attention over already-normalized input; returns the projected
    /// output `[L,B,D]` and the attention weights `[B, heads, L, L]`.
    pub fn attention(&self, xn: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let (l, b, d) = check_batch(xn)?;
        let h = self.heads;
        let dh = d / h;
        let qkv = self.qkv.forward(xn)?;
        let split = |i: usize| -> Result<Tensor<S>> {
            Ok(qkv
                .narrow(2, i * d, d)?
                .reshape(&[l, b, h, dh])?
                .permute(&[1, 2, 0, 3])?
                .reshape(&[b * h, l, dh])?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = q
            .bmm(&k.transpose(1, 2)?)?
            .scale(S::of(1.0 / (dh as f64).sqrt()));
        let weights = scores.softmax_last_axis()?;
        let mixed = weights
            .bmm(&v)?
            .reshape(&[b, h, l, dh])?
            .permute(&[2, 0, 1, 3])?
            .reshape(&[l, b, d])?;
        Ok((self.proj.forward(&mixed)?, weights.reshape(&[b, h, l, l])?))
    }

    pub fn flops(&self, l: usize, b: usize) -> Flops {
        let rows = l * b;
        let d = self.proj.in_features();
        let dh = d / self.heads;
        self.qkv.flops(rows)
            + self.proj.flops(rows)
            + self.fc1.flops(rows)
            + self.fc2.flops(rows)
            + Flops::matmul(l, dh, l).times(2 * b * self.heads)
    }
}

impl<S: Scalar> Params<S> for TransformerBlock<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((join(prefix, "pos"), &mut self.pos));
        self.norm1.params_mut(&join(prefix, "norm1"), out);
        self.qkv.params_mut(&join(prefix, "qkv"), out);
        self.proj.params_mut(&join(prefix, "proj"), out);
        self.norm2.params_mut(&join(prefix, "norm2"), out);
        self.fc1.params_mut(&join(prefix, "fc1"), out);
        self.fc2.params_mut(&join(prefix, "fc2"), out);
    }
}
