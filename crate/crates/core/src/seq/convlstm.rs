use mnet_tensor::{Scalar, Tensor};
use rand::Rng;

use super::check_batch;
use crate::error::{config, Result};
use crate::nn::{join, Conv2d, Flops, Params};

/// LSTM whose gates are convolutions over a `[channels, h, w]` view of each
/// step's features. Gate channels are laid out `[i | f | g | o]`.
#[derive(Debug, Clone)]
pub struct ConvLstm<S: Scalar> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `channels → 4·hidden`, carries the gate biases.
    pub input: Conv2d<S>,
    /// `hidden → 4·hidden`, no bias.
    pub recurrent: Conv2d<S>,
    /// 1×1, `hidden → channels`.
    pub output: Conv2d<S>,
}

impl<S: Scalar> ConvLstm<S> {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        hidden: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(config(format!("ConvLSTM kernel must be odd, got {kernel}")));
        }
        let mut input = Conv2d::new(channels, 4 * hidden, kernel, true, rng);
        if let Some(b) = &mut input.b {
            b.map_in_place(|v| v[hidden..2 * hidden].iter_mut().for_each(|x| *x += S::one()));
        }
        Ok(ConvLstm {
            channels,
            height,
            width,
            input,
            recurrent: Conv2d::new(hidden, 4 * hidden, kernel, false, rng),
            output: Conv2d::new(hidden, channels, 1, true, rng),
        })
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (l, b, d) = check_batch(x)?;
        let (c, h, w) = (self.channels, self.height, self.width);
        if d != c * h * w {
            return Err(config(format!(
                "ConvLSTM expects D = {c}·{h}·{w} = {}, got {d}",
                c * h * w
            )));
        }
        let hd = self.hidden();
        let xg = self
            .input
            .forward(&x.reshape(&[l * b, c, h, w])?)?
            .reshape(&[l, b, 4 * hd, h, w])?;
        let mut state: Option<(Tensor<S>, Tensor<S>)> = None;
        let mut hs = Vec::with_capacity(l);
        for t in 0..l {
            let mut gates = xg.narrow(0, t, 1)?.reshape(&[b, 4 * hd, h, w])?;
            if let Some((hp, _)) = &state {
                gates = gates.add(&self.recurrent.forward(hp)?)?;
            }
            let sig = gates.sigmoid();
            let i = sig.narrow(1, 0, hd)?;
            let f = sig.narrow(1, hd, hd)?;
            let g = gates.narrow(1, 2 * hd, hd)?.tanh();
            let o = sig.narrow(1, 3 * hd, hd)?;
            let ig = i.mul(&g)?;
            let c_new = match &state {
                Some((_, cp)) => f.mul(cp)?.add(&ig)?,
                None => ig,
            };
            let h_new = o.mul(&c_new.tanh())?;
            hs.push(h_new.clone());
            state = Some((h_new, c_new));
        }
        let hs = Tensor::stack(&hs, 0)?.reshape(&[l * b, hd, h, w])?;
        Ok(self.output.forward(&hs)?.reshape(&[l, b, d])?)
    }

    pub fn flops(&self, l: usize, b: usize) -> Flops {
        let (h, w) = (self.height, self.width);
        (self.input.flops(h, w) + self.recurrent.flops(h, w) + self.output.flops(h, w)).times(l * b)
    }
}

impl<S: Scalar> Params<S> for ConvLstm<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.input.params_mut(&join(prefix, "input"), out);
        self.recurrent.params_mut(&join(prefix, "recurrent"), out);
        self.output.params_mut(&join(prefix, "output"), out);
    }
}
