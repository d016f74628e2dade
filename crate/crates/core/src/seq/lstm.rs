use mnet_tensor::{Scalar, Tensor};
use rand::Rng;

use super::{check_batch, step};
use crate::nn::{init_fan_in, join, Flops, Linear, Params};
use crate::error::Result;

/// Single-layer LSTM with projections in and out of the hidden width.
///
/// Gate columns are laid out `[i | f | g | o]`, each `hidden` wide.
#[derive(Debug, Clone)]
pub struct Lstm<S: Scalar> {
    /// `D → 4H`, carries the gate biases.
    pub input: Linear<S>,
    /// `[H, 4H]`.
    pub recurrent: Tensor<S>,
    /// `H → D`.
    pub output: Linear<S>,
}

impl<S: Scalar> Lstm<S> {
    pub fn new<R: Rng + ?Sized>(d: usize, hidden: usize, rng: &mut R) -> Self {
        let mut input = Linear::new(d, 4 * hidden, true, rng);
        if let Some(b) = &mut input.b {
            b.map_in_place(|v| v[hidden..2 * hidden].iter_mut().for_each(|x| *x += S::one()));
        }
        Lstm {
            input,
            recurrent: init_fan_in(&[hidden, 4 * hidden], hidden, rng),
            output: Linear::new(hidden, d, true, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (l, _, _) = check_batch(x)?;
        let hd = self.hidden();
        let xw = self.input.forward(x)?;
        let mut h: Option<Tensor<S>> = None;
        let mut c: Option<Tensor<S>> = None;
        let mut hs = Vec::with_capacity(l);
        for t in 0..l {
            let mut gates = step(&xw, t)?;
            if let Some(h) = &h {
                gates = gates.add(&h.matmul(&self.recurrent)?)?;
            }
            let sig = gates.sigmoid();
            let i = sig.narrow(1, 0, hd)?;
            let f = sig.narrow(1, hd, hd)?;
            let g = gates.narrow(1, 2 * hd, hd)?.tanh();
            let o = sig.narrow(1, 3 * hd, hd)?;
            let ig = i.mul(&g)?;
            let c_new = match &c {
                Some(c) => f.mul(c)?.add(&ig)?,
                None => ig,
            };
            let h_new = o.mul(&c_new.tanh())?;
            hs.push(h_new.clone());
            h = Some(h_new);
            c = Some(c_new);
        }
        self.output.forward(&Tensor::stack(&hs, 0)?)
    }

    pub fn flops(&self, l: usize, b: usize) -> Flops {
        let rows = l * b;
        let hd = self.hidden();
        self.input.flops(rows) + Flops::matmul(rows, hd, 4 * hd) + self.output.flops(rows)
    }
}

impl<S: Scalar> Params<S> for Lstm<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.input.params_mut(&join(prefix, "input"), out);
        out.push((join(prefix, "recurrent"), &mut self.recurrent));
        self.output.params_mut(&join(prefix, "output"), out);
    }
}
