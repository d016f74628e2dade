//! xLSTM: residual stack of sLSTM and mLSTM blocks with exponential gating.
//!
//! Both cells carry a log-domain stabilizer `m`:
//!
//! ```text
//! m_t = max(f̃_t + m_{t-1}, ĩ_t)
//! i'_t = exp(ĩ_t − m_t),  f'_t = exp(f̃_t + m_{t-1} − m_t)
//! ```
//!
//! The sLSTM keeps a cell `c` and normalizer `n` per unit and emits
//! `σ(õ)·c/n`. The mLSTM keeps a matrix memory `C += v·kᵀ` and reads it with
//! a query, normalized by `max(|nᵀq|, exp(−m))`.

use mnet_tensor::{Scalar, Tensor};
use rand::Rng;

use super::{check_batch, step, XBlockKind};
use crate::error::{config, Result};
use crate::nn::{init_fan_in, join, Flops, LayerNorm, Linear, Params};

#[derive(Debug, Clone)]
pub struct SLstmBlock<S: Scalar> {
    pub norm: LayerNorm<S>,
    /// `D → 4D` pre-activations `[z | i | f | o]`.
    pub input: Linear<S>,
    /// `[D, 4D]`.
    pub recurrent: Tensor<S>,
    pub output: Linear<S>,
}

impl<S: Scalar> SLstmBlock<S> {
    pub fn new<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut input = Linear::new(d, 4 * d, true, rng);
        if let Some(b) = &mut input.b {
            b.map_in_place(|v| v[2 * d..3 * d].iter_mut().for_each(|x| *x += S::one()));
        }
        SLstmBlock {
            norm: LayerNorm::new(d),
            input,
            recurrent: init_fan_in(&[d, 4 * d], d, rng),
            output: Linear::new(d, d, true, rng),
        }
    }

    /// Block body without the residual or the norm.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (l, _, d) = check_batch(x)?;
        let pre = self.input.forward(x)?;
        let mut state: Option<(Tensor<S>, Tensor<S>, Tensor<S>, Tensor<S>)> = None;
        let mut hs = Vec::with_capacity(l);
        for t in 0..l {
            let mut g = step(&pre, t)?;
            if let Some((h, ..)) = &state {
                g = g.add(&h.matmul(&self.recurrent)?)?;
            }
            let z = g.narrow(1, 0, d)?.tanh();
            let ig = g.narrow(1, d, d)?;
            let fg = g.narrow(1, 2 * d, d)?;
            let o = g.narrow(1, 3 * d, d)?.sigmoid();
            let (c, n, m) = match &state {
                None => (z, Tensor::ones(ig.shape()), ig),
                Some((_, c, n, m)) => {
                    let fm = fg.add(m)?;
                    let m_new = fm.maximum(&ig)?;
                    let i = ig.sub(&m_new)?.exp();
                    let f = fm.sub(&m_new)?.exp();
                    (
                        f.mul(c)?.add(&i.mul(&z)?)?,
                        f.mul(n)?.add(&i)?,
                        m_new,
                    )
                }
            };
            let h = o.mul(&c.div(&n)?)?;
            hs.push(h.clone());
            state = Some((h, c, n, m));
        }
        self.output.forward(&Tensor::stack(&hs, 0)?)
    }

    fn flops(&self, l: usize, b: usize) -> Flops {
        let d = self.output.in_features();
        let rows = l * b;
        self.input.flops(rows) + Flops::matmul(rows, d, 4 * d) + self.output.flops(rows)
    }
}

impl<S: Scalar> Params<S> for SLstmBlock<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.norm.params_mut(&join(prefix, "norm"), out);
        self.input.params_mut(&join(prefix, "input"), out);
        out.push((join(prefix, "recurrent"), &mut self.recurrent));
        self.output.params_mut(&join(prefix, "output"), out);
    }
}

#[derive(Debug, Clone)]
pub struct MLstmBlock<S: Scalar> {
    pub norm: LayerNorm<S>,
    /// `D → 3D` as `[q | k | v]`.
    pub qkv: Linear<S>,
    /// `D → 2` scalar input and forget pre-activations per lane.
    pub gates: Linear<S>,
    /// `D → D` output gate.
    pub ogate: Linear<S>,
    pub output: Linear<S>,
}

impl<S: Scalar> MLstmBlock<S> {
    pub fn new<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut gates = Linear::new(d, 2, true, rng);
        if let Some(b) = &mut gates.b {
            b.map_in_place(|v| v[1] += S::one());
        }
        MLstmBlock {
            norm: LayerNorm::new(d),
            qkv: Linear::new(d, 3 * d, true, rng),
            gates,
            ogate: Linear::new(d, d, true, rng),
            output: Linear::new(d, d, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (l, b, d) = check_batch(x)?;
        let qkv = self.qkv.forward(x)?;
        let gates = self.gates.forward(x)?;
        let og = self.ogate.forward(x)?.sigmoid();
        let key_scale = S::of(1.0 / (d as f64).sqrt());
        let mut state: Option<(Tensor<S>, Tensor<S>, Tensor<S>)> = None;
        let mut hs = Vec::with_capacity(l);
        for t in 0..l {
            let p = step(&qkv, t)?;
            let q = p.narrow(1, 0, d)?;
            let k = p.narrow(1, d, d)?.scale(key_scale);
            let v = p.narrow(1, 2 * d, d)?;
            let g = step(&gates, t)?;
            let ig = g.narrow(1, 0, 1)?;
            let fg = g.narrow(1, 1, 1)?;
            let vk = v.reshape(&[b, d, 1])?.bmm(&k.reshape(&[b, 1, d])?)?;
            let (cm, n, m) = match &state {
                None => (vk, k, ig),
                Some((cm, n, m)) => {
                    let fm = fg.add(m)?;
                    let m_new = fm.maximum(&ig)?;
                    let i = ig.sub(&m_new)?.exp();
                    let f = fm.sub(&m_new)?.exp();
                    let (i3, f3) = (i.reshape(&[b, 1, 1])?, f.reshape(&[b, 1, 1])?);
                    (
                        cm.mul(&f3)?.add(&vk.mul(&i3)?)?,
                        n.mul(&f)?.add(&k.mul(&i)?)?,
                        m_new,
                    )
                }
            };
            let read = cm.bmm(&q.reshape(&[b, d, 1])?)?.reshape(&[b, d])?;
            let nq = n.mul(&q)?.sum_axis(1)?.reshape(&[b, 1])?.abs();
            let denom = nq.maximum(&m.neg().exp())?;
            let h = step(&og, t)?.mul(&read.div(&denom)?)?;
            hs.push(h);
            state = Some((cm, n, m));
        }
        self.output.forward(&Tensor::stack(&hs, 0)?)
    }

    fn flops(&self, l: usize, b: usize) -> Flops {
        let d = self.output.in_features();
        let rows = l * b;
        self.qkv.flops(rows)
            + self.gates.flops(rows)
            + self.ogate.flops(rows)
            + self.output.flops(rows)
            + Flops::matmul(d, 1, d).times(2 * rows)
    }
}

impl<S: Scalar> Params<S> for MLstmBlock<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.norm.params_mut(&join(prefix, "norm"), out);
        self.qkv.params_mut(&join(prefix, "qkv"), out);
        self.gates.params_mut(&join(prefix, "gates"), out);
        self.ogate.params_mut(&join(prefix, "ogate"), out);
        self.output.params_mut(&join(prefix, "output"), out);
    }
}

#[derive(Debug, Clone)]
pub enum XBlock<S: Scalar> {
    S(SLstmBlock<S>),
    M(MLstmBlock<S>),
}

impl<S: Scalar> XBlock<S> {
    fn norm(&self) -> &LayerNorm<S> {
        match self {
            XBlock::S(b) => &b.norm,
            XBlock::M(b) => &b.norm,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            XBlock::S(b) => b.forward(x),
            XBlock::M(b) => b.forward(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct XLstm<S: Scalar> {
    pub blocks: Vec<XBlock<S>>,
}

impl<S: Scalar> XLstm<S> {
    pub fn new<R: Rng + ?Sized>(d: usize, pattern: &[XBlockKind], rng: &mut R) -> Result<Self> {
        if pattern.is_empty() {
            return Err(config("xLSTM block pattern must not be empty"));
        }
        let blocks = pattern
            .iter()
            .map(|k| match k {
                XBlockKind::Slstm => XBlock::S(SLstmBlock::new(d, rng)),
                XBlockKind::Mlstm => XBlock::M(MLstmBlock::new(d, rng)),
            })
            .collect();
        Ok(XLstm { blocks })
    }

    /// `x ← x + block(norm(x))` for each block in order.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut x = x.clone();
        for block in &self.blocks {
            x = x.add(&block.forward(&block.norm().forward(&x)?)?)?;
        }
        Ok(x)
    }

    pub fn flops(&self, l: usize, b: usize) -> Flops {
        let mut f = Flops::default();
        for block in &self.blocks {
            f += match block {
                XBlock::S(s) => s.flops(l, b),
                XBlock::M(m) => m.flops(l, b),
            };
        }
        f
    }
}

impl<S: Scalar> Params<S> for XLstm<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &i.to_string());
            match block {
                XBlock::S(b) => b.params_mut(&join(&p, "slstm"), out),
                XBlock::M(b) => b.params_mut(&join(&p, "mlstm"), out),
            }
        }
    }
}
