//! Elementwise arithmetic, broadcasting and activations.
//!
//! Broadcasting follows the trailing-dimension rule: shapes are aligned at
//! their last axis and each aligned pair of extents must be equal or one of
//! them must be 1. Missing leading axes count as 1.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::record;
use crate::tensor::Tensor;

/// Exponent inputs are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 60.0;

/// Pointwise (or, for softmax, per-row) nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    SoftmaxLastAxis,
}

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// How an input buffer is read when broadcast to an output shape.
#[derive(Debug, Clone)]
pub(crate) enum Layout {
    Same,
    /// The input equals the trailing block of the output and repeats.
    Repeat(usize),
    /// Explicit input index for every output element.
    Map(Vec<usize>),
}

impl Layout {
    pub(crate) fn new(input: &[usize], out: &[usize]) -> Layout {
        let numel: usize = input.iter().product();
        let total: usize = out.iter().product();
        if numel == total {
            return Layout::Same;
        }
        let stripped: Vec<usize> = input.iter().copied().skip_while(|&d| d == 1).collect();
        if stripped.len() <= out.len() && out[out.len() - stripped.len()..] == stripped[..] {
            return Layout::Repeat(numel);
        }
        let r = out.len();
        let padded: Vec<usize> = std::iter::repeat_n(1, r - input.len())
            .chain(input.iter().copied())
            .collect();
        let mut strides = vec![0; r];
        let mut acc = 1;
        for i in (0..r).rev() {
            strides[i] = if padded[i] == 1 { 0 } else { acc };
            acc *= padded[i];
        }
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; r];
        let mut off = 0usize;
        for _ in 0..total {
            map.push(off);
            for ax in (0..r).rev() {
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < out[ax] {
                    break;
                }
                off -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Layout::Map(map)
    }

    #[inline]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            Layout::Same => i,
            Layout::Repeat(n) => i % n,
            Layout::Map(m) => m[i],
        }
    }

    /// Sums an output-shaped gradient back onto the input.
    pub(crate) fn reduce<S: Scalar>(&self, g: &[S], numel: usize) -> Vec<S> {
        match self {
            Layout::Same => g.to_vec(),
            Layout::Repeat(n) => {
                let mut out = vec![S::zero(); *n];
                for chunk in g.chunks(*n) {
                    for (o, v) in out.iter_mut().zip(chunk) {
                        *o += *v;
                    }
                }
                out
            }
            Layout::Map(m) => {
                let mut out = vec![S::zero(); numel];
                for (v, &j) in g.iter().zip(m) {
                    out[j] += *v;
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl<S: Scalar> Tensor<S> {
    fn binary(&self, other: &Tensor<S>, op: BinOp, name: &'static str) -> Result<Tensor<S>> {
        let shape = broadcast_shape(name, self.shape(), other.shape())?;
        let la = Layout::new(self.shape(), &shape);
        let lb = Layout::new(other.shape(), &shape);
        let n: usize = shape.iter().product();
        let (a, b) = (self.shared(), other.shared());
        let f = |x: S, y: S| match op {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
            BinOp::Max => {
                if x >= y {
                    x
                } else {
                    y
                }
            }
        };
        let data: Vec<S> = match (&la, &lb) {
            (Layout::Same, Layout::Same) => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(a[la.at(i)], b[lb.at(i)])).collect(),
        };
        let (na, nb) = (a.len(), b.len());
        Ok(record(&[self, other], shape, data, move |g, needs| {
            let ga = needs[0].then(|| {
                let full: Vec<S> = match op {
                    BinOp::Add | BinOp::Sub => return la.reduce(g, na),
                    BinOp::Mul => (0..g.len()).map(|i| g[i] * b[lb.at(i)]).collect(),
                    BinOp::Div => (0..g.len()).map(|i| g[i] / b[lb.at(i)]).collect(),
                    BinOp::Max => (0..g.len())
                        .map(|i| {
                            if a[la.at(i)] >= b[lb.at(i)] {
                                g[i]
                            } else {
                                S::zero()
                            }
                        })
                        .collect(),
                };
                la.reduce(&full, na)
            });
            let gb = needs[1].then(|| {
                let full: Vec<S> = match op {
                    BinOp::Add => return lb.reduce(g, nb),
                    BinOp::Sub => g.iter().map(|&v| -v).collect(),
                    BinOp::Mul => (0..g.len()).map(|i| g[i] * a[la.at(i)]).collect(),
                    BinOp::Div => (0..g.len())
                        .map(|i| {
                            let y = b[lb.at(i)];
                            -g[i] * a[la.at(i)] / (y * y)
                        })
                        .collect(),
                    BinOp::Max => (0..g.len())
                        .map(|i| {
                            if a[la.at(i)] >= b[lb.at(i)] {
                                S::zero()
                            } else {
                                g[i]
                            }
                        })
                        .collect(),
                };
                lb.reduce(&full, nb)
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Div, "div")
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn maximum(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Max, "maximum")
    }

    /// Pointwise map with a derivative expressed through input and output.
    fn unary(&self, f: impl Fn(S) -> S, df: fn(S, S) -> S) -> Tensor<S> {
        let x = self.shared();
        let y: Vec<S> = x.iter().map(|&v| f(v)).collect();
        let ys = std::sync::Arc::new(y.clone());
        record(&[self], self.shape().to_vec(), y, move |g, _| {
            vec![Some(
                g.iter()
                    .zip(x.iter().zip(ys.iter()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect(),
            )]
        })
    }

    pub fn neg(&self) -> Tensor<S> {
        self.unary(|x| -x, |_, _| -S::one())
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        let x = self.shared();
        let y = x.iter().map(|&v| v * c).collect();
        record(&[self], self.shape().to_vec(), y, move |g, _| {
            vec![Some(g.iter().map(|&v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        let y = self.data().iter().map(|&v| v + c).collect();
        record(&[self], self.shape().to_vec(), y, |g, _| vec![Some(g.to_vec())])
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        self.unary(sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn tanh(&self) -> Tensor<S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn relu(&self) -> Tensor<S> {
        self.unary(
            |x| if x > S::zero() { x } else { S::zero() },
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    /// `exp` with the input clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
    pub fn exp(&self) -> Tensor<S> {
        self.unary(
            |x| clamp_exponent(x).exp(),
            |x, y| {
                if x.abs() <= S::of(EXP_CLAMP) {
                    y
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn ln(&self) -> Tensor<S> {
        self.unary(|x| x.ln(), |x, _| S::one() / x)
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&self) -> Tensor<S> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn abs(&self) -> Tensor<S> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn sqrt(&self) -> Tensor<S> {
        self.unary(|x| x.sqrt(), |_, y| S::one() / (y + y))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: S, hi: S) -> Tensor<S> {
        let x = self.shared();
        let y = x.iter().map(|&v| v.max(lo).min(hi)).collect();
        record(&[self], self.shape().to_vec(), y, move |g, _| {
            vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(&g, &x)| if x >= lo && x <= hi { g } else { S::zero() })
                    .collect(),
            )]
        })
    }

    pub fn activation(&self, kind: Activation) -> Result<Tensor<S>> {
        Ok(match kind {
            Activation::Sigmoid => self.sigmoid(),
            Activation::Tanh => self.tanh(),
            Activation::Relu => self.relu(),
            Activation::Exp => self.exp(),
            Activation::SoftmaxLastAxis => self.softmax_last_axis()?,
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last_axis(&self) -> Result<Tensor<S>> {
        let cols = *self.shape().last().ok_or(TensorError::Rank {
            op: "softmax",
            expected: 1,
            shape: self.shape().to_vec(),
        })?;
        let mut y = self.to_vec();
        for row in y.chunks_mut(cols) {
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let ys = std::sync::Arc::new(y.clone());
        Ok(record(&[self], self.shape().to_vec(), y, move |g, _| {
            let mut gx = vec![S::zero(); g.len()];
            for ((gr, yr), out) in g.chunks(cols).zip(ys.chunks(cols)).zip(gx.chunks_mut(cols)) {
                let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[inline]
pub(crate) fn clamp_exponent<S: Scalar>(x: S) -> S {
    let c = S::of(EXP_CLAMP);
    x.max(-c).min(c)
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}
