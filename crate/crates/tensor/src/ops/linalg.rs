use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::record;
use crate::tensor::Tensor;

/// Dense `[m,k]·[k,n]` on row-major buffers, optionally with either operand
/// read transposed. The result is added to `c` scaled by `beta`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_t: bool,
    b: &[S],
    b_t: bool,
    beta: S,
    c: &mut [S],
) {
    // a is stored [m,k] or, when transposed, [k,m]; likewise b.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    S::gemm(m, k, n, S::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

impl<S: Scalar> Tensor<S> {
    /// `[M,K]·[K,N] → [M,N]`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(TensorError::Rank {
                op: "matmul",
                expected: 2,
                shape: if self.rank() != 2 {
                    self.shape().to_vec()
                } else {
                    other.shape().to_vec()
                },
            });
        };
        if k != k2 {
            return Err(TensorError::InnerDimension {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (a, b) = (self.shared(), other.shared());
        let mut c = vec![S::zero(); m * n];
        gemm(m, k, n, &a, false, &b, false, S::zero(), &mut c);
        Ok(record(&[self, other], vec![m, n], c, move |g, needs| {
            // dA = dC·Bᵀ, dB = Aᵀ·dC
            let ga = needs[0].then(|| {
                let mut ga = vec![S::zero(); m * k];
                gemm(m, n, k, g, false, &b, true, S::zero(), &mut ga);
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![S::zero(); k * n];
                gemm(k, m, n, &a, true, g, false, S::zero(), &mut gb);
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Batched `[B,M,K]·[B,K,N] → [B,M,N]`.
    pub fn bmm(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (&[bs, m, k], &[bs2, k2, n]) = (self.shape(), other.shape()) else {
            return Err(TensorError::Rank {
                op: "bmm",
                expected: 3,
                shape: if self.rank() != 3 {
                    self.shape().to_vec()
                } else {
                    other.shape().to_vec()
                },
            });
        };
        if k != k2 || bs != bs2 {
            return Err(TensorError::InnerDimension {
                op: "bmm",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (a, b): (Arc<Vec<S>>, Arc<Vec<S>>) = (self.shared(), other.shared());
        let mut c = vec![S::zero(); bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &a[i * m * k..],
                false,
                &b[i * k * n..],
                false,
                S::zero(),
                &mut c[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(record(&[self, other], vec![bs, m, n], c, move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![S::zero(); bs * m * k];
                for i in 0..bs {
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..],
                        false,
                        &b[i * k * n..],
                        true,
                        S::zero(),
                        &mut ga[i * m * k..(i + 1) * m * k],
                    );
                }
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![S::zero(); bs * k * n];
                for i in 0..bs {
                    gemm(
                        k,
                        m,
                        n,
                        &a[i * m * k..],
                        true,
                        &g[i * m * n..],
                        false,
                        S::zero(),
                        &mut gb[i * k * n..(i + 1) * k * n],
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Applies `x·w (+ b)` over the last axis of `x`, any leading shape.
    pub fn linear(&self, w: &Tensor<S>, b: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        let k = *self.shape().last().ok_or(TensorError::Rank {
            op: "linear",
            expected: 1,
            shape: vec![],
        })?;
        let rows = self.numel() / k;
        let y = self.reshape(&[rows, k])?.matmul(w)?;
        let y = match b {
            Some(b) => y.add(b)?,
            None => y,
        };
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = w.shape()[1];
        y.reshape(&shape)
    }
}
