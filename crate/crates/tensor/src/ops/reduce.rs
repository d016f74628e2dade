use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::record;
use crate::tensor::Tensor;

impl<S: Scalar> Tensor<S> {
    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor<S> {
        let s: S = self.data().iter().copied().sum();
        let n = self.numel();
        record(&[self], vec![1], vec![s], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Tensor<S> {
        let n = S::of(self.numel() as f64);
        self.sum_all().scale(S::one() / n)
    }

    /// Sums out `axis`, removing it from the shape. Reducing a rank-1 tensor
    /// yields shape `[1]`.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "sum_axis",
                axis,
                rank: self.rank(),
            });
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(record(&[self], out_shape, out, move |g, _| {
            let mut gx = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                for _ in 0..extent {
                    gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<S>> {
        let n = self
            .shape()
            .get(axis)
            .copied()
            .ok_or(TensorError::AxisOutOfRange {
                op: "mean_axis",
                axis,
                rank: self.rank(),
            })?;
        Ok(self.sum_axis(axis)?.scale(S::one() / S::of(n as f64)))
    }
}
