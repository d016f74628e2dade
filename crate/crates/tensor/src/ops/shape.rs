//! Data-movement operations. All of them are bijections or selections on
//! index sets, so their gradients are the matching scatter.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{record, record_shared};
use crate::tensor::Tensor;

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(TensorError::AxisOutOfRange { op, axis, rank });
    }
    Ok(())
}

/// `(outer, extent, inner)` split of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Source index, for every destination element, of a permutation of axes.
fn permutation_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let r = shape.len();
    let mut src_strides = vec![1; r];
    for i in (0..r.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for ax in (0..r).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

impl<S: Scalar> Tensor<S> {
    /// Same buffer under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(record_shared(&[self], shape.to_vec(), self.shared(), |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<S>> {
        let r = self.rank();
        let mut seen = vec![false; r];
        for &a in axes {
            check_axis("permute", a, r)?;
            if std::mem::replace(&mut seen[a], true) {
                return Err(TensorError::Invalid(format!("permute: repeated axis {a}")));
            }
        }
        if axes.len() != r {
            return Err(TensorError::Rank {
                op: "permute",
                expected: axes.len(),
                shape: self.shape().to_vec(),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return self.reshape(&out_shape);
        }
        let map = permutation_map(self.shape(), axes);
        let src = self.data();
        let data = map.iter().map(|&j| src[j]).collect();
        Ok(record(&[self], out_shape, data, move |g, _| {
            let mut gx = vec![S::zero(); g.len()];
            for (v, &j) in g.iter().zip(&map) {
                gx[j] = *v;
            }
            vec![Some(gx)]
        }))
    }

    /// Swaps two axes.
    pub fn transpose(&self, axis_a: usize, axis_b: usize) -> Result<Tensor<S>> {
        check_axis("transpose", axis_a, self.rank())?;
        check_axis("transpose", axis_b, self.rank())?;
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        axes.swap(axis_a, axis_b);
        self.permute(&axes)
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        check_axis("narrow", axis, self.rank())?;
        let (outer, extent, inner) = split_at_axis(self.shape(), axis);
        if len == 0 || start + len > extent {
            return Err(TensorError::Invalid(format!(
                "narrow: range {start}..{} outside extent {extent}",
                start + len
            )));
        }
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(record(&[self], shape, data, move |g, _| {
            let mut gx = vec![S::zero(); outer * extent * inner];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Gathers entries along `axis` in the order given by `indices`
    /// (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<S>> {
        check_axis("index_select", axis, self.rank())?;
        let (outer, extent, inner) = split_at_axis(self.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(TensorError::Invalid(format!(
                "index_select: index {bad} outside extent {extent}"
            )));
        }
        if indices.is_empty() {
            return Err(TensorError::Invalid("index_select: no indices".into()));
        }
        let n = indices.len();
        let src = self.data();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * extent + i) * inner;
                data.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = n;
        let indices = indices.to_vec();
        Ok(record(&[self], shape, data, move |g, _| {
            let mut gx = vec![S::zero(); outer * extent * inner];
            for o in 0..outer {
                for (k, &i) in indices.iter().enumerate() {
                    let dst = (o * extent + i) * inner;
                    let src = (o * n + k) * inner;
                    for j in 0..inner {
                        gx[dst + j] += g[src + j];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Reverses the order along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Tensor<S>> {
        check_axis("flip", axis, self.rank())?;
        let n = self.shape()[axis];
        let idx: Vec<usize> = (0..n).rev().collect();
        self.index_select(axis, &idx)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat: no inputs".into()))?;
        check_axis("concat", axis, first.rank())?;
        for p in parts {
            let same_rank = p.rank() == first.rank();
            let others_match = same_rank
                && p
                    .shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !others_match {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let refs: Vec<&Tensor<S>> = parts.iter().collect();
        let extents = Arc::new(extents);
        Ok(record(&refs, shape, data, move |g, needs| {
            let mut out: Vec<Option<Vec<S>>> = extents
                .iter()
                .zip(needs)
                .map(|(&e, &n)| n.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (slot, &e) in out.iter_mut().zip(extents.iter()) {
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[off..off + e * inner]);
                    }
                    off += e * inner;
                }
            }
            out
        }))
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("stack: no inputs".into()))?;
        if axis > first.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "stack",
                axis,
                rank: first.rank() + 1,
            });
        }
        let mut expanded_shape = first.shape().to_vec();
        expanded_shape.insert(axis, 1);
        let expanded = parts
            .iter()
            .map(|p| {
                if p.shape() != first.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "stack",
                        lhs: first.shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
                p.reshape(&expanded_shape)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::concat(&expanded, axis)
    }
}
