//! Four-direction serialization of feature maps.
//!
//! `lr` is the row-major flatten, `tb` the column-major flatten, and `rl`,
//! `bt` their reversals. Merging undoes each permutation and sums.

use mnet_tensor::{Scalar, Tensor};

use crate::error::{data, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalScans<S: Scalar> {
    /// Each `[H·W, C]`.
    pub lr: Tensor<S>,
    pub rl: Tensor<S>,
    pub tb: Tensor<S>,
    pub bt: Tensor<S>,
}

/// `order[p]` is the row-major position visited at step `p` of a
/// column-major traversal.
pub fn column_major_order(h: usize, w: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(h * w);
    for j in 0..w {
        for i in 0..h {
            order.push(i * w + j);
        }
    }
    order
}

/// Inverse of [`column_major_order`].
pub fn column_major_inverse(h: usize, w: usize) -> Vec<usize> {
    let mut inv = vec![0; h * w];
    for (p, r) in column_major_order(h, w).into_iter().enumerate() {
        inv[r] = p;
    }
    inv
}

fn dims3<S: Scalar>(x: &Tensor<S>, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(data(format!("{what} must be rank 3, got {:?}", x.shape()))),
    }
}

/// `[C,H,W]` map to its four `[H·W, C]` sequences.
pub fn cross_scan<S: Scalar>(map: &Tensor<S>) -> Result<DirectionalScans<S>> {
    let (c, h, w) = dims3(map, "cross_scan input")?;
    let lr = map.reshape(&[c, h * w])?.transpose(0, 1)?;
    let tb = lr.index_select(0, &column_major_order(h, w))?;
    Ok(DirectionalScans {
        rl: lr.flip(0)?,
        bt: tb.flip(0)?,
        lr,
        tb,
    })
}

/// Un-permutes the four sequences and sums them into a `[C,H,W]` map.
pub fn cross_merge<S: Scalar>(scans: &DirectionalScans<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let shape = scans.lr.shape().to_vec();
    for (name, t) in [("rl", &scans.rl), ("tb", &scans.tb), ("bt", &scans.bt)] {
        if t.shape() != shape.as_slice() {
            return Err(data(format!(
                "cross_merge: {name} has shape {:?}, lr has {shape:?}",
                t.shape()
            )));
        }
    }
    if shape.len() != 2 || shape[0] != h * w {
        return Err(data(format!(
            "cross_merge: sequences of shape {shape:?} do not cover a {h}×{w} map"
        )));
    }
    let inv = column_major_inverse(h, w);
    // Pairwise, so that merging four copies of one map is exactly 4x.
    let rows = scans.lr.add(&scans.rl.flip(0)?)?;
    let cols = scans.tb.add(&scans.bt.flip(0)?)?.index_select(0, &inv)?;
    let sum = rows.add(&cols)?;
    Ok(sum.transpose(0, 1)?.reshape(&[shape[1], h, w])?)
}

/// Batched form used inside the model: `[H·W, T, C]` position-major frames
/// to `[H·W, 4T, C]` with the directions stacked along the lane axis in the
/// order `lr, rl, tb, bt`.
pub fn scan_lanes<S: Scalar>(x: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (hw, _, _) = dims3(x, "scan_lanes input")?;
    if hw != h * w {
        return Err(data(format!("scan_lanes: {hw} positions for a {h}×{w} map")));
    }
    let tb = x.index_select(0, &column_major_order(h, w))?;
    let bt = tb.flip(0)?;
    Ok(Tensor::concat(&[x.clone(), x.flip(0)?, tb, bt], 1)?)
}

/// Inverse companion of [`scan_lanes`]: `[H·W, 4T, C]` back to the summed
/// `[H·W, T, C]`.
pub fn merge_lanes<S: Scalar>(y: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (hw, lanes, _) = dims3(y, "merge_lanes input")?;
    if hw != h * w || lanes % 4 != 0 {
        return Err(data(format!(
            "merge_lanes: shape {:?} is not four directions over a {h}×{w} map",
            y.shape()
        )));
    }
    let t = lanes / 4;
    let inv = column_major_inverse(h, w);
    let part = |i: usize| y.narrow(1, i * t, t);
    let rows = part(0)?.add(&part(1)?.flip(0)?)?;
    let cols = part(2)?.add(&part(3)?.flip(0)?)?.index_select(0, &inv)?;
    Ok(rows.add(&cols)?)
}

/// `[T,C,H,W]` to `[H·W, 4T, C]`.
pub fn scan_frames<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let &[t, c, h, w] = x.shape() else {
        return Err(data(format!("scan_frames expects [T,C,H,W], got {:?}", x.shape())));
    };
    scan_lanes(&x.reshape(&[t, c, h * w])?.permute(&[2, 0, 1])?, h, w)
}

/// `[H·W, 4T, C]` to `[T,C,H,W]`.
pub fn merge_frames<S: Scalar>(y: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let merged = merge_lanes(y, h, w)?;
    let (_, t, c) = dims3(&merged, "merged lanes")?;
    Ok(merged.permute(&[1, 2, 0])?.reshape(&[t, c, h, w])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_major_pair_is_inverse() {
        let (h, w) = (3, 5);
        let order = column_major_order(h, w);
        let inv = column_major_inverse(h, w);
        for r in 0..h * w {
            assert_eq!(order[inv[r]], r);
        }
        assert_eq!(column_major_order(2, 2), [0, 2, 1, 3]);
    }
}
