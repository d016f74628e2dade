use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::record;
use crate::tensor::Tensor;

impl<S: Scalar> Tensor<S> {
    /// Normalizes over the last axis, then applies `gamma` and `beta`
    /// (both shaped like that axis).
    pub fn layer_norm(&self, gamma: &Tensor<S>, beta: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let d = *self.shape().last().ok_or(TensorError::Rank {
            op: "layer_norm",
            expected: 1,
            shape: vec![],
        })?;
        for p in [gamma, beta] {
            if p.shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let eps = S::of(eps);
        let inv_d = S::one() / S::of(d as f64);
        let x = self.data();
        let rows = x.len() / d;
        let mut xhat = vec![S::zero(); x.len()];
        let mut inv_std = vec![S::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let (g, b) = (gamma.data(), beta.data());
        let y: Vec<S> = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| v * g[i % d] + b[i % d])
            .collect();
        let xhat = Arc::new(xhat);
        let gam = gamma.shared();
        Ok(record(&[self, gamma, beta], self.shape().to_vec(), y, move |gy, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![S::zero(); gy.len()];
                for r in 0..rows {
                    let gr = &gy[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for j in 0..d {
                        let dx = gr[j] * gam[j];
                        m1 += dx;
                        m2 += dx * xr[j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for j in 0..d {
                        gx[r * d + j] = inv_std[r] * (gr[j] * gam[j] - m1 - xr[j] * m2);
                    }
                }
                gx
            });
            let gg = needs[1].then(|| {
                let mut gg = vec![S::zero(); d];
                for (i, (&gv, &xv)) in gy.iter().zip(xhat.iter()).enumerate() {
                    gg[i % d] += gv * xv;
                }
                gg
            });
            let gb = needs[2].then(|| {
                let mut gb = vec![S::zero(); d];
                for (i, &gv) in gy.iter().enumerate() {
                    gb[i % d] += gv;
                }
                gb
            });
            vec![gx, gg, gb]
        }))
    }
}
