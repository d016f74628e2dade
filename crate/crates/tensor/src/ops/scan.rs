//! Selective state-space scan.
//!
//! For each lane `b` and channel `d` a diagonal state `h ∈ R^N` evolves as
//!
//! ```text
//! h_t = exp(Δ_t·A_d) ⊙ h_{t-1} + Δ_t · B_t · u_t
//! y_t = C_t · h_t
//! ```
//!
//! with `h_{-1} = 0`. `Δ`, `B` and `C` vary per step (they are computed from
//! the input by the caller). The recurrence is evaluated step by step and the
//! backward pass replays it in reverse, so memory is `O(L·B·D·N)`.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::ops::elementwise::{clamp_exponent, EXP_CLAMP};
use crate::scalar::Scalar;
use crate::tape::record;
use crate::tensor::Tensor;

impl<S: Scalar> Tensor<S> {
    /// Runs the scan with `self = u: [L,B,D]`, `delta: [L,B,D]`, `a: [D,N]`,
    /// `b: [L,B,N]`, `c: [L,B,N]`; returns `y: [L,B,D]` (no skip term).
    pub fn selective_scan(
        &self,
        delta: &Tensor<S>,
        a: &Tensor<S>,
        b: &Tensor<S>,
        c: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let &[l, lanes, d] = self.shape() else {
            return Err(TensorError::Rank {
                op: "selective_scan",
                expected: 3,
                shape: self.shape().to_vec(),
            });
        };
        let &[ad, n] = a.shape() else {
            return Err(TensorError::Rank {
                op: "selective_scan",
                expected: 2,
                shape: a.shape().to_vec(),
            });
        };
        let mismatch = |rhs: &Tensor<S>| TensorError::ShapeMismatch {
            op: "selective_scan",
            lhs: self.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        if delta.shape() != self.shape() {
            return Err(mismatch(delta));
        }
        if ad != d {
            return Err(mismatch(a));
        }
        for t in [b, c] {
            if t.shape() != [l, lanes, n] {
                return Err(mismatch(t));
            }
        }
        if delta.data().iter().any(|&v| !(v > S::zero())) {
            return Err(TensorError::Invalid(
                "selective_scan: step sizes must be strictly positive".into(),
            ));
        }

        let (u, dt, av, bv, cv) = (self.shared(), delta.shared(), a.shared(), b.shared(), c.shared());
        let state = lanes * d * n;
        let mut hs = vec![S::zero(); l * state];
        let mut abar = vec![S::zero(); l * state];
        let mut y = vec![S::zero(); l * lanes * d];
        let mut h = vec![S::zero(); state];
        for t in 0..l {
            for bi in 0..lanes {
                let row = (t * lanes + bi) * n;
                let bt = &bv[row..row + n];
                let ct = &cv[row..row + n];
                for di in 0..d {
                    let x = (t * lanes + bi) * d + di;
                    let (step, ut) = (dt[x], u[x]);
                    let hrow = &mut h[(bi * d + di) * n..(bi * d + di + 1) * n];
                    let arow = &av[di * n..(di + 1) * n];
                    let off = t * state + (bi * d + di) * n;
                    let mut acc = S::zero();
                    for k in 0..n {
                        let ab = clamp_exponent(step * arow[k]).exp();
                        hrow[k] = ab * hrow[k] + step * bt[k] * ut;
                        abar[off + k] = ab;
                        acc += ct[k] * hrow[k];
                    }
                    hs[off..off + n].copy_from_slice(hrow);
                    y[x] = acc;
                }
            }
        }

        let (hs, abar) = (Arc::new(hs), Arc::new(abar));
        Ok(record(&[self, delta, a, b, c], vec![l, lanes, d], y, move |gy, _| {
            let mut du = vec![S::zero(); l * lanes * d];
            let mut ddt = vec![S::zero(); l * lanes * d];
            let mut da = vec![S::zero(); d * n];
            let mut db = vec![S::zero(); l * lanes * n];
            let mut dc = vec![S::zero(); l * lanes * n];
            let mut dh = vec![S::zero(); state];
            let lim = S::of(EXP_CLAMP);
            for t in (0..l).rev() {
                for bi in 0..lanes {
                    let row = (t * lanes + bi) * n;
                    for di in 0..d {
                        let x = (t * lanes + bi) * d + di;
                        let (step, ut, g_out) = (dt[x], u[x], gy[x]);
                        let off = t * state + (bi * d + di) * n;
                        let dhrow = &mut dh[(bi * d + di) * n..(bi * d + di + 1) * n];
                        let mut g_step = S::zero();
                        let mut g_u = S::zero();
                        for k in 0..n {
                            let ht = hs[off + k];
                            dhrow[k] += g_out * cv[row + k];
                            dc[row + k] += g_out * ht;
                            let g = dhrow[k];
                            let hprev = if t > 0 { hs[off - state + k] } else { S::zero() };
                            let ab = abar[off + k];
                            let ak = av[di * n + k];
                            // d(abar)/d(step·a) vanishes where the exponent was clamped.
                            let g_exp = if (step * ak).abs() <= lim { g * hprev * ab } else { S::zero() };
                            g_step += g_exp * ak + g * bv[row + k] * ut;
                            da[di * n + k] += g_exp * step;
                            db[row + k] += g * step * ut;
                            g_u += g * step * bv[row + k];
                            dhrow[k] = g * ab;
                        }
                        ddt[x] += g_step;
                        du[x] += g_u;
                    }
                }
            }
            vec![Some(du), Some(ddt), Some(da), Some(db), Some(dc)]
        }))
    }
}
